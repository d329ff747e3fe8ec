//! Gaussian-windowed SSIM on single image planes, shared by the training
//! loss and the evaluation metric.

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut taps = std::array::from_fn(|i| {
        let d = i as f64 - half;
        (-d * d / (2.0 * SIGMA * SIGMA)).exp()
    });
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable "same"-size filter with zero padding.
pub fn blur_same(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let half = WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = x as isize + k as isize - half as isize;
                if sx >= 0 && (sx as usize) < w {
                    acc += t * row[sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = y as isize + k as isize - half as isize;
                if sy >= 0 && (sy as usize) < h {
                    acc += t * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel SSIM of two planes with zero-padded windows, together with the
/// local statistics needed to differentiate it with respect to `x`.
pub struct SsimField {
    pub w: usize,
    pub h: usize,
    pub map: Vec<f64>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl SsimField {
    pub fn new(x: &[f64], y: &[f64], w: usize, h: usize) -> Self {
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_x = blur_same(x, w, h);
        let mu_y = blur_same(y, w, h);
        let exx = blur_same(&sq(x, x), w, h);
        let eyy = blur_same(&sq(y, y), w, h);
        let exy = blur_same(&sq(x, y), w, h);
        let n = w * h;
        let (mut n1, mut n2, mut d1, mut d2, mut map) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = exx[i] - mx * mx;
            let syy = eyy[i] - my * my;
            let sxy = exy[i] - mx * my;
            n1[i] = 2.0 * mx * my + C1;
            n2[i] = 2.0 * sxy + C2;
            d1[i] = mx * mx + my * my + C1;
            d2[i] = sxx + syy + C2;
            map[i] = (n1[i] * n2[i]) / (d1[i] * d2[i]);
        }
        Self { w, h, map, mu_x, mu_y, n1, n2, d1, d2 }
    }

    /// Given per-pixel weights `dl_dmap` on the SSIM map, returns dL/dx.
    pub fn backward(&self, x: &[f64], y: &[f64], dl_dmap: &[f64]) -> Vec<f64> {
        let n = self.w * self.h;
        // S as a function of (μx, E[x²], E[xy]) with μy, E[y²] fixed
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        for i in 0..n {
            let gs = dl_dmap[i];
            if gs == 0.0 {
                continue;
            }
            let s = self.map[i];
            let (mx, my) = (self.mu_x[i], self.mu_y[i]);
            let dmu = s
                * ((2.0 * my / self.n1[i] - 2.0 * mx / self.d1[i]) + (2.0 * mx / self.d2[i] - 2.0 * my / self.n2[i]));
            let dexx = -s / self.d2[i];
            let dexy = 2.0 * s / self.n2[i];
            a[i] = gs * dmu;
            b[i] = gs * dexx;
            c[i] = gs * dexy;
        }
        // the zero-padded symmetric filter is its own adjoint
        let ga = blur_same(&a, self.w, self.h);
        let gb = blur_same(&b, self.w, self.h);
        let gc = blur_same(&c, self.w, self.h);
        (0..n).map(|i| ga[i] + 2.0 * x[i] * gb[i] + y[i] * gc[i]).collect()
    }
}

/// Mean SSIM over every window that fits entirely inside the plane.
pub fn ssim_valid(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let field = SsimField::new(x, y, w, h);
    let half = WINDOW / 2;
    let mut sum = 0.0;
    let mut count = 0usize;
    for yy in half..h - half {
        for xx in half..w - half {
            sum += field.map[yy * w + xx];
            count += 1;
        }
    }
    sum / count as f64
}
