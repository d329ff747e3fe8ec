//! Image-quality metrics and seam diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{Camera, Image, SplatModel};
use crate::iso::PointCloud;
use crate::raster::render_mask;
use crate::ssim::{ssim_valid, WINDOW};

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.pixels.len() as f64)
}

/// `10·log10(1/MSE)` for images on [0, 1], capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean windowed SSIM over channels, using only windows that fit inside the
/// image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::TooSmall { width: a.width, height: a.height, window: WINDOW });
    }
    let (w, h, ch) = (a.width, a.height, a.channels);
    let plane = |img: &Image, c: usize| -> Vec<f64> { (0..w * h).map(|p| img.pixels[p * ch + c]).collect() };
    let total: f64 = (0..ch).map(|c| ssim_valid(&plane(a, c), &plane(b, c), w, h)).sum();
    Ok(total / ch as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub psnr: f64,
    pub ssim: f64,
    pub per_view: Vec<ViewMetrics>,
}

/// Averages PSNR and SSIM over `(rendered, truth)` pairs.
pub fn evaluate(pairs: &[(Image, Image)]) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(Error::NoViews);
    }
    let per_view = pairs
        .iter()
        .enumerate()
        .map(|(view, (r, t))| Ok(ViewMetrics { view, psnr: psnr(r, t)?, ssim: ssim(r, t)? }))
        .collect::<Result<Vec<_>>>()?;
    let n = per_view.len() as f64;
    Ok(EvalResult {
        psnr: per_view.iter().map(|v| v.psnr).sum::<f64>() / n,
        ssim: per_view.iter().map(|v| v.ssim).sum::<f64>() / n,
        per_view,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandError {
    pub band_mae: f64,
    pub interior_mae: f64,
    /// `band_mae / interior_mae`; 1 when both are zero.
    pub ratio: f64,
}

/// Pixels of `truth` that differ from the background color.
pub fn foreground_mask(truth: &Image, background: [f64; 3]) -> Image {
    let mut m = Image::new(truth.width, truth.height, 1);
    for p in 0..truth.width * truth.height {
        let px = &truth.pixels[p * truth.channels..(p + 1) * truth.channels];
        if px.iter().zip(&background).any(|(v, b)| (v - b).abs() > 1e-6) {
            m.pixels[p] = 1.0;
        }
    }
    m
}

/// Mean absolute error inside the band versus the rest of the foreground.
pub fn boundary_band_error(rendered: &Image, truth: &Image, band_mask: &Image, foreground: &Image) -> Result<BandError> {
    check_shapes(rendered, truth)?;
    for (name, m) in [("band mask", band_mask), ("foreground mask", foreground)] {
        if m.width != truth.width || m.height != truth.height || m.channels != 1 {
            return Err(Error::DimensionMismatch(format!("{name} does not match the image")));
        }
    }
    let ch = truth.channels;
    let (mut band, mut nb, mut inner, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for p in 0..truth.width * truth.height {
        if foreground.pixels[p] <= 0.5 {
            continue;
        }
        let err: f64 = (0..ch).map(|c| (rendered.pixels[p * ch + c] - truth.pixels[p * ch + c]).abs()).sum::<f64>() / ch as f64;
        if band_mask.pixels[p] > 0.5 {
            band += err;
            nb += 1;
        } else {
            inner += err;
            ni += 1;
        }
    }
    if nb == 0 {
        return Err(Error::EmptyBand);
    }
    if ni == 0 {
        return Err(Error::EmptyInterior);
    }
    let (band_mae, interior_mae) = (band / nb as f64, inner / ni as f64);
    let ratio = if band_mae == 0.0 && interior_mae == 0.0 { 1.0 } else { band_mae / interior_mae };
    Ok(BandError { band_mae, interior_mae, ratio })
}

/// A cut plane `position[axis] = value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPlane {
    pub axis: usize,
    pub value: f64,
}

/// Marks pixels within `width_px` of the projection of any surface point
/// lying within `seam_distance` of a cut plane.
pub fn seam_band_mask(cloud: &PointCloud, planes: &[CutPlane], cam: &Camera, width_px: f64, seam_distance: f64) -> Image {
    let seam: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| p.position)
        .filter(|p| planes.iter().any(|c| (p[c.axis] - c.value).abs() <= seam_distance))
        .collect();
    render_mask(&seam, cam, 0.0, width_px)
}

/// Number of Gaussians whose center, in at least `min_views` of the views,
/// projects outside that view's coverage mask (or outside the frame).
pub fn outside_coverage_count(model: &SplatModel, views: &[(Camera, Image)], min_views: usize) -> usize {
    model
        .gaussians
        .iter()
        .filter(|g| {
            let outside = views
                .iter()
                .filter(|(cam, mask)| {
                    let Some(m) = cam.project_point(g.mu) else { return false };
                    let (x, y) = (m.x.floor(), m.y.floor());
                    if x < 0.0 || y < 0.0 || x >= cam.width as f64 || y >= cam.height as f64 {
                        return true;
                    }
                    mask.get(x as usize, y as usize, 0) <= 0.5
                })
                .count();
            outside >= min_views
        })
        .count()
}

/// An image pair whose PSNR is `target_db`: a mid-grey image and a copy
/// offset by ±√MSE in a checkerboard.
pub fn fixture_pair_for_psnr(width: usize, height: usize, target_db: f64) -> (Image, Image) {
    let delta = 10f64.powf(-target_db / 10.0).sqrt();
    let a = Image::filled(width, height, 3, 0.5);
    let mut b = a.clone();
    for y in 0..height {
        for x in 0..width {
            let s = if (x + y) % 2 == 0 { delta } else { -delta };
            for c in 0..3 {
                b.set(x, y, c, 0.5 + s);
            }
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssim::{gaussian_taps, C1, C2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_pixels(w, h, 3, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Explicit per-window SSIM with a 2-D Gaussian kernel, no separable
    /// filtering or padding.
    fn naive_ssim(a: &Image, b: &Image) -> f64 {
        let t = gaussian_taps();
        let mut total = 0.0;
        for c in 0..a.channels {
            let mut sum = 0.0;
            let mut count = 0;
            for y0 in 0..=a.height - WINDOW {
                for x0 in 0..=a.width - WINDOW {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..WINDOW {
                        for i in 0..WINDOW {
                            let wgt = t[i] * t[j];
                            let p = a.get(x0 + i, y0 + j, c);
                            let q = b.get(x0 + i, y0 + j, c);
                            mx += wgt * p;
                            my += wgt * q;
                            xx += wgt * p * p;
                            yy += wgt * q * q;
                            xy += wgt * p * q;
                        }
                    }
                    let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    sum += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                    count += 1;
                }
            }
            total += sum / count as f64;
        }
        total / a.channels as f64
    }

    #[test]
    fn identical_psnr_is_capped() {
        let a = random(1, 12, 12);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn half_grey_psnr() {
        let a = Image::new(16, 16, 3);
        let b = Image::filled(16, 16, 3, 0.5);
        let expected = 10.0 * 4f64.log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(format!("{:.2}", psnr(&a, &b).unwrap()), "6.02");
    }

    #[test]
    fn psnr_fixture_round_trips() {
        let (a, b) = fixture_pair_for_psnr(64, 64, 30.04);
        assert_eq!(format!("{:.2}", psnr(&a, &b).unwrap()), "30.04");
    }

    #[test]
    fn ssim_against_naive_oracle() {
        let a = Image::filled(16, 16, 3, 0.5);
        let b = Image::filled(16, 16, 3, 0.6);
        assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-12);
        let (a, b) = (random(2, 19, 14), random(3, 19, 14));
        assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ssim_negative_below_one() {
        let a = random(4, 16, 16);
        let mut neg = a.clone();
        for v in &mut neg.pixels {
            *v = 1.0 - *v;
        }
        assert!(ssim(&a, &neg).unwrap() < 1.0);
    }

    #[test]
    fn ssim_errors() {
        let a = random(5, 10, 16);
        assert!(matches!(ssim(&a, &a), Err(Error::TooSmall { .. })));
        assert!(matches!(ssim(&random(6, 16, 16), &random(6, 17, 16)), Err(Error::DimensionMismatch(_))));
        assert!(matches!(psnr(&random(6, 16, 16), &random(6, 17, 16)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = random(7, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let unit: Vec<f64> = (0..a.pixels.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let mut b = a.clone();
            for (v, n) in b.pixels.iter_mut().zip(&unit) {
                *v += amp * n;
            }
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn metrics_symmetric(s1 in 0u64..1000, s2 in 0u64..1000, w in 11usize..24, h in 11usize..24) {
            let (a, b) = (random(s1, w, h), random(s2 + 1000, w, h));
            prop_assert_eq!(psnr(&a, &b).unwrap().to_bits(), psnr(&b, &a).unwrap().to_bits());
            prop_assert_eq!(ssim(&a, &b).unwrap().to_bits(), ssim(&b, &a).unwrap().to_bits());
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!(ssim(&a, &b).unwrap() <= 1.0);
        }
    }

    fn stripe_fixture() -> (Image, Image, Image) {
        let truth = random(9, 20, 20);
        let mut band = Image::new(20, 20, 1);
        for y in 0..20 {
            for x in 9..11 {
                band.set(x, y, 0, 1.0);
            }
        }
        (truth, band, Image::filled(20, 20, 1, 1.0))
    }

    #[test]
    fn band_error_identical() {
        let (truth, band, fg) = stripe_fixture();
        let e = boundary_band_error(&truth, &truth, &band, &fg).unwrap();
        assert_eq!((e.band_mae, e.interior_mae, e.ratio), (0.0, 0.0, 1.0));
    }

    #[test]
    fn band_error_white_stripe() {
        let (truth, band, fg) = stripe_fixture();
        let mut rendered = truth.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for v in &mut rendered.pixels {
            *v = (*v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
        }
        for y in 0..20 {
            for x in 9..11 {
                for c in 0..3 {
                    rendered.set(x, y, c, 1.0);
                }
            }
        }
        assert!(boundary_band_error(&rendered, &truth, &band, &fg).unwrap().ratio > 1.0);
    }

    #[test]
    fn band_error_degenerate_masks() {
        let (truth, _, fg) = stripe_fixture();
        let all = Image::filled(20, 20, 1, 1.0);
        assert!(matches!(boundary_band_error(&truth, &truth, &all, &fg), Err(Error::EmptyInterior)));
        let none = Image::new(20, 20, 1);
        assert!(matches!(boundary_band_error(&truth, &truth, &none, &fg), Err(Error::EmptyBand)));
    }

    #[test]
    fn foreground_of_white_is_empty() {
        let white = Image::filled(8, 8, 3, 1.0);
        assert!(foreground_mask(&white, [1.0; 3]).pixels.iter().all(|v| *v == 0.0));
    }
}
