//! Tile-based splat rasterizer with an analytic backward pass.
//!
//! Splats are projected, sorted once per view by camera depth (ties broken by
//! index) and binned into square tiles. Each pixel composites the splats of
//! its tile front to back:
//!
//! ```text
//! C = Σ cᵢ αᵢ Tᵢ + T_final · background,   Tᵢ = Π_{k<i} (1 - αₖ)
//! αᵢ = sigmoid(opacity) · exp(-½ dᵀ Σ₂⁻¹ d)
//! ```
//!
//! Tiles only restrict which splats a pixel visits; a splat is tested against
//! a pixel with the exact footprint predicate, so the tile size never changes
//! the image.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{project_backward, project_traced, Camera, Image, ProjectionTrace, SplatModel};
use crate::grad::{GaussianGrad, GradientBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Contributions with α below this are skipped.
    pub alpha_cutoff: f64,
    /// Footprint radius in standard deviations.
    pub sigma_cutoff: f64,
    pub background: [f64; 3],
    pub transmittance_floor: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_cutoff: 1.0 / 255.0,
            sigma_cutoff: 3.0,
            background: [1.0; 3],
            transmittance_floor: 1e-4,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || !self.tile_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("tile_size {} is not a power of two", self.tile_size)));
        }
        if !(self.alpha_cutoff > 0.0 && self.alpha_cutoff < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha_cutoff {} outside (0, 1)", self.alpha_cutoff)));
        }
        if !(1.0..=6.0).contains(&self.sigma_cutoff) {
            return Err(Error::InvalidConfig(format!("sigma_cutoff {} outside [1, 6]", self.sigma_cutoff)));
        }
        if !(self.transmittance_floor >= 0.0 && self.transmittance_floor < 1.0) {
            return Err(Error::InvalidConfig("transmittance_floor outside [0, 1)".into()));
        }
        Ok(())
    }

    /// Tile size covering the whole image in one tile.
    pub fn untiled(mut self, cam: &Camera) -> Self {
        self.tile_size = cam.width.max(cam.height).next_power_of_two();
        self
    }
}

/// A splat after projection, as seen by the compositor.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat2D {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    /// Inclusive pixel ranges `[x0, x1] × [y0, y1]`.
    bbox: (usize, usize, usize, usize),
    trace: ProjectionTrace,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    pub alpha: Image,
    pub per_pixel_contributor_count: Vec<u32>,
    /// Visible Gaussians, front to back.
    pub splat_order: Vec<usize>,
    pub iteration: u64,
    cam: Camera,
    cfg: RenderConfig,
    splats: Vec<Option<Splat2D>>,
    tiles_x: usize,
    tile_lists: Vec<Vec<u32>>,
    /// Number of tile-list entries each pixel visited before terminating.
    visited: Vec<u32>,
}

/// Per-pixel breakdown of the compositing weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTrace {
    /// `(gaussian index, αᵢ Tᵢ)` in compositing order.
    pub weights: Vec<(usize, f64)>,
    pub final_transmittance: f64,
}

impl RenderOutput {
    pub fn camera(&self) -> &Camera {
        &self.cam
    }

    pub fn config(&self) -> &RenderConfig {
        &self.cfg
    }

    pub fn pixel_trace(&self, x: usize, y: usize) -> PixelTrace {
        let list = &self.tile_lists[self.tile_of(x, y)];
        let p = y * self.cam.width + x;
        let mut t = 1.0;
        let mut weights = Vec::new();
        for &si in &list[..self.visited[p] as usize] {
            let s = self.splats[si as usize].as_ref().expect("listed splats are visible");
            if let Some((a, _, _)) = splat_alpha(s, x, y, &self.cfg) {
                weights.push((si as usize, a * t));
                t *= 1.0 - a;
            }
        }
        PixelTrace { weights, final_transmittance: t }
    }

    /// True if the Gaussian survived culling in this view.
    pub fn is_visible(&self, i: usize) -> bool {
        self.splats.get(i).is_some_and(|s| s.is_some())
    }

    pub fn projected_mean(&self, i: usize) -> Option<[f64; 2]> {
        self.splats.get(i)?.as_ref().map(|s| [s.mean.x, s.mean.y])
    }

    fn tile_of(&self, x: usize, y: usize) -> usize {
        (y / self.cfg.tile_size) * self.tiles_x + x / self.cfg.tile_size
    }
}

#[inline]
fn splat_alpha(s: &Splat2D, x: usize, y: usize, cfg: &RenderConfig) -> Option<(f64, f64, Vector2<f64>)> {
    let d = Vector2::new(x as f64 + 0.5 - s.mean.x, y as f64 + 0.5 - s.mean.y);
    let q = s.conic[(0, 0)] * d.x * d.x + 2.0 * s.conic[(0, 1)] * d.x * d.y + s.conic[(1, 1)] * d.y * d.y;
    if !(q <= cfg.sigma_cutoff * cfg.sigma_cutoff) {
        return None;
    }
    let g = (-0.5 * q).exp();
    let a = s.opacity * g;
    if a < cfg.alpha_cutoff {
        return None;
    }
    Some((a, g, d))
}

fn project_all(model: &SplatModel, cam: &Camera, cfg: &RenderConfig) -> Vec<Option<Splat2D>> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    model
        .gaussians
        .iter()
        .map(|g| {
            let (p, trace) = project_traced(g, cam).ok()?;
            if p.depth >= cam.far {
                return None;
            }
            let det = p.cov2d.determinant();
            if !(det > 0.0) {
                return None;
            }
            let conic = Matrix2::new(p.cov2d[(1, 1)], -p.cov2d[(0, 1)], -p.cov2d[(1, 0)], p.cov2d[(0, 0)]) / det;
            let rx = cfg.sigma_cutoff * p.cov2d[(0, 0)].sqrt();
            let ry = cfg.sigma_cutoff * p.cov2d[(1, 1)].sqrt();
            // one pixel of slack; the per-pixel predicate is exact
            let x0 = (p.mean2d.x - rx - 1.5).ceil();
            let x1 = (p.mean2d.x + rx + 0.5).floor();
            let y0 = (p.mean2d.y - ry - 1.5).ceil();
            let y1 = (p.mean2d.y + ry + 0.5).floor();
            if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= w - 1.0 && y0 <= h - 1.0) {
                return None;
            }
            let bbox = (
                x0.max(0.0) as usize,
                x1.min(w - 1.0) as usize,
                y0.max(0.0) as usize,
                y1.min(h - 1.0) as usize,
            );
            Some(Splat2D {
                mean: p.mean2d,
                conic,
                opacity: g.opacity(),
                color: g.color,
                depth: p.depth,
                bbox,
                trace,
            })
        })
        .collect()
}

fn depth_order(splats: &[Option<Splat2D>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| splats[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (splats[a].unwrap().depth, splats[b].unwrap().depth);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order
}

fn bin_tiles(splats: &[Option<Splat2D>], order: &[usize], tile: usize, tiles_x: usize, tiles_y: usize) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &i in order {
        let (x0, x1, y0, y1) = splats[i].unwrap().bbox;
        for ty in y0 / tile..=y1 / tile {
            for tx in x0 / tile..=x1 / tile {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    lists
}

/// Splits `0..n` into `parts` contiguous, nearly equal ranges.
pub(crate) fn bands(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.clamp(1, n.max(1));
    (0..parts).map(|k| (k * n / parts)..((k + 1) * n / parts)).collect()
}

pub fn render(model: &SplatModel, cam: &Camera, cfg: &RenderConfig) -> RenderOutput {
    render_with_shards(model, cam, cfg, 1)
}

/// Renders with the pixel rows split into `shards` bands of tile rows that
/// are composited concurrently. The image does not depend on `shards`.
pub fn render_with_shards(model: &SplatModel, cam: &Camera, cfg: &RenderConfig, shards: usize) -> RenderOutput {
    let (w, h, tile) = (cam.width, cam.height, cfg.tile_size);
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);
    let splats = project_all(model, cam, cfg);
    let order = depth_order(&splats);
    let tile_lists = bin_tiles(&splats, &order, tile, tiles_x, tiles_y);

    let mut color = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    let mut counts = vec![0u32; w * h];
    let mut visited = vec![0u32; w * h];

    let render_rows = |rows: std::ops::Range<usize>, color: &mut [f64], alpha: &mut [f64], counts: &mut [u32], visited: &mut [u32]| {
        for y in rows.clone() {
            for x in 0..w {
                let list = &tile_lists[(y / tile) * tiles_x + x / tile];
                let p = (y - rows.start) * w + x;
                let mut t = 1.0;
                let mut c = [0.0; 3];
                let mut n = 0;
                let mut contributors = 0;
                for (k, &si) in list.iter().enumerate() {
                    n = k + 1;
                    let s = splats[si as usize].as_ref().unwrap();
                    let Some((a, _, _)) = splat_alpha(s, x, y, cfg) else { continue };
                    let wgt = a * t;
                    for ch in 0..3 {
                        c[ch] += s.color[ch] * wgt;
                    }
                    t *= 1.0 - a;
                    contributors += 1;
                    if t < cfg.transmittance_floor {
                        break;
                    }
                }
                for ch in 0..3 {
                    color[p * 3 + ch] = c[ch] + t * cfg.background[ch];
                }
                alpha[p] = 1.0 - t;
                counts[p] = contributors;
                visited[p] = n as u32;
            }
        }
    };

    let row_bands: Vec<_> = bands(tiles_y, shards).into_iter().map(|r| (r.start * tile)..(r.end * tile).min(h)).collect();
    if row_bands.len() <= 1 {
        render_rows(0..h, &mut color.pixels, &mut alpha.pixels, &mut counts, &mut visited);
    } else {
        std::thread::scope(|scope| {
            let mut color_rest = color.pixels.as_mut_slice();
            let mut alpha_rest = alpha.pixels.as_mut_slice();
            let mut counts_rest = counts.as_mut_slice();
            let mut visited_rest = visited.as_mut_slice();
            for rows in row_bands {
                let n = rows.len() * w;
                let (c, cr) = std::mem::take(&mut color_rest).split_at_mut(n * 3);
                let (a, ar) = std::mem::take(&mut alpha_rest).split_at_mut(n);
                let (k, kr) = std::mem::take(&mut counts_rest).split_at_mut(n);
                let (v, vr) = std::mem::take(&mut visited_rest).split_at_mut(n);
                color_rest = cr;
                alpha_rest = ar;
                counts_rest = kr;
                visited_rest = vr;
                let render_rows = &render_rows;
                scope.spawn(move || render_rows(rows, c, a, k, v));
            }
        });
    }

    RenderOutput {
        color,
        alpha,
        per_pixel_contributor_count: counts,
        splat_order: order,
        iteration: model.iteration,
        cam: *cam,
        cfg: *cfg,
        splats,
        tiles_x,
        tile_lists,
        visited,
    }
}

/// Gradients with respect to the projected quantities of one splat.
#[derive(Clone, Copy, Debug, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    /// d/d(conic) as (a00, a01, a11); the off-diagonal entry is the
    /// derivative with respect to each of the two symmetric entries.
    conic: [f64; 3],
    opacity_logit: f64,
    color: [f64; 3],
    touched: bool,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity_logit += o.opacity_logit;
        self.touched |= o.touched;
    }
}

pub fn backward(
    model: &SplatModel,
    cam: &Camera,
    cfg: &RenderConfig,
    output: &RenderOutput,
    dl_dpixels: &Image,
) -> Result<GradientBuffer> {
    backward_with_shards(model, cam, cfg, output, dl_dpixels, 1)
}

/// Backward pass of [`render`]. Each tile row accumulates its own gradient
/// buffer; the buffers are summed in ascending row order, so the result is
/// bit-identical for every shard count.
pub fn backward_with_shards(
    model: &SplatModel,
    cam: &Camera,
    cfg: &RenderConfig,
    output: &RenderOutput,
    dl_dpixels: &Image,
    shards: usize,
) -> Result<GradientBuffer> {
    if output.iteration != model.iteration || output.splats.len() != model.len() {
        return Err(Error::StaleForward { rendered: output.iteration, model: model.iteration });
    }
    if output.cam != *cam || output.cfg != *cfg {
        return Err(Error::StaleForward { rendered: output.iteration, model: model.iteration });
    }
    if dl_dpixels.width != cam.width || dl_dpixels.height != cam.height || dl_dpixels.channels != 3 {
        return Err(Error::DimensionMismatch(format!(
            "pixel gradient {}x{}x{} for a {}x{} camera",
            dl_dpixels.width, dl_dpixels.height, dl_dpixels.channels, cam.width, cam.height
        )));
    }
    let n = model.len();
    let (w, h, tile) = (cam.width, cam.height, cfg.tile_size);
    let tiles_y = h.div_ceil(tile);

    let tile_row = |ty: usize| -> Vec<ScreenGrad> {
        let mut acc = vec![ScreenGrad::default(); n];
        let mut stack: Vec<(u32, f64, f64, Vector2<f64>, f64)> = Vec::new();
        for y in ty * tile..((ty + 1) * tile).min(h) {
            for x in 0..w {
                let p = y * w + x;
                let gc = &dl_dpixels.pixels[p * 3..p * 3 + 3];
                if gc.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let list = &output.tile_lists[output.tile_of(x, y)];
                stack.clear();
                let mut t = 1.0;
                for &si in &list[..output.visited[p] as usize] {
                    let s = output.splats[si as usize].as_ref().unwrap();
                    if let Some((a, g, d)) = splat_alpha(s, x, y, cfg) {
                        stack.push((si, a, g, d, t));
                        t *= 1.0 - a;
                    }
                }
                // suffix composite of everything behind the current splat
                let mut rest = cfg.background;
                for &(si, a, _g, d, t_before) in stack.iter().rev() {
                    let s = output.splats[si as usize].as_ref().unwrap();
                    let e = &mut acc[si as usize];
                    let mut g_alpha = 0.0;
                    for ch in 0..3 {
                        e.color[ch] += gc[ch] * a * t_before;
                        g_alpha += gc[ch] * t_before * (s.color[ch] - rest[ch]);
                        rest[ch] = a * s.color[ch] + (1.0 - a) * rest[ch];
                    }
                    e.touched = true;
                    e.opacity_logit += g_alpha * a * (1.0 - s.opacity);
                    let g_q = -0.5 * a * g_alpha;
                    let ad = s.conic * d;
                    e.mean[0] -= g_q * 2.0 * ad.x;
                    e.mean[1] -= g_q * 2.0 * ad.y;
                    e.conic[0] += g_q * d.x * d.x;
                    e.conic[1] += g_q * d.x * d.y;
                    e.conic[2] += g_q * d.y * d.y;
                }
            }
        }
        acc
    };

    let mut per_row: Vec<Vec<ScreenGrad>> = Vec::with_capacity(tiles_y);
    let shard_ranges = bands(tiles_y, shards);
    if shard_ranges.len() <= 1 {
        per_row.extend((0..tiles_y).map(tile_row));
    } else {
        let results: Vec<Vec<Vec<ScreenGrad>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = shard_ranges
                .into_iter()
                .map(|rows| {
                    let tile_row = &tile_row;
                    scope.spawn(move || rows.map(tile_row).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("shard worker panicked")).collect()
        });
        per_row.extend(results.into_iter().flatten());
    }

    let mut total = vec![ScreenGrad::default(); n];
    for row in &per_row {
        for (t, r) in total.iter_mut().zip(row) {
            t.add(r);
        }
    }

    let mut out = GradientBuffer::zeros(n);
    for (i, sg) in total.iter().enumerate() {
        let Some(s) = output.splats[i].as_ref() else { continue };
        if !sg.touched {
            continue;
        }
        // Σ₂⁻¹ = A  ⇒  dL/dΣ₂ = -A (dL/dA) A
        let g_conic = Matrix2::new(sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2]);
        let g_cov = -(s.conic * g_conic * s.conic);
        let g_cov = 0.5 * (g_cov + g_cov.transpose());
        let g_mean = Vector2::new(sg.mean[0], sg.mean[1]);
        let pg = project_backward(&model.gaussians[i], &s.trace, g_mean, g_cov);
        out.grads[i] = GaussianGrad {
            mu: pg.mu,
            log_scale: pg.log_scale,
            rot: pg.rot,
            opacity_logit: sg.opacity_logit,
            color: sg.color,
        };
        let ndc = Vector2::new(g_mean.x * 0.5 * w as f64, g_mean.y * 0.5 * h as f64);
        out.screen_grad_norm[i] = ndc.norm();
        out.touch_count[i] = 1;
    }
    Ok(out)
}

/// Binary coverage mask: a pixel is 1 when its center lies within
/// `footprint_px + dilation_px` of the projection of any point.
pub fn render_mask(points: &[[f64; 3]], cam: &Camera, footprint_px: f64, dilation_px: f64) -> Image {
    let (w, h) = (cam.width, cam.height);
    let mut mask = Image::new(w, h, 1);
    let r = footprint_px.max(0.0) + dilation_px.max(0.0);
    let r2 = r * r;
    for p in points {
        if cam.to_camera_space(*p).z >= cam.far {
            continue;
        }
        let Some(m) = cam.project_point(*p) else { continue };
        let x0 = (m.x - r - 0.5).ceil().max(0.0);
        let x1 = (m.x + r - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (m.y - r - 0.5).ceil().max(0.0);
        let y1 = (m.y + r - 0.5).floor().min(h as f64 - 1.0);
        if x1 < x0 || y1 < y0 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            let dy = y as f64 + 0.5 - m.y;
            for x in x0 as usize..=x1 as usize {
                let dx = x as f64 + 0.5 - m.x;
                if dx * dx + dy * dy <= r2 {
                    mask.pixels[y * w + x] = 1.0;
                }
            }
        }
    }
    mask
}
