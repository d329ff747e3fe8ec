//! Per-partition optimization: masked L1 + D-SSIM loss, Adam with per-group
//! learning rates, periodic densification and pruning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{rotation_matrix, Camera, Gaussian3D, Image, SplatModel};
use crate::grad::GradientBuffer;
use crate::iso::{knn_mean_distances, PointCloud};
use crate::raster::{backward_with_shards, render_mask, render_with_shards, RenderConfig};
use crate::ssim::SsimField;

/// Ground truth and foreground mask for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainView {
    pub cam: Camera,
    pub ground_truth: Image,
    pub mask: Image,
}

impl TrainView {
    pub fn new(cam: Camera, ground_truth: Image, mask: Image) -> Result<Self> {
        let v = Self { cam, ground_truth, mask };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.cam.width, self.cam.height);
        let gt = &self.ground_truth;
        let m = &self.mask;
        if gt.width != w || gt.height != h || gt.channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "ground truth {}x{}x{} for a {w}x{h} camera",
                gt.width, gt.height, gt.channels
            )));
        }
        if m.width != w || m.height != h || m.channels != 1 {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{}x{} for a {w}x{h} camera",
                m.width, m.height, m.channels
            )));
        }
        Ok(())
    }

    pub fn masked_pixels(&self) -> usize {
        self.mask.pixels.iter().filter(|&&m| m > 0.5).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr_mu: f64,
    /// Ratio between the initial and final position learning rate; the rate
    /// decays exponentially over the run.
    pub lr_mu_decay: f64,
    pub lr_scale: f64,
    pub lr_rot: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub loss_lambda: f64,
    pub densify_interval: u64,
    pub densify_grad_threshold: f64,
    pub prune_opacity: f64,
    pub densify_stop_fraction: f64,
    /// Splats larger than this fraction of the scene extent are split rather
    /// than cloned.
    pub percent_dense: f64,
    pub max_gaussians: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub render: RenderConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr_mu: 1.6e-4,
            lr_mu_decay: 100.0,
            lr_scale: 5e-3,
            lr_rot: 1e-3,
            lr_opacity: 0.05,
            lr_color: 2.5e-3,
            loss_lambda: 0.2,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            prune_opacity: 5e-3,
            densify_stop_fraction: 0.5,
            percent_dense: 0.01,
            max_gaussians: 50_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            render: RenderConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_mu, self.lr_scale, self.lr_rot, self.lr_opacity, self.lr_color];
        if lrs.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(self.lr_mu_decay >= 1.0) {
            return Err(Error::InvalidConfig("lr_mu_decay must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_lambda) {
            return Err(Error::InvalidConfig(format!("loss_lambda {} outside [0, 1]", self.loss_lambda)));
        }
        if !(0.0..=1.0).contains(&self.densify_stop_fraction) {
            return Err(Error::InvalidConfig("densify_stop_fraction outside [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("invalid Adam parameters".into()));
        }
        self.render.validate()
    }

    /// Position learning rate at `step` (0-based).
    pub fn lr_mu_at(&self, step: u64) -> f64 {
        if self.iterations <= 1 {
            return self.lr_mu;
        }
        let t = step as f64 / (self.iterations - 1) as f64;
        self.lr_mu * self.lr_mu_decay.powf(-t)
    }

    fn lrs(&self, step: u64) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0..3].fill(self.lr_mu_at(step));
        out[3..6].fill(self.lr_scale);
        out[6..10].fill(self.lr_rot);
        out[10] = self.lr_opacity;
        out[11..14].fill(self.lr_color);
        out
    }

    fn densify_until(&self) -> u64 {
        (self.densify_stop_fraction * self.iterations as f64).floor() as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub l1: f64,
    /// Mean SSIM over masked-in window centers (1 when nothing is masked).
    pub ssim: f64,
    pub dl_dpixels: Image,
}

/// `(1-λ)·L1 + λ·(1-SSIM)` restricted to the mask.
///
/// Both images are multiplied by the mask before the SSIM windows are
/// evaluated and only windows centred on masked-in pixels are averaged, so
/// values outside the mask never reach the loss or its gradient.
pub fn masked_loss(rendered: &Image, view: &TrainView, loss_lambda: f64) -> Result<LossOutput> {
    let gt = &view.ground_truth;
    if !rendered.same_shape(gt) || rendered.channels != 3 {
        return Err(Error::DimensionMismatch(format!(
            "rendered {}x{}x{} vs ground truth {}x{}x{}",
            rendered.width, rendered.height, rendered.channels, gt.width, gt.height, gt.channels
        )));
    }
    if view.mask.width != gt.width || view.mask.height != gt.height || view.mask.channels != 1 {
        return Err(Error::DimensionMismatch("mask does not match the ground truth".into()));
    }
    let (w, h) = (gt.width, gt.height);
    let n = w * h;
    let mask: Vec<bool> = view.mask.pixels.iter().map(|&m| m > 0.5).collect();
    let count = mask.iter().filter(|&&m| m).count();
    let mut grad = Image::new(w, h, 3);
    if count == 0 {
        return Ok(LossOutput { loss: 0.0, l1: 0.0, ssim: 1.0, dl_dpixels: grad });
    }
    let norm = 1.0 / (3 * count) as f64;

    let mut l1 = 0.0;
    for p in (0..n).filter(|&p| mask[p]) {
        for c in 0..3 {
            let d = rendered.pixels[p * 3 + c] - gt.pixels[p * 3 + c];
            l1 += d.abs();
            grad.pixels[p * 3 + c] = (1.0 - loss_lambda) * norm * sign(d);
        }
    }
    l1 /= (3 * count) as f64;

    let mut ssim_sum = 0.0;
    if loss_lambda > 0.0 {
        let weight: Vec<f64> = mask.iter().map(|&m| if m { -loss_lambda * norm } else { 0.0 }).collect();
        for c in 0..3 {
            let x: Vec<f64> = (0..n).map(|p| if mask[p] { rendered.pixels[p * 3 + c] } else { 0.0 }).collect();
            let y: Vec<f64> = (0..n).map(|p| if mask[p] { gt.pixels[p * 3 + c] } else { 0.0 }).collect();
            let field = SsimField::new(&x, &y, w, h);
            ssim_sum += (0..n).filter(|&p| mask[p]).map(|p| field.map[p]).sum::<f64>();
            let gx = field.backward(&x, &y, &weight);
            for p in (0..n).filter(|&p| mask[p]) {
                grad.pixels[p * 3 + c] += gx[p];
            }
        }
    } else {
        ssim_sum = (3 * count) as f64;
    }
    let ssim = ssim_sum / (3 * count) as f64;
    let loss = (1.0 - loss_lambda) * l1 + loss_lambda * (1.0 - ssim);
    Ok(LossOutput { loss, l1, ssim, dl_dpixels: grad })
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adam moments for every parameter of every Gaussian, in
/// [`crate::grad::GaussianGrad::flat`] order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<[f64; 14]>,
    pub v: Vec<[f64; 14]>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { step: 0, m: vec![[0.0; 14]; n], v: vec![[0.0; 14]; n] }
    }

    /// Reorders the moments to follow a densify/prune step.
    pub fn remap(&mut self, lineage: &[Origin]) {
        let pick = |src: &[[f64; 14]], o: &Origin| match o {
            Origin::Kept(i) => src[*i],
            _ => [0.0; 14],
        };
        self.m = lineage.iter().map(|o| pick(&self.m, o)).collect();
        self.v = lineage.iter().map(|o| pick(&self.v, o)).collect();
    }
}

fn unflat(g: &mut Gaussian3D, delta: &[f64; 14]) {
    for a in 0..3 {
        g.mu[a] -= delta[a];
        g.log_scale[a] -= delta[3 + a];
        g.color[a] -= delta[11 + a];
    }
    for a in 0..4 {
        g.rot[a] -= delta[6 + a];
    }
    g.opacity_logit -= delta[10];
}

/// One Adam update followed by quaternion renormalization and scale and color
/// clamping.
pub fn adam_step(model: &mut SplatModel, grads: &GradientBuffer, state: &mut AdamState, cfg: &TrainConfig, step: u64) {
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let lrs = cfg.lrs(step);
    for (i, g) in model.gaussians.iter_mut().enumerate() {
        let flat = grads.grads[i].flat();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut delta = [0.0; 14];
        for k in 0..14 {
            m[k] = b1 * m[k] + (1.0 - b1) * flat[k];
            v[k] = b2 * v[k] + (1.0 - b2) * flat[k] * flat[k];
            delta[k] = lrs[k] * (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.adam_eps);
        }
        unflat(g, &delta);
        g.sanitize();
    }
}

/// Where an entry of a densified model came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Kept(usize),
    Clone(usize),
    Split(usize),
}

/// Clones small and splits large Gaussians whose mean screen gradient
/// exceeds the threshold, then prunes transparent ones.
///
/// Split children replace their parent, each at 0.8× its scale, with means
/// drawn from the parent distribution. Returns the new model and, per entry,
/// its origin.
pub fn densify_and_prune(
    model: &SplatModel,
    stats: &GradientBuffer,
    cfg: &TrainConfig,
    scene_extent: f64,
    rng: &mut ChaCha8Rng,
) -> (SplatModel, Vec<Origin>) {
    debug_assert_eq!(model.len(), stats.len());
    let split_above = cfg.percent_dense * scene_extent;
    let mut budget = cfg.max_gaussians.saturating_sub(model.len());
    let mut clones = Vec::new();
    let mut splits = Vec::new();
    for (i, g) in model.gaussians.iter().enumerate() {
        if stats.mean_screen_grad(i) <= cfg.densify_grad_threshold || budget == 0 {
            continue;
        }
        budget -= 1;
        if g.max_scale() > split_above {
            splits.push(i);
        } else {
            clones.push(i);
        }
    }

    let mut out: Vec<(Gaussian3D, Origin)> = Vec::with_capacity(model.len() + clones.len() + splits.len());
    let mut split_iter = splits.iter().peekable();
    for (i, g) in model.gaussians.iter().enumerate() {
        if split_iter.peek() == Some(&&i) {
            split_iter.next();
            continue;
        }
        out.push((*g, Origin::Kept(i)));
    }
    out.extend(clones.iter().map(|&i| (model.gaussians[i], Origin::Clone(i))));
    let shrink = 0.8f64.ln();
    for &i in &splits {
        let parent = &model.gaussians[i];
        let r = rotation_matrix(parent.rot);
        let s = parent.scale();
        for _ in 0..2 {
            let z: [f64; 3] = std::array::from_fn(|a| {
                let n: f64 = StandardNormal.sample(rng);
                s[a] * n
            });
            let off = r * nalgebra::Vector3::from(z);
            let mut child = *parent;
            for a in 0..3 {
                child.mu[a] += off[a];
                child.log_scale[a] += shrink;
            }
            child.sanitize();
            out.push((child, Origin::Split(i)));
        }
    }
    out.retain(|(g, _)| g.opacity() >= cfg.prune_opacity);

    let (gaussians, lineage) = out.into_iter().unzip();
    let dense = SplatModel { gaussians, origin_partition: model.origin_partition, iteration: model.iteration };
    (dense, lineage)
}

/// State handed to the per-step callback.
pub struct Checkpoint<'a> {
    pub iteration: u64,
    pub model: &'a SplatModel,
    pub adam: &'a AdamState,
    pub recent_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: SplatModel,
    pub adam: AdamState,
    pub loss_history: Vec<f64>,
    pub initial_size: usize,
    pub peak_size: usize,
}

impl TrainOutcome {
    /// Mean loss over the last `k` steps.
    pub fn final_loss(&self, k: usize) -> f64 {
        let tail = &self.loss_history[self.loss_history.len().saturating_sub(k.max(1))..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

pub fn train_partition(model: SplatModel, views: &[TrainView], cfg: &TrainConfig, shards: usize) -> Result<TrainOutcome> {
    train_partition_with(model, views, cfg, shards, |_| Ok(()))
}

/// Training loop. `after_step` sees the state after every step, including
/// any densification; an error from it stops training.
pub fn train_partition_with(
    mut model: SplatModel,
    views: &[TrainView],
    cfg: &TrainConfig,
    shards: usize,
    mut after_step: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    if shards == 0 {
        return Err(Error::InvalidConfig("shards must be at least 1".into()));
    }
    cfg.validate()?;
    for v in views {
        v.validate()?;
    }
    let initial_size = model.len();
    let mut peak_size = initial_size;
    let mut adam = AdamState::new(model.len());
    let mut loss_history = Vec::with_capacity(cfg.iterations as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut stats = GradientBuffer::zeros(model.len());
    let scene_extent = scene_extent(&model);

    for step in 0..cfg.iterations {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = &views[order.pop().expect("refilled")];
        let out = render_with_shards(&model, &view.cam, &cfg.render, shards);
        let loss = masked_loss(&out.color, view, cfg.loss_lambda)?;
        let grads = backward_with_shards(&model, &view.cam, &cfg.render, &out, &loss.dl_dpixels, shards)?;
        loss_history.push(loss.loss);
        stats.accumulate_stats(&grads);
        adam_step(&mut model, &grads, &mut adam, cfg, step);
        model.iteration += 1;

        let done = step + 1;
        if cfg.densify_interval > 0 && done % cfg.densify_interval == 0 && done <= cfg.densify_until() {
            let (dense, lineage) = densify_and_prune(&model, &stats, cfg, scene_extent, &mut rng);
            adam.remap(&lineage);
            model = dense;
            peak_size = peak_size.max(model.len());
            stats = GradientBuffer::zeros(model.len());
        }
        after_step(&Checkpoint { iteration: done, model: &model, adam: &adam, recent_loss: loss.loss })?;
    }
    Ok(TrainOutcome { model, adam, loss_history, initial_size, peak_size })
}

/// Half the diagonal of the model's bounding box.
pub fn scene_extent(model: &SplatModel) -> f64 {
    match model.bounds() {
        Some((lo, hi)) => 0.5 * (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt(),
        None => 1.0,
    }
}

/// How ground-truth images and masks are produced from a point cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthConfig {
    /// World-space standard deviation of each point's splat; `None` uses
    /// half the median nearest-neighbor spacing.
    pub scale: Option<f64>,
    pub opacity: f64,
    pub mask_dilation_px: f64,
    /// With masks disabled every pixel is masked in.
    pub masks: bool,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self { scale: None, opacity: 0.95, mask_dilation_px: 2.0, masks: true }
    }
}

impl GroundTruthConfig {
    pub fn resolve_scale(&self, pc: &PointCloud) -> f64 {
        if let Some(s) = self.scale {
            return s;
        }
        if pc.len() < 2 {
            return 0.01;
        }
        let mut d = knn_mean_distances(&pc.positions(), 1);
        d.sort_by(f64::total_cmp);
        0.5 * d[d.len() / 2]
    }

    /// The same config with the scale pinned from `pc`. Partitions render
    /// ground truth from the scene-wide scale, not from their own spacing.
    pub fn resolved(&self, pc: &PointCloud) -> Self {
        Self { scale: Some(self.resolve_scale(pc)), ..*self }
    }
}

/// Seed-splat model that stands in for the scene: one isotropic Gaussian
/// per point at a fixed scale.
pub fn ground_truth_model(pc: &PointCloud, scale: f64, opacity: f64) -> SplatModel {
    SplatModel::new(pc.points.iter().map(|p| Gaussian3D::isotropic(p.position, scale, opacity, p.color)).collect())
}

/// Renders ground truth and masks for each camera from `pc`.
pub fn make_train_views(pc: &PointCloud, cams: &[Camera], gt: &GroundTruthConfig, render: &RenderConfig) -> Result<Vec<TrainView>> {
    let scale = gt.resolve_scale(pc);
    let model = ground_truth_model(pc, scale, gt.opacity);
    let positions = pc.positions();
    cams.iter()
        .map(|cam| {
            cam.validate()?;
            let image = render_with_shards(&model, cam, render, 1).color;
            let mask = if gt.masks {
                // footprint of the nearest point bounds every other one
                let z_min = positions
                    .iter()
                    .map(|p| cam.to_camera_space(*p).z)
                    .filter(|z| *z > cam.near)
                    .fold(f64::INFINITY, f64::min);
                let footprint = if z_min.is_finite() { render.sigma_cutoff * scale * cam.focal() / z_min } else { 0.0 };
                render_mask(&positions, cam, footprint, gt.mask_dilation_px)
            } else {
                Image::filled(cam.width, cam.height, 1, 1.0)
            };
            TrainView::new(*cam, image, mask)
        })
        .collect()
}
