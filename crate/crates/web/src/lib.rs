//! Browser demo. A [`Scene`] holds one isosurface cloud and exposes three
//! operations to the page: orbiting its ground-truth render, previewing the
//! slab partitions with their ghost points, and training splats a few steps
//! at a time.

use isosplat::dist::RigSpec;
use isosplat::gauss::{Camera, DEFAULT_FOV_Y, DEFAULT_RADIUS_FACTOR};
use isosplat::iso::{extract_isosurface, make_volume, seed_gaussians, ColorMap, PointCloud, ScaleRule, VolumeKind};
use isosplat::partition::{default_ghost_margin, partition_cloud};
use isosplat::raster::{backward, render};
use isosplat::train::{adam_step, ground_truth_model, make_train_views, masked_loss, AdamState, GroundTruthConfig, TrainConfig, TrainView};
use isosplat::{Image, RenderConfig, SplatModel};
use wasm_bindgen::prelude::*;

const PALETTE: [[f64; 3]; 4] = [[0.89, 0.35, 0.2], [0.2, 0.55, 0.85], [0.3, 0.7, 0.35], [0.75, 0.55, 0.15]];

fn js(e: isosplat::Error) -> JsError {
    JsError::new(&format!("{} ({})", e, e.kind()))
}

/// Camera on the default orbit around `pc`, angles in degrees.
fn orbit_camera(pc: &PointCloud, azimuth: f64, elevation: f64, resolution: usize) -> Result<Camera, JsError> {
    let (c, r) = pc.bounding_sphere().ok_or_else(|| js(isosplat::Error::EmptyCloud))?;
    let radius = DEFAULT_RADIUS_FACTOR * r.max(1e-6);
    let (az, el) = (azimuth.to_radians(), elevation.clamp(-85.0, 85.0).to_radians());
    let dir = [el.cos() * az.cos(), el.sin(), el.cos() * az.sin()];
    let cam = Camera {
        position: std::array::from_fn(|a| c[a] + radius * dir[a]),
        target: c,
        up: [0.0, 1.0, 0.0],
        fov_y: DEFAULT_FOV_Y,
        width: resolution,
        height: resolution,
        near: 0.01 * radius,
        far: 100.0 * radius,
    };
    cam.validate().map_err(js)?;
    Ok(cam)
}

/// Row-major RGBA8, ready for `ImageData`.
fn rgba(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width * img.height * 4);
    for px in img.pixels.chunks(img.channels) {
        for c in 0..3 {
            out.push((px[c.min(img.channels - 1)].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

struct Trainer {
    model: SplatModel,
    adam: AdamState,
    views: Vec<TrainView>,
    cfg: TrainConfig,
    loss: f64,
}

#[wasm_bindgen]
pub struct Scene {
    cloud: PointCloud,
    truth: SplatModel,
    trainer: Option<Trainer>,
}

#[wasm_bindgen]
impl Scene {
    /// `kind` is `sphere`, `gyroid` or `two-blob`.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, dims: usize) -> Result<Scene, JsError> {
        let kind: VolumeKind = kind.parse().map_err(js)?;
        let vol = make_volume(kind, [dims; 3], 0.0, 0).map_err(js)?;
        let cloud = extract_isosurface(&vol, kind.default_isovalue(), &ColorMap::default()).map_err(js)?;
        let gt = GroundTruthConfig::default();
        let truth = ground_truth_model(&cloud, gt.resolve_scale(&cloud), gt.opacity);
        Ok(Scene { cloud, truth, trainer: None })
    }

    pub fn point_count(&self) -> usize {
        self.cloud.len()
    }

    pub fn render_truth(&self, azimuth: f64, elevation: f64, resolution: usize) -> Result<Vec<u8>, JsError> {
        let cam = orbit_camera(&self.cloud, azimuth, elevation, resolution)?;
        Ok(rgba(&render(&self.truth, &cam, &RenderConfig::default()).color))
    }

    /// Ground truth recolored by owning partition; points that are also a
    /// neighbor's ghost are drawn darker.
    pub fn render_partitions(
        &self,
        partitions: usize,
        margin_scale: f64,
        azimuth: f64,
        elevation: f64,
        resolution: usize,
    ) -> Result<Vec<u8>, JsError> {
        let margin = margin_scale.max(0.0) * default_ghost_margin(&self.cloud);
        let parts = partition_cloud(&self.cloud, partitions, margin).map_err(js)?;
        let mut model = self.truth.clone();
        for p in &parts {
            for &i in &p.owned_indices {
                model.gaussians[i].color = PALETTE[p.id % PALETTE.len()];
            }
        }
        for p in &parts {
            for &i in &p.ghost_indices {
                model.gaussians[i].color = model.gaussians[i].color.map(|c| 0.45 * c);
            }
        }
        let cam = orbit_camera(&self.cloud, azimuth, elevation, resolution)?;
        Ok(rgba(&render(&model, &cam, &RenderConfig::default()).color))
    }

    /// Seeds one splat per point and renders training views on a small orbit.
    pub fn start_training(&mut self, resolution: usize) -> Result<(), JsError> {
        let rig = RigSpec { n_azimuth: 8, n_elevation: 2, resolution, ..Default::default() };
        let cams = rig.orbital_for(&self.cloud).map_err(js)?.cameras().map_err(js)?;
        let cfg = TrainConfig::default();
        let views = make_train_views(&self.cloud, &cams, &GroundTruthConfig::default(), &cfg.render).map_err(js)?;
        let model = seed_gaussians(&self.cloud, ScaleRule::Knn, 3).map_err(js)?;
        let adam = AdamState::new(model.len());
        self.trainer = Some(Trainer { model, adam, views, cfg, loss: f64::NAN });
        Ok(())
    }

    /// Runs `steps` optimizer steps, cycling through the views, and returns
    /// the last loss.
    pub fn train(&mut self, steps: u32) -> Result<f64, JsError> {
        let t = self.trainer.as_mut().ok_or_else(|| JsError::new("call start_training first"))?;
        for _ in 0..steps {
            let step = t.model.iteration;
            let view = &t.views[step as usize % t.views.len()];
            let out = render(&t.model, &view.cam, &t.cfg.render);
            let loss = masked_loss(&out.color, view, t.cfg.loss_lambda).map_err(js)?;
            let grads = backward(&t.model, &view.cam, &t.cfg.render, &out, &loss.dl_dpixels).map_err(js)?;
            adam_step(&mut t.model, &grads, &mut t.adam, &t.cfg, step);
            t.model.iteration += 1;
            t.loss = loss.loss;
        }
        Ok(t.loss)
    }

    pub fn iteration(&self) -> u64 {
        self.trainer.as_ref().map_or(0, |t| t.model.iteration)
    }

    pub fn render_model(&self, azimuth: f64, elevation: f64, resolution: usize) -> Result<Vec<u8>, JsError> {
        let t = self.trainer.as_ref().ok_or_else(|| JsError::new("call start_training first"))?;
        let cam = orbit_camera(&self.cloud, azimuth, elevation, resolution)?;
        Ok(rgba(&render(&t.model, &cam, &t.cfg.render).color))
    }
}
