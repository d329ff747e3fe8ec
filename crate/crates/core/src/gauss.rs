//! Splat primitives, cameras, images and the projection math shared by the
//! renderer and the optimizer.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Screen-space covariance dilation in px², added to every projected splat.
pub const COV2D_DILATION: f64 = 0.3;

pub const MIN_SCALE: f64 = 1e-7;
pub const MAX_SCALE: f64 = 1e3;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mu: [f64; 3],
    /// Per-axis log standard deviation.
    pub log_scale: [f64; 3],
    /// Rotation quaternion `(w, x, y, z)`.
    pub rot: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn isotropic(mu: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        let ls = scale.clamp(MIN_SCALE, MAX_SCALE).ln();
        Self {
            mu,
            log_scale: [ls; 3],
            rot: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp()
    }

    /// Renormalizes the quaternion and clamps scale and color into their
    /// valid ranges. Applied after every optimizer step.
    pub fn sanitize(&mut self) {
        let n = self.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            for q in &mut self.rot {
                *q /= n;
            }
        } else {
            self.rot = [1.0, 0.0, 0.0, 0.0];
        }
        let (lo, hi) = (MIN_SCALE.ln(), MAX_SCALE.ln());
        for s in &mut self.log_scale {
            *s = s.clamp(lo, hi);
        }
        for c in &mut self.color {
            *c = c.clamp(0.0, 1.0);
        }
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_from_params(self.log_scale, self.rot)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplatModel {
    pub gaussians: Vec<Gaussian3D>,
    pub origin_partition: Option<usize>,
    pub iteration: u64,
}

impl SplatModel {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        Self { gaussians, origin_partition: None, iteration: 0 }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Axis-aligned bounds of the Gaussian centers, `None` when empty.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        bounds_of(self.gaussians.iter().map(|g| g.mu))
    }
}

pub(crate) fn bounds_of(points: impl Iterator<Item = [f64; 3]>) -> Option<([f64; 3], [f64; 3])> {
    let mut it = points.peekable();
    it.peek()?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in it {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Some((lo, hi))
}

/// Look-at pinhole camera. World is right-handed and y-up; image rows grow
/// downward and pixel `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidCamera(format!(
                "resolution {}x{} below 8x8",
                self.width, self.height
            )));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::InvalidCamera(format!("fov_y {} outside (0, pi)", self.fov_y)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidCamera(format!("near {} / far {}", self.near, self.far)));
        }
        let fwd = Vector3::from(self.target) - Vector3::from(self.position);
        let up = Vector3::from(self.up);
        if fwd.norm() == 0.0 || fwd.cross(&up).norm() <= 1e-12 * fwd.norm() * up.norm() {
            return Err(Error::InvalidCamera("up is parallel to the view direction".into()));
        }
        Ok(())
    }

    /// World-to-camera rotation; rows are right, up and forward.
    pub fn rotation(&self) -> Matrix3<f64> {
        let fwd = (Vector3::from(self.target) - Vector3::from(self.position)).normalize();
        let right = fwd.cross(&Vector3::from(self.up)).normalize();
        let up = right.cross(&fwd);
        Matrix3::from_rows(&[right.transpose(), up.transpose(), fwd.transpose()])
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    pub fn to_camera_space(&self, p: [f64; 3]) -> Vector3<f64> {
        self.rotation() * (Vector3::from(p) - Vector3::from(self.position))
    }

    /// Projects a world point to continuous pixel coordinates, `None` when it
    /// lies at or behind the near plane.
    pub fn project_point(&self, p: [f64; 3]) -> Option<Vector2<f64>> {
        let t = self.to_camera_space(p);
        if t.z <= self.near {
            return None;
        }
        let f = self.focal();
        Some(Vector2::new(
            0.5 * self.width as f64 + f * t.x / t.z,
            0.5 * self.height as f64 - f * t.y / t.z,
        ))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Row-major image with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "images have 1 or 3 channels");
        Self { width, height, channels, pixels: vec![value; width * height * channels] }
    }

    pub fn rgb(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut img = Self::new(width, height, 3);
        for px in img.pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        img
    }

    pub fn from_pixels(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if !(channels == 1 || channels == 3) || pixels.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[self.index(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y) + c;
        self.pixels[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Rotation matrix of a quaternion `(w, x, y, z)`; the quaternion is
/// normalized first.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = Vector4::from(q).norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R diag(exp(log_scale))² Rᵀ`, symmetrized.
pub fn covariance_from_params(log_scale: [f64; 3], rot: [f64; 4]) -> Matrix3<f64> {
    let m = rotation_matrix(rot) * Matrix3::from_diagonal(&Vector3::from(log_scale.map(f64::exp)));
    let cov = m * m.transpose();
    0.5 * (cov + cov.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Intermediates of the projection kept for the backward pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ProjectionTrace {
    pub view: Matrix3<f64>,
    pub cam_pos: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    /// Covariance rotated into camera space.
    pub cov_cam: Matrix3<f64>,
    pub focal: f64,
}

pub fn project_gaussian(g: &Gaussian3D, cam: &Camera) -> Result<Projection> {
    project_traced(g, cam).map(|(p, _)| p)
}

pub(crate) fn project_traced(g: &Gaussian3D, cam: &Camera) -> Result<(Projection, ProjectionTrace)> {
    let view = cam.rotation();
    let t = view * (Vector3::from(g.mu) - Vector3::from(cam.position));
    if t.z <= cam.near {
        return Err(Error::BehindCamera { depth: t.z });
    }
    let f = cam.focal();
    let (x, y, z) = (t.x, t.y, t.z);
    let jacobian = Matrix2x3::new(f / z, 0.0, -f * x / (z * z), 0.0, -f / z, f * y / (z * z));
    let cov_cam = view * g.covariance() * view.transpose();
    let mut cov2d = jacobian * cov_cam * jacobian.transpose();
    cov2d = 0.5 * (cov2d + cov2d.transpose());
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;
    let mean2d = Vector2::new(0.5 * cam.width as f64 + f * x / z, 0.5 * cam.height as f64 - f * y / z);
    Ok((
        Projection { mean2d, cov2d, depth: z },
        ProjectionTrace { view, cam_pos: t, jacobian, cov_cam, focal: f },
    ))
}

/// Gradients of the 3D parameters that feed the projection.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ProjectionGrad {
    pub mu: [f64; 3],
    pub log_scale: [f64; 3],
    pub rot: [f64; 4],
}

/// Chains gradients of the projected mean and covariance back to the world
/// position, log-scale and (unnormalized) quaternion. `grad_cov2d` must be
/// symmetric.
pub(crate) fn project_backward(
    g: &Gaussian3D,
    trace: &ProjectionTrace,
    grad_mean2d: Vector2<f64>,
    grad_cov2d: Matrix2<f64>,
) -> ProjectionGrad {
    let ProjectionTrace { view, cam_pos: t, jacobian: j, cov_cam, focal: f } = *trace;
    let (x, y, z) = (t.x, t.y, t.z);

    let grad_cov_cam = j.transpose() * grad_cov2d * j;
    let grad_j = 2.0 * grad_cov2d * j * cov_cam;
    let grad_sigma = view.transpose() * grad_cov_cam * view;

    let z2 = z * z;
    let z3 = z2 * z;
    let gt = Vector3::new(
        grad_mean2d.x * f / z + grad_j[(0, 2)] * (-f / z2),
        grad_mean2d.y * (-f / z) + grad_j[(1, 2)] * (f / z2),
        grad_mean2d.x * (-f * x / z2)
            + grad_mean2d.y * (f * y / z2)
            + grad_j[(0, 0)] * (-f / z2)
            + grad_j[(0, 2)] * (2.0 * f * x / z3)
            + grad_j[(1, 1)] * (f / z2)
            + grad_j[(1, 2)] * (-2.0 * f * y / z3),
    );
    let gmu = view.transpose() * gt;

    // Σ = (R S)(R S)ᵀ
    let rot = rotation_matrix(g.rot);
    let s = Vector3::from(g.scale());
    let m = rot * Matrix3::from_diagonal(&s);
    let grad_m = 2.0 * grad_sigma * m;
    let mut grad_r = grad_m;
    let mut log_scale = [0.0; 3];
    for col in 0..3 {
        let mut gs = 0.0;
        for row in 0..3 {
            grad_r[(row, col)] *= s[col];
            gs += grad_m[(row, col)] * rot[(row, col)];
        }
        log_scale[col] = gs * s[col];
    }

    let qn = Vector4::from(g.rot).norm();
    let (w, qx, qy, qz) = (g.rot[0] / qn, g.rot[1] / qn, g.rot[2] / qn, g.rot[3] / qn);
    let r = |i, j| grad_r[(i, j)];
    let gq = Vector4::new(
        2.0 * (qz * (r(1, 0) - r(0, 1)) + qy * (r(0, 2) - r(2, 0)) + qx * (r(2, 1) - r(1, 2))),
        2.0 * (qy * (r(1, 0) + r(0, 1)) + qz * (r(2, 0) + r(0, 2)) + w * (r(2, 1) - r(1, 2))
            - 2.0 * qx * (r(1, 1) + r(2, 2))),
        2.0 * (qx * (r(1, 0) + r(0, 1)) + w * (r(0, 2) - r(2, 0)) + qz * (r(2, 1) + r(1, 2))
            - 2.0 * qy * (r(0, 0) + r(2, 2))),
        2.0 * (w * (r(1, 0) - r(0, 1)) + qx * (r(2, 0) + r(0, 2)) + qy * (r(2, 1) + r(1, 2))
            - 2.0 * qz * (r(0, 0) + r(1, 1))),
    );
    // through q / |q|
    let qunit = Vector4::new(w, qx, qy, qz);
    let graw = (gq - qunit * qunit.dot(&gq)) / qn;

    ProjectionGrad { mu: gmu.into(), log_scale, rot: graw.into() }
}

/// Default rig geometry: elevations span ±60° and the vertical field of view
/// keeps a bounding sphere seen from 2.5 radii inside the frame.
pub const DEFAULT_MAX_ELEVATION: f64 = std::f64::consts::FRAC_PI_3;
pub const DEFAULT_FOV_Y: f64 = 55.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_RADIUS_FACTOR: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitalRig {
    pub center: [f64; 3],
    pub radius: f64,
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub resolution: usize,
    pub fov_y: f64,
    pub max_elevation: f64,
}

impl OrbitalRig {
    pub fn new(center: [f64; 3], radius: f64, n_azimuth: usize, n_elevation: usize, resolution: usize) -> Self {
        Self {
            center,
            radius,
            n_azimuth,
            n_elevation,
            resolution,
            fov_y: DEFAULT_FOV_Y,
            max_elevation: DEFAULT_MAX_ELEVATION,
        }
    }

    /// Cameras in elevation-major order.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.n_azimuth == 0 || self.n_elevation == 0 {
            return Err(Error::InvalidRig("camera counts must be at least 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidRig(format!("radius {} must be positive", self.radius)));
        }
        if !(self.max_elevation >= 0.0 && self.max_elevation < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidRig("elevations must stay inside (-90°, 90°)".into()));
        }
        let c = Vector3::from(self.center);
        let mut cams = Vec::with_capacity(self.n_azimuth * self.n_elevation);
        for ie in 0..self.n_elevation {
            let el = if self.n_elevation == 1 {
                0.0
            } else {
                -self.max_elevation + 2.0 * self.max_elevation * ie as f64 / (self.n_elevation - 1) as f64
            };
            for ia in 0..self.n_azimuth {
                let az = std::f64::consts::TAU * ia as f64 / self.n_azimuth as f64;
                let dir = Vector3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin());
                let cam = Camera {
                    position: (c + self.radius * dir).into(),
                    target: self.center,
                    up: [0.0, 1.0, 0.0],
                    fov_y: self.fov_y,
                    width: self.resolution,
                    height: self.resolution,
                    near: 0.01 * self.radius,
                    far: 100.0 * self.radius,
                };
                cam.validate()?;
                cams.push(cam);
            }
        }
        Ok(cams)
    }
}

pub fn build_orbital_cameras(
    center: [f64; 3],
    radius: f64,
    n_azimuth: usize,
    n_elevation: usize,
    resolution: usize,
) -> Result<Vec<Camera>> {
    OrbitalRig::new(center, radius, n_azimuth, n_elevation, resolution).cameras()
}
