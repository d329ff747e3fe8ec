use serde::{Deserialize, Serialize};

/// Gradient of a scalar loss with respect to one Gaussian's parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianGrad {
    pub mu: [f64; 3],
    pub log_scale: [f64; 3],
    pub rot: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl GaussianGrad {
    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|v| *v == 0.0)
    }

    /// Parameters in a fixed order: mu, log_scale, rot, opacity, color.
    pub fn flat(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0..3].copy_from_slice(&self.mu);
        out[3..6].copy_from_slice(&self.log_scale);
        out[6..10].copy_from_slice(&self.rot);
        out[10] = self.opacity_logit;
        out[11..14].copy_from_slice(&self.color);
        out
    }

    pub fn add_assign(&mut self, o: &GaussianGrad) {
        for a in 0..3 {
            self.mu[a] += o.mu[a];
            self.log_scale[a] += o.log_scale[a];
            self.color[a] += o.color[a];
        }
        for a in 0..4 {
            self.rot[a] += o.rot[a];
        }
        self.opacity_logit += o.opacity_logit;
    }
}

/// Per-Gaussian gradients plus the screen-space statistics that drive
/// densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBuffer {
    pub grads: Vec<GaussianGrad>,
    /// Sum over views of the norm of the projected-mean gradient, measured
    /// in normalized device units.
    pub screen_grad_norm: Vec<f64>,
    /// Number of views in which each Gaussian received a gradient.
    pub touch_count: Vec<u32>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            grads: vec![GaussianGrad::default(); n],
            screen_grad_norm: vec![0.0; n],
            touch_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.flat().iter().all(|v| v.is_finite()))
            && self.screen_grad_norm.iter().all(|v| v.is_finite())
    }

    /// Adds another buffer's screen statistics into this one.
    pub fn accumulate_stats(&mut self, other: &GradientBuffer) {
        debug_assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.screen_grad_norm[i] += other.screen_grad_norm[i];
            self.touch_count[i] += other.touch_count[i];
        }
    }

    pub fn mean_screen_grad(&self, i: usize) -> f64 {
        match self.touch_count[i] {
            0 => 0.0,
            n => self.screen_grad_norm[i] / n as f64,
        }
    }
}
