//! Empirical covariance of recent camera samples.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Matrix6, Vector6};

/// Ring buffer of the last `n` camera samples `m = [ω̃_c; ṽ_c]` and their
/// population covariance about the window mean.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTuner {
    window: usize,
    floor: f64,
    samples: VecDeque<Vector6<f64>>,
}

impl NoiseTuner {
    pub fn new(window: usize, floor: f64) -> Self {
        NoiseTuner {
            window: window.max(1),
            floor,
            samples: VecDeque::with_capacity(window.max(1)),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, m: Vector6<f64>) {
        if self.samples.len() == self.window {
            self.samples.pop_front();
        }
        self.samples.push_back(m);
    }

    /// `(1/n) Σ (m_i − m̄)(m_i − m̄)ᵀ + ε I` over the current window.
    pub fn covariance(&self) -> Matrix6<f64> {
        let n = self.samples.len();
        let mut cov = Matrix6::identity() * self.floor;
        if n == 0 {
            return cov;
        }
        let mean = self.samples.iter().sum::<Vector6<f64>>() / n as f64;
        for m in &self.samples {
            let e = m - mean;
            cov += e * e.transpose() / n as f64;
        }
        cov
    }

    /// `(Cov(n_ωc), Cov(n_vc))` once at least two samples are buffered.
    pub fn camera_blocks(&self) -> Option<(Matrix3<f64>, Matrix3<f64>)> {
        if self.samples.len() < 2 {
            return None;
        }
        let c = self.covariance();
        Some((
            c.fixed_view::<3, 3>(0, 0).into_owned(),
            c.fixed_view::<3, 3>(3, 3).into_owned(),
        ))
    }
}
