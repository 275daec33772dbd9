//! Seeded random streams.
//!
//! Every stochastic quantity in the crate is drawn from ChaCha8 seeded with
//! `ChaCha8Rng::seed_from_u64`. Normal draws use the Ziggurat sampler of
//! `rand_distr::StandardNormal`; uniform draws use `rand`'s `[0, 1)` `f64`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for a named purpose, derived from a base seed.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn normal(r: &mut SimRng) -> f64 {
    r.sample(StandardNormal)
}

pub fn uniform(r: &mut SimRng) -> f64 {
    r.random::<f64>()
}

pub fn normal3(r: &mut SimRng) -> Vector3<f64> {
    Vector3::new(normal(r), normal(r), normal(r))
}

pub fn unit_vector(r: &mut SimRng) -> Vector3<f64> {
    loop {
        let v = normal3(r);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Zero-mean Gaussian 3-vector with covariance `cov`.
///
/// Uses the symmetric square root so PSD (rank-deficient) covariances work.
pub fn gaussian3(r: &mut SimRng, cov: &Matrix3<f64>) -> Vector3<f64> {
    let z = normal3(r);
    if cov.iter().all(|&c| c == 0.0) {
        return Vector3::zeros();
    }
    sqrt_psd(cov) * z
}

pub fn sqrt_psd(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = cov.symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()
}
