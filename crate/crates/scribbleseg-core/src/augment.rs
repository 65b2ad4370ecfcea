//! Geometric perturbations applied to the student's copy of a frame.
//!
//! The teacher always sees the clean cloud; the student sees a version
//! rotated about the vertical axis, translated in the plane, possibly
//! mirrored, and jittered with Gaussian noise. Labels and intensities ride
//! along unchanged, as does the point order, so per-point masks stay valid.

use rand::Rng;

use crate::cloud::PointCloud;

/// Magnitudes for the four perturbations. A config of all zeros reproduces
/// the input bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Upper bound of the uniform rotation angle in radians.
    pub rotation: f64,
    /// Per-axis planar translation is uniform in `[-translation, translation]`.
    pub translation: f64,
    /// Probability of mirroring each planar axis, drawn independently.
    pub flip_prob: f64,
    /// Standard deviation of per-coordinate Gaussian jitter in meters.
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation: 2.0 * core::f64::consts::PI,
            translation: 0.5,
            flip_prob: 0.5,
            noise_std: 0.02,
        }
    }
}

/// Draws one set of frame-level perturbations and applies them to every
/// point: rotate, translate, flip, then jitter.
///
/// The draw order is fixed (angle, x/y offsets, x/y flips, then three
/// jitter samples per point in index order) so a seeded generator makes the
/// result reproducible.
pub fn augment_student<R: Rng>(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut R) -> PointCloud {
    let angle = rng.random::<f64>() * cfg.rotation;
    let tx = (rng.random::<f64>() * 2.0 - 1.0) * cfg.translation;
    let ty = (rng.random::<f64>() * 2.0 - 1.0) * cfg.translation;
    let flip_x = rng.random_bool(cfg.flip_prob);
    let flip_y = rng.random_bool(cfg.flip_prob);
    let (sin, cos) = (libm::sin(angle), libm::cos(angle));

    let mut out = PointCloud::new(cloud.frame_id());
    for i in 0..cloud.len() {
        let x = cloud.xs()[i] as f64;
        let y = cloud.ys()[i] as f64;
        let z = cloud.zs()[i] as f64;
        let mut px = x * cos - y * sin + tx;
        let mut py = x * sin + y * cos + ty;
        if flip_x {
            px = -px;
        }
        if flip_y {
            py = -py;
        }
        let nx: f64 = rng.sample(rand_distr::StandardNormal);
        let ny: f64 = rng.sample(rand_distr::StandardNormal);
        let nz: f64 = rng.sample(rand_distr::StandardNormal);
        out.push(
            (px + nx * cfg.noise_std) as f32,
            (py + ny * cfg.noise_std) as f32,
            (z + nz * cfg.noise_std) as f32,
            cloud.intensity()[i],
        );
    }
    out
}
