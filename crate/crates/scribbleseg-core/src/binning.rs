//! Planar range annuli and multi-resolution cylindrical sector grids.
//!
//! Both structures partition points by position in the ground plane; height
//! is deliberately ignored so that cells stay reasonably populated with
//! sparse supervision. Indices are computed in f64 with `libm` so the same
//! point always lands in the same cell regardless of build flavor.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Concentric equal-width range rings around the sensor axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusSpec {
    count: usize,
    width: f64,
}

impl AnnulusSpec {
    /// Rings of an explicitly chosen width, e.g. shared across frames.
    pub fn fixed(count: usize, width: f64) -> Self {
        assert!(count >= 1, "need at least one annulus");
        assert!(width > 0.0 && width.is_finite(), "annulus width must be positive");
        AnnulusSpec { count, width }
    }

    /// Per-frame rings sized so that `count` annuli exactly cover the frame:
    /// width is the maximum planar range divided by `count`.
    pub fn from_cloud(cloud: &PointCloud, count: usize) -> Result<Self> {
        assert!(count >= 1, "need at least one annulus");
        let max_range = cloud.max_planar_range().ok_or(Error::EmptyFrame)?;
        if max_range <= 0.0 {
            return Err(Error::DegenerateRange);
        }
        Ok(AnnulusSpec {
            count,
            width: max_range / count as f64,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Ring index for a planar range, clamped into `0..count` so the point
    /// at the exact maximum range joins the outermost ring.
    pub fn index_of_range(&self, range: f64) -> usize {
        let idx = libm::floor(range / self.width) as usize;
        idx.min(self.count - 1)
    }

    pub fn index_of_point(&self, x: f64, y: f64) -> usize {
        self.index_of_range(libm::sqrt(x * x + y * y))
    }
}

/// A pyramid of cylindrical sector grids over the ground plane. Level `l`
/// splits the disk of radius `r_max` into `n_r` radial rings times `n_phi`
/// azimuthal sectors; points beyond `r_max` clamp into the outermost ring.
#[derive(Debug, Clone, PartialEq)]
pub struct CylGridSpec {
    resolutions: Vec<(usize, usize)>,
    r_max: f64,
}

impl CylGridSpec {
    pub fn new(resolutions: Vec<(usize, usize)>, r_max: f64) -> Self {
        assert!(!resolutions.is_empty(), "need at least one grid level");
        for &(n_r, n_phi) in &resolutions {
            assert!(n_r >= 1 && n_phi >= 1, "grid resolution must be at least 1x1");
        }
        assert!(r_max > 0.0 && r_max.is_finite(), "grid radius must be positive");
        CylGridSpec { resolutions, r_max }
    }

    /// The coarse-to-fine three-level pyramid used by default: 20x40, 40x80
    /// and 80x120 rings by sectors over a 50 m disk.
    pub fn default_pyramid() -> Self {
        CylGridSpec::new(alloc::vec![(20, 40), (40, 80), (80, 120)], 50.0)
    }

    pub fn levels(&self) -> usize {
        self.resolutions.len()
    }

    pub fn resolution(&self, level: usize) -> (usize, usize) {
        self.resolutions[level]
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Number of cells at a level.
    pub fn cells(&self, level: usize) -> usize {
        let (n_r, n_phi) = self.resolutions[level];
        n_r * n_phi
    }

    /// Flat cell index of a point at a level: ring-major, sector-minor.
    /// Every finite point maps to exactly one cell per level.
    pub fn cell_of_point(&self, level: usize, x: f64, y: f64) -> usize {
        let (n_r, n_phi) = self.resolutions[level];
        let r = libm::sqrt(x * x + y * y);
        let ring = (libm::floor(r / (self.r_max / n_r as f64)) as usize).min(n_r - 1);
        // atan2 returns (-pi, pi]; shifting by pi puts sector 0 at the
        // negative x axis and the +pi seam clamps into the last sector.
        let angle = libm::atan2(y, x) + PI;
        let sector = (libm::floor(angle / (2.0 * PI / n_phi as f64)) as usize).min(n_phi - 1);
        ring * n_phi + sector
    }
}
