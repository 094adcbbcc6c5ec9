//! Seeded synthetic mountain ranges.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terrapose_core::terrain::{synth_terrain_sum, DemGrid, GridSpec, TerrainError, TerrainShape};

/// Gaussian hills scattered in an annulus around the grid centre, leaving
/// the middle as a valley for a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillMixture {
    pub count: usize,
    /// Inner and outer radius of the annulus, in metres.
    pub radius: (f64, f64),
    pub amplitude: (f64, f64),
    pub sigma: (f64, f64),
}

impl HillMixture {
    /// Hills filling the outer part of `spec`, scaled by `amplitude` and `sigma`.
    pub fn for_grid(spec: &GridSpec, count: usize, amplitude: f64, sigma: f64) -> Self {
        let half = 0.5
            * (spec.max_easting() - spec.origin_easting)
                .min(spec.max_northing() - spec.origin_northing);
        Self {
            count,
            radius: (0.35 * half, 0.9 * half),
            amplitude: (0.2 * amplitude, amplitude),
            sigma: (0.3 * sigma, sigma),
        }
    }

    pub fn shapes(&self, spec: &GridSpec, seed: u64) -> Vec<TerrainShape> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cx, cy) = spec.center();
        (0..self.count)
            .map(|_| {
                let r = rng.random_range(self.radius.0..=self.radius.1);
                let a: f64 = rng.random_range(0.0..TAU);
                TerrainShape::GaussianHill {
                    center_x: cx + r * a.sin(),
                    center_y: cy + r * a.cos(),
                    amplitude: rng.random_range(self.amplitude.0..=self.amplitude.1),
                    sigma: rng.random_range(self.sigma.0..=self.sigma.1),
                }
            })
            .collect()
    }

    pub fn generate(&self, spec: GridSpec, seed: u64) -> Result<DemGrid, TerrainError> {
        synth_terrain_sum(&self.shapes(&spec, seed), 0.0, spec)
    }
}
