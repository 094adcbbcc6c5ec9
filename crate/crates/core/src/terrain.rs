//! Digital elevation models in a local East-North-Up metric frame.
//!
//! Grids are node-registered: elevations live on the nodes, row 0 is the
//! northernmost row, and the origin is the south-west node. A grid with
//! `n_cols x n_rows` nodes therefore spans `(n_cols - 1) * cell_size` metres
//! east and `(n_rows - 1) * cell_size` metres north.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use thiserror::Error;

use crate::raster::bilerp;

/// Default nodata sentinel, as used by ESRI ASCII grids.
pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TerrainError {
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("query ({x}, {y}) lies outside the grid extent")]
    OutOfExtent { x: f64, y: f64 },
    #[error("query ({x}, {y}) touches a nodata node")]
    NodataNeighborhood { x: f64, y: f64 },
    #[error("invalid shape parameter: {0}")]
    InvalidShapeParam(&'static str),
}

impl TerrainError {
    /// Stable identifier used in diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            TerrainError::InvalidGrid(_) => "InvalidGrid",
            TerrainError::OutOfExtent { .. } => "OutOfExtent",
            TerrainError::NodataNeighborhood { .. } => "NodataNeighborhood",
            TerrainError::InvalidShapeParam(_) => "InvalidShapeParam",
        }
    }
}

/// Placement and resolution of a grid, without the elevations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin_easting: f64,
    pub origin_northing: f64,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), TerrainError> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(TerrainError::InvalidGrid("cell_size must be positive"));
        }
        if self.n_cols < 2 || self.n_rows < 2 {
            return Err(TerrainError::InvalidGrid("grid needs at least 2x2 nodes"));
        }
        if !(self.origin_easting.is_finite() && self.origin_northing.is_finite()) {
            return Err(TerrainError::InvalidGrid("origin must be finite"));
        }
        Ok(())
    }

    /// Easting/northing of node `(col, row)`.
    pub fn node_position(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_easting + col as f64 * self.cell_size,
            self.origin_northing + (self.n_rows - 1 - row) as f64 * self.cell_size,
        )
    }

    pub fn max_easting(&self) -> f64 {
        self.origin_easting + (self.n_cols - 1) as f64 * self.cell_size
    }

    pub fn max_northing(&self) -> f64 {
        self.origin_northing + (self.n_rows - 1) as f64 * self.cell_size
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.origin_easting + self.max_easting()),
            0.5 * (self.origin_northing + self.max_northing()),
        )
    }
}

/// Regular elevation raster with a georeferenced origin. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DemGrid {
    spec: GridSpec,
    elevations: Vec<f64>,
    nodata: f64,
}

impl DemGrid {
    /// Builds a grid from row-major elevations (north row first).
    pub fn new(spec: GridSpec, elevations: Vec<f64>, nodata: f64) -> Result<Self, TerrainError> {
        spec.validate()?;
        if elevations.len() != spec.n_cols * spec.n_rows {
            return Err(TerrainError::InvalidGrid(
                "elevation count does not match n_cols * n_rows",
            ));
        }
        if elevations.iter().any(|&z| z != nodata && !z.is_finite()) {
            return Err(TerrainError::InvalidGrid("non-finite elevation"));
        }
        Ok(Self {
            spec,
            elevations,
            nodata,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cell_size(&self) -> f64 {
        self.spec.cell_size
    }

    pub fn n_cols(&self) -> usize {
        self.spec.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.spec.n_rows
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    /// Raw node value (may be the nodata sentinel).
    pub fn node(&self, col: usize, row: usize) -> f64 {
        self.elevations[row * self.spec.n_cols + col]
    }

    pub fn is_nodata(&self, z: f64) -> bool {
        z == self.nodata
    }

    /// Whether `(x, y)` lies inside the node extent (boundary included).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let tol = 1e-9 * self.spec.cell_size;
        x >= self.spec.origin_easting - tol
            && x <= self.spec.max_easting() + tol
            && y >= self.spec.origin_northing - tol
            && y <= self.spec.max_northing() + tol
    }

    /// Minimum and maximum over valid nodes.
    pub fn elevation_range(&self) -> Option<(f64, f64)> {
        let mut it = self
            .elevations
            .iter()
            .copied()
            .filter(|&z| z != self.nodata);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), z| (lo.min(z), hi.max(z))))
    }

    /// Bilinear interpolation of the four nodes enclosing `(x, y)`.
    pub fn sample_elevation(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfExtent { x, y });
        }
        let s = &self.spec;
        let fx = ((x - s.origin_easting) / s.cell_size).clamp(0.0, (s.n_cols - 1) as f64);
        // Fractional row counted from the north edge.
        let fr = ((s.max_northing() - y) / s.cell_size).clamp(0.0, (s.n_rows - 1) as f64);
        let c0 = (fx.floor() as usize).min(s.n_cols - 2);
        let r0 = (fr.floor() as usize).min(s.n_rows - 2);
        let tx = fx - c0 as f64;
        let ty = fr - r0 as f64;
        let v00 = self.node(c0, r0);
        let v10 = self.node(c0 + 1, r0);
        let v01 = self.node(c0, r0 + 1);
        let v11 = self.node(c0 + 1, r0 + 1);
        if [v00, v10, v01, v11].contains(&self.nodata) {
            return Err(TerrainError::NodataNeighborhood { x, y });
        }
        Ok(bilerp(v00, v10, v01, v11, tx, ty))
    }
}

/// Closed-form surfaces used as synthetic terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerrainShape {
    Flat {
        height: f64,
    },
    /// `max(0, amplitude - slope * d)` where `d` is the distance to the apex.
    Cone {
        apex_x: f64,
        apex_y: f64,
        amplitude: f64,
        slope: f64,
    },
    /// Gaussian cross-section `amplitude * exp(-d^2 / (2 width^2))` around an
    /// infinite crest line through `(x, y)` with the given azimuth.
    Ridge {
        x: f64,
        y: f64,
        azimuth: f64,
        amplitude: f64,
        width: f64,
    },
    GaussianHill {
        center_x: f64,
        center_y: f64,
        amplitude: f64,
        sigma: f64,
    },
}

impl TerrainShape {
    pub fn validate(&self) -> Result<(), TerrainError> {
        let finite = |v: f64, what| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(TerrainError::InvalidShapeParam(what))
            }
        };
        let positive = |v: f64, what| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(TerrainError::InvalidShapeParam(what))
            }
        };
        match *self {
            TerrainShape::Flat { height } => finite(height, "height must be finite"),
            TerrainShape::Cone {
                apex_x,
                apex_y,
                amplitude,
                slope,
            } => {
                finite(apex_x + apex_y, "apex must be finite")?;
                finite(amplitude, "amplitude must be finite")?;
                positive(slope, "slope must be positive")
            }
            TerrainShape::Ridge {
                x,
                y,
                azimuth,
                amplitude,
                width,
            } => {
                finite(x + y + azimuth, "ridge position and azimuth must be finite")?;
                finite(amplitude, "amplitude must be finite")?;
                positive(width, "width must be positive")
            }
            TerrainShape::GaussianHill {
                center_x,
                center_y,
                amplitude,
                sigma,
            } => {
                finite(center_x + center_y, "center must be finite")?;
                finite(amplitude, "amplitude must be finite")?;
                positive(sigma, "sigma must be positive")
            }
        }
    }

    /// Surface height at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            TerrainShape::Flat { height } => height,
            TerrainShape::Cone {
                apex_x,
                apex_y,
                amplitude,
                slope,
            } => {
                let d = (x - apex_x).hypot(y - apex_y);
                (amplitude - slope * d).max(0.0)
            }
            TerrainShape::Ridge {
                x: rx,
                y: ry,
                azimuth,
                amplitude,
                width,
            } => {
                // Crest direction (sin az, cos az); distance is the perpendicular offset.
                let (s, c) = azimuth.sin_cos();
                let d = (x - rx) * c - (y - ry) * s;
                amplitude * (-d * d / (2.0 * width * width)).exp()
            }
            TerrainShape::GaussianHill {
                center_x,
                center_y,
                amplitude,
                sigma,
            } => {
                let dx = x - center_x;
                let dy = y - center_y;
                amplitude * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

/// Evaluates a single shape at every node.
pub fn synth_terrain(shape: &TerrainShape, spec: GridSpec) -> Result<DemGrid, TerrainError> {
    synth_terrain_sum(core::slice::from_ref(shape), 0.0, spec)
}

/// Evaluates `base + sum(shapes)` at every node.
pub fn synth_terrain_sum(
    shapes: &[TerrainShape],
    base: f64,
    spec: GridSpec,
) -> Result<DemGrid, TerrainError> {
    spec.validate()?;
    for s in shapes {
        s.validate()?;
    }
    if !base.is_finite() {
        return Err(TerrainError::InvalidShapeParam("base must be finite"));
    }
    let mut elevations = Vec::with_capacity(spec.n_cols * spec.n_rows);
    for row in 0..spec.n_rows {
        for col in 0..spec.n_cols {
            let (x, y) = spec.node_position(col, row);
            elevations.push(base + shapes.iter().map(|s| s.eval(x, y)).sum::<f64>());
        }
    }
    DemGrid::new(spec, elevations, DEFAULT_NODATA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(n: usize, cell: f64) -> GridSpec {
        GridSpec {
            origin_easting: 100.0,
            origin_northing: 200.0,
            cell_size: cell,
            n_cols: n,
            n_rows: n,
        }
    }

    #[test]
    fn node_query_returns_node_value() {
        let g = DemGrid::new(
            spec(3, 10.0),
            vec![1., 2., 3., 4., 5., 6., 7., 8., 9.],
            DEFAULT_NODATA,
        )
        .unwrap();
        // Row 0 is north: node (0,0) at (100, 220).
        assert_eq!(g.sample_elevation(100.0, 220.0).unwrap(), 1.0);
        assert_eq!(g.sample_elevation(120.0, 200.0).unwrap(), 9.0);
        assert_eq!(g.sample_elevation(110.0, 210.0).unwrap(), 5.0);
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let g = DemGrid::new(spec(2, 1.0), vec![0., 0., 0., 4.], DEFAULT_NODATA).unwrap();
        assert_eq!(g.sample_elevation(100.5, 200.5).unwrap(), 1.0);
    }

    #[test]
    fn out_of_extent_and_nodata() {
        let g = DemGrid::new(
            spec(2, 1.0),
            vec![0., DEFAULT_NODATA, 0., 4.],
            DEFAULT_NODATA,
        )
        .unwrap();
        assert!(matches!(
            g.sample_elevation(99.0, 200.5),
            Err(TerrainError::OutOfExtent { .. })
        ));
        assert!(matches!(
            g.sample_elevation(100.5, 200.5),
            Err(TerrainError::NodataNeighborhood { .. })
        ));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(DemGrid::new(spec(1, 1.0), vec![0.0], DEFAULT_NODATA).is_err());
        assert!(DemGrid::new(spec(2, 0.0), vec![0.0; 4], DEFAULT_NODATA).is_err());
        assert!(DemGrid::new(spec(2, 1.0), vec![0.0, f64::NAN, 0.0, 0.0], DEFAULT_NODATA).is_err());
    }

    #[test]
    fn flat_is_constant() {
        let g = synth_terrain(&TerrainShape::Flat { height: 0.0 }, spec(5, 2.0)).unwrap();
        assert!(g.elevations().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn gaussian_peak_is_amplitude() {
        let s = spec(11, 10.0);
        let hill = TerrainShape::GaussianHill {
            center_x: 150.0,
            center_y: 250.0,
            amplitude: 500.0,
            sigma: 30.0,
        };
        let g = synth_terrain(&hill, s).unwrap();
        assert_eq!(g.node(5, 5), 500.0);
    }

    #[test]
    fn invalid_shape_params() {
        let hill = TerrainShape::GaussianHill {
            center_x: 0.0,
            center_y: 0.0,
            amplitude: 1.0,
            sigma: 0.0,
        };
        assert!(matches!(
            synth_terrain(&hill, spec(3, 1.0)),
            Err(TerrainError::InvalidShapeParam(_))
        ));
        let cone = TerrainShape::Cone {
            apex_x: 0.0,
            apex_y: 0.0,
            amplitude: 1.0,
            slope: -1.0,
        };
        assert!(cone.validate().is_err());
    }
}
