//! Flat little-endian `f32` rasters with a JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use terrapose_core::geofuse::RoadRaster;
use terrapose_core::panorama::XyzBands;
use terrapose_core::raster::Raster;

use super::{read_bytes, read_text, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSidecar {
    pub width: usize,
    pub height: usize,
    pub nodata: f64,
    pub dtype: String,
    pub byte_order: String,
    /// Band files, relative to the sidecar.
    pub bands: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_easting: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_northing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_size: Option<f64>,
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_f32(bytes: &[u8], expected: usize) -> Result<Vec<f64>, FormatError> {
    if bytes.len() != 4 * expected {
        return Err(FormatError::InvalidImage(format!(
            "expected {} bytes of f32 samples, found {}",
            4 * expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Band paths `<prefix>.x.f32`, `<prefix>.y.f32`, `<prefix>.z.f32` and the
/// sidecar `<prefix>.json`, each paired with its contents.
pub fn xyz_files(prefix: &Path, xyz: &XyzBands) -> Vec<(PathBuf, Vec<u8>)> {
    let with = |suffix: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(suffix);
        PathBuf::from(p)
    };
    let paths = [with(".x.f32"), with(".y.f32"), with(".z.f32")];
    let sidecar = BandSidecar {
        width: xyz.width,
        height: xyz.height,
        nodata: xyz.nodata,
        dtype: "float32".into(),
        byte_order: "little".into(),
        bands: paths.iter().map(|p| file_name(p)).collect(),
        origin_easting: None,
        origin_northing: None,
        cell_size: None,
    };
    let mut files = vec![
        (paths[0].clone(), encode_f32(&xyz.x)),
        (paths[1].clone(), encode_f32(&xyz.y)),
        (paths[2].clone(), encode_f32(&xyz.z)),
    ];
    files.push((with(".json"), super::to_json(&sidecar)));
    files
}

fn read_band(
    sidecar_path: &Path,
    sidecar: &BandSidecar,
    index: usize,
) -> Result<Vec<f64>, FormatError> {
    if sidecar.dtype != "float32" || sidecar.byte_order != "little" {
        return Err(FormatError::InvalidJson(
            "band sidecar must declare float32, little endian".into(),
        ));
    }
    let name = sidecar
        .bands
        .get(index)
        .ok_or_else(|| FormatError::InvalidJson("missing band entry".into()))?;
    let path = sidecar_path.parent().unwrap_or(Path::new(".")).join(name);
    decode_f32(&read_bytes(&path)?, sidecar.width * sidecar.height)
}

/// Reads a single-band raster; nodata samples become NaN.
pub fn read_raster(sidecar_path: &Path) -> Result<(BandSidecar, Raster), FormatError> {
    let sidecar: BandSidecar = super::parse_json(&read_text(sidecar_path)?, "band sidecar")?;
    let nodata = sidecar.nodata as f32 as f64;
    let values = read_band(sidecar_path, &sidecar, 0)?
        .into_iter()
        .map(|v| if v == nodata { f64::NAN } else { v })
        .collect();
    let raster = Raster::from_vec(sidecar.width, sidecar.height, values);
    Ok((sidecar, raster))
}

pub fn read_road_raster(sidecar_path: &Path) -> Result<RoadRaster, FormatError> {
    let (s, distances) = read_raster(sidecar_path)?;
    let (Some(origin_easting), Some(origin_northing), Some(cell_size)) =
        (s.origin_easting, s.origin_northing, s.cell_size)
    else {
        return Err(FormatError::InvalidJson(
            "road raster sidecar needs origin_easting, origin_northing, cell_size".into(),
        ));
    };
    if !(cell_size > 0.0) {
        return Err(FormatError::InvalidValue(
            "road raster cell_size must be positive".into(),
        ));
    }
    Ok(RoadRaster {
        distances,
        origin_easting,
        origin_northing,
        cell_size,
    })
}

/// Sidecar and band for a road raster written next to `sidecar_path`.
pub fn road_raster_files(sidecar_path: &Path, road: &RoadRaster) -> Vec<(PathBuf, Vec<u8>)> {
    let band = sidecar_path.with_extension("f32");
    let sidecar = BandSidecar {
        width: road.distances.width(),
        height: road.distances.height(),
        nodata: -9999.0,
        dtype: "float32".into(),
        byte_order: "little".into(),
        bands: vec![file_name(&band)],
        origin_easting: Some(road.origin_easting),
        origin_northing: Some(road.origin_northing),
        cell_size: Some(road.cell_size),
    };
    let values: Vec<f64> = road
        .distances
        .data()
        .iter()
        .map(|&v| if v.is_finite() { v } else { -9999.0 })
        .collect();
    vec![
        (band, encode_f32(&values)),
        (sidecar_path.to_path_buf(), super::to_json(&sidecar)),
    ]
}
