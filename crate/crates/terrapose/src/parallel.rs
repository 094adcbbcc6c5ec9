//! Rayon drivers for the row- and azimuth-parallel renderers.
//!
//! Every driver splits work into the same independent units the sequential
//! versions use and reassembles them in order, so the output does not depend
//! on the thread count.

use nalgebra::Vector3;
use rayon::prelude::*;
use terrapose_core::camera::{CameraIntrinsics, CameraPose};
use terrapose_core::panorama::{
    Curvature, HorizonJob, PanoramaError, PanoramaStrip, RenderSettings, RenderedView, StripJob,
    SyntheticPanorama, ViewJob, XyzBands,
};
use terrapose_core::terrain::DemGrid;
use terrapose_core::topdown::{
    assemble_topdown, topdown_row, topdown_size, PanoramaImage, TopDownError, TopDownParams,
    TopDownView,
};

/// A pool with `threads` workers; 0 means one per available core.
pub fn thread_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

pub fn render_horizon_panorama(
    grid: &DemGrid,
    camera: &Vector3<f64>,
    azimuth_step: f64,
    max_range: f64,
    curvature: Curvature,
) -> Result<SyntheticPanorama, PanoramaError> {
    let job = HorizonJob::new(grid, camera, azimuth_step, max_range, curvature)?;
    let records = (0..job.count)
        .into_par_iter()
        .map(|i| job.record(grid, i))
        .collect();
    Ok(job.assemble(records))
}

pub fn render_view(
    grid: &DemGrid,
    pose: &CameraPose,
    settings: RenderSettings,
) -> Result<RenderedView, PanoramaError> {
    let job = ViewJob::new(grid, pose, settings)?;
    let rows = (0..job.height())
        .into_par_iter()
        .map(|v| job.row(v))
        .collect();
    Ok(job.assemble(rows))
}

pub fn backproject_xyz(
    grid: &DemGrid,
    pose: &CameraPose,
    settings: RenderSettings,
) -> Result<XyzBands, PanoramaError> {
    let job = ViewJob::new(grid, pose, settings)?;
    let rows: Vec<_> = (0..job.height())
        .into_par_iter()
        .map(|v| job.row(v))
        .collect();
    Ok(XyzBands::from_rows(job.width(), job.height(), &rows))
}

pub fn render_panorama_strip(
    grid: &DemGrid,
    camera: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
    settings: RenderSettings,
) -> Result<PanoramaStrip, PanoramaError> {
    let job = StripJob::for_intrinsics(grid, camera, intrinsics, settings)?;
    let rows = (0..job.rows).into_par_iter().map(|v| job.row(v)).collect();
    Ok(job.assemble(rows))
}

pub fn pano_to_topdown(
    pano: &PanoramaImage,
    params: &TopDownParams,
) -> Result<TopDownView, TopDownError> {
    let n = topdown_size(params)?;
    let rows = (0..n)
        .into_par_iter()
        .map(|r| topdown_row(pano, params, r))
        .collect();
    Ok(assemble_topdown(params, rows))
}
