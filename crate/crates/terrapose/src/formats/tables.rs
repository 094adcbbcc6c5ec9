//! CSV tables. Every table has a header row; numbers use the shortest
//! representation that round-trips.

use std::fmt::Write as _;

use nalgebra::{Point2, Vector3};
use terrapose_core::geofuse::{GeoDetection, ViewDetection};
use terrapose_core::orient::{QuerySkyline, ReferenceSkyline};
use terrapose_core::panorama::SyntheticPanorama;
use terrapose_core::pepalp::{Keypoint, Landmark};
use terrapose_core::topdown::PointMatch;

use super::FormatError;

/// Parsed rows: the header and `(line, values)` per data row.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(text: &str) -> Result<Table, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| FormatError::InvalidTable {
            line: 1,
            detail: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| FormatError::InvalidTable {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(FormatError::InvalidTable {
                line,
                detail: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn expect_prefix(table: &Table, prefix: &[&str]) -> Result<(), FormatError> {
    if table.header.len() < prefix.len() || table.header.iter().zip(prefix).any(|(a, b)| a != b) {
        return Err(FormatError::InvalidTable {
            line: 1,
            detail: format!("header must start with `{}`", prefix.join(",")),
        });
    }
    Ok(())
}

/// Checks that the columns after `prefix` are `d0, d1, ...`; returns their count.
fn descriptor_columns(table: &Table, prefix: usize) -> Result<usize, FormatError> {
    for (i, name) in table.header[prefix..].iter().enumerate() {
        if *name != format!("d{i}") {
            return Err(FormatError::InvalidTable {
                line: 1,
                detail: format!("expected column `d{i}`, found `{name}`"),
            });
        }
    }
    Ok(table.header.len() - prefix)
}

fn num(line: usize, token: &str) -> Result<f64, FormatError> {
    token
        .parse::<f64>()
        .map_err(|_| FormatError::UnparsableNumber {
            line,
            token: token.to_string(),
        })
}

fn nums(line: usize, tokens: &[String]) -> Result<Vec<f64>, FormatError> {
    tokens.iter().map(|t| num(line, t)).collect()
}

fn finite(line: usize, values: &[f64]) -> Result<(), FormatError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FormatError::InvalidTable {
            line,
            detail: "non-finite value".into(),
        })
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

pub fn write_panorama(pano: &SyntheticPanorama) -> String {
    let mut out = String::from("azimuth_deg,elev_deg,range_m,x,y,z\n");
    for r in &pano.records {
        out += &join([
            r.azimuth.to_degrees(),
            r.elevation.to_degrees(),
            r.range,
            r.point.x,
            r.point.y,
            r.point.z,
        ]);
        out.push('\n');
    }
    out
}

pub fn write_reference_skyline(reference: &ReferenceSkyline) -> String {
    let n = reference.len();
    let mut out = String::from("azimuth_deg,elev_deg\n");
    for (i, e) in reference.elevations.iter().enumerate() {
        out += &join([i as f64 * 360.0 / n as f64, e.to_degrees()]);
        out.push('\n');
    }
    out
}

/// Reads a reference skyline from either a reference skyline table or a
/// panorama table. Azimuths must start at 0 and be uniformly spaced.
pub fn parse_reference_skyline(text: &str) -> Result<ReferenceSkyline, FormatError> {
    let t = read_table(text)?;
    expect_prefix(&t, &["azimuth_deg", "elev_deg"])?;
    let n = t.rows.len();
    let mut elevations = Vec::with_capacity(n);
    for (i, (line, row)) in t.rows.iter().enumerate() {
        let az = num(*line, &row[0])?;
        let want = i as f64 * 360.0 / n as f64;
        if (az - want).abs() > 1e-6 {
            return Err(FormatError::InvalidTable {
                line: *line,
                detail: format!("azimuth {az} breaks the uniform step (expected {want})"),
            });
        }
        elevations.push(num(*line, &row[1])?.to_radians());
    }
    ReferenceSkyline::new(elevations).map_err(|e| FormatError::InvalidValue(e.to_string()))
}

pub fn write_query_skyline(sky: &QuerySkyline) -> String {
    let mut out = String::from("col,row,valid\n");
    for (c, r) in sky.rows.iter().enumerate() {
        match r {
            Some(v) => {
                let _ = writeln!(out, "{c},{v},1");
            }
            None => {
                let _ = writeln!(out, "{c},,0");
            }
        }
    }
    out
}

pub fn parse_query_skyline(text: &str) -> Result<QuerySkyline, FormatError> {
    let t = read_table(text)?;
    expect_prefix(&t, &["col", "row", "valid"])?;
    let mut rows = Vec::with_capacity(t.rows.len());
    for (i, (line, r)) in t.rows.iter().enumerate() {
        if r[0].parse::<usize>().ok() != Some(i) {
            return Err(FormatError::InvalidTable {
                line: *line,
                detail: format!("expected col {i}"),
            });
        }
        rows.push(match r[2].as_str() {
            "1" => Some(num(*line, &r[1])?),
            "0" => None,
            other => {
                return Err(FormatError::InvalidTable {
                    line: *line,
                    detail: format!("valid must be 0 or 1, found `{other}`"),
                })
            }
        });
    }
    Ok(QuerySkyline { rows })
}

pub fn parse_landmarks(text: &str) -> Result<Vec<Landmark>, FormatError> {
    let t = read_table(text)?;
    expect_prefix(&t, &["x", "y", "z"])?;
    descriptor_columns(&t, 3)?;
    t.rows
        .iter()
        .map(|(line, r)| {
            let v = nums(*line, r)?;
            finite(*line, &v)?;
            Ok(Landmark {
                world: Vector3::new(v[0], v[1], v[2]),
                descriptor: v[3..].to_vec(),
            })
        })
        .collect()
}

pub fn write_landmarks(landmarks: &[Landmark]) -> String {
    let dims = landmarks.first().map_or(0, |l| l.descriptor.len());
    let mut out = String::from("x,y,z");
    for i in 0..dims {
        let _ = write!(out, ",d{i}");
    }
    out.push('\n');
    for l in landmarks {
        out += &join(
            [l.world.x, l.world.y, l.world.z]
                .into_iter()
                .chain(l.descriptor.iter().copied()),
        );
        out.push('\n');
    }
    out
}

pub fn parse_keypoints(text: &str) -> Result<Vec<Keypoint>, FormatError> {
    let t = read_table(text)?;
    expect_prefix(&t, &["u", "v"])?;
    descriptor_columns(&t, 2)?;
    t.rows
        .iter()
        .map(|(line, r)| {
            let v = nums(*line, r)?;
            finite(*line, &v)?;
            Ok(Keypoint {
                image: Point2::new(v[0], v[1]),
                descriptor: v[2..].to_vec(),
            })
        })
        .collect()
}

pub fn write_keypoints(keypoints: &[Keypoint]) -> String {
    let dims = keypoints.first().map_or(0, |k| k.descriptor.len());
    let mut out = String::from("u,v");
    for i in 0..dims {
        let _ = write!(out, ",d{i}");
    }
    out.push('\n');
    for k in keypoints {
        out += &join(
            [k.image.x, k.image.y]
                .into_iter()
                .chain(k.descriptor.iter().copied()),
        );
        out.push('\n');
    }
    out
}

/// Matches from image A (source) to image B (target).
pub fn parse_matches(text: &str) -> Result<Vec<PointMatch>, FormatError> {
    let t = read_table(text)?;
    expect_prefix(&t, &["uA", "vA", "uB", "vB"])?;
    t.rows
        .iter()
        .map(|(line, r)| {
            let v = nums(*line, &r[..4])?;
            finite(*line, &v)?;
            Ok(PointMatch {
                source: Point2::new(v[0], v[1]),
                target: Point2::new(v[2], v[3]),
            })
        })
        .collect()
}

pub fn write_matches(matches: &[PointMatch]) -> String {
    let mut out = String::from("uA,vA,uB,vB\n");
    for m in matches {
        out += &join([m.source.x, m.source.y, m.target.x, m.target.y]);
        out.push('\n');
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<ViewDetection>, FormatError> {
    let t = read_table(text)?;
    expect_prefix(&t, &["view_id", "umin", "vmin", "umax", "vmax", "score"])?;
    t.rows
        .iter()
        .map(|(line, r)| {
            let view = r[0]
                .parse::<usize>()
                .map_err(|_| FormatError::UnparsableNumber {
                    line: *line,
                    token: r[0].clone(),
                })?;
            let v = nums(*line, &r[1..6])?;
            finite(*line, &v)?;
            let det = ViewDetection {
                view,
                umin: v[0],
                vmin: v[1],
                umax: v[2],
                vmax: v[3],
                score: v[4],
            };
            det.validate().map_err(|e| FormatError::InvalidTable {
                line: *line,
                detail: e.to_string(),
            })?;
            Ok(det)
        })
        .collect()
}

pub fn write_detections(dets: &[ViewDetection]) -> String {
    let mut out = String::from("view_id,umin,vmin,umax,vmax,score\n");
    for d in dets {
        let _ = writeln!(
            out,
            "{},{}",
            d.view,
            join([d.umin, d.vmin, d.umax, d.vmax, d.score])
        );
    }
    out
}

pub fn write_proposals(proposals: &[GeoDetection], selected: &[usize]) -> String {
    let mut out = String::from("easting,northing,score,selected\n");
    for (i, p) in proposals.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{}",
            join([p.easting, p.northing, p.combined]),
            u8::from(selected.contains(&i))
        );
    }
    out
}

/// Geographic positions; extra columns after `easting,northing` are ignored.
pub fn parse_positions(text: &str) -> Result<Vec<(f64, f64)>, FormatError> {
    let t = read_table(text)?;
    expect_prefix(&t, &["easting", "northing"])?;
    t.rows
        .iter()
        .map(|(line, r)| {
            let v = nums(*line, &r[..2])?;
            finite(*line, &v)?;
            Ok((v[0], v[1]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_skyline_round_trip() {
        let sky = QuerySkyline {
            rows: vec![Some(12.25), None, Some(0.1)],
        };
        assert_eq!(
            parse_query_skyline(&write_query_skyline(&sky)).unwrap(),
            sky
        );
    }

    #[test]
    fn landmarks_round_trip_and_header_check() {
        let l = vec![Landmark {
            world: Vector3::new(1.5, -2.0, 3.0),
            descriptor: vec![0.1, 0.2],
        }];
        let text = write_landmarks(&l);
        assert!(text.starts_with("x,y,z,d0,d1\n"));
        assert_eq!(parse_landmarks(&text).unwrap(), l);
        let err = parse_landmarks("x,y,z,d1\n1,2,3,4\n").unwrap_err();
        assert_eq!(err.code(), "InvalidTable");
        let err = parse_keypoints("u,v,d0\n1,2,3\n4,oops,5\n").unwrap_err();
        assert!(
            matches!(err, FormatError::UnparsableNumber { line: 3, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn reference_requires_uniform_azimuths() {
        let ok = "azimuth_deg,elev_deg\n0,1\n90,2\n180,3\n270,4\n";
        assert_eq!(parse_reference_skyline(ok).unwrap().len(), 4);
        assert!(
            parse_reference_skyline("azimuth_deg,elev_deg\n0,1\n100,2\n180,3\n270,4\n").is_err()
        );
    }

    #[test]
    fn detections_validate_boxes() {
        let text = "view_id,umin,vmin,umax,vmax,score\n0,1,2,3,4,0.5\n";
        assert_eq!(parse_detections(text).unwrap()[0].vmax, 4.0);
        assert!(parse_detections("view_id,umin,vmin,umax,vmax,score\n0,3,2,1,4,0.5\n").is_err());
    }
}
