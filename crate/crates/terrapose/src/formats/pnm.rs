//! Binary PGM (P5) and PPM (P6) images as rasters in `[0, 1]`.
//!
//! Colour images are reduced to luminance on read. Writes are always 16-bit
//! P5; values are clamped to `[0, 1]` and non-finite samples become 0.

use terrapose_core::raster::Raster;

use super::FormatError;

fn bad(msg: impl Into<String>) -> FormatError {
    FormatError::InvalidImage(msg.into())
}

/// Reads the next whitespace-delimited header token, skipping comments.
fn token(bytes: &[u8], pos: &mut usize) -> Result<String, FormatError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad("truncated header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, FormatError> {
    let t = token(bytes, pos)?;
    t.parse().map_err(|_| bad(format!("bad {what} `{t}`")))
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Raster, FormatError> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(bad(format!(
                "unsupported image type `{other}`; expected P5 or P6"
            )))
        }
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad(
            "width, height and maxval must be positive (maxval <= 65535)",
        ));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let need = width * height * channels * sample_bytes;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| bad(format!("expected {need} sample bytes")))?;
    let scale = 1.0 / maxval as f64;
    let sample = |i: usize| -> f64 {
        let v = if sample_bytes == 2 {
            u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
        } else {
            data[i] as f64
        };
        v * scale
    };
    let values = (0..width * height)
        .map(|p| {
            if channels == 1 {
                sample(p)
            } else {
                0.299 * sample(3 * p) + 0.587 * sample(3 * p + 1) + 0.114 * sample(3 * p + 2)
            }
        })
        .collect();
    Ok(Raster::from_vec(width, height, values))
}

pub fn write_pgm16(raster: &Raster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", raster.width(), raster.height()).into_bytes();
    out.reserve(raster.data().len() * 2);
    for &v in raster.data() {
        let q = if v.is_finite() {
            (v.clamp(0.0, 1.0) * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}
