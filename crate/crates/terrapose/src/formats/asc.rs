//! ESRI ASCII grids.
//!
//! Grids are node-registered: `xllcorner`/`yllcorner` (or the `*center`
//! spellings) give the position of the south-west node, and each body line
//! holds one row of node values, north first.

use terrapose_core::terrain::{DemGrid, GridSpec, DEFAULT_NODATA};

use super::FormatError;

const REQUIRED: [&str; 5] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize"];

fn number(token: &str, line: usize) -> Result<f64, FormatError> {
    token
        .parse::<f64>()
        .map_err(|_| FormatError::UnparsableNumber {
            line,
            token: token.to_string(),
        })
}

fn count(token: &str, line: usize) -> Result<usize, FormatError> {
    token
        .parse::<usize>()
        .map_err(|_| FormatError::UnparsableNumber {
            line,
            token: token.to_string(),
        })
}

/// Parses the text of an ASCII grid.
pub fn parse_ascii_grid(text: &str) -> Result<DemGrid, FormatError> {
    let mut header: [Option<(f64, usize)>; 5] = [None; 5];
    let mut ncols = 0;
    let mut nrows = 0;
    let mut nodata = DEFAULT_NODATA;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let mut body_line = 1;

    while let Some(&(no, line)) = lines.peek() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            lines.next();
            continue;
        };
        if key.parse::<f64>().is_ok() {
            body_line = no;
            break;
        }
        let value = parts.next().ok_or(FormatError::UnparsableNumber {
            line: no,
            token: String::new(),
        })?;
        let key = key.to_ascii_lowercase();
        let slot = match key.as_str() {
            "ncols" => {
                ncols = count(value, no)?;
                Some(0)
            }
            "nrows" => {
                nrows = count(value, no)?;
                Some(1)
            }
            "xllcorner" | "xllcenter" => Some(2),
            "yllcorner" | "yllcenter" => Some(3),
            "cellsize" => Some(4),
            "nodata_value" => {
                nodata = number(value, no)?;
                None
            }
            _ => {
                return Err(FormatError::InvalidTable {
                    line: no,
                    detail: format!("unknown header key `{key}`"),
                });
            }
        };
        if let Some(s) = slot {
            header[s] = Some((number(value, no)?, no));
        }
        lines.next();
        body_line = no + 1;
    }
    for (i, key) in REQUIRED.iter().enumerate() {
        if header[i].is_none() {
            return Err(FormatError::MissingHeaderKey {
                line: body_line,
                key,
            });
        }
    }
    let value = |i: usize| header[i].map(|h| h.0).unwrap_or_default();

    let mut elevations = Vec::with_capacity(ncols * nrows);
    let mut rows = 0;
    let mut last_line = body_line;
    for (no, line) in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        last_line = no;
        if rows == nrows {
            return Err(FormatError::NonRectangularBody {
                line: no,
                detail: format!("more than {nrows} rows"),
            });
        }
        if tokens.len() != ncols {
            return Err(FormatError::NonRectangularBody {
                line: no,
                detail: format!("row has {} values, expected {ncols}", tokens.len()),
            });
        }
        for t in tokens {
            elevations.push(number(t, no)?);
        }
        rows += 1;
    }
    if rows != nrows {
        return Err(FormatError::NonRectangularBody {
            line: last_line,
            detail: format!("body has {rows} rows, expected {nrows}"),
        });
    }
    let spec = GridSpec {
        origin_easting: value(2),
        origin_northing: value(3),
        cell_size: value(4),
        n_cols: ncols,
        n_rows: nrows,
    };
    DemGrid::new(spec, elevations, nodata).map_err(|e| FormatError::InvalidValue(e.to_string()))
}

/// Serializes a grid; values use the shortest representation that parses
/// back to the same bits.
pub fn write_ascii_grid(grid: &DemGrid) -> String {
    use std::fmt::Write;
    let s = grid.spec();
    let mut out = String::new();
    let _ = writeln!(out, "ncols {}", s.n_cols);
    let _ = writeln!(out, "nrows {}", s.n_rows);
    let _ = writeln!(out, "xllcorner {}", s.origin_easting);
    let _ = writeln!(out, "yllcorner {}", s.origin_northing);
    let _ = writeln!(out, "cellsize {}", s.cell_size);
    let _ = writeln!(out, "NODATA_value {}", grid.nodata());
    for row in grid.elevations().chunks(s.n_cols) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
            first = false;
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\n";

    #[test]
    fn zero_grid() {
        let g = parse_ascii_grid(&format!("{HEADER}0 0\n0 0\n")).unwrap();
        assert!(g.elevations().iter().all(|&v| v == 0.0));
        assert_eq!(g.nodata(), DEFAULT_NODATA);
    }

    #[test]
    fn short_body_names_line() {
        let err = parse_ascii_grid(&format!("{HEADER}0 0\n0\n")).unwrap_err();
        assert!(
            matches!(err, FormatError::NonRectangularBody { line: 7, .. }),
            "{err:?}"
        );
        let err = parse_ascii_grid(&format!("{HEADER}0 0\n")).unwrap_err();
        assert!(
            matches!(err, FormatError::NonRectangularBody { line: 6, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn missing_key_and_bad_number() {
        let err =
            parse_ascii_grid("ncols 2\nnrows 2\nxllcorner 0\ncellsize 1\n0 0\n0 0\n").unwrap_err();
        assert!(
            matches!(
                err,
                FormatError::MissingHeaderKey {
                    line: 5,
                    key: "yllcorner"
                }
            ),
            "{err:?}"
        );
        let err = parse_ascii_grid(&format!("{HEADER}0 0\n0 x1\n")).unwrap_err();
        assert!(
            matches!(err, FormatError::UnparsableNumber { line: 7, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn nodata_and_case() {
        let g = parse_ascii_grid(
            "NCOLS 2\nNROWS 2\nXLLCENTER 5\nYLLCENTER 6\nCELLSIZE 1\nNODATA_VALUE -1\n1 -1\n2 3\n",
        )
        .unwrap();
        assert_eq!(g.nodata(), -1.0);
        assert!(g.is_nodata(g.node(1, 0)));
        assert_eq!(g.spec().origin_easting, 5.0);
    }
}
