//! ESRI-ASCII-compatible grid files.
//!
//! Six header lines (`ncols`, `nrows`, `xllcorner`, `yllcorner`, `cellsize`,
//! `nodata_value`) followed by `nrows` lines of `ncols` values, northernmost
//! row first. Values are written in shortest round-trip form so a save/load
//! cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GridGeometry, HeightGrid};
use crate::error::{Error, Result};

const NODATA_SENTINEL: f64 = -9999.0;
const HEADER_KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];

pub fn save_dem(grid: &HeightGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_asc_string(grid))?;
    Ok(())
}

pub fn load_dem(path: impl AsRef<Path>) -> Result<HeightGrid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_asc(&text).map_err(|(line, message)| Error::Parse { path: path.to_path_buf(), line, message })
}

pub(crate) fn to_asc_string(grid: &HeightGrid) -> String {
    let g = &grid.geometry;
    let mut s = String::new();
    let _ = writeln!(s, "ncols {}", g.width);
    let _ = writeln!(s, "nrows {}", g.height);
    let _ = writeln!(s, "xllcorner {}", g.origin[0]);
    let _ = writeln!(s, "yllcorner {}", g.origin[1]);
    let _ = writeln!(s, "cellsize {}", g.resolution);
    let _ = writeln!(s, "nodata_value {}", NODATA_SENTINEL);
    for j in (0..g.height).rev() {
        for i in 0..g.width {
            if i > 0 {
                s.push(' ');
            }
            match grid.get(i, j) {
                Some(v) => {
                    let _ = write!(s, "{v}");
                }
                None => {
                    let _ = write!(s, "{NODATA_SENTINEL}");
                }
            }
        }
        s.push('\n');
    }
    s
}

type ParseResult<T> = std::result::Result<T, (usize, String)>;

pub(crate) fn parse_asc(text: &str) -> ParseResult<HeightGrid> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l)).filter(|(_, l)| !l.trim().is_empty());

    let mut header = [0.0f64; 6];
    for (slot, key) in header.iter_mut().zip(HEADER_KEYS) {
        let (line, content) = lines.next().ok_or((0, format!("missing header `{key}`")))?;
        let mut parts = content.split_whitespace();
        let name = parts.next().unwrap_or_default();
        if !name.eq_ignore_ascii_case(key) {
            return Err((line, format!("expected header `{key}`, found `{name}`")));
        }
        let value = parts.next().ok_or((line, format!("header `{key}` has no value")))?;
        *slot = value.parse::<f64>().map_err(|e| (line, format!("header `{key}`: {e}")))?;
        if !slot.is_finite() {
            return Err((line, format!("header `{key}` is not finite")));
        }
        if parts.next().is_some() {
            return Err((line, format!("header `{key}` has trailing tokens")));
        }
    }
    let [ncols, nrows, xll, yll, cellsize, nodata] = header;
    let dim = |v: f64, key: &str, line: usize| -> ParseResult<usize> {
        if v < 1.0 || v.fract() != 0.0 {
            Err((line, format!("`{key}` must be a positive integer, got {v}")))
        } else {
            Ok(v as usize)
        }
    };
    let width = dim(ncols, "ncols", 1)?;
    let height = dim(nrows, "nrows", 2)?;
    let geometry =
        GridGeometry::new([xll, yll], cellsize, width, height).map_err(|e| (5, e.to_string()))?;

    let mut grid = HeightGrid::empty(geometry);
    let mut row = 0usize;
    let mut last_line = 6;
    for (line, content) in lines {
        last_line = line;
        if row >= height {
            return Err((line, format!("more than nrows={height} data rows")));
        }
        let j = height - 1 - row;
        let mut count = 0usize;
        for token in content.split_whitespace() {
            if count >= width {
                return Err((line, format!("expected {width} values, found more")));
            }
            let v: f64 = token.parse().map_err(|e| (line, format!("value `{token}`: {e}")))?;
            if !v.is_finite() {
                return Err((line, format!("non-finite value `{token}`")));
            }
            if v == nodata {
                grid.set(count, j, None);
            } else if v < 0.0 {
                return Err((line, format!("negative height {v}")));
            } else {
                grid.set(count, j, Some(v));
            }
            count += 1;
        }
        if count != width {
            return Err((line, format!("expected {width} values, found {count}")));
        }
        row += 1;
    }
    if row != height {
        return Err((last_line, format!("expected {height} data rows, found {row}")));
    }
    Ok(grid)
}
