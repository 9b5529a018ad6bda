//! `CDM1` density raster files.
//!
//! Layout: one ASCII header line `CDM1 <cols> <rows> <stride>\n`, then
//! `cols·rows` little-endian IEEE-754 `f32` values in row-major order.
//! Values are stored in single precision; reading widens them back to `f64`.

use std::fs;
use std::path::Path;

use crate::annotations::GridSpec;
use crate::density::DensityGrid;
use crate::error::{Error, Result};

const MAGIC: &str = "CDM1";

pub fn encode(grid: &DensityGrid) -> Vec<u8> {
    let spec = grid.spec();
    let header = format!("{MAGIC} {} {} {}\n", spec.cols, spec.rows, spec.stride);
    let mut out = Vec::with_capacity(header.len() + 4 * spec.len());
    out.extend_from_slice(header.as_bytes());
    for &v in grid.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DensityGrid> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Raster("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::Raster("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let [magic, cols, rows, stride] = fields[..] else {
        return Err(Error::Raster(format!("expected 4 header fields, got '{header}'")));
    };
    if magic != MAGIC {
        return Err(Error::Raster(format!("bad magic '{magic}', expected {MAGIC}")));
    }
    let parse_dim = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Raster(format!("bad {what} '{s}' in header")))
    };
    let cols = parse_dim(cols, "column count")?;
    let rows = parse_dim(rows, "row count")?;
    let stride: f64 = stride
        .parse()
        .map_err(|_| Error::Raster(format!("bad stride '{stride}' in header")))?;
    let spec = GridSpec::new(stride, cols, rows).map_err(|e| Error::Raster(e.to_string()))?;

    let body = &bytes[newline + 1..];
    let expected = spec
        .len()
        .checked_mul(4)
        .ok_or_else(|| Error::Raster("grid too large".into()))?;
    if body.len() != expected {
        return Err(Error::Raster(format!(
            "{cols}x{rows} grid needs {expected} data bytes, found {}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    DensityGrid::new(spec, values)
}

pub fn write_raster(path: impl AsRef<Path>, grid: &DensityGrid) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(grid)).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<DensityGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes)
}
