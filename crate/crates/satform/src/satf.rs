//! The `.satf` raster format: a one-line text header followed by raw
//! band-sequential little-endian `f32` samples.
//!
//! Header fields, space-separated and newline-terminated, in fixed order:
//!
//! ```text
//! SATF <version> <height> <width> <bands> <name_1> ... <name_C>
//! ```
//!
//! The payload is `height * width * bands` floats, one full band at a time,
//! row-major within a band — exactly the in-memory layout of
//! [`Raster`], which makes round trips bitwise.

use satform_core::raster::Raster;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const SATF_MAGIC: &str = "SATF";
pub const SATF_VERSION: u32 = 1;

#[derive(Debug)]
pub enum SatfError {
    Io(io::Error),
    BadMagic(String),
    UnsupportedVersion(u32),
    BadHeader(String),
    Truncated { expected: usize, got: usize },
    Raster(String),
}

impl fmt::Display for SatfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SatfError::Io(e) => write!(f, "io error: {e}"),
            SatfError::BadMagic(m) => write!(f, "not a SATF file (magic '{m}')"),
            SatfError::UnsupportedVersion(v) => write!(f, "unsupported SATF version {v}"),
            SatfError::BadHeader(msg) => write!(f, "malformed SATF header: {msg}"),
            SatfError::Truncated { expected, got } => {
                write!(f, "truncated payload: expected {expected} bytes, got {got}")
            }
            SatfError::Raster(msg) => write!(f, "invalid raster: {msg}"),
        }
    }
}

impl std::error::Error for SatfError {}

impl From<io::Error> for SatfError {
    fn from(e: io::Error) -> Self {
        SatfError::Io(e)
    }
}

/// Write a raster to `path` in `.satf` format.
pub fn write_satf(path: &Path, r: &Raster) -> Result<(), SatfError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "{SATF_MAGIC} {SATF_VERSION} {} {} {}",
        r.height(),
        r.width(),
        r.bands()
    )?;
    for name in r.band_names() {
        write!(w, " {name}")?;
    }
    writeln!(w)?;
    for b in 0..r.bands() {
        for v in r.band(b) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a raster from a `.satf` file.
pub fn read_satf(path: &Path) -> Result<Raster, SatfError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // read the header line byte-wise so the binary payload stays untouched
    loop {
        let mut byte = [0u8; 1];
        match r.read_exact(&mut byte) {
            Ok(()) if byte[0] == b'\n' => break,
            Ok(()) => header.push(byte[0]),
            Err(_) => {
                return Err(SatfError::BadHeader(
                    "missing newline-terminated header".into(),
                ))
            }
        }
        if header.len() > 4096 {
            return Err(SatfError::BadHeader("header exceeds 4096 bytes".into()));
        }
    }
    let header = String::from_utf8(header)
        .map_err(|_| SatfError::BadHeader("header is not UTF-8".into()))?;
    let mut fields = header.split_ascii_whitespace();
    let magic = fields.next().unwrap_or("");
    if magic != SATF_MAGIC {
        return Err(SatfError::BadMagic(magic.to_string()));
    }
    let version: u32 = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SatfError::BadHeader("missing version".into()))?;
    if version != SATF_VERSION {
        return Err(SatfError::UnsupportedVersion(version));
    }
    let mut dim = |what: &str| -> Result<usize, SatfError> {
        fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SatfError::BadHeader(format!("missing {what}")))
    };
    let height = dim("height")?;
    let width = dim("width")?;
    let bands = dim("band count")?;
    let names: Vec<String> = fields.map(|s| s.to_string()).collect();
    if names.len() != bands {
        return Err(SatfError::BadHeader(format!(
            "expected {bands} band names, found {}",
            names.len()
        )));
    }
    let expected = height * width * bands * 4;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(SatfError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Raster::new(height, width, names, data).map_err(|e| SatfError::Raster(format!("{e:?}")))
}
