//! The `.satw` checkpoint format: a named tensor table in the same
//! header-plus-payload style as the raster format.
//!
//! Layout:
//!
//! ```text
//! SATW <version> <n_tensors>\n
//! <name> <rows> <cols>\n
//! <rows * cols little-endian f64>
//! ... repeated n_tensors times, in the file's order ...
//! ```
//!
//! Saving a parameter store and loading it back is bitwise exact; entries
//! are written in the store's deterministic name order.

use satform_core::nn::{Param, ParamStore};
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const SATW_MAGIC: &str = "SATW";
pub const SATW_VERSION: u32 = 1;

#[derive(Debug)]
pub enum SatwError {
    Io(io::Error),
    BadMagic(String),
    UnsupportedVersion(u32),
    BadHeader(String),
    Truncated { name: String },
}

impl fmt::Display for SatwError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SatwError::Io(e) => write!(f, "io error: {e}"),
            SatwError::BadMagic(m) => write!(f, "not a SATW file (magic '{m}')"),
            SatwError::UnsupportedVersion(v) => write!(f, "unsupported SATW version {v}"),
            SatwError::BadHeader(msg) => write!(f, "malformed SATW entry: {msg}"),
            SatwError::Truncated { name } => write!(f, "truncated payload for tensor '{name}'"),
        }
    }
}

impl std::error::Error for SatwError {}

impl From<io::Error> for SatwError {
    fn from(e: io::Error) -> Self {
        SatwError::Io(e)
    }
}

/// Write all parameters to `path`.
pub fn write_satw(path: &Path, store: &ParamStore) -> Result<(), SatwError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SATW_MAGIC} {SATW_VERSION} {}", store.len())?;
    for (name, p) in store.entries() {
        writeln!(w, "{name} {} {}", p.rows, p.cols)?;
        for v in &p.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_line(r: &mut impl Read) -> Result<String, SatwError> {
    let mut bytes = Vec::new();
    loop {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)
            .map_err(|_| SatwError::BadHeader("unexpected end of file in header".into()))?;
        if b[0] == b'\n' {
            break;
        }
        bytes.push(b[0]);
        if bytes.len() > 4096 {
            return Err(SatwError::BadHeader("header line exceeds 4096 bytes".into()));
        }
    }
    String::from_utf8(bytes).map_err(|_| SatwError::BadHeader("header is not UTF-8".into()))
}

/// Load a parameter store from `path`.
pub fn read_satw(path: &Path) -> Result<ParamStore, SatwError> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_line(&mut r)?;
    let mut fields = header.split_ascii_whitespace();
    let magic = fields.next().unwrap_or("");
    if magic != SATW_MAGIC {
        return Err(SatwError::BadMagic(magic.to_string()));
    }
    let version: u32 = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SatwError::BadHeader("missing version".into()))?;
    if version != SATW_VERSION {
        return Err(SatwError::UnsupportedVersion(version));
    }
    let count: usize = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SatwError::BadHeader("missing tensor count".into()))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let entry = read_line(&mut r)?;
        let mut fields = entry.split_ascii_whitespace();
        let name = fields
            .next()
            .ok_or_else(|| SatwError::BadHeader("missing tensor name".into()))?
            .to_string();
        let rows: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SatwError::BadHeader(format!("missing rows for '{name}'")))?;
        let cols: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SatwError::BadHeader(format!("missing cols for '{name}'")))?;
        let mut payload = vec![0u8; rows * cols * 8];
        r.read_exact(&mut payload)
            .map_err(|_| SatwError::Truncated { name: name.clone() })?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, Param { rows, cols, values });
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use satform_core::nn::{EncoderConfig, Model, SeqModelConfig};
    use std::fs;

    #[test]
    fn round_trip_is_bitwise() {
        let model = Model::init(EncoderConfig::default(), SeqModelConfig::default(), 4, 9);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.satw");
        write_satw(&p, &model.params).unwrap();
        let back = read_satw(&p).unwrap();
        assert_eq!(back.checksum(""), model.params.checksum(""));
        assert_eq!(back, model.params);
        let p2 = dir.path().join("model2.satw");
        write_satw(&p2, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.satw");
        fs::write(&p, b"WOOF 1 0\n").unwrap();
        assert!(matches!(read_satw(&p), Err(SatwError::BadMagic(_))));

        let model = Model::init(EncoderConfig::default(), SeqModelConfig::default(), 2, 1);
        let p = dir.path().join("trunc.satw");
        write_satw(&p, &model.params).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_satw(&p), Err(SatwError::Truncated { .. })));
    }

    #[test]
    fn exotic_float_bits_survive() {
        let mut store = ParamStore::new();
        store.insert(
            "w",
            Param {
                rows: 1,
                cols: 3,
                values: vec![-0.0, f64::MIN_POSITIVE, 1.0 + f64::EPSILON],
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.satw");
        write_satw(&p, &store).unwrap();
        let back = read_satw(&p).unwrap();
        for (a, b) in back.get("w").values.iter().zip(&store.get("w").values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
