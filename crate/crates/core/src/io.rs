//! Two-file raster container and the text label format.
//!
//! A cube lives in a UTF-8 header (`key=value` per line) next to a raw file of
//! little-endian `float32` samples in band-sequential order. The raw file
//! shares the header's path with the extension replaced by `raw`.
//!
//! ```text
//! width=145
//! height=145
//! bands=200
//! dtype=float32
//! interleave=bsq
//! byteorder=little
//! ```
//!
//! Label maps are plain text: a first line `width height num_classes`, then
//! the row-major labels separated by whitespace.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{HsiCube, LabelMap};
use crate::scalar::Real;

const CUBE_KEYS: [&str; 6] = ["width", "height", "bands", "dtype", "interleave", "byteorder"];

/// Path of the raw sample file belonging to a header.
pub fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub(crate) fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(path, format!("line {}: expected key=value", lineno + 1))
        })?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::format(path, format!("duplicate key {k}")));
        }
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_dim(path: &Path, kv: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    let v = kv
        .get(key)
        .ok_or_else(|| Error::format(path, format!("missing key {key}")))?;
    v.parse::<usize>()
        .map_err(|_| Error::format(path, format!("{key}={v} is not a non-negative integer")))
}

fn expect_value(kv: &BTreeMap<String, String>, key: &str, accepted: &str) -> Result<()> {
    match kv.get(key) {
        Some(v) if v == accepted => Ok(()),
        Some(v) => Err(Error::Unsupported {
            key: key.into(),
            value: v.clone(),
        }),
        None => Err(Error::Unsupported {
            key: key.into(),
            value: String::new(),
        }),
    }
}

/// Decodes little-endian `float32` samples.
pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn encode_f32<T: Real>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cube; values are returned exactly as stored.
pub fn load_cube<T: Real>(header_path: impl AsRef<Path>) -> Result<HsiCube<T>> {
    let header_path = header_path.as_ref();
    let kv = parse_key_values(header_path, &read_text(header_path)?)?;
    if let Some(unknown) = kv.keys().find(|k| !CUBE_KEYS.contains(&k.as_str())) {
        return Err(Error::format(header_path, format!("unknown key {unknown}")));
    }
    expect_value(&kv, "dtype", "float32")?;
    expect_value(&kv, "interleave", "bsq")?;
    expect_value(&kv, "byteorder", "little")?;
    let width = parse_dim(header_path, &kv, "width")?;
    let height = parse_dim(header_path, &kv, "height")?;
    let bands = parse_dim(header_path, &kv, "bands")?;

    let raw = raw_path(header_path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected = width * height * bands;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len() / 4,
        });
    }
    let data = decode_f32(&bytes)
        .into_iter()
        .map(|v| T::lit(v as f64))
        .collect();
    HsiCube::new(height, width, bands, data)
}

/// Writes a cube as header + raw `float32`. Values are narrowed to `f32`.
pub fn write_cube<T: Real>(cube: &HsiCube<T>, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let header = format!(
        "width={}\nheight={}\nbands={}\ndtype=float32\ninterleave=bsq\nbyteorder=little\n",
        cube.width(),
        cube.height(),
        cube.bands()
    );
    write_file(header_path, header.as_bytes())?;
    write_file(&raw_path(header_path), &encode_f32(cube.data()))
}

pub fn parse_labels(path: &Path, text: &str) -> Result<LabelMap> {
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| -> Result<u64> {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::format(path, format!("missing {what}")))?;
        tok.parse::<u64>()
            .map_err(|_| Error::format(path, format!("{what}: '{tok}' is not an integer")))
    };
    let width = next("width")? as usize;
    let height = next("height")? as usize;
    let num_classes = next("num_classes")? as u32;
    let mut labels = Vec::with_capacity(width * height);
    for i in 0..width * height {
        labels.push(next(&format!("label {i}"))? as u32);
    }
    if tokens.next().is_some() {
        return Err(Error::format(path, "trailing data after labels"));
    }
    LabelMap::new(height, width, num_classes, labels)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    parse_labels(path, &read_text(path)?)
}

/// Text form of a label map: one header line, then one line per raster row.
pub fn format_labels(labels: &LabelMap) -> String {
    let mut out = format!(
        "{} {} {}\n",
        labels.width(),
        labels.height(),
        labels.num_classes()
    );
    for row in labels.labels().chunks(labels.width()) {
        let line: Vec<String> = row.iter().map(|l| l.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_labels(labels).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(dir: &Path, header: &str, values: &[f32]) -> PathBuf {
        let hdr = dir.join("c.hdr");
        fs::write(&hdr, header).unwrap();
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(raw_path(&hdr), bytes).unwrap();
        hdr
    }

    const HDR_2X2: &str =
        "width=2\nheight=2\nbands=1\ndtype=float32\ninterleave=bsq\nbyteorder=little\n";

    #[test]
    fn loads_row_major_values() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = write_raw(dir.path(), HDR_2X2, &[0.0, 1.0, 2.0, 3.0]);
        let cube: HsiCube<f64> = load_cube(&hdr).unwrap();
        assert_eq!(cube.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(cube.get(1, 0, 0), 2.0);
    }

    #[test]
    fn short_raw_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = write_raw(dir.path(), HDR_2X2, &[0.0, 1.0, 2.0]);
        assert!(matches!(
            load_cube::<f64>(&hdr),
            Err(Error::SizeMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn rejects_unsupported_dtype_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = write_raw(
            dir.path(),
            &HDR_2X2.replace("float32", "float64"),
            &[0.0; 4],
        );
        assert!(matches!(load_cube::<f64>(&hdr), Err(Error::Unsupported { .. })));
        assert!(matches!(
            load_cube::<f64>(dir.path().join("nope.hdr")),
            Err(Error::Io { .. })
        ));
        fs::remove_file(raw_path(&hdr)).unwrap();
        fs::write(&hdr, HDR_2X2).unwrap();
        assert!(matches!(load_cube::<f64>(&hdr), Err(Error::Io { .. })));
    }

    #[test]
    fn rejects_non_finite_samples() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = write_raw(dir.path(), HDR_2X2, &[0.0, f32::INFINITY, 2.0, 3.0]);
        assert!(matches!(
            load_cube::<f64>(&hdr),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn write_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("w.hdr");
        let cube = HsiCube::<f32>::new(2, 3, 2, (0..12).map(|v| v as f32 * 0.1).collect()).unwrap();
        write_cube(&cube, &hdr).unwrap();
        let back: HsiCube<f32> = load_cube(&hdr).unwrap();
        assert_eq!(back, cube);
    }

    #[test]
    fn label_text_round_trip() {
        let map = LabelMap::new(2, 3, 4, vec![0, 1, 2, 3, 4, 0]).unwrap();
        let text = format_labels(&map);
        assert_eq!(text, "3 2 4\n0 1 2\n3 4 0\n");
        assert_eq!(parse_labels(Path::new("x"), &text).unwrap(), map);
        assert!(parse_labels(Path::new("x"), "3 2 4\n0 1 2\n3 4").is_err());
        assert!(parse_labels(Path::new("x"), "1 1 1\n2\n").is_err());
    }
}
