//! Feature files, label CSVs and dataset manifests.
//!
//! Feature file: `"TMFF" | version u32 | T u32 | d_in u32 | mode tag u32`
//! followed by `T * d_in` little-endian f64 values, row-major.
//!
//! Manifest: one sequence per line, tab-separated mode file paths then the
//! label path, relative to the manifest. The first line is a header
//! `# tmmf-manifest classes=<C> dims=<d1,d2,...>`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Sequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"TMFF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 20;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        what: "feature file",
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_features(stream: &Tensor<f64>, mode: u32) -> Result<Vec<u8>> {
    if stream.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected [T, d_in], got {:?}",
            stream.shape()
        )));
    }
    let fit = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 8 * stream.numel());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&fit(stream.shape()[0])?.to_le_bytes());
    out.extend_from_slice(&fit(stream.shape()[1])?.to_le_bytes());
    out.extend_from_slice(&mode.to_le_bytes());
    for v in stream.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Returns the stream and its mode tag.
pub fn decode_features(bytes: &[u8]) -> Result<(Tensor<f64>, u32)> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated header: expected {FEATURE_HEADER_LEN} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(format_err(0, "bad magic, expected \"TMFF\""));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != FEATURE_VERSION {
        return Err(format_err(4, format!("unsupported version {}", word(4))));
    }
    let (frames, dim, mode) = (word(8) as usize, word(12) as usize, word(16));
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(FEATURE_HEADER_LEN))
        .ok_or_else(|| format_err(8, "header size overflows"))?;
    if bytes.len() != expected {
        return Err(format_err(
            bytes.len().min(expected),
            format!(
                "expected {expected} bytes for {frames} x {dim} values, found {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[FEATURE_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((Tensor::new(vec![frames, dim], data)?, mode))
}

pub fn write_feature_file(path: impl AsRef<Path>, stream: &Tensor<f64>, mode: u32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(stream, mode)?).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<(Tensor<f64>, u32)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame_index", "label"])?;
    for (t, y) in labels.iter().enumerate() {
        w.write_record([t.to_string(), y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `frame_index,label` CSV; frame indices must run 0, 1, 2, ...
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame_index", "label"] {
        return Err(Error::Data(format!(
            "{}: expected header frame_index,label, found {}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut labels = Vec::new();
    for (row, rec) in r.deserialize::<(usize, usize)>().enumerate() {
        let (t, y) = rec?;
        if t != row {
            return Err(Error::Data(format!(
                "{}: row {} has frame_index {t}, expected {row}",
                path.display(),
                row + 2
            )));
        }
        labels.push(y);
    }
    Ok(labels)
}

/// Writes every sequence and a manifest into `dir`; returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset, name: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims: Vec<String> = data.input_dims.iter().map(|d| d.to_string()).collect();
    let mut manifest = format!(
        "# tmmf-manifest classes={} dims={}\n",
        data.classes,
        dims.join(",")
    );
    for s in &data.sequences {
        let mut cols = Vec::new();
        for (m, stream) in s.streams.iter().enumerate() {
            let file = format!("{}.m{m}.tmff", s.id);
            write_feature_file(dir.join(&file), stream, m as u32)?;
            cols.push(file);
        }
        let file = format!("{}.labels.csv", s.id);
        write_labels(dir.join(&file), &s.labels)?;
        cols.push(file);
        manifest.push_str(&cols.join("\t"));
        manifest.push('\n');
    }
    let path = dir.join(format!("{name}.manifest"));
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    header
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

pub fn read_dataset(manifest: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines();
    let header = lines
        .next()
        .filter(|l| l.starts_with("# tmmf-manifest"))
        .ok_or_else(|| Error::Data(format!("{}: missing manifest header", manifest.display())))?;
    let bad_header = || Error::Data(format!("{}: malformed manifest header", manifest.display()));
    let classes: usize = header_field(header, "classes")
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad_header)?;
    let input_dims = header_field(header, "dims")
        .ok_or_else(bad_header)?
        .split(',')
        .map(|d| d.parse::<usize>().map_err(|_| bad_header()))
        .collect::<Result<Vec<_>>>()?;
    let mut sequences = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != input_dims.len() + 1 {
            return Err(Error::Data(format!(
                "{}: line has {} columns, expected {}",
                manifest.display(),
                cols.len(),
                input_dims.len() + 1
            )));
        }
        let streams = cols[..input_dims.len()]
            .iter()
            .map(|f| read_feature_file(base.join(f)).map(|(t, _)| t))
            .collect::<Result<Vec<_>>>()?;
        let label_file = cols[input_dims.len()];
        let labels = read_labels(base.join(label_file))?;
        let id = label_file
            .strip_suffix(".labels.csv")
            .unwrap_or(label_file)
            .to_string();
        let seq = Sequence {
            id,
            streams,
            labels,
        };
        seq.check(&input_dims, classes)?;
        sequences.push(seq);
    }
    Ok(Dataset {
        classes,
        input_dims,
        sequences,
    })
}
