//! On-disk dataset layout: one `sample_XXXXX.bin` per image plus a
//! `manifest.tsv` listing `id`, `label` and file name.
//!
//! Sample header: magic `CPCDIMG1`, then little-endian `u32` height, width,
//! channels, id, label; then `H·W·C` little-endian `f32` pixels (HWC order).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, ImageSample};
use super::image::Image;
use crate::error::{CpcdError, Result};

pub const SAMPLE_MAGIC: &[u8; 8] = b"CPCDIMG1";
pub const MANIFEST_NAME: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "# cpcd dataset manifest v1";

fn sample_file_name(id: usize) -> String {
    format!("sample_{id:05}.bin")
}

fn format_err(path: &Path, msg: impl Into<String>) -> CpcdError {
    CpcdError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn encode_sample(id: usize, label: usize, image: &Image) -> Vec<u8> {
    let mut buf = Vec::with_capacity(28 + image.pixels().len() * 4);
    buf.extend_from_slice(SAMPLE_MAGIC);
    for v in [image.height(), image.width(), image.channels(), id, label] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in image.pixels() {
        buf.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    buf
}

/// Returns `(id, label, image)`.
pub fn decode_sample(bytes: &[u8], path: &Path) -> Result<(usize, usize, Image)> {
    if bytes.len() < 28 || &bytes[..8] != SAMPLE_MAGIC {
        return Err(format_err(path, "missing CPCDIMG1 header"));
    }
    let field = |i: usize| {
        let o = 8 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (h, w, c, id, label) = (field(0), field(1), field(2), field(3), field(4));
    let body = &bytes[28..];
    if body.len() != h * w * c * 4 {
        return Err(format_err(
            path,
            format!("expected {} pixel bytes for {h}x{w}x{c}, found {}", h * w * c * 4, body.len()),
        ));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let image = Image::new(h, w, c, pixels).map_err(|e| format_err(path, e.to_string()))?;
    if !image.in_unit_range() {
        return Err(format_err(path, "pixel values outside [0, 1]"));
    }
    Ok((id, label, image))
}

/// Writes every sample and the manifest into `dir`, creating it if needed.
/// Label access goes through the audited accessor.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push_str(&format!("\n# n_classes\t{}\n", dataset.n_classes()));
    let mut paths = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let name = sample_file_name(s.id);
        let label = s.label();
        let path = dir.join(&name);
        fs::File::create(&path)?.write_all(&encode_sample(s.id, label, &s.image))?;
        manifest.push_str(&format!("{}\t{}\t{}\n", s.id, label, name));
        paths.push(path);
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(paths)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(format_err(&manifest_path, "unrecognised manifest header"));
    }
    let mut n_classes = None;
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if let Some(rest) = line.strip_prefix("# n_classes\t") {
            n_classes = rest.trim().parse::<usize>().ok();
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || format_err(&manifest_path, format!("malformed line {}: {line:?}", lineno + 2));
        if cols.len() != 3 {
            return Err(bad());
        }
        let id: usize = cols[0].parse().map_err(|_| bad())?;
        let label: usize = cols[1].parse().map_err(|_| bad())?;
        let path = dir.join(cols[2]);
        let (fid, flabel, image) = decode_sample(&fs::read(&path)?, &path)?;
        if fid != id || flabel != label {
            return Err(format_err(&path, format!("header says id {fid} label {flabel}, manifest says {id} {label}")));
        }
        samples.push(ImageSample::new(id, image, label));
    }
    samples.sort_by_key(|s| s.id);
    let n_classes = match n_classes {
        Some(n) => n,
        None => samples.iter().map(|s| s.label() + 1).max().unwrap_or(0),
    };
    Dataset::from_samples(samples, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{generate_synthetic_dataset, DatasetSpec};

    #[test]
    fn round_trip_is_exact() {
        let spec = DatasetSpec {
            samples_per_class: 3,
            image_size: 8,
            ..DatasetSpec::default()
        };
        let ds = generate_synthetic_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(paths.len(), 12);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 12);
        assert_eq!(back.n_classes(), 4);
        assert_eq!(back.pixel_hash(), ds.pixel_hash());
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!(a.image, b.image);
        }
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let img = Image::filled(2, 2, 1, 0.5);
        let mut bytes = encode_sample(0, 1, &img);
        assert!(decode_sample(&bytes, Path::new("x")).is_ok());
        bytes[0] = b'X';
        assert!(matches!(decode_sample(&bytes, Path::new("x")), Err(CpcdError::Format { .. })));
        let short = &encode_sample(0, 1, &img)[..30];
        assert!(decode_sample(short, Path::new("x")).is_err());
    }
}
