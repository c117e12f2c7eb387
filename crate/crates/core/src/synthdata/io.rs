//! Dataset directories: 16-bit binary PGM files plus a JSON index.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{quantize, scene_seed, Benchmark, BenchmarkSpec, Dataset, Role, Sample};
use crate::field::{Image, LabelField};
use crate::{Error, Result};

const INDEX_FILE: &str = "index.json";
const INDEX_VERSION: u32 = 1;

/// Writes a P5 file with maxval 65535 (big-endian samples).
pub fn write_pgm(path: impl AsRef<Path>, height: usize, width: usize, samples: &[u16]) -> Result<()> {
    if samples.len() != height * width {
        return Err(Error::ShapeMismatch(format!("{height}x{width} image with {} samples", samples.len())));
    }
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(2 * samples.len());
    for s in samples {
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a P5 file; returns `(height, width, samples)` scaled to 16 bits.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::DatasetFormat(format!("{}: {m}", path.display()));
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P5") {
        return Err(bad("not a binary PGM"));
    }
    let mut num = || token().and_then(|t| t.parse::<usize>().ok());
    let (width, height, maxval) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) => (w, h, m),
        _ => return Err(bad("malformed header")),
    };
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("unsupported header values"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let wide = maxval > 255;
    let need = height * width * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated raster"))?;
    let samples = if wide {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect::<Vec<_>>()
    } else {
        raster.iter().map(|&b| u16::from(b)).collect()
    };
    let scaled = samples
        .into_iter()
        .map(|s| {
            if usize::from(s) > maxval {
                return Err(bad("sample above maxval"));
            }
            Ok(((f64::from(s) / maxval as f64) * 65535.0).round() as u16)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((height, width, scaled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemIndex {
    pub image: String,
    pub mask: String,
    pub scene_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub role: Role,
    pub seed: u64,
    pub shifted: bool,
    pub items: Vec<ItemIndex>,
}

/// Contents of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkIndex {
    pub version: u32,
    pub seed: u64,
    pub spec: BenchmarkSpec,
    pub datasets: Vec<DatasetIndex>,
}

/// Writes every split of `bench` into `dir` (created if absent).
pub fn save_benchmark(bench: &Benchmark, dir: impl AsRef<Path>) -> Result<BenchmarkIndex> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut datasets = Vec::new();
    for role in Role::ALL {
        let ds = bench.get(role);
        let seed = Benchmark::split_seed(bench.seed, role);
        let mut items = Vec::with_capacity(ds.len());
        for (i, s) in ds.samples.iter().enumerate() {
            if s.image.channels() != 1 {
                return Err(Error::DatasetFormat("PGM output needs single-channel images".into()));
            }
            let (h, w) = s.image.dims();
            let image = format!("{}_{i:03}.pgm", role.name());
            let mask = format!("{}_{i:03}_mask.pgm", role.name());
            let pixels: Vec<u16> = s.image.values().iter().map(|&v| quantize(v)).collect();
            write_pgm(dir.join(&image), h, w, &pixels)?;
            let labels: Vec<u16> = s.label.values().iter().map(|&v| if v == 0 { 0 } else { 65535 }).collect();
            write_pgm(dir.join(&mask), h, w, &labels)?;
            items.push(ItemIndex { image, mask, scene_seed: scene_seed(seed, i) });
        }
        datasets.push(DatasetIndex { role, seed, shifted: role != Role::SourceTrain, items });
    }
    let index = BenchmarkIndex { version: INDEX_VERSION, seed: bench.seed, spec: bench.spec, datasets };
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    fs::write(dir.join(INDEX_FILE), text)?;
    Ok(index)
}

fn read_index(dir: &Path) -> Result<BenchmarkIndex> {
    let text = fs::read_to_string(dir.join(INDEX_FILE))?;
    let index: BenchmarkIndex =
        serde_json::from_str(&text).map_err(|e| Error::DatasetFormat(format!("{INDEX_FILE}: {e}")))?;
    if index.version != INDEX_VERSION {
        return Err(Error::DatasetFormat(format!("unsupported index version {}", index.version)));
    }
    Ok(index)
}

fn read_split(dir: &Path, entry: &DatasetIndex) -> Result<Dataset> {
    let samples = entry
        .items
        .iter()
        .map(|item| {
            let (h, w, px) = read_pgm(dir.join(&item.image))?;
            let (mh, mw, mk) = read_pgm(dir.join(&item.mask))?;
            if (mh, mw) != (h, w) {
                return Err(Error::DatasetFormat(format!("{}: mask size differs from image", item.mask)));
            }
            let image = Image::new(h, w, 1, px.iter().map(|&s| f64::from(s) / 65535.0).collect())?;
            let label = LabelField::new(h, w, 2, mk.iter().map(|&s| u32::from(s >= 32768)).collect())?;
            Ok(Sample { image, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(entry.role, samples)
}

/// One split of a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>, role: Role) -> Result<Dataset> {
    let dir = dir.as_ref();
    let index = read_index(dir)?;
    let entry = index
        .datasets
        .iter()
        .find(|d| d.role == role)
        .ok_or_else(|| Error::DatasetFormat(format!("no {} split in {}", role.name(), dir.display())))?;
    read_split(dir, entry)
}

/// Every split of a dataset directory.
pub fn load_benchmark(dir: impl AsRef<Path>) -> Result<Benchmark> {
    let dir = dir.as_ref();
    let index = read_index(dir)?;
    let get = |role: Role| -> Result<Dataset> {
        let entry = index
            .datasets
            .iter()
            .find(|d| d.role == role)
            .ok_or_else(|| Error::DatasetFormat(format!("no {} split", role.name())))?;
        read_split(dir, entry)
    };
    Ok(Benchmark {
        seed: index.seed,
        spec: index.spec,
        source_train: get(Role::SourceTrain)?,
        target_train: get(Role::TargetTrain)?,
        target_test: get(Role::TargetTest)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let px = vec![0, 1, 256, 65535, 12345, 7];
        write_pgm(&p, 2, 3, &px).unwrap();
        let raw = fs::read(&p).unwrap();
        assert!(raw.starts_with(b"P5\n3 2\n65535\n"));
        assert_eq!(&raw[raw.len() - 12..raw.len() - 10], &[0, 0]);
        assert_eq!(&raw[raw.len() - 8..raw.len() - 6], &[1, 0]);
        assert_eq!(read_pgm(&p).unwrap(), (2, 3, px));
    }

    #[test]
    fn eight_bit_pgm_is_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), (1, 2, vec![0, 65535]));
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n4 4\n65535\n\x00\x01").unwrap();
        assert!(matches!(read_pgm(&p), Err(Error::DatasetFormat(_))));
        fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(matches!(read_pgm(&p), Err(Error::DatasetFormat(_))));
    }

    #[test]
    fn benchmark_directory_round_trip() {
        let spec = BenchmarkSpec { n_source_train: 2, n_target_train: 2, n_target_test: 1, ..BenchmarkSpec::default() };
        let b = Benchmark::generate(4, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let index = save_benchmark(&b, dir.path()).unwrap();
        assert_eq!(index.datasets.len(), 3);
        assert_eq!(load_benchmark(dir.path()).unwrap(), b);
        assert_eq!(load_dataset(dir.path(), Role::TargetTest).unwrap(), b.target_test);
    }
}
