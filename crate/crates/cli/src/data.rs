//! Dataset ingestion: IDX image/label files, CIFAR binary batches,
//! stratified subsetting, and train-split normalization.

use std::fs;
use std::path::Path;

use prunesense_core::data::DatasetSplit;
use prunesense_core::error::Error;
use prunesense_core::tensor::Tensor4;
use prunesense_core::Result;
use serde::{Deserialize, Serialize};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A decoded dataset before normalization: raw pixel bytes in (n, c, h, w)
/// order and one label byte per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSet {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawSet {
    pub fn sample_pixels(&self, i: usize) -> &[u8] {
        let stride = self.c * self.h * self.w;
        &self.pixels[i * stride..(i + 1) * stride]
    }
}

/// Per-channel mean and standard deviation of the training split, applied
/// after scaling bytes to [0, 1]. Persisted so evaluation elsewhere can
/// reproduce the exact preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

fn be_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn need(bytes: &[u8], upto: usize, what: &str) -> Result<()> {
    if bytes.len() < upto {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("{what}: truncated, need {upto} bytes, have {}", bytes.len()),
        });
    }
    Ok(())
}

/// Parses an IDX image file (big-endian magic 0x00000803, then count,
/// rows, cols, then one byte per pixel).
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    need(bytes, 16, what)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{what}: expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"
            ),
        });
    }
    let n = be_u32(bytes, 4) as usize;
    let h = be_u32(bytes, 8) as usize;
    let w = be_u32(bytes, 12) as usize;
    let expect = 16 + n * h * w;
    need(bytes, expect, what)?;
    if bytes.len() > expect {
        return Err(Error::Format {
            offset: expect,
            message: format!("{what}: {} trailing bytes after payload", bytes.len() - expect),
        });
    }
    Ok((n, h, w, bytes[16..].to_vec()))
}

/// Parses an IDX label file (big-endian magic 0x00000801, then count, then
/// one byte per label).
pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    need(bytes, 8, what)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{what}: expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"
            ),
        });
    }
    let n = be_u32(bytes, 4) as usize;
    let expect = 8 + n;
    need(bytes, expect, what)?;
    if bytes.len() > expect {
        return Err(Error::Format {
            offset: expect,
            message: format!("{what}: {} trailing bytes after payload", bytes.len() - expect),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn encode_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Format {
        offset: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn idx_pair(dir: &Path, images: &str, labels: &str) -> Result<RawSet> {
    let img_bytes = read_file(&dir.join(images))?;
    let (n, h, w, pixels) = parse_idx_images(&img_bytes, images)?;
    let lbl_bytes = read_file(&dir.join(labels))?;
    let lbls = parse_idx_labels(&lbl_bytes, labels)?;
    if lbls.len() != n {
        return Err(Error::Format {
            offset: 8,
            message: format!(
                "{labels}: {} labels for {n} images in {images}",
                lbls.len()
            ),
        });
    }
    Ok(RawSet { n, c: 1, h, w, pixels, labels: lbls })
}

/// Loads the four standard MNIST-layout IDX files from a directory.
pub fn load_mnist_raw(dir: &Path) -> Result<(RawSet, RawSet)> {
    let train = idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let test = idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    Ok((train, test))
}

/// Decodes one CIFAR binary batch into an accumulator. `label_bytes` is 1
/// for the 10-class layout and 2 for the 100-class layout (coarse byte
/// first, fine byte second; the fine label is kept).
fn parse_cifar_batch(
    bytes: &[u8],
    what: &str,
    label_bytes: usize,
    num_classes: usize,
    pixels: &mut Vec<u8>,
    labels: &mut Vec<u8>,
) -> Result<()> {
    const PLANE: usize = 32 * 32;
    let record = label_bytes + 3 * PLANE;
    if bytes.len() % record != 0 {
        return Err(Error::Format {
            offset: (bytes.len() / record) * record,
            message: format!(
                "{what}: length {} is not a multiple of the {record}-byte record",
                bytes.len()
            ),
        });
    }
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_bytes - 1];
        if label as usize >= num_classes {
            return Err(Error::Format {
                offset: i * record + label_bytes - 1,
                message: format!("{what}: label {label} out of range for {num_classes} classes"),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[label_bytes..]);
    }
    Ok(())
}

/// Loads CIFAR binary batches. `variant` is 10 or 100.
pub fn load_cifar_raw(dir: &Path, variant: u16) -> Result<(RawSet, RawSet)> {
    let (train_files, test_files, label_bytes, classes): (Vec<String>, Vec<String>, usize, usize) =
        match variant {
            10 => (
                (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
                vec!["test_batch.bin".into()],
                1,
                10,
            ),
            100 => (vec!["train.bin".into()], vec!["test.bin".into()], 2, 100),
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset variant cifar{other}; expected cifar10 or cifar100"
                )))
            }
        };
    let load = |files: &[String]| -> Result<RawSet> {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for f in files {
            let bytes = read_file(&dir.join(f))?;
            parse_cifar_batch(&bytes, f, label_bytes, classes, &mut pixels, &mut labels)?;
        }
        Ok(RawSet { n: labels.len(), c: 3, h: 32, w: 32, pixels, labels })
    };
    Ok((load(&train_files)?, load(&test_files)?))
}

/// Takes a label-stratified prefix subset: scanning in file order, the
/// first quota of every class. A subset of 2000 over 10 classes takes
/// exactly 200 per class; remainders go to the lowest class indices.
pub fn stratified_subset(set: &RawSet, take: usize, num_classes: usize) -> Result<RawSet> {
    if take == 0 || take >= set.n {
        return Ok(set.clone());
    }
    let base = take / num_classes;
    let rem = take % num_classes;
    let quota: Vec<usize> =
        (0..num_classes).map(|c| base + usize::from(c < rem)).collect();
    let mut have = vec![0usize; num_classes];
    let stride = set.c * set.h * set.w;
    let mut pixels = Vec::with_capacity(take * stride);
    let mut labels = Vec::with_capacity(take);
    for i in 0..set.n {
        let class = set.labels[i] as usize;
        if class < num_classes && have[class] < quota[class] {
            have[class] += 1;
            pixels.extend_from_slice(set.sample_pixels(i));
            labels.push(set.labels[i]);
            if labels.len() == take {
                break;
            }
        }
    }
    if labels.len() < take {
        let missing: Vec<String> = (0..num_classes)
            .filter(|&c| have[c] < quota[c])
            .map(|c| format!("class {c}: {}/{}", have[c], quota[c]))
            .collect();
        return Err(Error::InvalidRequest(format!(
            "stratified subset of {take} unreachable: {}",
            missing.join(", ")
        )));
    }
    Ok(RawSet { n: take, c: set.c, h: set.h, w: set.w, pixels, labels })
}

/// Per-channel mean and standard deviation of the byte pixels scaled to
/// [0, 1], computed over the whole set.
pub fn compute_norm_stats(train: &RawSet) -> NormStats {
    let plane = train.h * train.w;
    let mut mean = vec![0.0f64; train.c];
    let mut var = vec![0.0f64; train.c];
    let per_channel = (train.n * plane) as f64;
    for i in 0..train.n {
        let px = train.sample_pixels(i);
        for ch in 0..train.c {
            for &b in &px[ch * plane..(ch + 1) * plane] {
                mean[ch] += b as f64 / 255.0;
            }
        }
    }
    for m in &mut mean {
        *m /= per_channel;
    }
    for i in 0..train.n {
        let px = train.sample_pixels(i);
        for ch in 0..train.c {
            for &b in &px[ch * plane..(ch + 1) * plane] {
                let d = b as f64 / 255.0 - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: var
            .iter()
            .map(|&v| ((v / per_channel).sqrt() as f32).max(1e-6))
            .collect(),
    }
}

/// Scales bytes to [0, 1], applies the channel statistics, and builds the
/// training-ready split.
pub fn normalize(set: &RawSet, stats: &NormStats, num_classes: usize) -> Result<DatasetSplit> {
    if stats.mean.len() != set.c || stats.std.len() != set.c {
        return Err(Error::InvalidRequest(format!(
            "normalization stats cover {} channels, data has {}",
            stats.mean.len(),
            set.c
        )));
    }
    let plane = set.h * set.w;
    let mut data = Vec::with_capacity(set.pixels.len());
    for i in 0..set.n {
        let px = set.sample_pixels(i);
        for ch in 0..set.c {
            let (m, s) = (stats.mean[ch], stats.std[ch]);
            for &b in &px[ch * plane..(ch + 1) * plane] {
                data.push((b as f32 / 255.0 - m) / s);
            }
        }
    }
    let images = Tensor4::from_vec(set.n, set.c, set.h, set.w, data)?;
    let labels: Vec<u32> = set.labels.iter().map(|&l| l as u32).collect();
    DatasetSplit::new(images, labels, num_classes)
}
