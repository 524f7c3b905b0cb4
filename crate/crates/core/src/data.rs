//! Benchmark datasets: decoding, normalization and class-conditional sampling.
//!
//! Expected layout under `data_dir` (plain or `.gz`):
//!
//! ```text
//! mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
//! fashion_mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
//! cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin
//! ```
//!
//! 28×28 grayscale images are zero-padded to 32×32 (padding takes the
//! background value -1 after normalization).

use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use flate2::read::GzDecoder;
use gendistill_nn::Tensor;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 32;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
    /// Procedurally generated class patterns used by tests and smoke runs.
    Synthetic,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Synthetic => "synthetic",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetName::Cifar10 => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion_mnist" | "fashion-mnist" | "fashionmnist" => Ok(DatasetName::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
            _ => Err(Error::UnsupportedDataset(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Usage(format!("unknown split '{}'", s))),
        }
    }
}

/// Maps a byte in `[0, 255]` to `[-1, 1]`.
pub fn normalize(v: f32) -> f32 {
    v / 255.0 * 2.0 - 1.0
}

/// Inverse of [`normalize`], unrounded.
pub fn denormalize(v: f32) -> f32 {
    (v + 1.0) / 2.0 * 255.0
}

/// De-normalized value rounded and clamped to a byte.
pub fn to_byte(v: f32) -> u8 {
    denormalize(v).round().clamp(0.0, 255.0) as u8
}

/// Images with labels; pixels are `(B, C, 32, 32)` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub pixels: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl ImageBatch {
    pub fn new(pixels: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 4 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::Usage(format!("batch of {:?} with {} labels", s, labels.len())));
        }
        Ok(Self { pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A decoded split. Immutable and cheap to clone; clones share storage and
/// the access counter.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    name: DatasetName,
    split: Split,
    channels: usize,
    images: Arc<Vec<f32>>,
    labels: Arc<Vec<u8>>,
    by_class: Arc<Vec<Vec<usize>>>,
    accesses: Arc<AtomicU64>,
}

impl DatasetHandle {
    /// Builds a handle from normalized `(n, channels, 32, 32)` pixels.
    pub fn from_parts(name: DatasetName, split: Split, channels: usize, images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let per = channels * IMAGE_SIZE * IMAGE_SIZE;
        if channels == 0 || images.len() != labels.len() * per {
            return Err(Error::Usage(format!(
                "{} pixel values for {} labels with {} channels",
                images.len(),
                labels.len(),
                channels
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Usage(format!("label {} out of range", bad)));
        }
        let mut by_class = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        Ok(Self {
            name,
            split,
            channels,
            images: Arc::new(images),
            labels: Arc::new(labels),
            by_class: Arc::new(by_class),
            accesses: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn name(&self) -> DatasetName {
        self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self, k: usize) -> usize {
        self.by_class.get(k).map_or(0, Vec::len)
    }

    /// Number of batch reads served so far, across all clones.
    pub fn access_count(&self) -> u64 {
        self.accesses.load(Ordering::Relaxed)
    }

    fn image_len(&self) -> usize {
        self.channels * IMAGE_SIZE * IMAGE_SIZE
    }

    /// Gathers the given example indices into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<ImageBatch> {
        if indices.is_empty() {
            return Err(Error::Usage("empty index list".into()));
        }
        self.accesses.fetch_add(1, Ordering::Relaxed);
        let per = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Usage(format!("index {} out of {}", i, self.len())));
            }
            pixels.extend_from_slice(&self.images[i * per..(i + 1) * per]);
            labels.push(self.labels[i] as usize);
        }
        let shape = [indices.len(), self.channels, IMAGE_SIZE, IMAGE_SIZE];
        ImageBatch::new(Tensor::new(shape, pixels)?, labels)
    }

    /// Contiguous range `start..start + len`, used for full passes.
    pub fn range(&self, start: usize, len: usize) -> Result<ImageBatch> {
        let idx: Vec<usize> = (start..(start + len).min(self.len())).collect();
        self.batch(&idx)
    }
}

/// `b` distinct images of class `k`.
pub fn sample_class_batch<R: Rng + ?Sized>(h: &DatasetHandle, k: usize, b: usize, rng: &mut R) -> Result<ImageBatch> {
    if k >= NUM_CLASSES {
        return Err(Error::Usage(format!("class {} out of range", k)));
    }
    let pool = &h.by_class[k];
    if b == 0 || b > pool.len() {
        return Err(Error::InsufficientSamples { class: k, requested: b, available: pool.len() });
    }
    let picks: Vec<usize> = index::sample(rng, pool.len(), b).into_iter().map(|i| pool[i]).collect();
    h.batch(&picks)
}

/// `b` distinct examples drawn uniformly from the whole split.
pub fn sample_mixed_batch<R: Rng + ?Sized>(h: &DatasetHandle, b: usize, rng: &mut R) -> Result<ImageBatch> {
    if h.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if b == 0 || b > h.len() {
        return Err(Error::Usage(format!("mixed batch of {} from {} examples", b, h.len())));
    }
    let picks: Vec<usize> = index::sample(rng, h.len(), b).into_iter().collect();
    h.batch(&picks)
}

/// Loads one split of a benchmark dataset from `data_dir`.
pub fn load_dataset(name: &str, split: Split, data_dir: &Path) -> Result<DatasetHandle> {
    let name: DatasetName = name.parse()?;
    match name {
        DatasetName::Mnist => load_idx_pair(name, split, &data_dir.join("mnist")),
        DatasetName::FashionMnist => load_idx_pair(name, split, &data_dir.join("fashion_mnist")),
        DatasetName::Cifar10 => load_cifar(split, &data_dir.join("cifar-10-batches-bin")),
        DatasetName::Synthetic => Err(Error::UnsupportedDataset(name.to_string())),
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let gz = PathBuf::from(format!("{}.gz", path.display()));
    let load_err = |p: &Path, e: std::io::Error| Error::Load { path: p.to_path_buf(), msg: e.to_string() };
    let mut out = Vec::new();
    if path.exists() {
        File::open(path).and_then(|mut f| f.read_to_end(&mut out)).map_err(|e| load_err(path, e))?;
    } else if gz.exists() {
        File::open(&gz)
            .and_then(|f| GzDecoder::new(f).read_to_end(&mut out))
            .map_err(|e| load_err(&gz, e))?;
    } else {
        return Err(Error::Load { path: path.to_path_buf(), msg: "file not found (also tried .gz)".into() });
    }
    Ok(out)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes an IDX image file into `(count, rows, cols, raw bytes)`.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, &[u8]), String> {
    if bytes.len() < 16 {
        return Err("truncated header".into());
    }
    let magic = be_u32(bytes, 0);
    if magic != 0x0000_0803 {
        return Err(format!("bad image magic 0x{:08x}", magic));
    }
    let (n, r, c) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    if r > IMAGE_SIZE || c > IMAGE_SIZE {
        return Err(format!("{}x{} images exceed {}x{}", r, c, IMAGE_SIZE, IMAGE_SIZE));
    }
    let body = &bytes[16..];
    if body.len() != n * r * c {
        return Err(format!("expected {} pixel bytes, found {}", n * r * c, body.len()));
    }
    Ok((n, r, c, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<&[u8], String> {
    if bytes.len() < 8 {
        return Err("truncated header".into());
    }
    let magic = be_u32(bytes, 0);
    if magic != 0x0000_0801 {
        return Err(format!("bad label magic 0x{:08x}", magic));
    }
    let n = be_u32(bytes, 4) as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(format!("expected {} labels, found {}", n, body.len()));
    }
    Ok(body)
}

fn load_idx_pair(name: DatasetName, split: Split, dir: &Path) -> Result<DatasetHandle> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let img_path = dir.join(format!("{}-images-idx3-ubyte", prefix));
    let lbl_path = dir.join(format!("{}-labels-idx1-ubyte", prefix));
    let img_bytes = read_maybe_gz(&img_path)?;
    let lbl_bytes = read_maybe_gz(&lbl_path)?;
    let (n, r, c, raw) = parse_idx_images(&img_bytes).map_err(|msg| Error::Load { path: img_path.clone(), msg })?;
    let labels = parse_idx_labels(&lbl_bytes).map_err(|msg| Error::Load { path: lbl_path.clone(), msg })?;
    if labels.len() != n {
        return Err(Error::Load { path: lbl_path, msg: format!("{} labels for {} images", labels.len(), n) });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Load { path: lbl_path, msg: format!("label {} out of range", bad) });
    }
    let (top, left) = ((IMAGE_SIZE - r) / 2, (IMAGE_SIZE - c) / 2);
    let per = IMAGE_SIZE * IMAGE_SIZE;
    let mut images = vec![-1.0f32; n * per];
    for i in 0..n {
        for y in 0..r {
            for x in 0..c {
                images[i * per + (top + y) * IMAGE_SIZE + left + x] = normalize(raw[(i * r + y) * c + x] as f32);
            }
        }
    }
    DatasetHandle::from_parts(name, split, 1, images, labels.to_vec())
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Decodes concatenated CIFAR-10 binary records.
pub fn parse_cifar(bytes: &[u8]) -> std::result::Result<(Vec<f32>, Vec<u8>), String> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(format!("{} bytes is not a whole number of records", bytes.len()));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(format!("label {} out of range", rec[0]));
        }
        labels.push(rec[0]);
        images.extend(rec[1..].iter().map(|&b| normalize(b as f32)));
    }
    Ok((images, labels))
}

fn load_cifar(split: Split, dir: &Path) -> Result<DatasetHandle> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{}.bin", i)).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let path = dir.join(&f);
        let bytes = read_maybe_gz(&path)?;
        let (im, lb) = parse_cifar(&bytes).map_err(|msg| Error::Load { path, msg })?;
        images.extend(im);
        labels.extend(lb);
    }
    DatasetHandle::from_parts(DatasetName::Cifar10, split, 3, images, labels)
}

/// Class-dependent procedural images: each class gets a distinct blob
/// position and stroke orientation, with per-example jitter and noise.
pub fn synthetic(split: Split, per_class: usize, channels: usize, seed: u64) -> DatasetHandle {
    use rand::SeedableRng;
    let salt = if split == Split::Train { 0 } else { 1 };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2).wrapping_add(salt));
    let per = channels * IMAGE_SIZE * IMAGE_SIZE;
    let mut images = Vec::with_capacity(NUM_CLASSES * per_class * per);
    let mut labels = Vec::with_capacity(NUM_CLASSES * per_class);
    for _ in 0..per_class {
        for k in 0..NUM_CLASSES {
            let angle = k as f32 * std::f32::consts::PI / NUM_CLASSES as f32;
            let cx = 10.0 + 12.0 * ((k % 3) as f32 / 2.0) + rng.random_range(-1.5..1.5);
            let cy = 10.0 + 12.0 * ((k / 3) as f32 / 3.0) + rng.random_range(-1.5..1.5);
            let (s, c) = angle.sin_cos();
            for ch in 0..channels {
                let tint = 1.0 - 0.3 * ((ch + k) % 3) as f32;
                for y in 0..IMAGE_SIZE {
                    for x in 0..IMAGE_SIZE {
                        let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                        let along = dx * c + dy * s;
                        let across = -dx * s + dy * c;
                        let v = (-(along * along) / 40.0 - (across * across) / 3.0).exp() * tint;
                        let noise: f32 = rng.random_range(-0.05..0.05);
                        images.push((v * 2.0 - 1.0 + noise).clamp(-1.0, 1.0));
                    }
                }
            }
            labels.push(k as u8);
        }
    }
    DatasetHandle::from_parts(DatasetName::Synthetic, split, channels, images, labels)
        .expect("synthetic layout is consistent")
}
