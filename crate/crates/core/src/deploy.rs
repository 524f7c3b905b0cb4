//! Stage 3: distilled datasets of any size from a saved generator.
//!
//! Distilled archive layout (all integers little-endian):
//!
//! | bytes   | content |
//! |---------|---------|
//! | 8       | magic `GDISTSET` |
//! | 4       | format version (`u32`, currently 1) |
//! | 4 × 4   | `n, c, h, w` as `u32` |
//! | 4       | class count `K` (`u32`) |
//! | 1       | dtype tag (0 = f32) |
//! | 4·n·c·h·w | images, row-major `(n, c, h, w)`, values in `[-1, 1]` |
//! | 4·n     | labels (`u32`) |
//! | 4 + m   | `u32` length, then UTF-8 JSON provenance |
//! | 32      | SHA-256 of every preceding byte |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gendistill_nn::{Mode, ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::Generator;
use crate::data::{ImageBatch, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::seed;

pub use crate::checkpoint::{CheckpointMeta, GeneratorCheckpoint, Stage};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"GDISTSET";
pub const ARCHIVE_VERSION: u32 = 1;

/// Images per generator forward call. Generation runs in evaluation mode,
/// so chunking does not change any output.
const CHUNK: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint: String,
    pub stage: Stage,
    pub dataset: String,
    pub seed: u64,
    pub ipc: usize,
}

/// `ipc·K` images in class-major order: class 0 first, then class 1, ...
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledDataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl DistilledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ipc(&self) -> usize {
        self.provenance.ipc
    }

    pub fn channels(&self) -> usize {
        self.images.dim(1)
    }

    pub fn class_count(&self, k: usize) -> usize {
        self.labels.iter().filter(|&&l| l == k).count()
    }

    /// Images of class `k`, in generation order.
    pub fn class_images(&self, k: usize) -> Result<Tensor<f32>> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == k).collect();
        Ok(self.images.select0(&idx)?)
    }

    pub fn as_batch(&self) -> Result<ImageBatch> {
        ImageBatch::new(self.images.clone(), self.labels.clone())
    }

    /// Checks shape, value range and exact class balance.
    pub fn validate(&self) -> Result<()> {
        let s = self.images.shape();
        let bad = |m: String| Err(Error::Archive(m));
        if s.len() != 4 || s[0] != self.labels.len() || s[2] != IMAGE_SIZE || s[3] != IMAGE_SIZE {
            return bad(format!("images {:?} with {} labels", s, self.labels.len()));
        }
        if self.provenance.ipc == 0 || self.labels.len() != self.provenance.ipc * self.num_classes {
            return bad(format!("{} images for ipc {} and {} classes", self.labels.len(), self.provenance.ipc, self.num_classes));
        }
        for k in 0..self.num_classes {
            let n = self.class_count(k);
            if n != self.provenance.ipc {
                return bad(format!("class {} has {} images, expected {}", k, n, self.provenance.ipc));
            }
        }
        if !self.images.data().iter().all(|v| (-1.0..=1.0).contains(v)) {
            return bad("pixel values outside [-1, 1]".into());
        }
        Ok(())
    }
}

/// A loaded generator ready for repeated generation. Holds the parameters
/// immutably, so one instance may serve concurrent callers.
#[derive(Debug, Clone)]
pub struct Deployer {
    gen: Generator,
    store: ParamStore<f32>,
    id: String,
    stage: Stage,
    dataset: String,
}

impl Deployer {
    pub fn new(ckpt: &GeneratorCheckpoint) -> Result<Self> {
        let (gen, store) = ckpt.generator::<f32>()?;
        Ok(Self { gen, store, id: ckpt.id(), stage: ckpt.stage, dataset: ckpt.meta.dataset.clone() })
    }

    pub fn num_classes(&self) -> usize {
        self.gen.spec.num_classes
    }

    pub fn parameter_hash(&self) -> String {
        self.store.fingerprint()
    }

    /// Draws `ipc·K` standard-normal noise vectors with class-major labels
    /// and runs the generator forward. No parameter is written.
    pub fn generate(&self, ipc: usize, seed: u64) -> Result<DistilledDataset> {
        if ipc == 0 {
            return Err(Error::Usage("ipc must be at least 1".into()));
        }
        let k = self.num_classes();
        let n = ipc * k;
        let labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, ipc)).collect();
        let z = Tensor::<f32>::randn([n, self.gen.spec.noise_dim], 1.0, &mut seed::rng_for(seed, "deploy_noise"));
        let mut parts = Vec::with_capacity(n.div_ceil(CHUNK));
        for start in (0..n).step_by(CHUNK) {
            let len = CHUNK.min(n - start);
            parts.push(self.gen.generate(&self.store, &z.narrow0(start, len)?, &labels[start..start + len], Mode::Eval)?);
        }
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        let images = Tensor::cat0(&refs)?;
        Ok(DistilledDataset {
            images,
            labels,
            num_classes: k,
            provenance: Provenance { checkpoint: self.id.clone(), stage: self.stage, dataset: self.dataset.clone(), seed, ipc },
        })
    }
}

pub fn generate_distilled(ckpt: &GeneratorCheckpoint, ipc: usize, seed: u64) -> Result<DistilledDataset> {
    Deployer::new(ckpt)?.generate(ipc, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// Binary archive only.
    Archive,
    /// Archive plus one `(K × ipc)` PNG grid beside it.
    ArchiveWithGrid,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "archive" => Ok(ExportFormat::Archive),
            "archive+grid" => Ok(ExportFormat::ArchiveWithGrid),
            _ => Err(Error::Usage(format!("unknown export format '{}' (expected archive or archive+grid)", s))),
        }
    }
}

pub fn to_bytes(ds: &DistilledDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let s = ds.images.shape();
    let mut out = Vec::with_capacity(ds.images.numel() * 4 + ds.len() * 4 + 256);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    for &d in s {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(ds.num_classes as u32).to_le_bytes());
    out.push(0);
    out.extend_from_slice(&ds.images.to_le_bytes());
    for &l in &ds.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    let json = serde_json::to_vec(&ds.provenance)?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<DistilledDataset> {
    let bad = |m: &str| Error::Archive(m.to_string());
    const HEAD: usize = 8 + 4 + 16 + 4 + 1;
    if bytes.len() < HEAD + 4 + 32 || &bytes[..8] != ARCHIVE_MAGIC {
        return Err(bad("not a distilled archive (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file is corrupt or truncated)"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
    let version = u32_at(8);
    if version != ARCHIVE_VERSION as usize {
        return Err(Error::Archive(format!("unsupported format version {} (expected {})", version, ARCHIVE_VERSION)));
    }
    let shape = [u32_at(12), u32_at(16), u32_at(20), u32_at(24)];
    let num_classes = u32_at(28);
    if body[32] != 0 {
        return Err(Error::Archive(format!("unknown dtype tag {}", body[32])));
    }
    let n_img = shape.iter().product::<usize>() * 4;
    let n_lab = shape[0] * 4;
    let mut off = HEAD;
    let img = body.get(off..off + n_img).ok_or_else(|| bad("truncated image payload"))?;
    off += n_img;
    let lab = body.get(off..off + n_lab).ok_or_else(|| bad("truncated label payload"))?;
    off += n_lab;
    let plen = u32_at(off);
    off += 4;
    let json = body.get(off..off + plen).ok_or_else(|| bad("truncated provenance"))?;
    if off + plen != body.len() {
        return Err(bad("trailing bytes after provenance"));
    }
    let ds = DistilledDataset {
        images: Tensor::from_le_bytes(shape.to_vec(), img)?,
        labels: lab.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect(),
        num_classes,
        provenance: serde_json::from_slice(json)?,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the archive to `path` and, for [`ExportFormat::ArchiveWithGrid`],
/// a grid PNG with the same stem. Returns every written path.
pub fn export_distilled(ds: &DistilledDataset, path: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, to_bytes(ds)?)?;
    let mut written = vec![path.to_path_buf()];
    if format == ExportFormat::ArchiveWithGrid {
        let grid = path.with_extension("grid.png");
        crate::report::render_grid(ds, &crate::report::GridLayout::full(ds), &grid)?;
        written.push(grid);
    }
    Ok(written)
}

pub fn import_distilled(path: &Path) -> Result<DistilledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::Load { path: path.to_path_buf(), msg: e.to_string() })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_generator, GeneratorSpec};

    fn ckpt() -> GeneratorCheckpoint {
        let spec = GeneratorSpec { width: 4, noise_dim: 8, ..GeneratorSpec::new(1, 10) };
        let (_, gen) = build_generator::<f32>(&spec, 3).unwrap();
        GeneratorCheckpoint { stage: Stage::Distilled, spec, gen, disc: None, meta: CheckpointMeta::default() }
    }

    #[test]
    fn ipc_one_gives_one_image_per_class() {
        let ds = generate_distilled(&ckpt(), 1, 0).unwrap();
        assert_eq!(ds.labels, (0..10).collect::<Vec<_>>());
        assert_eq!(ds.images.shape(), &[10, 1, 32, 32]);
        ds.validate().unwrap();
    }

    #[test]
    fn zero_ipc_is_rejected() {
        assert!(generate_distilled(&ckpt(), 0, 0).is_err());
    }

    #[test]
    fn chunking_does_not_change_outputs() {
        let d = Deployer::new(&ckpt()).unwrap();
        let big = d.generate(60, 4).unwrap();
        let z = Tensor::<f32>::randn([600, 8], 1.0, &mut seed::rng_for(4, "deploy_noise"));
        let whole = d.gen.generate(&d.store, &z, &big.labels, Mode::Eval).unwrap();
        assert_eq!(whole, big.images);
    }

    #[test]
    fn archive_round_trip_is_exact() {
        let ds = generate_distilled(&ckpt(), 3, 7).unwrap();
        let back = from_bytes(&to_bytes(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn corrupt_archive_is_rejected() {
        let mut bytes = to_bytes(&generate_distilled(&ckpt(), 1, 7).unwrap()).unwrap();
        bytes[40] ^= 0x10;
        assert!(from_bytes(&bytes).unwrap_err().to_string().contains("checksum"));
        assert!(from_bytes(b"GDISTSETxx").is_err());
    }

    #[test]
    fn format_names() {
        assert_eq!("archive".parse::<ExportFormat>().unwrap(), ExportFormat::Archive);
        assert_eq!("archive+grid".parse::<ExportFormat>().unwrap(), ExportFormat::ArchiveWithGrid);
        assert!(matches!("tarball".parse::<ExportFormat>(), Err(Error::Usage(_))));
    }
}
