//! Versioned generator checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `GDISTCKP` |
//! | 4     | format version (`u32`, currently 1) |
//! | 1     | stage tag: 0 pretrained, 1 distilled |
//! | 4 + n | `u32` length, then UTF-8 JSON header `{generator, discriminator, meta}` |
//! | ...   | generator parameter store |
//! | 1     | 1 if a discriminator store follows, else 0 |
//! | ...   | discriminator parameter store (optional) |
//! | 32    | SHA-256 of every preceding byte |
//!
//! Parameter stores are written by [`ParamStore::write_to`]: a `u32` entry
//! count, then per entry a `u32` name length, the name, a `u8` kind
//! (0 trainable, 1 buffer), a `u8` dtype (0 f32, 1 f64), a `u32` rank, `u32`
//! dims and the raw values.

use std::fs;
use std::path::Path;

use gendistill_nn::{ParamStore, Real};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{build_discriminator, build_generator, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::error::{Error, Result};
use crate::seed::RngState;

pub const MAGIC: &[u8; 8] = b"GDISTCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Distilled,
}

impl Stage {
    fn code(self) -> u8 {
        match self {
            Stage::Pretrained => 0,
            Stage::Distilled => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Stage::Pretrained),
            1 => Ok(Stage::Distilled),
            _ => Err(Error::Checkpoint(format!("unknown stage tag {}", c))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dataset: String,
    pub config_hash: String,
    /// Seconds since the Unix epoch; 0 in deterministic mode.
    pub created_unix: u64,
    /// Optimizer steps applied to the generator so far, across stages.
    pub steps: u64,
    pub epoch: usize,
    pub rng: Option<RngState>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    generator: GeneratorSpec,
    discriminator: Option<DiscriminatorSpec>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct GeneratorCheckpoint {
    pub stage: Stage,
    pub spec: GeneratorSpec,
    pub gen: ParamStore<f32>,
    pub disc: Option<(DiscriminatorSpec, ParamStore<f32>)>,
    pub meta: CheckpointMeta,
}

impl GeneratorCheckpoint {
    /// Identifier derived from the generator parameters.
    pub fn id(&self) -> String {
        self.gen.fingerprint()[..16].to_string()
    }

    /// Generator layout bound to a copy of the stored parameters.
    pub fn generator<T: Real>(&self) -> Result<(Generator, ParamStore<T>)> {
        let (g, mut store) = build_generator::<T>(&self.spec, 0)?;
        store.copy_from(&cast_store(&self.gen))?;
        Ok((g, store))
    }

    pub fn discriminator<T: Real>(&self) -> Result<(Discriminator, ParamStore<T>)> {
        let (spec, saved) = self
            .disc
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no discriminator".into()))?;
        let (d, mut store) = build_discriminator::<T>(spec, 0)?;
        store.copy_from(&cast_store(saved))?;
        Ok((d, store))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            generator: self.spec.clone(),
            discriminator: self.disc.as_ref().map(|(s, _)| s.clone()),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stage.code());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        self.gen.write_to(&mut out)?;
        match &self.disc {
            Some((_, store)) => {
                out.push(1);
                store.write_to(&mut out)?;
            }
            None => out.push(0),
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 + 4 + 1 + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a generator checkpoint (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (file is corrupt or truncated)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {} (expected {})", version, VERSION)));
        }
        let stage = Stage::from_code(body[12])?;
        let hlen = u32::from_le_bytes(body[13..17].try_into().unwrap()) as usize;
        let json = body.get(17..17 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        let mut rest = &body[17 + hlen..];
        let gen = ParamStore::<f32>::read_from(&mut rest)?;
        let has_disc = *rest.first().ok_or_else(|| bad("missing discriminator flag"))?;
        rest = &rest[1..];
        let disc = match (has_disc, header.discriminator) {
            (0, _) => None,
            (1, Some(spec)) => Some((spec, ParamStore::<f32>::read_from(&mut rest)?)),
            _ => return Err(bad("discriminator flag and header disagree")),
        };
        if !rest.is_empty() {
            return Err(bad("trailing bytes after parameter stores"));
        }
        let ckpt = Self { stage, spec: header.generator, gen, disc, meta: header.meta };
        ckpt.generator::<f32>()?;
        if ckpt.disc.is_some() {
            ckpt.discriminator::<f32>()?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Load { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::from_bytes(&bytes)
    }
}

/// Copies a store into another element type, keeping names and kinds.
pub fn cast_store<S: Real, T: Real>(src: &ParamStore<S>) -> ParamStore<T> {
    let mut out = ParamStore::new();
    for id in src.ids() {
        out.add(src.name(id), src.get(id).cast(), src.kind(id));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GeneratorCheckpoint {
        let spec = GeneratorSpec { width: 4, noise_dim: 8, ..GeneratorSpec::new(1, 10) };
        let dspec = DiscriminatorSpec { width: 4, ..DiscriminatorSpec::new(1, 10) };
        let (_, gen) = build_generator::<f32>(&spec, 1).unwrap();
        let (_, disc) = build_discriminator::<f32>(&dspec, 2).unwrap();
        GeneratorCheckpoint {
            stage: Stage::Pretrained,
            spec,
            gen,
            disc: Some((dspec, disc)),
            meta: CheckpointMeta { dataset: "mnist".into(), steps: 3, ..Default::default() },
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = GeneratorCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.gen.fingerprint(), c.gen.fingerprint());
        assert_eq!(back.disc.unwrap().1.fingerprint(), c.disc.unwrap().1.fingerprint());
        assert_eq!(back.meta, c.meta);
        assert_eq!(back.stage, Stage::Pretrained);
    }

    #[test]
    fn corruption_and_version_are_detected() {
        let bytes = sample().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(GeneratorCheckpoint::from_bytes(&flipped).unwrap_err().to_string().contains("checksum"));
        let mut v2 = bytes[..bytes.len() - 32].to_vec();
        v2[8] = 2;
        let d = Sha256::digest(&v2);
        v2.extend_from_slice(&d);
        assert!(GeneratorCheckpoint::from_bytes(&v2).unwrap_err().to_string().contains("version"));
        assert!(GeneratorCheckpoint::from_bytes(b"nonsense").is_err());
    }
}
