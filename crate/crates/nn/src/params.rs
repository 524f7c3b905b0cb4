use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::graph::BufferUpdate;
use crate::real::{DType, Real};
use crate::tensor::Tensor;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

/// Index of an entry in a [`ParamStore`]. Ids are positional, so any store
/// with the same layout (e.g. one loaded from disk) accepts them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Updated by forward passes, never by the optimizer.
    Buffer,
}

#[derive(Clone)]
struct Entry<T> {
    name: String,
    kind: ParamKind,
    value: Arc<Tensor<T>>,
}

/// Named, ordered collection of parameters and buffers.
pub struct ParamStore<T> {
    uid: u64,
    entries: Vec<Entry<T>>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self { uid: NEXT_UID.fetch_add(1, Ordering::Relaxed), entries: self.entries.clone() }
    }
}

impl<T: Real> std::fmt::Debug for ParamStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("entries", &self.entries.len())
            .field("elements", &self.num_elements())
            .finish()
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { uid: NEXT_UID.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    /// Process-unique identity of this store; clones get a fresh one.
    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        self.entries.push(Entry { name: name.into(), kind, value: Arc::new(value) });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.kind(id) == ParamKind::Trainable
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        self.entries[id.0].value.clone()
    }

    /// Mutable access; copies the tensor if a graph still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(NnError::StoreMismatch(format!(
                "{}: {:?} vs {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Applies the buffer updates addressed to this store; others are ignored.
    pub fn apply_buffer_updates(&mut self, updates: Vec<BufferUpdate<T>>) -> Result<()> {
        let uid = self.uid;
        for u in updates.into_iter().filter(|u| u.store == uid) {
            self.set(u.id, u.value)?;
        }
        Ok(())
    }

    /// Copies values from a store with the same names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(NnError::StoreMismatch(format!(
                "{} entries vs {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() || dst.kind != src.kind {
                return Err(NnError::StoreMismatch(format!(
                    "{} {:?} vs {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, kinds, shapes and little-endian values.
    pub fn fingerprint(&self) -> String {
        self.digest(|_| true)
    }

    /// Like [`fingerprint`](Self::fingerprint) but over trainable entries only.
    pub fn trainable_fingerprint(&self) -> String {
        self.digest(|e| e.kind == ParamKind::Trainable)
    }

    fn digest(&self, keep: impl Fn(&Entry<T>) -> bool) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| keep(e)) {
            h.update((e.name.len() as u32).to_le_bytes());
            h.update(e.name.as_bytes());
            h.update([e.kind as u8]);
            for &d in e.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(e.value.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
    }

    /// Serializes as: `u32` entry count, then per entry `u32` name length,
    /// name bytes, `u8` kind, `u8` dtype, `u32` rank, `u32` dims, payload.
    /// Everything is little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[match e.kind {
                ParamKind::Trainable => 0,
                ParamKind::Buffer => 1,
            }])?;
            w.write_all(&[T::DTYPE.code()])?;
            w.write_all(&(e.value.rank() as u32).to_le_bytes())?;
            for &d in e.value.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&e.value.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut store = Self::new();
        let count = read_u32(r)? as usize;
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 4096 {
                return Err(NnError::Decode(format!("implausible name length {}", len)));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| NnError::Decode(e.to_string()))?;
            let mut tag = [0u8; 2];
            r.read_exact(&mut tag)?;
            let kind = match tag[0] {
                0 => ParamKind::Trainable,
                1 => ParamKind::Buffer,
                k => return Err(NnError::Decode(format!("unknown kind {} for {}", k, name))),
            };
            match DType::from_code(tag[1]) {
                Some(dt) if dt == T::DTYPE => {}
                other => return Err(NnError::Decode(format!("dtype {:?} for {}", other, name))),
            }
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(NnError::Decode(format!("rank {} for {}", rank, name)));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(r)? as usize);
            }
            let n: usize = shape.iter().product();
            if n > 1 << 30 {
                return Err(NnError::Decode(format!("{} elements for {}", n, name)));
            }
            let mut bytes = vec![0u8; n * T::DTYPE.size()];
            r.read_exact(&mut bytes)?;
            store.add(name, Tensor::from_le_bytes(shape, &bytes)?, kind);
        }
        Ok(store)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_fn([2, 3], |i| i as f32 - 2.5), ParamKind::Trainable);
        s.add("rm", Tensor::zeros([3]), ParamKind::Buffer);
        s
    }

    #[test]
    fn serialization_round_trip_preserves_fingerprint() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = ParamStore::<f32>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(s.fingerprint(), back.fingerprint());
        assert_ne!(s.uid(), back.uid());
        assert!(ParamStore::<f64>::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParamStore::<f32>::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn fingerprint_tracks_values_and_clone_gets_new_uid() {
        let mut s = sample();
        let c = s.clone();
        assert_ne!(s.uid(), c.uid());
        let before = s.fingerprint();
        let tb = s.trainable_fingerprint();
        s.get_mut(ParamId(1)).data_mut()[0] = 1.0;
        assert_ne!(before, s.fingerprint());
        assert_eq!(tb, s.trainable_fingerprint());
        assert_eq!(c.fingerprint(), before);
    }

    #[test]
    fn copy_from_checks_layout() {
        let mut a = sample();
        let mut b = ParamStore::<f32>::new();
        b.add("w", Tensor::zeros([3, 2]), ParamKind::Trainable);
        b.add("rm", Tensor::zeros([3]), ParamKind::Buffer);
        assert!(a.copy_from(&b).is_err());
        let mut c = sample();
        c.get_mut(ParamId(0)).data_mut()[0] = 9.0;
        a.copy_from(&c).unwrap();
        assert_eq!(a.fingerprint(), c.fingerprint());
    }
}
