use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Writes a checkpoint: magic, version, JSON header length, JSON header,
    /// then every tensor's little-endian data in store order.
    pub fn save(&self, path: &Path, config: &serde_json::Value, config_digest: &str) -> Result<()> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            dtype: T::DTYPE.into(),
            config_digest: config_digest.into(),
            config: config.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(header_bytes.len() + self.num_params() * T::BYTES + 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for t in &self.tensors {
            for v in t.data() {
                v.write_le(&mut out);
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(NnError::Checkpoint("not a checkpoint file".into()));
        }
        let mut pos = MAGIC.len();
        let hlen = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
        pos += 8;
        let header: CheckpointHeader = serde_json::from_slice(
            bytes
                .get(pos..pos + hlen)
                .ok_or_else(|| NnError::Checkpoint("truncated header".into()))?,
        )?;
        pos += hlen;
        if header.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", header.version)));
        }
        if header.dtype != T::DTYPE {
            return Err(NnError::Checkpoint(format!(
                "checkpoint holds {} data, expected {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let mut store = ParamStore::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = pos + n * T::BYTES;
            let raw = bytes
                .get(pos..end)
                .ok_or_else(|| NnError::Checkpoint(format!("truncated data for {}", entry.name)))?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            store.add(entry.name.clone(), Tensor::new(&entry.shape, data)?);
            pos = end;
        }
        if pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes after tensor data".into()));
        }
        Ok((store, header))
    }
}

const MAGIC: &[u8; 8] = b"CRFTNNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            tensors: store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn global_norm(&self) -> T {
        self.tensors.iter().map(|t| t.norm_sq()).sum::<T>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm {
            let s = max_norm / (norm + T::c(1e-6));
            for t in &mut self.tensors {
                t.scale_inplace(s);
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

/// Matrices above this many elements get a scaled Gaussian instead of an
/// exact orthogonal initialization.
pub const ORTHOGONAL_MAX_ELEMENTS: usize = 1 << 23;

/// `[rows, cols]` matrix with orthonormal rows (or columns when
/// `rows > cols`), times `gain`.
pub fn orthogonal<T: Scalar, R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    if rows * cols > ORTHOGONAL_MAX_ELEMENTS {
        let std = gain / (cols as f64).sqrt();
        return Tensor::from_fn(&[rows, cols], |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::c(z * std)
        });
    }
    let (r, c) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut m: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
    // Modified Gram-Schmidt over the r vectors of length c.
    for i in 0..r {
        for j in 0..i {
            let dot: f64 = (0..c).map(|t| m[i * c + t] * m[j * c + t]).sum();
            for t in 0..c {
                m[i * c + t] -= dot * m[j * c + t];
            }
        }
        let norm = (0..c).map(|t| m[i * c + t].powi(2)).sum::<f64>().sqrt().max(1e-12);
        for t in 0..c {
            m[i * c + t] /= norm;
        }
    }
    if rows <= cols {
        Tensor::from_fn(&[rows, cols], |i| T::c(m[i] * gain))
    } else {
        Tensor::from_fn(&[rows, cols], |i| {
            let (row, col) = (i / cols, i % cols);
            T::c(m[col * c + row] * gain)
        })
    }
}

pub fn gaussian<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::c(z * std)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for (r, c) in [(4, 9), (9, 4), (6, 6)] {
            let w: Tensor<f64> = orthogonal(r, c, 1.0, &mut rng);
            let (n, len, stride_major) = if r <= c { (r, c, true) } else { (c, r, false) };
            let get = |v: usize, t: usize| if stride_major { w.data()[v * c + t] } else { w.data()[t * c + v] };
            for a in 0..n {
                for b in 0..n {
                    let dot: f64 = (0..len).map(|t| get(a, t) * get(b, t)).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10, "{r}x{c} ({a},{b}) {dot}");
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        store.add("b", Tensor::from_f64(&[3], &[-1.0, 0.5, 7.0]).unwrap());
        let cfg = serde_json::json!({"arch": "test"});
        store.save(&path, &cfg, "abc").unwrap();
        let (back, header) = ParamStore::<f32>::load(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(header.config_digest, "abc");
        assert!(ParamStore::<f64>::load(&path).is_err());
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Grads {
            tensors: vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()],
        };
        let before = g.clip_global_norm(0.5);
        assert_eq!(before, 5.0);
        assert!(g.global_norm() <= 0.5 + 1e-6);
    }
}
