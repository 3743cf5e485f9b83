use crafter_nnet::{SoftmaxAxis, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};
use crate::policy::PolicyOutput;

/// Placement of the patch grid on the input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub patch: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
    pub image: usize,
}

impl PatchGeometry {
    pub fn n_patches(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-left pixel of patch `i` in row-major order.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        ((i % self.cols) * self.stride, (i / self.cols) * self.stride)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionQuery {
    /// Self-attention whose readout token sits at `index`.
    Cls { index: usize },
    Slots,
}

/// Raw weights of the final attention layer, `[n, heads, lq, lk]`.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub weights: Tensor<f64>,
    pub query: AttentionQuery,
    pub axis: SoftmaxAxis,
    pub geometry: PatchGeometry,
}

/// Attention of one batch element: `heads x queries x keys`, keys being
/// patches of `geometry`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub heads: usize,
    pub queries: usize,
    pub keys: usize,
    pub weights: Vec<f64>,
    pub axis: SoftmaxAxis,
    pub geometry: PatchGeometry,
}

impl AttentionMap {
    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        let start = (head * self.queries + query) * self.keys;
        &self.weights[start..start + self.keys]
    }

    /// Mean weight each patch receives over heads and queries.
    pub fn patch_scores(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.keys];
        for row in self.weights.chunks_exact(self.keys) {
            for (a, w) in s.iter_mut().zip(row) {
                *a += w;
            }
        }
        let norm = (self.heads * self.queries) as f64;
        s.iter_mut().for_each(|v| *v /= norm);
        s
    }

    /// Per-pixel intensity on the `image x image` grid, averaging over
    /// overlapping patches.
    pub fn pixel_intensity(&self) -> Vec<f64> {
        let g = self.geometry;
        let scores = self.patch_scores();
        let mut sum = vec![0.0; g.image * g.image];
        let mut cover = vec![0u32; g.image * g.image];
        for (i, s) in scores.iter().enumerate() {
            let (x0, y0) = g.origin(i);
            for y in y0..y0 + g.patch {
                for x in x0..x0 + g.patch {
                    sum[y * g.image + x] += s;
                    cover[y * g.image + x] += 1;
                }
            }
        }
        sum.iter()
            .zip(&cover)
            .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
            .collect()
    }
}

/// One map per batch element. Self-attention yields the readout token's row
/// restricted to patches and renormalized; cross-attention yields all slot
/// rows.
pub fn extract_attention<T>(output: &PolicyOutput<T>) -> Result<Vec<AttentionMap>> {
    let att = output
        .attention
        .as_ref()
        .ok_or_else(|| AgentError::Unsupported("attention extraction".into(), "a non-attention architecture".into()))?;
    let s = att.weights.shape();
    let (n, heads, lq, lk) = (s[0], s[1], s[2], s[3]);
    let data = att.weights.data();
    let mut maps = Vec::with_capacity(n);
    for b in 0..n {
        let block = &data[b * heads * lq * lk..(b + 1) * heads * lq * lk];
        let map = match att.query {
            AttentionQuery::Cls { index } => {
                let k = att.geometry.n_patches();
                let mut weights = Vec::with_capacity(heads * k);
                for h in 0..heads {
                    let row = &block[(h * lq + index) * lk..(h * lq + index) * lk + k];
                    let z: f64 = row.iter().sum();
                    weights.extend(row.iter().map(|w| w / z));
                }
                AttentionMap {
                    heads,
                    queries: 1,
                    keys: k,
                    weights,
                    axis: SoftmaxAxis::Keys,
                    geometry: att.geometry,
                }
            }
            AttentionQuery::Slots => AttentionMap {
                heads,
                queries: lq,
                keys: lk,
                weights: block.to_vec(),
                axis: att.axis,
                geometry: att.geometry,
            },
        };
        maps.push(map);
    }
    Ok(maps)
}
