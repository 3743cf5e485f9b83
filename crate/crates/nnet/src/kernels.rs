//! Raw forward/backward kernels on slices.

use crate::scalar::{gemm, MatRef, Scalar};

/// Geometry of a 2-D convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Unfolds one `[c, h, w]` image into `[c*kh*kw, oh*ow]` columns.
pub fn im2col<T: Scalar>(x: &[T], g: ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image gradient.
pub fn col2im<T: Scalar>(cols: &[T], g: ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution: x `[n, c, h, w]`, w `[oc, c*kh*kw]` -> y `[n, oc, oh, ow]`.
pub fn conv_forward<T: Scalar>(x: &[T], n: usize, g: ConvGeom, w: &[T], oc: usize, bias: Option<&[T]>, y: &mut [T]) {
    let ohw = g.out_h() * g.out_w();
    let plen = g.patch_len();
    let img = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); plen * ohw];
    for b in 0..n {
        im2col(&x[b * img..(b + 1) * img], g, &mut cols);
        let out = &mut y[b * oc * ohw..(b + 1) * oc * ohw];
        gemm(T::one(), w, MatRef::dense(oc, plen), &cols, MatRef::dense(plen, ohw), T::zero(), out, MatRef::dense(oc, ohw));
        if let Some(bias) = bias {
            for (o, bv) in bias.iter().enumerate() {
                for v in &mut out[o * ohw..(o + 1) * ohw] {
                    *v += *bv;
                }
            }
        }
    }
}

/// Gradients of [`conv_forward`]. Any of the outputs may be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    n: usize,
    g: ConvGeom,
    w: &[T],
    oc: usize,
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let ohw = g.out_h() * g.out_w();
    let plen = g.patch_len();
    let img = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); plen * ohw];
    let mut dcols = vec![T::zero(); plen * ohw];
    for b in 0..n {
        let dyb = &dy[b * oc * ohw..(b + 1) * oc * ohw];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[b * img..(b + 1) * img], g, &mut cols);
            gemm(T::one(), dyb, MatRef::dense(oc, ohw), &cols, MatRef::dense(plen, ohw).t(), T::one(), dw, MatRef::dense(oc, plen));
        }
        if let Some(db) = db.as_deref_mut() {
            for (o, d) in db.iter_mut().enumerate() {
                *d += dyb[o * ohw..(o + 1) * ohw].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(T::one(), w, MatRef::dense(oc, plen).t(), dyb, MatRef::dense(oc, ohw), T::zero(), &mut dcols, MatRef::dense(plen, ohw));
            col2im(&dcols, g, &mut dx[b * img..(b + 1) * img]);
        }
    }
}

/// Which axis of the score matrix the softmax normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxis {
    /// Each query's weights over keys sum to one.
    Keys,
    /// Each key's weights over queries sum to one.
    Queries,
}

/// Attention problem size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnGeom {
    pub n: usize,
    pub lq: usize,
    pub lk: usize,
    pub d: usize,
    pub heads: usize,
}

impl AttnGeom {
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn weights_len(&self) -> usize {
        self.n * self.heads * self.lq * self.lk
    }
}

fn softmax_rows<T: Scalar>(s: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut s[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn softmax_cols<T: Scalar>(s: &mut [T], rows: usize, cols: usize) {
    for c in 0..cols {
        let max = (0..rows).map(|r| s[r * cols + c]).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for r in 0..rows {
            let v = (s[r * cols + c] - max).exp();
            s[r * cols + c] = v;
            sum += v;
        }
        for r in 0..rows {
            s[r * cols + c] /= sum;
        }
    }
}

/// Multi-head scaled dot-product attention. q `[n, lq, d]`, k and v
/// `[n, lk, d]`; writes out `[n, lq, d]` and weights `[n, heads, lq, lk]`.
pub fn attention_forward<T: Scalar>(q: &[T], k: &[T], v: &[T], g: AttnGeom, axis: SoftmaxAxis, out: &mut [T], weights: &mut [T]) {
    let dh = g.head_dim();
    let scale = T::one() / T::c(dh as f64).sqrt();
    for b in 0..g.n {
        for h in 0..g.heads {
            let qoff = b * g.lq * g.d + h * dh;
            let koff = b * g.lk * g.d + h * dh;
            let woff = (b * g.heads + h) * g.lq * g.lk;
            let wslice = &mut weights[woff..woff + g.lq * g.lk];
            gemm(
                scale,
                q,
                MatRef::dense(g.lq, dh).stride(g.d).at(qoff),
                k,
                MatRef::dense(g.lk, dh).stride(g.d).at(koff).t(),
                T::zero(),
                wslice,
                MatRef::dense(g.lq, g.lk),
            );
            match axis {
                SoftmaxAxis::Keys => softmax_rows(wslice, g.lq, g.lk),
                SoftmaxAxis::Queries => softmax_cols(wslice, g.lq, g.lk),
            }
            gemm(
                T::one(),
                wslice,
                MatRef::dense(g.lq, g.lk),
                v,
                MatRef::dense(g.lk, dh).stride(g.d).at(koff),
                T::zero(),
                out,
                MatRef::dense(g.lq, dh).stride(g.d).at(qoff),
            );
        }
    }
}

/// Gradients of [`attention_forward`] given the saved weights.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    weights: &[T],
    g: AttnGeom,
    axis: SoftmaxAxis,
    dout: &[T],
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let dh = g.head_dim();
    let scale = T::one() / T::c(dh as f64).sqrt();
    let mut da = vec![T::zero(); g.lq * g.lk];
    for b in 0..g.n {
        for h in 0..g.heads {
            let qoff = b * g.lq * g.d + h * dh;
            let koff = b * g.lk * g.d + h * dh;
            let woff = (b * g.heads + h) * g.lq * g.lk;
            let a = &weights[woff..woff + g.lq * g.lk];
            let qv = MatRef::dense(g.lq, dh).stride(g.d).at(qoff);
            let kv = MatRef::dense(g.lk, dh).stride(g.d).at(koff);
            gemm(T::one(), dout, qv, v, kv.t(), T::zero(), &mut da, MatRef::dense(g.lq, g.lk));
            gemm(T::one(), a, MatRef::dense(g.lq, g.lk).t(), dout, qv, T::one(), dv, kv);
            match axis {
                SoftmaxAxis::Keys => {
                    for r in 0..g.lq {
                        let row = r * g.lk;
                        let dot: T = (0..g.lk).map(|c| a[row + c] * da[row + c]).sum();
                        for c in 0..g.lk {
                            da[row + c] = a[row + c] * (da[row + c] - dot) * scale;
                        }
                    }
                }
                SoftmaxAxis::Queries => {
                    for c in 0..g.lk {
                        let dot: T = (0..g.lq).map(|r| a[r * g.lk + c] * da[r * g.lk + c]).sum();
                        for r in 0..g.lq {
                            let i = r * g.lk + c;
                            da[i] = a[i] * (da[i] - dot) * scale;
                        }
                    }
                }
            }
            gemm(T::one(), &da, MatRef::dense(g.lq, g.lk), k, kv, T::one(), dq, qv);
            gemm(T::one(), &da, MatRef::dense(g.lq, g.lk).t(), q, qv, T::one(), dk, kv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom {
            c: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..g.c * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let n = g.patch_len() * g.out_h() * g.out_w();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; n];
        im2col(&x, g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
