use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type of tensors.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    /// `C = alpha * A B + beta * C` on strided row/column layouts.
    ///
    /// # Safety
    /// Pointers must address `m x k`, `k x n` and `m x n` matrices under the
    /// given strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A dense row-major matrix view into a slice: `rows x cols` starting at
/// `offset`, with row stride `ld` and unit column stride, optionally
/// transposed.
#[derive(Debug, Clone, Copy)]
pub struct MatRef {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub ld: usize,
    pub trans: bool,
}

impl MatRef {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self {
            offset: 0,
            rows,
            cols,
            ld: cols,
            trans: false,
        }
    }

    pub fn at(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    pub fn stride(mut self, ld: usize) -> Self {
        self.ld = ld;
        self
    }

    pub fn t(mut self) -> Self {
        self.trans = !self.trans;
        self
    }

    /// Logical shape after the optional transpose.
    pub fn shape(&self) -> (usize, usize) {
        if self.trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.offset
        } else {
            self.offset + (self.rows - 1) * self.ld + self.cols - 1
        }
    }
}

/// `c = alpha * op(a) op(b) + beta * c` with bounds-checked views.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(alpha: T, a: &[T], av: MatRef, b: &[T], bv: MatRef, beta: T, c: &mut [T], cv: MatRef) {
    let (m, k) = av.shape();
    let (k2, n) = bv.shape();
    let (cm, cn) = cv.shape();
    assert!(k == k2 && m == cm && n == cn, "gemm shape mismatch: {m}x{k} * {k2}x{n} -> {cm}x{cn}");
    assert!(!cv.trans, "output view must not be transposed");
    if m == 0 || n == 0 {
        return;
    }
    assert!(av.last_index() < a.len().max(1) || k == 0);
    assert!(bv.last_index() < b.len().max(1) || k == 0);
    assert!(cv.last_index() < c.len());
    let (rsa, csa) = av.strides();
    let (rsb, csb) = bv.strides();
    let (rsc, csc) = cv.strides();
    // SAFETY: the asserts above keep every addressed element in bounds.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            rsa,
            csa,
            b.as_ptr().add(bv.offset),
            rsb,
            csb,
            beta,
            c.as_mut_ptr().add(cv.offset),
            rsc,
            csc,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect();
        let mut c = vec![0.0; 8];
        gemm(1.0, &a, MatRef::dense(2, 3), &b, MatRef::dense(3, 4), 0.0, &mut c, MatRef::dense(2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|l| a[i * 3 + l] * b[l * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        let mut ct = vec![0.0; 8];
        gemm(1.0, &b, MatRef::dense(3, 4).t(), &a, MatRef::dense(2, 3).t(), 0.0, &mut ct, MatRef::dense(4, 2));
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(ct[j * 2 + i], c[i * 4 + j]);
            }
        }
    }

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        1.5f32.write_le(&mut buf);
        (-2.25f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.5);
        assert_eq!(f64::read_le(&buf[4..]), -2.25);
    }
}
