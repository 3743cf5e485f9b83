use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sine/cosine position table `[k, d]`: column `2i` holds
/// `sin(p / 10000^(2i/d))` and column `2i+1` the matching cosine.
pub fn sinusoidal_pe<T: Scalar>(k: usize, d: usize) -> Result<Tensor<T>> {
    if k == 0 || d == 0 {
        return Err(NnError::Invalid(format!("positional table needs k, d >= 1 (got {k}, {d})")));
    }
    if d % 2 == 1 {
        return Err(NnError::Invalid(format!("positional table width {d} must be even")));
    }
    Ok(Tensor::from_fn(&[k, d], |idx| {
        let (p, j) = (idx / d, idx % d);
        let freq = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
        let angle = p as f64 * freq;
        T::c(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_is_sin_zero_cos_one() {
        let t = sinusoidal_pe::<f64>(4, 8).unwrap();
        for j in 0..8 {
            assert_eq!(t.data()[j], if j % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(sinusoidal_pe::<f32>(3, 5).is_err());
        assert!(sinusoidal_pe::<f32>(0, 4).is_err());
    }

    #[test]
    fn rows_are_distinct_and_bounded() {
        for (k, d) in [(16, 4), (64, 256), (49, 8)] {
            let t = sinusoidal_pe::<f64>(k, d).unwrap();
            assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            for a in 0..k {
                for b in a + 1..k {
                    let dist: f64 = t.row(a).iter().zip(t.row(b)).map(|(x, y)| (x - y).powi(2)).sum();
                    assert!(dist > 1e-8, "rows {a} and {b} coincide for {k}x{d}");
                }
            }
        }
    }
}
