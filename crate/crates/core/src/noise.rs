//! Seeded lattice value noise built from integer hashing.
//!
//! Only IEEE-exact operations (add, mul, div, floor) are used so the fields are
//! bit-identical on every platform.

use crate::rng::mix64;

fn lattice(seed: u64, layer: u64, x: i64, y: i64) -> f64 {
    let h = mix64(seed ^ mix64(layer ^ mix64((x as u64) ^ mix64(y as u64).rotate_left(17))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform value in [0, 1) attached to a single cell.
pub fn cell_hash(seed: u64, layer: u64, x: i64, y: i64) -> f64 {
    lattice(seed, layer.wrapping_add(0xA5A5_0000), x, y)
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth value noise in [-1, 1] with lattice spacing `scale` (in cells).
pub fn value_noise(seed: u64, layer: u64, x: f64, y: f64, scale: f64) -> f64 {
    let fx = x / scale;
    let fy = y / scale;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = smooth(fx - x0);
    let ty = smooth(fy - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(seed, layer, ix, iy);
    let v10 = lattice(seed, layer, ix + 1, iy);
    let v01 = lattice(seed, layer, ix, iy + 1);
    let v11 = lattice(seed, layer, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    (top + (bottom - top) * ty) * 2.0 - 1.0
}

/// Weighted sum of octaves, normalized by the total weight. `octaves` holds
/// `(scale, weight)` pairs.
pub fn fractal(seed: u64, layer: u64, x: f64, y: f64, octaves: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for (i, &(scale, w)) in octaves.iter().enumerate() {
        total += w * value_noise(seed, layer.wrapping_mul(31).wrapping_add(i as u64), x, y, scale);
        weight += w;
    }
    if weight == 0.0 {
        0.0
    } else {
        total / weight
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_bounded_and_deterministic() {
        for x in 0..50 {
            for y in 0..50 {
                let v = value_noise(3, 1, x as f64, y as f64, 7.0);
                assert!((-1.0..=1.0).contains(&v));
                assert_eq!(v.to_bits(), value_noise(3, 1, x as f64, y as f64, 7.0).to_bits());
            }
        }
    }

    #[test]
    fn noise_is_continuous_between_lattice_points() {
        let a = value_noise(9, 2, 10.0, 10.0, 8.0);
        let b = value_noise(9, 2, 10.01, 10.0, 8.0);
        assert!((a - b).abs() < 0.01);
    }
}
