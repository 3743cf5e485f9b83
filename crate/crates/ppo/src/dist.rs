//! Categorical action distribution over logits.

use crafter_nnet::Scalar;
use rand::Rng;

pub fn log_probs<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|l| (*l - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|l| *l - lse).collect()
}

pub fn entropy<T: Scalar>(logits: &[T]) -> T {
    -log_probs(logits).iter().map(|lp| lp.exp() * *lp).sum::<T>()
}

/// Draws an index by inverse CDF; returns it with its log-probability.
pub fn sample<T: Scalar, R: Rng + ?Sized>(logits: &[T], rng: &mut R) -> (usize, T) {
    let lp = log_probs(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in lp.iter().enumerate() {
        acc += l.to_f64().unwrap_or(0.0).exp();
        if u < acc {
            return (i, *l);
        }
    }
    let last = lp.len() - 1;
    (last, lp[last])
}

pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, l) in logits.iter().enumerate() {
        if *l > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    proptest! {
        #[test]
        fn sampled_log_prob_is_consistent(logits in prop::collection::vec(-8.0f64..8.0, 17), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (a, lp) = sample(&logits, &mut rng);
            prop_assert!((lp - log_probs(&logits)[a]).abs() < 1e-12);
            let h = entropy(&logits);
            prop_assert!(h >= -1e-12 && h <= 17f64.ln() + 1e-12);
        }
    }

    #[test]
    fn frequencies_follow_probabilities() {
        let logits = [0.0f64, 1.0, 2.0];
        let p: Vec<f64> = log_probs(&logits).iter().map(|l| l.exp()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        let n = 200_000;
        for _ in 0..n {
            counts[sample(&logits, &mut rng).0] += 1;
        }
        for i in 0..3 {
            assert!((counts[i] as f64 / n as f64 - p[i]).abs() < 0.005);
        }
        assert_eq!(argmax(&logits), 2);
    }
}
