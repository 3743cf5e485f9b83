//! Per-step reward, achievement bookkeeping and the crafter score.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::achievement::{Achievement, AchievementSet};
use crate::error::{CoreError, Result};
use crate::sim::StepEvents;

pub const UNLOCK_REWARD: f64 = 1.0;
pub const HEALTH_REWARD: f64 = 0.1;

/// Per-episode unlocks plus per-run unlock counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AchievementLedger {
    pub episode: AchievementSet,
    pub counts: [u64; Achievement::COUNT],
    pub episodes: u64,
}

impl AchievementLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_episode(&mut self) {
        self.episode = AchievementSet::default();
    }

    /// Folds the current episode's unlocks into the run counts.
    pub fn end_episode(&mut self) {
        for a in self.episode.iter() {
            self.counts[a.index()] += 1;
        }
        self.episodes += 1;
    }

    /// Associative combination of two run ledgers. Episode state is dropped.
    pub fn merge(&self, other: &AchievementLedger) -> AchievementLedger {
        let mut counts = self.counts;
        for (c, o) in counts.iter_mut().zip(other.counts) {
            *c += o;
        }
        AchievementLedger {
            episode: AchievementSet::default(),
            counts,
            episodes: self.episodes + other.episodes,
        }
    }
}

/// Reward for one step; records fresh unlocks in the ledger. Returns the
/// reward and the set of achievements unlocked for the first time.
pub fn reward(events: &StepEvents, ledger: &mut AchievementLedger) -> (f64, AchievementSet) {
    let fresh = events.achievements.difference(ledger.episode);
    ledger.episode = ledger.episode.union(fresh);
    let r = UNLOCK_REWARD * fresh.len() as f64 + HEALTH_REWARD * events.health_delta as f64;
    (r, fresh)
}

/// Success percentages s_i in [0, 100], one per achievement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreInput {
    pub success_rates: Vec<f64>,
}

impl ScoreInput {
    pub fn new(success_rates: Vec<f64>) -> Result<Self> {
        if success_rates.len() != Achievement::COUNT {
            return Err(CoreError::Domain(format!(
                "expected {} success rates, got {}",
                Achievement::COUNT,
                success_rates.len()
            )));
        }
        check_rates(&success_rates)?;
        Ok(Self { success_rates })
    }

    pub fn rate(&self, a: Achievement) -> f64 {
        self.success_rates[a.index()]
    }
}

fn check_rates<F: Float>(rates: &[F]) -> Result<()> {
    let hundred = F::from(100.0).expect("representable");
    match rates.iter().position(|s| !(*s >= F::zero() && *s <= hundred)) {
        Some(i) => Err(CoreError::Domain(format!(
            "success rate {i} is {} (outside [0, 100])",
            rates[i].to_f64().unwrap_or(f64::NAN)
        ))),
        None => Ok(()),
    }
}

/// `exp(mean(ln(1 + s_i))) - 1`.
pub fn crafter_score<F: Float>(rates: &[F]) -> Result<F> {
    if rates.is_empty() {
        return Err(CoreError::Domain("no success rates".into()));
    }
    check_rates(rates)?;
    // The geometric mean of equal values is that value; the log round trip
    // would only add rounding error.
    if rates.iter().all(|r| *r == rates[0]) {
        return Ok(rates[0]);
    }
    let n = F::from(rates.len()).expect("representable");
    let mean = rates.iter().fold(F::zero(), |acc, s| acc + s.ln_1p()) / n;
    Ok(mean.exp() - F::one())
}

pub fn score(input: &ScoreInput) -> f64 {
    crafter_score(&input.success_rates).expect("validated input")
}

pub fn success_rates(ledger: &AchievementLedger) -> Result<ScoreInput> {
    if ledger.episodes == 0 {
        return Err(CoreError::Domain("no finished episodes".into()));
    }
    let n = ledger.episodes as f64;
    ScoreInput::new(ledger.counts.iter().map(|&c| 100.0 * c as f64 / n).collect())
}

/// Arithmetic mean and sample standard deviation across runs.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn events(list: &[Achievement], health_delta: i32) -> StepEvents {
        StepEvents {
            achievements: list.iter().copied().collect(),
            health_delta,
            ..Default::default()
        }
    }

    #[test]
    fn first_unlock_pays_once() {
        let mut ledger = AchievementLedger::new();
        let (r, _) = reward(&events(&[Achievement::CollectWood], 0), &mut ledger);
        assert_eq!(r, 1.0);
        let (r, fresh) = reward(&events(&[Achievement::CollectWood], 0), &mut ledger);
        assert_eq!(r, 0.0);
        assert!(fresh.is_empty());
        let (r, _) = reward(&events(&[], -1), &mut ledger);
        assert!((r + 0.1).abs() < 1e-12);
    }

    #[test]
    fn score_endpoints() {
        assert_eq!(crafter_score(&[0.0f64; 22]).unwrap(), 0.0);
        assert_eq!(crafter_score(&[100.0f64; 22]).unwrap(), 100.0);
        assert_eq!(crafter_score(&[37.5f32; 22]).unwrap(), 37.5);
        assert!(crafter_score(&[101.0f64; 22]).is_err());
        assert!(crafter_score(&[-0.5f64; 22]).is_err());
    }

    #[test]
    fn single_hundred() {
        let mut s = [0.0f64; 22];
        s[0] = 100.0;
        // 101^(1/22) - 1 evaluated independently with powf.
        let oracle = 101f64.powf(1.0 / 22.0) - 1.0;
        let got = crafter_score(&s).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.23340).abs() < 1e-5);
    }

    #[test]
    fn rare_gain_outweighs_common_gain() {
        let base = [50.0f64; 22];
        let mut rare_lo = base;
        rare_lo[4] = 0.0;
        let mut rare_hi = rare_lo;
        rare_hi[4] = 10.0;
        let mut common_lo = base;
        common_lo[0] = 90.0;
        let mut common_hi = common_lo;
        common_hi[0] = 100.0;
        let rare_gain = crafter_score(&rare_hi).unwrap() - crafter_score(&rare_lo).unwrap();
        let common_gain = crafter_score(&common_hi).unwrap() - crafter_score(&common_lo).unwrap();
        assert!(rare_gain > common_gain);
    }

    #[test]
    fn rates_from_ledger() {
        let mut ledger = AchievementLedger::new();
        assert!(success_rates(&ledger).is_err());
        for i in 0..3 {
            ledger.begin_episode();
            if i < 2 {
                reward(&events(&[Achievement::CollectWood], 0), &mut ledger);
            }
            ledger.end_episode();
        }
        let rates = success_rates(&ledger).unwrap();
        assert!((rates.rate(Achievement::CollectWood) - 66.667).abs() < 1e-3);
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = AchievementLedger::new();
        a.begin_episode();
        reward(&events(&[Achievement::CollectDiamond], 0), &mut a);
        a.end_episode();
        let mut b = AchievementLedger::new();
        for _ in 0..9 {
            b.begin_episode();
            b.end_episode();
        }
        let m = a.merge(&b);
        assert_eq!(m.episodes, 10);
        assert_eq!(success_rates(&m).unwrap().rate(Achievement::CollectDiamond), 10.0);
    }

    proptest! {
        #[test]
        fn monotone_in_each_rate(rates in proptest::collection::vec(0.0f64..100.0, 22), i in 0usize..22, bump in 0.0f64..50.0) {
            let mut hi = rates.clone();
            hi[i] = (hi[i] + bump).min(100.0);
            prop_assert!(crafter_score(&hi).unwrap() >= crafter_score(&rates).unwrap());
        }

        #[test]
        fn score_within_bounds(rates in proptest::collection::vec(0.0f64..=100.0, 22)) {
            let s = crafter_score(&rates).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&s));
        }
    }
}
