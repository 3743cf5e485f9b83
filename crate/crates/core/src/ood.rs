//! Appearance-variant distributions and object-count presets for the
//! out-of-distribution environment families.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

const THIRD: f64 = 1.0 / 3.0;

/// Object classes that come in four appearance variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantClass {
    Tree,
    Cow,
    Zombie,
    Stone,
    Coal,
    Skeleton,
}

impl VariantClass {
    pub const ALL: [VariantClass; 6] = [
        VariantClass::Tree,
        VariantClass::Cow,
        VariantClass::Zombie,
        VariantClass::Stone,
        VariantClass::Coal,
        VariantClass::Skeleton,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantClass::Tree => "tree",
            VariantClass::Cow => "cow",
            VariantClass::Zombie => "zombie",
            VariantClass::Stone => "stone",
            VariantClass::Coal => "coal",
            VariantClass::Skeleton => "skeleton",
        }
    }
}

/// Probability of each of the four variants O1..O4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariantProbs(pub [f64; 4]);

impl VariantProbs {
    pub const BASE: VariantProbs = VariantProbs([1.0, 0.0, 0.0, 0.0]);

    /// `first` for O1 and an equal share of the remainder for O2..O4.
    pub fn skewed(first: f64) -> Self {
        if first == 0.0 {
            return VariantProbs([0.0, THIRD, THIRD, THIRD]);
        }
        let rest = (1.0 - first) / 3.0;
        VariantProbs([first, rest, rest, rest])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CoreError::Config(format!(
                "variant probabilities must be finite and non-negative: {:?}",
                self.0
            )));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::Config(format!(
                "variant probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Maps a uniform draw in [0, 1) to a variant id in 1..=4.
    pub fn pick(&self, u: f64) -> u8 {
        let mut acc = 0.0;
        let mut last = 1;
        for (i, &p) in self.0.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i as u8 + 1;
                if u < acc {
                    return last;
                }
            }
        }
        last
    }
}

/// Per-class variant distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceDist {
    pub tree: VariantProbs,
    pub cow: VariantProbs,
    pub zombie: VariantProbs,
    pub stone: VariantProbs,
    pub coal: VariantProbs,
    pub skeleton: VariantProbs,
}

impl Default for AppearanceDist {
    fn default() -> Self {
        Self::uniform_over_classes(VariantProbs::BASE)
    }
}

impl AppearanceDist {
    pub fn uniform_over_classes(p: VariantProbs) -> Self {
        Self {
            tree: p,
            cow: p,
            zombie: p,
            stone: p,
            coal: p,
            skeleton: p,
        }
    }

    pub fn get(&self, class: VariantClass) -> &VariantProbs {
        match class {
            VariantClass::Tree => &self.tree,
            VariantClass::Cow => &self.cow,
            VariantClass::Zombie => &self.zombie,
            VariantClass::Stone => &self.stone,
            VariantClass::Coal => &self.coal,
            VariantClass::Skeleton => &self.skeleton,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for class in VariantClass::ALL {
            self.get(class)
                .validate()
                .map_err(|e| CoreError::Config(format!("{}: {e}", class.name())))?;
        }
        Ok(())
    }

    /// Looks up a named appearance preset (`o1_100`, `uniform`, `o1_52`, ..., `o1_0`).
    pub fn preset(name: &str) -> Result<Self> {
        let first = match name {
            "o1_100" | "default" => 1.0,
            "uniform" | "o1_25" => 0.25,
            "o1_52" => 0.52,
            "o1_76" => 0.76,
            "o1_88" => 0.88,
            "o1_94" => 0.94,
            "o1_97" => 0.97,
            "o1_0" | "eval" => 0.0,
            other => {
                return Err(CoreError::Config(format!(
                    "unknown appearance preset `{other}`"
                )))
            }
        };
        Ok(Self::uniform_over_classes(VariantProbs::skewed(first)))
    }
}

/// Draws a variant id in 1..=4 for `class`. Consumes exactly one uniform draw.
pub fn sample_variant<R: Rng + ?Sized>(
    class: VariantClass,
    dist: &AppearanceDist,
    rng: &mut R,
) -> Result<u8> {
    let probs = dist.get(class);
    probs.validate()?;
    let u: f64 = rng.random();
    Ok(probs.pick(u))
}

/// Target object counts per class. Tree and coal are exact static counts; the
/// creature entries are expected concurrent populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountTargets {
    pub tree: f64,
    pub coal: f64,
    pub cow: f64,
    pub zombie: f64,
    pub skeleton: f64,
}

impl CountTargets {
    pub fn validate(&self) -> Result<()> {
        let all = [self.tree, self.coal, self.cow, self.zombie, self.skeleton];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CoreError::Config(format!(
                "count targets must be non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn none() -> Self {
        Self {
            tree: 0.0,
            coal: 0.0,
            cow: 0.0,
            zombie: 0.0,
            skeleton: 0.0,
        }
    }
}

/// Named object-number presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumScaling {
    Default,
    EasyX2,
    EasyX4,
    HardX2,
    HardX4,
    MixX4,
}

impl NumScaling {
    pub const ALL: [NumScaling; 6] = [
        NumScaling::Default,
        NumScaling::EasyX2,
        NumScaling::EasyX4,
        NumScaling::HardX2,
        NumScaling::HardX4,
        NumScaling::MixX4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NumScaling::Default => "default",
            NumScaling::EasyX2 => "easy_x2",
            NumScaling::EasyX4 => "easy_x4",
            NumScaling::HardX2 => "hard_x2",
            NumScaling::HardX4 => "hard_x4",
            NumScaling::MixX4 => "mix_x4",
        }
    }

    pub fn targets(self) -> CountTargets {
        let (tree, coal, cow, zombie, skeleton) = match self {
            NumScaling::EasyX4 => (764.0, 206.0, 100.0, 3.0, 2.5),
            NumScaling::EasyX2 => (380.0, 102.0, 46.0, 6.0, 4.5),
            NumScaling::Default => (189.0, 50.0, 26.0, 15.0, 9.5),
            NumScaling::HardX2 => (95.0, 27.0, 13.0, 33.0, 19.0),
            NumScaling::HardX4 => (52.0, 12.5, 6.0, 60.0, 38.0),
            NumScaling::MixX4 => (764.0, 206.0, 100.0, 60.0, 38.0),
        };
        CountTargets {
            tree,
            coal,
            cow,
            zombie,
            skeleton,
        }
    }
}

impl fmt::Display for NumScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NumScaling {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        NumScaling::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown number preset `{s}`")))
    }
}

/// Which terrain an environment uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WorldKind {
    /// The procedurally generated 64x64 world.
    Standard,
    /// A small all-grass arena with `trees` scattered trees and no creatures.
    Mini { size: u32, trees: u32 },
}

/// How per-episode seeds are derived from the seed passed to reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// The reset seed is used as the episode seed verbatim.
    Exact,
    /// Every reset uses the same world seed regardless of the reset argument.
    Fixed(u64),
}

/// Full description of an environment variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub appearance: AppearanceDist,
    pub numbers: NumScaling,
    pub show_inventory: bool,
    pub episode_cap: u32,
    pub world: WorldKind,
    pub seed_policy: SeedPolicy,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            appearance: AppearanceDist::default(),
            numbers: NumScaling::Default,
            show_inventory: true,
            episode_cap: 10_000,
            world: WorldKind::Standard,
            seed_policy: SeedPolicy::Exact,
        }
    }
}

impl EnvSpec {
    pub fn with_appearance(mut self, appearance: AppearanceDist) -> Self {
        self.appearance = appearance;
        self
    }

    pub fn with_numbers(mut self, numbers: NumScaling) -> Self {
        self.numbers = numbers;
        self
    }

    pub fn without_inventory(mut self) -> Self {
        self.show_inventory = false;
        self
    }

    /// Tree-rich arena used for quick training checks.
    pub fn mini(size: u32, trees: u32, episode_cap: u32) -> Self {
        Self {
            world: WorldKind::Mini { size, trees },
            episode_cap,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.appearance.validate()?;
        if self.episode_cap == 0 {
            return Err(CoreError::Config("episode_cap must be positive".into()));
        }
        if let WorldKind::Mini { size, trees } = self.world {
            if !(4..=256).contains(&size) {
                return Err(CoreError::Config(format!("mini world size {size} out of range 4..=256")));
            }
            // The 3x3 block around the start stays grass.
            if trees as u64 > size as u64 * size as u64 - 9 {
                return Err(CoreError::Config(format!(
                    "mini world of size {size} has no room for {trees} trees"
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("EnvSpec always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: EnvSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Stable hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("EnvSpec always serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    InDistribution,
    Appearance,
    Numbers,
}

/// A training environment paired with its evaluation environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPair {
    pub name: String,
    pub family: ScenarioFamily,
    /// 1-based position within its family, in table order.
    pub index: usize,
    pub train: EnvSpec,
    pub eval: EnvSpec,
}

const APPEARANCE_TRAIN: [(&str, f64); 8] = [
    ("o1_100", 1.0),
    ("uniform", 0.25),
    ("o1_52", 0.52),
    ("o1_76", 0.76),
    ("o1_88", 0.88),
    ("o1_94", 0.94),
    ("o1_97", 0.97),
    ("o1_100", 1.0),
];

const NUMBER_PAIRS: [(NumScaling, NumScaling); 8] = [
    (NumScaling::EasyX2, NumScaling::Default),
    (NumScaling::EasyX4, NumScaling::Default),
    (NumScaling::MixX4, NumScaling::Default),
    (NumScaling::Default, NumScaling::MixX4),
    (NumScaling::Default, NumScaling::EasyX2),
    (NumScaling::Default, NumScaling::EasyX4),
    (NumScaling::EasyX2, NumScaling::HardX2),
    (NumScaling::EasyX4, NumScaling::HardX4),
];

/// Appearance pair `index` (1-based; pair 1 is the in-distribution setting).
pub fn appearance_pair(index: usize) -> Result<ScenarioPair> {
    let (name, first) = *APPEARANCE_TRAIN
        .get(index.wrapping_sub(1))
        .ok_or_else(|| CoreError::Config(format!("appearance pair {index} out of range 1..=8")))?;
    let train = EnvSpec::default()
        .with_appearance(AppearanceDist::uniform_over_classes(VariantProbs::skewed(first)));
    let (family, eval, label) = if index == 1 {
        (ScenarioFamily::InDistribution, train.clone(), "in_distribution".to_string())
    } else {
        (
            ScenarioFamily::Appearance,
            EnvSpec::default()
                .with_appearance(AppearanceDist::uniform_over_classes(VariantProbs::skewed(0.0))),
            format!("app_{name}"),
        )
    };
    Ok(ScenarioPair {
        name: label,
        family,
        index,
        train,
        eval,
    })
}

/// Number pair `index` (1-based, table order).
pub fn numbers_pair(index: usize) -> Result<ScenarioPair> {
    let (train, eval) = *NUMBER_PAIRS
        .get(index.wrapping_sub(1))
        .ok_or_else(|| CoreError::Config(format!("numbers pair {index} out of range 1..=8")))?;
    Ok(ScenarioPair {
        name: format!("num_{}_to_{}", train.name(), eval.name()),
        family: ScenarioFamily::Numbers,
        index,
        train: EnvSpec::default().with_numbers(train),
        eval: EnvSpec::default().with_numbers(eval),
    })
}

/// The in-distribution pair followed by the 7 appearance and 8 number scenarios.
pub fn builtin_presets() -> Vec<ScenarioPair> {
    (1..=8)
        .map(|i| appearance_pair(i).expect("index in range"))
        .chain((1..=8).map(|i| numbers_pair(i).expect("index in range")))
        .collect()
}

/// Finds a scenario pair by name.
pub fn find_preset(name: &str) -> Result<ScenarioPair> {
    builtin_presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| CoreError::Config(format!("unknown scenario `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn pair_seven_is_ninety_seven_percent() {
        let pair = appearance_pair(7).unwrap();
        assert_eq!(pair.train.appearance.tree.0[0], 0.97);
        for p in &pair.train.appearance.cow.0[1..] {
            assert!((p - 0.01).abs() < 1e-12);
        }
        assert_eq!(pair.eval.appearance.zombie.0, [0.0, THIRD, THIRD, THIRD]);
    }

    #[test]
    fn numbers_pair_two_is_easy_x4_to_default() {
        let pair = numbers_pair(2).unwrap();
        assert_eq!(pair.train.numbers, NumScaling::EasyX4);
        assert_eq!(pair.eval.numbers, NumScaling::Default);
    }

    #[test]
    fn in_distribution_pair_uses_first_variant_only() {
        let pair = appearance_pair(1).unwrap();
        assert_eq!(pair.family, ScenarioFamily::InDistribution);
        assert_eq!(pair.train.appearance.tree, VariantProbs::BASE);
        assert_eq!(pair.eval.appearance.tree, VariantProbs::BASE);
    }

    #[test]
    fn presets_count_and_validity() {
        let all = builtin_presets();
        assert_eq!(all.len(), 16);
        let ood = all
            .iter()
            .filter(|p| p.family != ScenarioFamily::InDistribution)
            .count();
        assert_eq!(ood, 15);
        for p in &all {
            p.train.validate().unwrap();
            p.eval.validate().unwrap();
        }
        assert!(appearance_pair(0).is_err());
        assert!(numbers_pair(9).is_err());
    }

    #[test]
    fn degenerate_distribution_always_first() {
        let dist = AppearanceDist::default();
        let mut rng = stream_rng(1, Stream::Variants);
        for _ in 0..1000 {
            assert_eq!(sample_variant(VariantClass::Cow, &dist, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn zero_probability_variants_never_drawn() {
        let p = VariantProbs::skewed(0.0);
        for i in 0..1000 {
            let u = i as f64 / 1000.0;
            assert_ne!(p.pick(u), 1);
        }
        assert_eq!(p.pick(0.999_999_999_999), 4);
    }

    #[test]
    fn invalid_distribution_rejected() {
        let mut dist = AppearanceDist::default();
        dist.coal = VariantProbs([0.5, 0.6, 0.0, 0.0]);
        let mut rng = stream_rng(1, Stream::Variants);
        assert!(sample_variant(VariantClass::Coal, &dist, &mut rng).is_err());
        dist.coal = VariantProbs([-0.1, 0.6, 0.5, 0.0]);
        assert!(dist.validate().is_err());
    }

    #[test]
    fn count_preset_rows() {
        let d = NumScaling::Default.targets();
        assert_eq!((d.tree, d.coal, d.cow, d.zombie, d.skeleton), (189.0, 50.0, 26.0, 15.0, 9.5));
        let h = NumScaling::HardX4.targets();
        assert_eq!((h.tree, h.coal), (52.0, 12.5));
        assert_eq!(NumScaling::MixX4.targets().zombie, 60.0);
    }

    #[test]
    fn spec_toml_round_trip_keeps_exact_thirds() {
        let spec = appearance_pair(3).unwrap().eval;
        let text = spec.to_toml();
        let back = EnvSpec::from_toml(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.appearance.tree.0[1].to_bits(), THIRD.to_bits());
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_specs_round_trip(first in 0.0f64..=1.0, inv: bool, cap in 1u32..20000, preset in 0usize..6) {
            let spec = EnvSpec {
                appearance: AppearanceDist::uniform_over_classes(VariantProbs::skewed(first)),
                numbers: NumScaling::ALL[preset],
                show_inventory: inv,
                episode_cap: cap,
                world: WorldKind::Standard,
                seed_policy: SeedPolicy::Exact,
            };
            let back = EnvSpec::from_toml(&spec.to_toml()).unwrap();
            proptest::prop_assert_eq!(back, spec);
        }
    }
}
