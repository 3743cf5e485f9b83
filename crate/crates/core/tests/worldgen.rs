use crafter_core::env::{build_world, survey_populations};
use crafter_core::{count_materials, generate, AppearanceDist, EnvSpec, GenParams, Material, NumScaling, Rules};
use proptest::prelude::*;

#[test]
fn tree_and_coal_counts_are_exact_for_every_preset() {
    for numbers in NumScaling::ALL {
        let t = numbers.targets();
        for seed in 0..5 {
            let g = generate(&GenParams::new(seed, t, AppearanceDist::default())).unwrap();
            let counts = count_materials(&g.map);
            let get = |m| counts.get(&m).copied().unwrap_or(0);
            assert_eq!(get(Material::Tree), t.tree.round() as usize, "{} seed {seed}", numbers.name());
            assert_eq!(get(Material::Coal), t.coal.round() as usize, "{} seed {seed}", numbers.name());
        }
    }
}

#[test]
fn published_rows() {
    let rows = [
        (NumScaling::Default, 189, 50),
        (NumScaling::EasyX4, 764, 206),
        (NumScaling::EasyX2, 380, 102),
        (NumScaling::HardX2, 95, 27),
        (NumScaling::HardX4, 52, 13),
        (NumScaling::MixX4, 764, 206),
    ];
    for (numbers, trees, coal) in rows {
        let g = generate(&GenParams::new(11, numbers.targets(), AppearanceDist::default())).unwrap();
        let counts = count_materials(&g.map);
        assert_eq!((counts[&Material::Tree], counts[&Material::Coal]), (trees, coal), "{}", numbers.name());
    }
}

#[test]
fn appearance_does_not_move_the_layout() {
    let t = NumScaling::Default.targets();
    let a = generate(&GenParams::new(3, t, AppearanceDist::default())).unwrap();
    let b = generate(&GenParams::new(3, t, AppearanceDist::preset("uniform").unwrap())).unwrap();
    assert_eq!(a.map.cells(), b.map.cells());
}

fn mean_survey(numbers: NumScaling, episodes: u64, steps: u32) -> [f64; 3] {
    let spec = EnvSpec::default().with_numbers(numbers);
    let rules = Rules::default();
    let mut total = [0.0; 3];
    for seed in 0..episodes {
        let m = survey_populations(&spec, 1000 + seed, steps, &rules).unwrap();
        for (t, v) in total.iter_mut().zip(m) {
            *t += v;
        }
    }
    total.map(|t| t / episodes as f64)
}

#[test]
fn populations_track_their_targets() {
    for numbers in [NumScaling::Default, NumScaling::HardX4] {
        let t = numbers.targets();
        let [cow, zombie, skeleton] = mean_survey(numbers, 8, 1000);
        for (name, got, want) in [("cow", cow, t.cow), ("zombie", zombie, t.zombie), ("skeleton", skeleton, t.skeleton)] {
            assert!((got - want).abs() <= 0.2 * want, "{} {name}: {got:.2} vs {want}", numbers.name());
        }
    }
}

#[test]
fn creature_caps_hold() {
    let spec = EnvSpec::default().with_numbers(NumScaling::MixX4);
    let mut state = build_world(&spec, 8).unwrap();
    let rules = Rules::default();
    for _ in 0..400 {
        if state.is_terminal() {
            break;
        }
        crafter_core::step(&mut state, crafter_core::Action::Noop, &rules).unwrap();
        for kind in [crafter_core::CreatureKind::Zombie, crafter_core::CreatureKind::Skeleton, crafter_core::CreatureKind::Arrow] {
            assert!(state.count_of(kind) <= state.population.max_of(kind));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn generation_is_a_function_of_the_seed(seed in any::<u64>()) {
        let t = NumScaling::HardX2.targets();
        let a = generate(&GenParams::new(seed, t, AppearanceDist::default())).unwrap();
        let b = generate(&GenParams::new(seed, t, AppearanceDist::default())).unwrap();
        prop_assert_eq!(a.map.to_bytes(), b.map.to_bytes());
        prop_assert_eq!(count_materials(&a.map)[&Material::Tree], 95);
    }
}
