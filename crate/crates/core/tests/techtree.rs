use crafter_core::techtree::{all_resources, explore, IMPLICATIONS};
use crafter_core::{Achievement, Material, Rules};

#[test]
fn diamond_is_reachable_in_fifteen_moves() {
    let r = explore(&Rules::default(), &all_resources());
    assert!(r.violations.is_empty(), "{:?}", &r.violations[..r.violations.len().min(5)]);
    assert_eq!(r.depth.get(&Achievement::CollectDiamond), Some(&15), "{:?}", r.depth);
    for (a, _) in IMPLICATIONS {
        assert!(r.reachable(a), "{a} unreachable");
    }
    for a in [Achievement::MakeIronSword, Achievement::MakeStoneSword, Achievement::MakeWoodSword] {
        assert!(r.reachable(a));
    }
}

#[test]
fn tiers_appear_in_order() {
    let r = explore(&Rules::default(), &all_resources());
    let d = |a| r.depth[&a];
    assert_eq!(d(Achievement::CollectWood), 1);
    assert!(d(Achievement::PlaceTable) < d(Achievement::MakeWoodPickaxe));
    assert!(d(Achievement::MakeWoodPickaxe) < d(Achievement::CollectStone));
    assert!(d(Achievement::CollectStone) < d(Achievement::MakeStonePickaxe));
    assert!(d(Achievement::MakeStonePickaxe) < d(Achievement::CollectIron));
    assert!(d(Achievement::CollectIron) < d(Achievement::MakeIronPickaxe));
    assert!(d(Achievement::MakeIronPickaxe) < d(Achievement::CollectDiamond));
}

#[test]
fn removing_a_resource_cuts_its_dependents() {
    let cases: [(Material, &[Achievement]); 4] = [
        (
            Material::Tree,
            &[Achievement::PlaceTable, Achievement::MakeWoodPickaxe, Achievement::CollectStone, Achievement::CollectDiamond],
        ),
        (
            Material::Stone,
            &[Achievement::MakeStonePickaxe, Achievement::PlaceFurnace, Achievement::CollectIron, Achievement::CollectDiamond],
        ),
        (Material::Coal, &[Achievement::MakeIronPickaxe, Achievement::MakeIronSword, Achievement::CollectDiamond]),
        (Material::Iron, &[Achievement::MakeIronPickaxe, Achievement::CollectDiamond]),
    ];
    for (missing, cut) in cases {
        let resources: Vec<Material> = all_resources().into_iter().filter(|m| *m != missing).collect();
        let r = explore(&Rules::default(), &resources);
        assert!(r.violations.is_empty());
        for a in cut {
            assert!(!r.reachable(*a), "{a} reachable without {missing:?}");
        }
    }
    let r = explore(&Rules::default(), &[Material::Tree, Material::Stone, Material::Coal]);
    assert!(r.reachable(Achievement::PlaceFurnace));
    assert!(r.reachable(Achievement::MakeStoneSword));
}
