//! Exhaustive search over the crafting tech tree.
//!
//! The search runs the real simulator on a small grass world. Each move is a
//! macro: conjure one resource next to the player and strike it, place a
//! station, or craft a tool. States are merged by inventory, placed stations
//! and achievements, so the search is finite.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::achievement::{Achievement, AchievementSet};
use crate::material::{Action, Direction, Item, Material};
use crate::ood::AppearanceDist;
use crate::rules::Rules;
use crate::sim;
use crate::world::{PlayerState, PopulationConfig, WorldMap, WorldState};

const SIZE: u32 = 7;
const CENTER: (i32, i32) = (3, 3);
const RESOURCE_CELL: (i32, i32) = (2, 3);
const TABLE_CELL: (i32, i32) = (3, 2);
const FURNACE_CELL: (i32, i32) = (3, 4);

/// Materials the search may conjure, with the inventory cap for each yield.
pub const RESOURCES: [(Material, Item, u8); 5] = [
    (Material::Tree, Item::Wood, 5),
    (Material::Stone, Item::Stone, 2),
    (Material::Coal, Item::Coal, 1),
    (Material::Iron, Item::Iron, 1),
    (Material::Diamond, Item::Diamond, 1),
];

const CRAFTS: [(Action, Item); 6] = [
    (Action::MakeWoodPickaxe, Item::WoodPickaxe),
    (Action::MakeStonePickaxe, Item::StonePickaxe),
    (Action::MakeIronPickaxe, Item::IronPickaxe),
    (Action::MakeWoodSword, Item::WoodSword),
    (Action::MakeStoneSword, Item::StoneSword),
    (Action::MakeIronSword, Item::IronSword),
];

/// One macro move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Collect(Material),
    PlaceTable,
    PlaceFurnace,
    Craft(Action),
}

/// Prerequisite pairs that must hold in every reachable state: having the
/// first achievement implies having every one in the second list.
pub const IMPLICATIONS: [(Achievement, &[Achievement]); 10] = [
    (Achievement::PlaceTable, &[Achievement::CollectWood]),
    (Achievement::MakeWoodPickaxe, &[Achievement::PlaceTable]),
    (Achievement::MakeWoodSword, &[Achievement::PlaceTable]),
    (Achievement::CollectStone, &[Achievement::MakeWoodPickaxe]),
    (Achievement::CollectCoal, &[Achievement::MakeWoodPickaxe]),
    (Achievement::MakeStonePickaxe, &[Achievement::CollectStone]),
    (Achievement::PlaceFurnace, &[Achievement::CollectStone, Achievement::PlaceTable]),
    (Achievement::CollectIron, &[Achievement::MakeStonePickaxe]),
    (
        Achievement::MakeIronPickaxe,
        &[Achievement::PlaceFurnace, Achievement::CollectCoal, Achievement::CollectIron],
    ),
    (Achievement::CollectDiamond, &[Achievement::MakeIronPickaxe]),
];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    inventory: [u8; Item::COUNT - 4],
    table: bool,
    furnace: bool,
    achievements: AchievementSet,
}

fn key(state: &WorldState, achievements: AchievementSet) -> Key {
    let mut inventory = [0; Item::COUNT - 4];
    inventory.copy_from_slice(&state.player.inventory[4..]);
    Key {
        inventory,
        table: state.map.material(TABLE_CELL) == Material::Table,
        furnace: state.map.material(FURNACE_CELL) == Material::Furnace,
        achievements,
    }
}

/// Outcome of a search.
#[derive(Debug, Clone)]
pub struct Reachability {
    /// Fewest macro moves needed for each reachable achievement.
    pub depth: HashMap<Achievement, usize>,
    /// Implication violations found, as (state achievements, broken rule).
    pub violations: Vec<(AchievementSet, Achievement)>,
    pub states: usize,
}

impl Reachability {
    pub fn reachable(&self, a: Achievement) -> bool {
        self.depth.contains_key(&a)
    }
}

fn initial() -> WorldState {
    WorldState::new(
        WorldMap::filled(SIZE, SIZE, Material::Grass),
        PlayerState::new(CENTER),
        Vec::new(),
        u32::MAX,
        PopulationConfig::disabled(),
        AppearanceDist::default(),
        0,
    )
}

fn apply(state: &WorldState, mv: Move, rules: &Rules) -> Option<(WorldState, AchievementSet)> {
    let mut next = state.clone();
    for v in Item::VITALS {
        next.player.set(v, Item::MAX);
    }
    let action = match mv {
        Move::Collect(m) => {
            next.map.set(RESOURCE_CELL, m);
            next.player.facing = Direction::Left;
            Action::Do
        }
        Move::PlaceTable => {
            next.player.facing = Direction::Up;
            Action::PlaceTable
        }
        Move::PlaceFurnace => {
            next.player.facing = Direction::Down;
            Action::PlaceFurnace
        }
        Move::Craft(a) => a,
    };
    let before = next.player.inventory;
    let events = sim::step(&mut next, action, rules).ok()?;
    if let Move::Collect(_) = mv {
        next.map.set(RESOURCE_CELL, Material::Grass);
    }
    let changed = next.player.inventory[4..] != before[4..] || !events.achievements.is_empty();
    changed.then_some((next, events.achievements))
}

fn moves(state: &WorldState, resources: &[Material]) -> Vec<Move> {
    let mut out = Vec::new();
    for (material, item, cap) in RESOURCES {
        if resources.contains(&material) && state.player.get(item) < cap {
            out.push(Move::Collect(material));
        }
    }
    if state.map.material(TABLE_CELL) != Material::Table {
        out.push(Move::PlaceTable);
    }
    if state.map.material(FURNACE_CELL) != Material::Furnace {
        out.push(Move::PlaceFurnace);
    }
    for (action, item) in CRAFTS {
        if state.player.get(item) == 0 {
            out.push(Move::Craft(action));
        }
    }
    out
}

/// Breadth-first search over macro moves, conjuring only `resources`.
pub fn explore(rules: &Rules, resources: &[Material]) -> Reachability {
    let start = initial();
    let mut seen = HashSet::from([key(&start, AchievementSet::default())]);
    let mut queue = VecDeque::from([(start, AchievementSet::default(), 0usize)]);
    let mut depth = HashMap::new();
    let mut violations = Vec::new();
    while let Some((state, achieved, d)) = queue.pop_front() {
        for mv in moves(&state, resources) {
            let Some((next, events)) = apply(&state, mv, rules) else {
                continue;
            };
            let achieved = achieved.union(events);
            let k = key(&next, achieved);
            if !seen.insert(k) {
                continue;
            }
            for a in achieved.iter() {
                depth.entry(a).or_insert(d + 1);
            }
            for (a, needs) in IMPLICATIONS {
                if achieved.contains(a) && needs.iter().any(|n| !achieved.contains(*n)) {
                    violations.push((achieved, a));
                }
            }
            queue.push_back((next, achieved, d + 1));
        }
    }
    Reachability {
        depth,
        violations,
        states: seen.len(),
    }
}

/// Every resource the search knows about.
pub fn all_resources() -> Vec<Material> {
    RESOURCES.iter().map(|r| r.0).collect()
}
