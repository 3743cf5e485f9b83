//! Seeded procedural terrain generation with exact static-object counts.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::material::Material;
use crate::noise::{cell_hash, fractal, value_noise};
use crate::ood::{sample_variant, AppearanceDist, CountTargets, VariantClass};
use crate::rng::{split_seed, stream_rng, Stream};
use crate::world::{chebyshev, Creature, CreatureKind, Pos, SpawnZones, WorldMap};
use rand::Rng;

pub const WORLD_SIZE: u32 = 64;
const MAX_ATTEMPTS: u64 = 16;

/// Frequencies of the terrain noise layers, in cells per lattice step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub water: [(f64, f64); 2],
    pub mountain: [(f64, f64); 2],
    pub cave: f64,
    pub tunnel: f64,
    pub lava: f64,
    pub sand: f64,
    pub forest: f64,
    pub ore: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        Self {
            water: [(15.0, 1.0), (5.0, 0.15)],
            mountain: [(15.0, 1.0), (5.0, 0.3)],
            cave: 6.0,
            tunnel: 3.0,
            lava: 5.0,
            sand: 9.0,
            forest: 7.0,
            ore: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub count_targets: CountTargets,
    pub noise_scales: NoiseScales,
    pub appearance: AppearanceDist,
}

impl GenParams {
    pub fn new(seed: u64, count_targets: CountTargets, appearance: AppearanceDist) -> Self {
        Self {
            seed,
            count_targets,
            noise_scales: NoiseScales::default(),
            appearance,
        }
    }
}

/// Result of world generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub map: WorldMap,
    pub creatures: Vec<Creature>,
    pub player_start: Pos,
}

mod layer {
    pub const START: u64 = 1;
    pub const WATER: u64 = 2;
    pub const MOUNTAIN: u64 = 3;
    pub const CAVE: u64 = 4;
    pub const TUNNEL_H: u64 = 5;
    pub const TUNNEL_V: u64 = 6;
    pub const LAVA: u64 = 7;
    pub const SAND: u64 = 8;
    pub const FOREST: u64 = 9;
    pub const IRON: u64 = 10;
    pub const COAL: u64 = 11;
    pub const JITTER_TREE: u64 = 12;
    pub const JITTER_COAL: u64 = 13;
    pub const JITTER_IRON: u64 = 14;
    pub const DIAMOND: u64 = 15;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Clearing,
    Grassland,
    Tunnel,
    Mountain,
    Other,
}

fn near(d: f64, radius: f64) -> f64 {
    if d >= radius {
        0.0
    } else {
        (radius - d) / radius
    }
}

fn ranked_pick(mut scored: Vec<(f64, usize)>, n: usize) -> Vec<usize> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(n);
    scored.into_iter().map(|(_, i)| i).collect()
}

fn round_count(target: f64) -> usize {
    target.round() as usize
}

/// Generates the standard 64x64 world.
pub fn generate(params: &GenParams) -> Result<Generated> {
    params.count_targets.validate()?;
    params.appearance.validate()?;
    let total = (WORLD_SIZE * WORLD_SIZE) as usize;
    for (class, target) in [("tree", params.count_targets.tree), ("coal", params.count_targets.coal)] {
        if round_count(target) > total {
            return Err(CoreError::InsufficientCells {
                class,
                wanted: round_count(target),
                available: total,
            });
        }
    }
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        match try_generate(params, attempt) {
            Ok(g) => return Ok(g),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| CoreError::Generation("no attempt made".into())))
}

fn try_generate(params: &GenParams, attempt: u64) -> Result<Generated> {
    let seed = split_seed(params.seed, attempt);
    let scales = &params.noise_scales;
    let size = WORLD_SIZE;
    let start: Pos = (size as i32 / 2, size as i32 / 2);
    let mut map = WorldMap::filled(size, size, Material::Grass);
    let n = (size * size) as usize;
    let mut region = vec![Region::Other; n];
    let mut depth = vec![f64::NEG_INFINITY; n];

    for y in 0..size as i32 {
        for x in 0..size as i32 {
            let (fx, fy) = (x as f64, y as f64);
            let dx = fx - start.0 as f64;
            let dy = fy - start.1 as f64;
            let d = (dx * dx + dy * dy).sqrt();
            let i = map.index((x, y));
            let clear_radius = 3.0 + 0.75 * (value_noise(seed, layer::START, fx, fy, 4.0) + 1.0);
            let water = fractal(seed, layer::WATER, fx, fy, &scales.water) - 0.8 * near(d, 10.0);
            let mountain = fractal(seed, layer::MOUNTAIN, fx, fy, &scales.mountain) - 0.9 * near(d, 12.0);
            let material = if d < clear_radius {
                region[i] = Region::Clearing;
                Material::Grass
            } else if mountain > 0.12 {
                depth[i] = mountain;
                let cave = value_noise(seed, layer::CAVE, fx, fy, scales.cave);
                let tunnel_h = value_noise(seed, layer::TUNNEL_H, fx / 5.0, fy * 2.0, scales.tunnel);
                let tunnel_v = value_noise(seed, layer::TUNNEL_V, fx * 2.0, fy / 5.0, scales.tunnel);
                let lava = value_noise(seed, layer::LAVA, fx, fy, scales.lava);
                if cave > 0.4 && mountain > 0.25 {
                    region[i] = Region::Tunnel;
                    Material::Path
                } else if tunnel_h > 0.6 || tunnel_v > 0.6 {
                    region[i] = Region::Tunnel;
                    Material::Path
                } else if mountain > 0.3 && lava > 0.55 {
                    Material::Lava
                } else {
                    region[i] = Region::Mountain;
                    Material::Stone
                }
            } else if water > 0.2 && water < 0.3 && value_noise(seed, layer::SAND, fx, fy, scales.sand) > -0.3 {
                Material::Sand
            } else if water > 0.25 {
                Material::Water
            } else {
                region[i] = Region::Grassland;
                Material::Grass
            };
            map.set(( x, y), material);
        }
    }

    // Exactly one diamond vein at the deepest stone.
    let stone: Vec<usize> = (0..n).filter(|&i| map.cells()[i] == Material::Stone).collect();
    let deepest = stone
        .iter()
        .copied()
        .max_by(|&a, &b| depth[a].total_cmp(&depth[b]).then(b.cmp(&a)))
        .ok_or_else(|| CoreError::Generation("no mountain to host the diamond vein".into()))?;
    let vein_len = 1 + (cell_hash(seed, layer::DIAMOND, 0, 0) * 3.0) as usize;
    let mut vein = vec![deepest];
    while vein.len() < vein_len {
        let next = vein
            .iter()
            .flat_map(|&c| {
                let (x, y) = map.pos_of(c);
                [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
            })
            .filter(|p| map.get(*p) == Some(Material::Stone))
            .map(|p| map.index(p))
            .filter(|i| !vein.contains(i))
            .max_by(|&a, &b| depth[a].total_cmp(&depth[b]).then(b.cmp(&a)));
        match next {
            Some(c) => vein.push(c),
            None => break,
        }
    }
    for &c in &vein {
        let p = map.pos_of(c);
        map.set(p, Material::Diamond);
    }

    // Iron in deeper stone, with a small guaranteed minimum.
    let stone: Vec<usize> = (0..n).filter(|&i| map.cells()[i] == Material::Stone).collect();
    let iron_scored: Vec<(f64, usize)> = stone
        .iter()
        .map(|&i| {
            let (x, y) = map.pos_of(i);
            let s = value_noise(seed, layer::IRON, x as f64, y as f64, scales.ore)
                + cell_hash(seed, layer::JITTER_IRON, x as i64, y as i64)
                + 0.5 * depth[i];
            (s, i)
        })
        .collect();
    let threshold_hits = iron_scored.iter().filter(|(s, _)| *s > 1.55).count();
    let iron_count = threshold_hits.max(4).min(stone.len() / 4);
    for c in ranked_pick(iron_scored, iron_count) {
        let p = map.pos_of(c);
        map.set(p, Material::Iron);
    }

    // Coal: exactly the rounded target among the remaining stone.
    let coal_target = round_count(params.count_targets.coal);
    let stone: Vec<usize> = (0..n).filter(|&i| map.cells()[i] == Material::Stone).collect();
    if stone.len() < coal_target {
        return Err(CoreError::InsufficientCells {
            class: "coal",
            wanted: coal_target,
            available: stone.len(),
        });
    }
    let coal_scored = stone
        .iter()
        .map(|&i| {
            let (x, y) = map.pos_of(i);
            let s = 0.6 * value_noise(seed, layer::COAL, x as f64, y as f64, scales.ore)
                + cell_hash(seed, layer::JITTER_COAL, x as i64, y as i64);
            (s, i)
        })
        .collect();
    let coal_cells = ranked_pick(coal_scored, coal_target);

    // Trees: exactly the rounded target in grassland.
    let tree_target = round_count(params.count_targets.tree);
    let grassland: Vec<usize> = (0..n)
        .filter(|&i| region[i] == Region::Grassland && map.cells()[i] == Material::Grass)
        .collect();
    if grassland.len() < tree_target {
        return Err(CoreError::InsufficientCells {
            class: "tree",
            wanted: tree_target,
            available: grassland.len(),
        });
    }
    let tree_scored = grassland
        .iter()
        .map(|&i| {
            let (x, y) = map.pos_of(i);
            let s = value_noise(seed, layer::FOREST, x as f64, y as f64, scales.forest)
                + 0.8 * cell_hash(seed, layer::JITTER_TREE, x as i64, y as i64);
            (s, i)
        })
        .collect();
    let tree_cells = ranked_pick(tree_scored, tree_target);

    // Variants are drawn in cell order so the draw sequence depends only on the layout.
    let mut variant_rng = stream_rng(seed, Stream::Variants);
    let mut is_coal = vec![false; n];
    for c in coal_cells {
        is_coal[c] = true;
    }
    let mut is_tree = vec![false; n];
    for c in tree_cells {
        is_tree[c] = true;
    }
    for i in 0..n {
        let p = map.pos_of(i);
        let (material, class) = if is_coal[i] {
            (Material::Coal, VariantClass::Coal)
        } else if is_tree[i] {
            (Material::Tree, VariantClass::Tree)
        } else if map.cells()[i] == Material::Stone {
            (Material::Stone, VariantClass::Stone)
        } else {
            continue;
        };
        let v = sample_variant(class, &params.appearance, &mut variant_rng)?;
        map.set_with_variant(p, material, v);
    }

    check_connectivity(&map, start)?;

    let grass_zone: Vec<u32> = (0..n)
        .filter(|&i| region[i] == Region::Grassland && map.cells()[i] == Material::Grass)
        .map(|i| i as u32)
        .collect();
    let tunnel_zone: Vec<u32> = (0..n)
        .filter(|&i| region[i] == Region::Tunnel && map.cells()[i] == Material::Path)
        .map(|i| i as u32)
        .collect();
    if params.count_targets.skeleton > 0.0 && tunnel_zone.len() < 2 * params.count_targets.skeleton.ceil() as usize {
        return Err(CoreError::InsufficientCells {
            class: "skeleton",
            wanted: 2 * params.count_targets.skeleton.ceil() as usize,
            available: tunnel_zone.len(),
        });
    }
    let needed_grass = 2 * (params.count_targets.cow.ceil() + params.count_targets.zombie.ceil()) as usize;
    if grass_zone.len() < needed_grass {
        return Err(CoreError::InsufficientCells {
            class: "cow/zombie",
            wanted: needed_grass,
            available: grass_zone.len(),
        });
    }
    map.spawn_zones = SpawnZones {
        cow: grass_zone.clone(),
        zombie: grass_zone,
        skeleton: tunnel_zone,
    };

    let creatures = initial_creatures(&map, params, seed, start, &mut variant_rng)?;
    Ok(Generated {
        map,
        creatures,
        player_start: start,
    })
}

/// Minimum distance from the player at which each creature kind may appear.
pub fn spawn_distance(kind: CreatureKind) -> i32 {
    match kind {
        CreatureKind::Zombie => 6,
        CreatureKind::Skeleton => 4,
        _ => 3,
    }
}

fn initial_creatures<R: Rng>(
    map: &WorldMap,
    params: &GenParams,
    seed: u64,
    start: Pos,
    variant_rng: &mut R,
) -> Result<Vec<Creature>> {
    let mut rng = stream_rng(seed, Stream::Placement);
    let mut occupied = vec![false; map.cells().len()];
    occupied[map.index(start)] = true;
    let mut out = Vec::new();
    let plan = [
        (CreatureKind::Cow, params.count_targets.cow, &map.spawn_zones.cow, VariantClass::Cow, Material::Grass),
        (CreatureKind::Zombie, params.count_targets.zombie, &map.spawn_zones.zombie, VariantClass::Zombie, Material::Grass),
        (
            CreatureKind::Skeleton,
            params.count_targets.skeleton,
            &map.spawn_zones.skeleton,
            VariantClass::Skeleton,
            Material::Path,
        ),
    ];
    for (kind, target, zone, class, material) in plan {
        let wanted = target.floor() as usize;
        let mut placed = 0;
        let mut tries = 0;
        while placed < wanted && tries < 200 * (wanted + 1) && !zone.is_empty() {
            tries += 1;
            let cell = zone[rng.random_range(0..zone.len())] as usize;
            let pos = map.pos_of(cell);
            if occupied[cell] || map.cells()[cell] != material || chebyshev(pos, start) < spawn_distance(kind) {
                continue;
            }
            occupied[cell] = true;
            let v = sample_variant(class, &params.appearance, variant_rng)?;
            out.push(Creature::new(kind, pos, v));
            placed += 1;
        }
    }
    Ok(out)
}

/// Requires that the start can walk to a cell next to a tree and next to water.
fn check_connectivity(map: &WorldMap, start: Pos) -> Result<()> {
    let reach = reachable(map, start);
    let mut tree = false;
    let mut water = false;
    for (i, &r) in reach.iter().enumerate() {
        if !r {
            continue;
        }
        let (x, y) = map.pos_of(i);
        for p in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            match map.get(p) {
                Some(Material::Tree) => tree = true,
                Some(Material::Water) => water = true,
                _ => {}
            }
        }
    }
    if tree && water {
        Ok(())
    } else {
        Err(CoreError::Generation(format!(
            "start not connected to resources (tree: {tree}, water: {water})"
        )))
    }
}

/// Cells reachable from `start` through walkable materials.
pub fn reachable(map: &WorldMap, start: Pos) -> Vec<bool> {
    let mut seen = vec![false; map.cells().len()];
    let mut queue = VecDeque::new();
    if map.get(start).is_some_and(|m| m.is_walkable()) {
        seen[map.index(start)] = true;
        queue.push_back(start);
    }
    while let Some((x, y)) = queue.pop_front() {
        for p in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if let Some(m) = map.get(p) {
                let i = map.index(p);
                if m.is_walkable() && !seen[i] {
                    seen[i] = true;
                    queue.push_back(p);
                }
            }
        }
    }
    seen
}

/// A small open grass arena with scattered trees and no creatures.
pub fn generate_mini(size: u32, trees: u32, seed: u64, appearance: &AppearanceDist) -> Result<Generated> {
    let mut map = WorldMap::filled(size, size, Material::Grass);
    let start: Pos = (size as i32 / 2, size as i32 / 2);
    let candidates: Vec<(f64, usize)> = (0..map.cells().len())
        .filter(|&i| chebyshev(map.pos_of(i), start) >= 2)
        .map(|i| {
            let (x, y) = map.pos_of(i);
            (cell_hash(seed, layer::JITTER_TREE, x as i64, y as i64), i)
        })
        .collect();
    if candidates.len() < trees as usize {
        return Err(CoreError::InsufficientCells {
            class: "tree",
            wanted: trees as usize,
            available: candidates.len(),
        });
    }
    let mut variant_rng = stream_rng(seed, Stream::Variants);
    let mut chosen = ranked_pick(candidates, trees as usize);
    chosen.sort_unstable();
    for c in chosen {
        let v = sample_variant(VariantClass::Tree, appearance, &mut variant_rng)?;
        let p = map.pos_of(c);
        map.set_with_variant(p, Material::Tree, v);
    }
    Ok(Generated {
        map,
        creatures: Vec::new(),
        player_start: start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ood::NumScaling;
    use crate::world::count_materials;

    fn params(seed: u64, numbers: NumScaling) -> GenParams {
        GenParams::new(seed, numbers.targets(), AppearanceDist::default())
    }

    #[test]
    fn default_counts_exact() {
        let g = generate(&params(1, NumScaling::Default)).unwrap();
        let counts = count_materials(&g.map);
        assert_eq!(counts[&Material::Tree], 189);
        assert_eq!(counts[&Material::Coal], 50);
        assert!(counts[&Material::Diamond] >= 1);
        assert_eq!(counts.values().sum::<usize>(), 4096);
    }

    #[test]
    fn easy_x4_counts_exact() {
        let g = generate(&params(2, NumScaling::EasyX4)).unwrap();
        let counts = count_materials(&g.map);
        assert_eq!(counts[&Material::Tree], 764);
        assert_eq!(counts[&Material::Coal], 206);
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate(&params(99, NumScaling::Default)).unwrap();
        let b = generate(&params(99, NumScaling::Default)).unwrap();
        assert_eq!(a.map.to_bytes(), b.map.to_bytes());
        assert_eq!(a.creatures, b.creatures);
    }

    #[test]
    fn start_is_walkable() {
        let g = generate(&params(5, NumScaling::HardX4)).unwrap();
        assert!(g.map.material(g.player_start).is_walkable());
    }

    #[test]
    fn oversized_target_names_class() {
        let mut p = params(1, NumScaling::Default);
        p.count_targets.tree = 3000.0;
        match generate(&p) {
            Err(CoreError::InsufficientCells { class, .. }) => assert_eq!(class, "tree"),
            other => panic!("expected insufficient cells, got {other:?}"),
        }
        p.count_targets.tree = 10_000.0;
        assert!(matches!(generate(&p), Err(CoreError::InsufficientCells { class: "tree", .. })));
    }

    #[test]
    fn mini_world_has_requested_trees() {
        let g = generate_mini(16, 30, 4, &AppearanceDist::default()).unwrap();
        assert_eq!(count_materials(&g.map)[&Material::Tree], 30);
        assert_eq!(g.map.material(g.player_start), Material::Grass);
    }
}
