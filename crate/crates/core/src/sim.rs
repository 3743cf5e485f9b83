//! The per-tick game state machine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::achievement::{Achievement, AchievementSet};
use crate::error::{CoreError, Result};
use crate::material::{Action, Direction, Item, Material};
use crate::ood::{sample_variant, VariantClass};
use crate::rules::{Placeable, Rules};
use crate::world::{chebyshev, Creature, CreatureKind, Pos, WorldState};

pub const DAY_LENGTH: u32 = 300;
const DAY_OFFSET: u32 = 90;
const NIGHT_BELOW: f64 = 0.5;

const ZOMBIE_CHASE_RADIUS: i32 = 8;
const ZOMBIE_NEAR_RADIUS: i32 = 2;
const ZOMBIE_COOLDOWN: u32 = 5;
const ZOMBIE_DAMAGE: u8 = 2;
const ZOMBIE_SLEEP_DAMAGE: u8 = 7;
const SKELETON_RELOAD: u32 = 4;
const ARROW_DAMAGE: u8 = 2;
const SPAWN_PROB: f64 = 0.1;
const DESPAWN_PROB: f64 = 0.1;
const SPAWN_TRIES: usize = 8;
const COW_FOOD: u8 = 6;
const PLANT_FOOD: u8 = 4;

/// Phase of the day/night cycle in [0, 1) at `step`. Phase 0.5 is noon.
pub fn daylight_phase(step: u32) -> f64 {
    ((step + DAY_OFFSET) % DAY_LENGTH) as f64 / DAY_LENGTH as f64
}

/// Ambient brightness in [0, 1] for a phase.
pub fn brightness(phase: f64) -> f64 {
    let t = (1.0 - 2.0 * phase).abs();
    1.0 - t * t * t
}

pub fn is_night(phase: f64) -> bool {
    brightness(phase) < NIGHT_BELOW
}

/// Semantic outcome of one tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvents {
    /// Achievement events triggered this tick, whether or not they are new.
    pub achievements: AchievementSet,
    pub health_delta: i32,
    pub died: bool,
    pub woke_up: bool,
}

fn placeable(action: Action) -> Option<Placeable> {
    match action {
        Action::PlaceStone => Some(Placeable::Stone),
        Action::PlaceTable => Some(Placeable::Table),
        Action::PlaceFurnace => Some(Placeable::Furnace),
        Action::PlacePlant => Some(Placeable::Plant),
        _ => None,
    }
}

fn place_achievement(p: Placeable) -> Achievement {
    match p {
        Placeable::Stone => Achievement::PlaceStone,
        Placeable::Table => Achievement::PlaceTable,
        Placeable::Furnace => Achievement::PlaceFurnace,
        Placeable::Plant => Achievement::PlacePlant,
    }
}

fn offset(pos: Pos, dir: Direction) -> Pos {
    let (dx, dy) = dir.delta();
    (pos.0 + dx, pos.1 + dy)
}

fn missing_items(state: &WorldState, items: &[(Item, u8)]) -> Option<String> {
    items
        .iter()
        .find(|(item, n)| state.player.get(*item) < *n)
        .map(|(item, _)| format!("insufficient {}", item.name()))
}

fn missing_nearby(state: &WorldState, rules: &Rules, nearby: &[Material]) -> Option<String> {
    nearby
        .iter()
        .find(|m| !state.map.nearby(state.player.pos, rules.nearby_radius, **m))
        .map(|m| format!("needs nearby {}", m.name()))
}

fn player_can_enter(state: &WorldState, pos: Pos) -> bool {
    state.map.get(pos).is_some_and(|m| m.is_walkable() || m == Material::Lava) && state.creature_at(pos).is_none()
}

fn sword_damage(state: &WorldState) -> i32 {
    let p = &state.player;
    if p.get(Item::IronSword) > 0 {
        5
    } else if p.get(Item::StoneSword) > 0 {
        3
    } else if p.get(Item::WoodSword) > 0 {
        2
    } else {
        1
    }
}

/// Whether `action` would change the world beyond advancing the clock, and
/// if not, the unmet requirement.
pub fn can_apply(state: &WorldState, action: Action, rules: &Rules) -> (bool, String) {
    let ok = (true, String::new());
    if state.is_terminal() {
        return (false, "episode is over".into());
    }
    if state.player.sleeping {
        return (false, "sleeping".into());
    }
    let target = offset(state.player.pos, state.player.facing);
    if let Some(dir) = action.direction() {
        let to = offset(state.player.pos, dir);
        if dir != state.player.facing || player_can_enter(state, to) {
            return ok;
        }
        return (false, "blocked".into());
    }
    match action {
        Action::Noop => (false, "noop".into()),
        Action::Sleep => {
            if state.player.get(Item::Energy) < Item::MAX {
                ok
            } else {
                (false, "not tired".into())
            }
        }
        Action::Do => {
            if let Some(c) = state.creature_at(target) {
                return match c.kind {
                    CreatureKind::Plant if !c.is_ripe() => (false, "plant not ripe".into()),
                    _ => ok,
                };
            }
            let Some(material) = state.map.get(target) else {
                return (false, "facing the world edge".into());
            };
            match rules.collect(material) {
                None => (false, format!("nothing to collect from {}", material.name())),
                Some(rule) => match rule.require.iter().find(|(item, n)| state.player.get(*item) < *n) {
                    Some((item, _)) => (false, format!("needs {}", item.name())),
                    None => ok,
                },
            }
        }
        _ => {
            if let Some(what) = placeable(action) {
                let Some(rule) = rules.place(what) else {
                    return (false, format!("no rule for placing {}", what.name()));
                };
                if let Some(r) = missing_items(state, &rule.uses) {
                    return (false, r);
                }
                if let Some(r) = missing_nearby(state, rules, &rule.nearby) {
                    return (false, r);
                }
                match state.map.get(target) {
                    Some(m) if rule.target.contains(&m) && state.creature_at(target).is_none() => ok,
                    _ => (false, format!("cannot place {} there", what.name())),
                }
            } else if let Some(tool) = action.crafted() {
                let Some(rule) = rules.make(tool) else {
                    return (false, format!("no rule for {}", tool.name()));
                };
                if let Some(r) = missing_items(state, &rule.uses) {
                    return (false, r);
                }
                if let Some(r) = missing_nearby(state, rules, &rule.nearby) {
                    return (false, r);
                }
                if state.player.get(tool) >= Item::MAX {
                    return (false, format!("{} is full", tool.name()));
                }
                ok
            } else {
                (false, "unknown action".into())
            }
        }
    }
}

/// Applies exactly one tick: player action, creatures, population balance,
/// vitals, then the clock.
pub fn step(state: &mut WorldState, action: Action, rules: &Rules) -> Result<StepEvents> {
    if state.is_terminal() {
        return Err(CoreError::Contract("step called on a terminal state".into()));
    }
    let health_before = state.player.health() as i32;
    let mut events = StepEvents::default();
    let action = if state.player.sleeping { Action::Noop } else { action };

    player_action(state, action, rules, &mut events);
    for id in state.slot_ids() {
        update_creature(state, id);
    }
    balance_population(state);
    update_vitals(state);

    let night = is_night(state.daylight);
    if state.player.sleeping && state.player.get(Item::Energy) >= Item::MAX && !night {
        state.player.sleeping = false;
        events.woke_up = true;
        events.achievements.insert(Achievement::WakeUp);
    }

    state.step_count += 1;
    state.daylight = daylight_phase(state.step_count);
    events.health_delta = state.player.health() as i32 - health_before;
    events.died = state.player.is_dead();
    Ok(events)
}

fn player_action(state: &mut WorldState, action: Action, rules: &Rules, events: &mut StepEvents) {
    if let Some(dir) = action.direction() {
        state.player.facing = dir;
        let to = offset(state.player.pos, dir);
        if player_can_enter(state, to) {
            state.player.pos = to;
            if state.map.material(to) == Material::Lava {
                state.player.set(Item::Health, 0);
            }
        }
        return;
    }
    let target = offset(state.player.pos, state.player.facing);
    match action {
        Action::Noop => {}
        Action::Sleep => {
            if state.player.get(Item::Energy) < Item::MAX {
                state.player.sleeping = true;
            }
        }
        Action::Do => interact(state, target, rules, events),
        _ => {
            if !can_apply(state, action, rules).0 {
                return;
            }
            if let Some(what) = placeable(action) {
                let rule = rules.place(what).expect("checked by can_apply");
                for (item, n) in &rule.uses {
                    state.player.remove(*item, *n);
                }
                match what {
                    Placeable::Stone => state.map.set(target, Material::Stone),
                    Placeable::Table => state.map.set(target, Material::Table),
                    Placeable::Furnace => state.map.set(target, Material::Furnace),
                    Placeable::Plant => {
                        state.add_creature(Creature::new(CreatureKind::Plant, target, 1));
                    }
                }
                events.achievements.insert(place_achievement(what));
            } else if let Some(tool) = action.crafted() {
                let rule = rules.make(tool).expect("checked by can_apply");
                for (item, n) in &rule.uses {
                    state.player.remove(*item, *n);
                }
                state.player.add(tool, rule.gives);
                if let Some(a) = Achievement::for_made(tool) {
                    events.achievements.insert(a);
                }
            }
        }
    }
}

fn interact(state: &mut WorldState, target: Pos, rules: &Rules, events: &mut StepEvents) {
    if let Some(id) = state.creature_id_at(target) {
        let damage = sword_damage(state);
        let creature = state.creature_mut(id).expect("occupied cell");
        match creature.kind {
            CreatureKind::Plant => {
                if creature.is_ripe() {
                    creature.timer = 0;
                    state.player.add(Item::Food, PLANT_FOOD);
                    state.player.hunger = 0;
                    events.achievements.insert(Achievement::EatPlant);
                }
            }
            CreatureKind::Arrow => {}
            kind => {
                creature.health -= damage;
                if creature.health <= 0 {
                    state.remove_creature(id);
                    match kind {
                        CreatureKind::Cow => {
                            state.player.add(Item::Food, COW_FOOD);
                            state.player.hunger = 0;
                            events.achievements.insert(Achievement::EatCow);
                        }
                        CreatureKind::Zombie => {
                            events.achievements.insert(Achievement::DefeatZombie);
                        }
                        CreatureKind::Skeleton => {
                            events.achievements.insert(Achievement::DefeatSkeleton);
                        }
                        _ => {}
                    }
                }
            }
        }
        return;
    }
    let Some(material) = state.map.get(target) else {
        return;
    };
    let Some(rule) = rules.collect(material) else {
        return;
    };
    if rule.require.iter().any(|(item, n)| state.player.get(*item) < *n) {
        return;
    }
    if rule.probability < 1.0 && state.rng.player.random::<f64>() >= rule.probability {
        return;
    }
    for (item, n) in &rule.receive {
        state.player.add(*item, *n);
        if *item == Item::Drink {
            state.player.thirst = 0;
        }
        if let Some(a) = Achievement::for_collected(*item) {
            events.achievements.insert(a);
        }
    }
    if rule.leaves != material {
        state.map.set(target, rule.leaves);
    }
}

fn creature_can_enter(state: &WorldState, kind: CreatureKind, pos: Pos) -> bool {
    if !state.is_free(pos) {
        return false;
    }
    let m = state.map.material(pos);
    match kind {
        CreatureKind::Cow | CreatureKind::Zombie => m.is_walkable(),
        CreatureKind::Skeleton => m == Material::Path,
        CreatureKind::Arrow => m.is_walkable() || m == Material::Water || m == Material::Lava,
        CreatureKind::Plant => false,
    }
}

fn random_direction<R: Rng>(rng: &mut R) -> Direction {
    [Direction::Up, Direction::Down, Direction::Left, Direction::Right][rng.random_range(0..4)]
}

/// Unit step from `from` towards `to` along the dominant axis.
fn toward(from: Pos, to: Pos) -> Direction {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    if dx.abs() > dy.abs() {
        if dx > 0 {
            Direction::Right
        } else {
            Direction::Left
        }
    } else if dy > 0 {
        Direction::Down
    } else {
        Direction::Up
    }
}

fn try_move(state: &mut WorldState, id: usize, dir: Direction) -> bool {
    let c = state.creature_mut(id).expect("live creature");
    c.facing = dir;
    let (kind, pos) = (c.kind, c.pos);
    let to = offset(pos, dir);
    if creature_can_enter(state, kind, to) {
        state.move_creature(id, to);
        true
    } else {
        false
    }
}

fn damage_player(state: &mut WorldState, amount: u8) {
    state.player.remove(Item::Health, amount);
}

fn update_creature(state: &mut WorldState, id: usize) {
    let Some(c) = state.creature(id) else {
        return;
    };
    let (kind, pos) = (c.kind, c.pos);
    let player = state.player.pos;
    let dist = chebyshev(pos, player);
    match kind {
        CreatureKind::Cow => {
            if state.rng.creatures.random::<f64>() < 0.5 {
                let dir = random_direction(&mut state.rng.creatures);
                try_move(state, id, dir);
            }
        }
        CreatureKind::Zombie => {
            let night = is_night(state.daylight);
            let c = state.creature_mut(id).expect("live creature");
            c.timer = c.timer.saturating_sub(1);
            let near = (pos.0 - player.0).abs() + (pos.1 - player.1).abs() <= 1;
            if near {
                let c = state.creature_mut(id).expect("live creature");
                if c.timer == 0 {
                    c.timer = ZOMBIE_COOLDOWN;
                    let damage = if state.player.sleeping {
                        ZOMBIE_SLEEP_DAMAGE
                    } else {
                        ZOMBIE_DAMAGE
                    };
                    damage_player(state, damage);
                }
                return;
            }
            let u: f64 = state.rng.creatures.random();
            let chasing = (night && dist <= ZOMBIE_CHASE_RADIUS) || dist <= ZOMBIE_NEAR_RADIUS;
            if chasing && u < 0.9 {
                try_move(state, id, toward(pos, player));
            } else if u < 0.5 || (chasing && u >= 0.9) {
                let dir = random_direction(&mut state.rng.creatures);
                try_move(state, id, dir);
            }
        }
        CreatureKind::Skeleton => {
            let c = state.creature_mut(id).expect("live creature");
            c.timer = c.timer.saturating_sub(1);
            let reload = c.timer;
            let u: f64 = state.rng.creatures.random();
            if dist <= 3 && u < 0.4 {
                let away = toward(player, pos);
                try_move(state, id, away);
            } else if dist <= 5 && reload == 0 && u < 0.5 {
                let dir = toward(pos, player);
                let c = state.creature_mut(id).expect("live creature");
                c.facing = dir;
                c.timer = SKELETON_RELOAD;
                let at = offset(pos, dir);
                if state.count_of(CreatureKind::Arrow) < state.population.max_arrows.max(1) {
                    if at == player {
                        damage_player(state, ARROW_DAMAGE);
                    } else if creature_can_enter(state, CreatureKind::Arrow, at) {
                        let mut arrow = Creature::new(CreatureKind::Arrow, at, 1);
                        arrow.facing = dir;
                        state.add_creature(arrow);
                    }
                }
            } else if dist <= 8 && u < 0.3 {
                try_move(state, id, toward(pos, player));
            } else if u < 0.5 {
                let dir = random_direction(&mut state.rng.creatures);
                try_move(state, id, dir);
            }
        }
        CreatureKind::Arrow => {
            let dir = state.creature(id).expect("live creature").facing;
            let to = offset(pos, dir);
            if to == player {
                damage_player(state, ARROW_DAMAGE);
                state.remove_creature(id);
            } else if creature_can_enter(state, CreatureKind::Arrow, to) {
                state.move_creature(id, to);
            } else {
                if matches!(state.map.get(to), Some(Material::Table | Material::Furnace)) {
                    state.map.set(to, Material::Path);
                }
                state.remove_creature(id);
            }
        }
        CreatureKind::Plant => {
            let zombie_adjacent = [Direction::Up, Direction::Down, Direction::Left, Direction::Right]
                .into_iter()
                .any(|d| state.creature_at(offset(pos, d)).is_some_and(|c| c.kind == CreatureKind::Zombie));
            if zombie_adjacent {
                state.remove_creature(id);
            } else {
                let c = state.creature_mut(id).expect("live creature");
                c.timer = c.timer.saturating_add(1);
            }
        }
    }
}

/// Birth-death process holding each creature population near its target.
fn balance_population(state: &mut WorldState) {
    if !state.population.balance {
        return;
    }
    for kind in [CreatureKind::Cow, CreatureKind::Zombie, CreatureKind::Skeleton] {
        let target = state.population.target_of(kind);
        let n = state.count_of(kind) as f64;
        let u: f64 = state.rng.spawning.random();
        if n < target && u < SPAWN_PROB {
            spawn_one(state, kind);
        } else if n > target && u < DESPAWN_PROB {
            despawn_one(state, kind);
        }
    }
}

fn spawn_one(state: &mut WorldState, kind: CreatureKind) {
    let zone = match kind {
        CreatureKind::Cow => &state.map.spawn_zones.cow,
        CreatureKind::Zombie => &state.map.spawn_zones.zombie,
        _ => &state.map.spawn_zones.skeleton,
    };
    if zone.is_empty() {
        return;
    }
    let len = zone.len();
    let min_dist = crate::worldgen::spawn_distance(kind);
    for _ in 0..SPAWN_TRIES {
        let cell = match kind {
            CreatureKind::Cow => state.map.spawn_zones.cow[state.rng.spawning.random_range(0..len)],
            CreatureKind::Zombie => state.map.spawn_zones.zombie[state.rng.spawning.random_range(0..len)],
            _ => state.map.spawn_zones.skeleton[state.rng.spawning.random_range(0..len)],
        };
        let pos = state.map.pos_of(cell as usize);
        if chebyshev(pos, state.player.pos) < min_dist || !creature_can_enter(state, kind, pos) {
            continue;
        }
        let class = match kind {
            CreatureKind::Cow => VariantClass::Cow,
            CreatureKind::Zombie => VariantClass::Zombie,
            _ => VariantClass::Skeleton,
        };
        let variant = sample_variant(class, &state.appearance, &mut state.rng.variants).unwrap_or(1);
        state.add_creature(Creature::new(kind, pos, variant));
        return;
    }
}

fn despawn_one(state: &mut WorldState, kind: CreatureKind) {
    let candidates: Vec<usize> = state
        .slot_ids()
        .into_iter()
        .filter(|&id| {
            let c = state.creature(id).expect("live creature");
            c.kind == kind && chebyshev(c.pos, state.player.pos) >= crate::worldgen::spawn_distance(kind)
        })
        .collect();
    if candidates.is_empty() {
        return;
    }
    let pick = candidates[state.rng.spawning.random_range(0..candidates.len())];
    state.remove_creature(pick);
}

fn update_vitals(state: &mut WorldState) {
    let p = &mut state.player;
    let sleeping = p.sleeping;
    p.hunger += if sleeping { 1 } else { 2 };
    if p.hunger > 50 {
        p.hunger = 0;
        p.remove(Item::Food, 1);
    }
    p.thirst += if sleeping { 1 } else { 2 };
    if p.thirst > 40 {
        p.thirst = 0;
        p.remove(Item::Drink, 1);
    }
    if sleeping {
        p.fatigue = (p.fatigue - 1).min(0);
    } else {
        p.fatigue += 1;
    }
    if p.fatigue < -10 {
        p.fatigue = 0;
        p.add(Item::Energy, 1);
    }
    if p.fatigue > 30 {
        p.fatigue = 0;
        p.remove(Item::Energy, 1);
    }
    let necessities = p.get(Item::Food) > 0 && p.get(Item::Drink) > 0 && (p.get(Item::Energy) > 0 || sleeping);
    if necessities {
        p.recover += if sleeping { 4 } else { 2 };
    } else {
        p.recover -= if sleeping { 1 } else { 2 };
    }
    if p.recover > 50 {
        p.recover = 0;
        p.add(Item::Health, 1);
    }
    if p.recover < -30 {
        p.recover = 0;
        p.remove(Item::Health, 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ood::AppearanceDist;
    use crate::world::{PlayerState, PopulationConfig, WorldMap};

    fn micro(material_at: &[(Pos, Material)]) -> WorldState {
        let mut map = WorldMap::filled(9, 9, Material::Grass);
        for (p, m) in material_at {
            map.set(*p, *m);
        }
        WorldState::new(
            map,
            PlayerState::new((4, 4)),
            vec![],
            10_000,
            PopulationConfig::disabled(),
            AppearanceDist::default(),
            3,
        )
    }

    #[test]
    fn do_on_tree_collects_wood() {
        let rules = Rules::default();
        let mut s = micro(&[((4, 5), Material::Tree)]);
        let ev = step(&mut s, Action::Do, &rules).unwrap();
        assert_eq!(s.player.get(Item::Wood), 1);
        assert!(ev.achievements.contains(Achievement::CollectWood));
        assert_eq!(s.map.material((4, 5)), Material::Tree);
    }

    #[test]
    fn noop_advances_clock_only() {
        let rules = Rules::default();
        let mut s = micro(&[]);
        step(&mut s, Action::Noop, &rules).unwrap();
        assert_eq!(s.player.pos, (4, 4));
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn lava_kills() {
        let rules = Rules::default();
        let mut s = micro(&[((5, 4), Material::Lava)]);
        let ev = step(&mut s, Action::MoveRight, &rules).unwrap();
        assert!(ev.died);
        assert!(s.is_terminal());
        assert!(step(&mut s, Action::Noop, &rules).is_err());
    }

    #[test]
    fn requirements_reported() {
        let rules = Rules::default();
        let mut s = micro(&[((4, 5), Material::Stone)]);
        let (ok, why) = can_apply(&s, Action::MakeWoodPickaxe, &rules);
        assert!(!ok);
        assert_eq!(why, "insufficient wood");
        assert!(!can_apply(&s, Action::Do, &rules).0);
        s.player.set(Item::Wood, 1);
        let (ok, why) = can_apply(&s, Action::MakeWoodPickaxe, &rules);
        assert!(!ok);
        assert_eq!(why, "needs nearby table");
    }

    #[test]
    fn iron_pickaxe_near_table_and_furnace() {
        let rules = Rules::default();
        let mut s = micro(&[((3, 3), Material::Table), ((5, 3), Material::Furnace)]);
        for item in [Item::Wood, Item::Coal, Item::Iron] {
            s.player.set(item, 1);
        }
        assert!(can_apply(&s, Action::MakeIronPickaxe, &rules).0);
        let ev = step(&mut s, Action::MakeIronPickaxe, &rules).unwrap();
        assert!(ev.achievements.contains(Achievement::MakeIronPickaxe));
        assert_eq!(s.player.get(Item::IronPickaxe), 1);
        assert_eq!(s.player.get(Item::Wood), 0);
        assert_eq!(s.player.get(Item::Coal), 0);
    }

    #[test]
    fn table_costs_two_wood() {
        let rules = Rules::default();
        let mut s = micro(&[]);
        s.player.set(Item::Wood, 1);
        assert!(!can_apply(&s, Action::PlaceTable, &rules).0);
        s.player.set(Item::Wood, 3);
        step(&mut s, Action::PlaceTable, &rules).unwrap();
        assert_eq!(s.player.get(Item::Wood), 1);
        assert_eq!(s.map.material((4, 5)), Material::Table);
    }

    #[test]
    fn daylight_is_bounded() {
        for t in 0..DAY_LENGTH * 2 {
            let b = brightness(daylight_phase(t));
            assert!((0.0..=1.0).contains(&b));
        }
        assert!(!is_night(daylight_phase(0)));
        assert!((0..DAY_LENGTH).any(|t| is_night(daylight_phase(t))));
    }
}
