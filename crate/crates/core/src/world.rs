//! World data: the material grid, creatures, the player and the full simulation state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::material::{Direction, Item, Material};
use crate::ood::{AppearanceDist, CountTargets};
use crate::rng::RngStreams;

pub type Pos = (i32, i32);

pub fn chebyshev(a: Pos, b: Pos) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Candidate spawn cells per creature class, as linear cell indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpawnZones {
    pub cow: Vec<u32>,
    pub zombie: Vec<u32>,
    pub skeleton: Vec<u32>,
}

/// Static terrain with per-cell appearance variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldMap {
    width: u32,
    height: u32,
    cells: Vec<Material>,
    variants: Vec<u8>,
    pub spawn_zones: SpawnZones,
}

impl WorldMap {
    pub fn filled(width: u32, height: u32, material: Material) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            cells: vec![material; n],
            variants: vec![1; n],
            spawn_zones: SpawnZones::default(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn in_bounds(&self, (x, y): Pos) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height
    }

    pub fn index(&self, (x, y): Pos) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn pos_of(&self, index: usize) -> Pos {
        (
            (index % self.width as usize) as i32,
            (index / self.width as usize) as i32,
        )
    }

    pub fn get(&self, pos: Pos) -> Option<Material> {
        self.in_bounds(pos).then(|| self.cells[self.index(pos)])
    }

    pub fn material(&self, pos: Pos) -> Material {
        self.cells[self.index(pos)]
    }

    pub fn variant(&self, pos: Pos) -> u8 {
        self.variants[self.index(pos)]
    }

    pub fn set(&mut self, pos: Pos, material: Material) {
        let i = self.index(pos);
        self.cells[i] = material;
        self.variants[i] = 1;
    }

    pub fn set_with_variant(&mut self, pos: Pos, material: Material, variant: u8) {
        let i = self.index(pos);
        self.cells[i] = material;
        self.variants[i] = variant;
    }

    pub fn cells(&self) -> &[Material] {
        &self.cells
    }

    /// Canonical byte encoding (dimensions, materials, variants).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.cells.len() * 2);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend(self.cells.iter().map(|m| *m as u8));
        out.extend_from_slice(&self.variants);
        out
    }

    /// Whether any cell of `material` lies within the square of `radius` around `center`.
    pub fn nearby(&self, center: Pos, radius: i32, material: Material) -> bool {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let p = (center.0 + dx, center.1 + dy);
                if self.get(p) == Some(material) {
                    return true;
                }
            }
        }
        false
    }
}

/// Exact census of the grid.
pub fn count_materials(map: &WorldMap) -> BTreeMap<Material, usize> {
    let mut counts = BTreeMap::new();
    for m in map.cells() {
        *counts.entry(*m).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreatureKind {
    Cow,
    Zombie,
    Skeleton,
    Arrow,
    Plant,
}

impl CreatureKind {
    pub const ALL: [CreatureKind; 5] = [
        CreatureKind::Cow,
        CreatureKind::Zombie,
        CreatureKind::Skeleton,
        CreatureKind::Arrow,
        CreatureKind::Plant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CreatureKind::Cow => "cow",
            CreatureKind::Zombie => "zombie",
            CreatureKind::Skeleton => "skeleton",
            CreatureKind::Arrow => "arrow",
            CreatureKind::Plant => "plant",
        }
    }

    pub fn initial_health(self) -> i32 {
        match self {
            CreatureKind::Cow => 3,
            CreatureKind::Zombie => 5,
            CreatureKind::Skeleton => 3,
            CreatureKind::Arrow => 1,
            CreatureKind::Plant => 1,
        }
    }
}

/// A non-player object. `timer` is the zombie attack cooldown, the skeleton
/// reload counter, or the plant growth counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Creature {
    pub kind: CreatureKind,
    pub pos: Pos,
    pub health: i32,
    pub variant: u8,
    pub facing: Direction,
    pub timer: u32,
}

impl Creature {
    pub fn new(kind: CreatureKind, pos: Pos, variant: u8) -> Self {
        Self {
            kind,
            pos,
            health: kind.initial_health(),
            variant,
            facing: Direction::Down,
            timer: 0,
        }
    }

    pub const PLANT_RIPE_AFTER: u32 = 300;

    pub fn is_ripe(&self) -> bool {
        self.kind == CreatureKind::Plant && self.timer > Self::PLANT_RIPE_AFTER
    }
}

/// Player vitals, inventory and internal life-stat counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerState {
    pub pos: Pos,
    pub facing: Direction,
    pub inventory: [u8; Item::COUNT],
    pub sleeping: bool,
    pub(crate) hunger: i32,
    pub(crate) thirst: i32,
    pub(crate) fatigue: i32,
    pub(crate) recover: i32,
}

impl PlayerState {
    pub fn new(pos: Pos) -> Self {
        let mut inventory = [0; Item::COUNT];
        for v in Item::VITALS {
            inventory[v.index()] = Item::MAX;
        }
        Self {
            pos,
            facing: Direction::Down,
            inventory,
            sleeping: false,
            hunger: 0,
            thirst: 0,
            fatigue: 0,
            recover: 0,
        }
    }

    pub fn get(&self, item: Item) -> u8 {
        self.inventory[item.index()]
    }

    pub fn health(&self) -> u8 {
        self.get(Item::Health)
    }

    pub fn is_dead(&self) -> bool {
        self.health() == 0
    }

    pub fn add(&mut self, item: Item, amount: u8) {
        let slot = &mut self.inventory[item.index()];
        *slot = slot.saturating_add(amount).min(Item::MAX);
    }

    pub fn remove(&mut self, item: Item, amount: u8) {
        let slot = &mut self.inventory[item.index()];
        *slot = slot.saturating_sub(amount);
    }

    pub fn set(&mut self, item: Item, value: u8) {
        self.inventory[item.index()] = value.min(Item::MAX);
    }
}

/// Per-kind population bookkeeping used by the spawn balancer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub targets: CountTargets,
    pub max_arrows: usize,
    pub balance: bool,
}

impl PopulationConfig {
    pub fn disabled() -> Self {
        Self {
            targets: CountTargets::none(),
            max_arrows: 0,
            balance: false,
        }
    }

    /// Upper bound on the concurrent population of `kind`.
    pub fn max_of(&self, kind: CreatureKind) -> usize {
        match kind {
            CreatureKind::Cow => self.targets.cow.ceil() as usize,
            CreatureKind::Zombie => self.targets.zombie.ceil() as usize,
            CreatureKind::Skeleton => self.targets.skeleton.ceil() as usize,
            CreatureKind::Arrow => self.max_arrows,
            CreatureKind::Plant => usize::MAX,
        }
    }

    pub fn target_of(&self, kind: CreatureKind) -> f64 {
        match kind {
            CreatureKind::Cow => self.targets.cow,
            CreatureKind::Zombie => self.targets.zombie,
            CreatureKind::Skeleton => self.targets.skeleton,
            _ => 0.0,
        }
    }
}

/// Complete simulation state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub map: WorldMap,
    pub player: PlayerState,
    creatures: Vec<Option<Creature>>,
    free_slots: Vec<usize>,
    occupancy: Vec<u32>,
    counts: [usize; 5],
    pub step_count: u32,
    /// Phase of the day/night cycle in [0, 1).
    pub daylight: f64,
    pub episode_cap: u32,
    pub population: PopulationConfig,
    pub appearance: AppearanceDist,
    pub rng: RngStreams,
}

impl WorldState {
    pub fn new(
        map: WorldMap,
        player: PlayerState,
        creatures: Vec<Creature>,
        episode_cap: u32,
        population: PopulationConfig,
        appearance: AppearanceDist,
        seed: u64,
    ) -> Self {
        let n = map.cells().len();
        let mut state = Self {
            map,
            player,
            creatures: Vec::new(),
            free_slots: Vec::new(),
            occupancy: vec![0; n],
            counts: [0; 5],
            step_count: 0,
            daylight: 0.0,
            episode_cap,
            population,
            appearance,
            rng: RngStreams::new(seed),
        };
        state.daylight = crate::sim::daylight_phase(0);
        for c in creatures {
            state.add_creature(c);
        }
        state
    }

    pub fn creature_at(&self, pos: Pos) -> Option<&Creature> {
        if !self.map.in_bounds(pos) {
            return None;
        }
        match self.occupancy[self.map.index(pos)] {
            0 => None,
            id => self.creatures[id as usize - 1].as_ref(),
        }
    }

    pub(crate) fn creature_id_at(&self, pos: Pos) -> Option<usize> {
        if !self.map.in_bounds(pos) {
            return None;
        }
        match self.occupancy[self.map.index(pos)] {
            0 => None,
            id => Some(id as usize - 1),
        }
    }

    pub fn is_free(&self, pos: Pos) -> bool {
        self.map.in_bounds(pos) && self.creature_at(pos).is_none() && pos != self.player.pos
    }

    pub fn creatures(&self) -> impl Iterator<Item = &Creature> {
        self.creatures.iter().flatten()
    }

    pub fn creature_count(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count_of(&self, kind: CreatureKind) -> usize {
        self.counts[kind as usize]
    }

    pub(crate) fn creature(&self, id: usize) -> Option<&Creature> {
        self.creatures.get(id).and_then(|c| c.as_ref())
    }

    pub(crate) fn creature_mut(&mut self, id: usize) -> Option<&mut Creature> {
        self.creatures.get_mut(id).and_then(|c| c.as_mut())
    }

    pub(crate) fn slot_ids(&self) -> Vec<usize> {
        self.creatures
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|_| i))
            .collect()
    }

    /// Inserts a creature at a free cell. Returns its id.
    pub fn add_creature(&mut self, creature: Creature) -> usize {
        debug_assert!(self.creature_at(creature.pos).is_none());
        let cell = self.map.index(creature.pos);
        self.counts[creature.kind as usize] += 1;
        let id = match self.free_slots.pop() {
            Some(id) => {
                self.creatures[id] = Some(creature);
                id
            }
            None => {
                self.creatures.push(Some(creature));
                self.creatures.len() - 1
            }
        };
        self.occupancy[cell] = id as u32 + 1;
        id
    }

    pub(crate) fn remove_creature(&mut self, id: usize) -> Option<Creature> {
        let creature = self.creatures.get_mut(id)?.take()?;
        let cell = self.map.index(creature.pos);
        self.occupancy[cell] = 0;
        self.counts[creature.kind as usize] -= 1;
        self.free_slots.push(id);
        Some(creature)
    }

    pub(crate) fn move_creature(&mut self, id: usize, to: Pos) {
        let from = self.creatures[id].as_ref().expect("live creature").pos;
        let (a, b) = (self.map.index(from), self.map.index(to));
        self.occupancy[a] = 0;
        self.occupancy[b] = id as u32 + 1;
        self.creatures[id].as_mut().expect("live creature").pos = to;
    }

    pub fn is_terminal(&self) -> bool {
        self.player.is_dead() || self.step_count >= self.episode_cap
    }

    /// Canonical bytes of the observable state, used for replay comparison.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut out = self.map.to_bytes();
        out.extend_from_slice(&self.player.pos.0.to_le_bytes());
        out.extend_from_slice(&self.player.pos.1.to_le_bytes());
        out.push(self.player.facing as u8);
        out.extend_from_slice(&self.player.inventory);
        out.push(self.player.sleeping as u8);
        for v in [self.player.hunger, self.player.thirst, self.player.fatigue, self.player.recover] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.step_count.to_le_bytes());
        for c in self.creatures() {
            out.push(c.kind as u8);
            out.extend_from_slice(&c.pos.0.to_le_bytes());
            out.extend_from_slice(&c.pos.1.to_le_bytes());
            out.extend_from_slice(&c.health.to_le_bytes());
            out.push(c.variant);
            out.push(c.facing as u8);
            out.extend_from_slice(&c.timer.to_le_bytes());
        }
        out
    }
}
