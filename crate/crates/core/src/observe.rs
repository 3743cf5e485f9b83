//! Rendering of world state into the 64x64x3 agent observation.
//!
//! Layout: a 9x7 tile window of 7 px tiles occupies rows 3..52 and columns
//! 0..63. Rows 55..64 hold the inventory strip: 16 slots of 4 px, one per
//! [`Item`] in index order. Slot `i` draws its count as a vertical bar of
//! `count` lit pixels in columns `4i..4i+3`, growing upward from row 63;
//! column `4i+3` stays dark as a separator.

use std::path::Path;

use image::RgbImage;

use crate::error::Result;
use crate::material::{Direction, Item, Material};
use crate::ood::EnvSpec;
use crate::sim::{brightness, is_night};
use crate::world::{CreatureKind, WorldState};

pub const OBS_SIZE: usize = 64;
pub const TILE: usize = 7;
pub const VIEW_W: i32 = 9;
pub const VIEW_H: i32 = 7;
pub const MAP_TOP: usize = 3;
pub const STRIP_TOP: usize = 55;
pub const STRIP_HEIGHT: usize = 9;
pub const SLOT_WIDTH: usize = 4;

type Rgb = [u8; 3];

/// A 64x64x3 row-major RGB frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub pixels: Vec<u8>,
}

impl Observation {
    pub const LEN: usize = OBS_SIZE * OBS_SIZE * 3;

    pub fn blank() -> Self {
        Self {
            pixels: vec![0; Self::LEN],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * OBS_SIZE + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * OBS_SIZE + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(OBS_SIZE as u32, OBS_SIZE as u32, self.pixels.clone()).expect("fixed size")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path)?;
        Ok(())
    }
}

/// A 7x7 tile; `None` pixels are transparent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile(pub [[Option<Rgb>; TILE]; TILE]);

/// Anything that has a tile in the atlas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sprite {
    Material(Material, u8),
    Creature(CreatureKind, u8),
    RipePlant,
    Player(Direction, bool),
}

fn parse_tile(rows: [&str; TILE], palette: &[(char, Rgb)]) -> Tile {
    let mut t = [[None; TILE]; TILE];
    for (y, row) in rows.iter().enumerate() {
        for (x, ch) in row.chars().enumerate() {
            t[y][x] = palette.iter().find(|(c, _)| *c == ch).map(|(_, rgb)| *rgb);
        }
    }
    Tile(t)
}

/// Recolors an object's palette for appearance variant 2..4.
pub fn recolor(c: Rgb, variant: u8) -> Rgb {
    let scale = |v: u8, f: f32| (v as f32 * f).min(255.0) as u8;
    let [r, g, b] = c;
    match variant {
        2 => [scale(r, 0.5), scale(g, 0.8), scale(b, 1.6).saturating_add(30)],
        3 => [scale(r, 1.5).saturating_add(30), scale(g, 0.9), scale(b, 0.4)],
        4 => [scale(r, 1.2).saturating_add(20), scale(g, 0.3), scale(b, 1.3).saturating_add(20)],
        _ => c,
    }
}

const GRASS: Rgb = [90, 168, 70];
const GRASS_LIGHT: Rgb = [110, 190, 84];
const STONE: Rgb = [118, 118, 118];
const STONE_DARK: Rgb = [92, 92, 92];

fn material_tile(m: Material, variant: u8) -> Tile {
    let v = |c: Rgb| recolor(c, variant);
    let stone = [('s', v(STONE)), ('d', v(STONE_DARK))];
    match m {
        Material::Water => parse_tile(
            ["wwwwwww", "wwlwwww", "wwwwwlw", "wwwwwww", "wlwwwww", "wwwwlww", "wwwwwww"],
            &[('w', [60, 104, 214]), ('l', [96, 140, 236])],
        ),
        Material::Grass => parse_tile(
            ["ggggggg", "gglgggg", "ggggglg", "ggggggg", "glggggg", "ggggglg", "ggggggg"],
            &[('g', GRASS), ('l', GRASS_LIGHT)],
        ),
        Material::Sand => parse_tile(
            ["sssssss", "ssdssss", "sssssds", "sssssss", "sdsssss", "ssssdss", "sssssss"],
            &[('s', [218, 204, 140]), ('d', [196, 180, 120])],
        ),
        Material::Path => parse_tile(
            ["ppppppp", "ppdpppp", "ppppppp", "pppppdp", "ppppppp", "pdppppp", "ppppppp"],
            &[('p', [176, 150, 112]), ('d', [150, 126, 92])],
        ),
        Material::Stone => parse_tile(["sssssss", "sdsssds", "sssssss", "ssdssss", "sssssds", "sdsssss", "sssssss"], &stone),
        Material::Tree => parse_tile(
            ["glllllg", "lLlllLl", "lllLlll", "lLlllLl", "glllllg", "gggtggg", "gggtggg"],
            &[('g', GRASS), ('l', v([34, 110, 40])), ('L', v([60, 140, 56])), ('t', [110, 72, 36])],
        ),
        Material::Lava => parse_tile(
            ["rrrrrrr", "royrrrr", "rrrrory", "rrrrrrr", "ryorrrr", "rrrrroy", "rrrrrrr"],
            &[('r', [222, 84, 24]), ('o', [246, 150, 40]), ('y', [250, 214, 80])],
        ),
        Material::Coal => parse_tile(
            ["sssssss", "skkssss", "skksskk", "ssssskk", "skkssss", "skksssd", "sssssss"],
            &[stone[0], stone[1], ('k', v([24, 24, 24]))],
        ),
        Material::Iron => parse_tile(
            ["sssssss", "siissss", "siissii", "sssssii", "siissss", "siisssd", "sssssss"],
            &[('s', STONE), ('d', STONE_DARK), ('i', [206, 154, 112])],
        ),
        Material::Diamond => parse_tile(
            ["sssssss", "sswssss", "swcwsss", "sswsscs", "ssssswc", "scsssss", "sssssss"],
            &[('s', STONE), ('w', [240, 250, 255]), ('c', [96, 220, 230])],
        ),
        Material::Table => parse_tile(
            ["ggggggg", "bbbbbbb", "bBBBBBb", "bbbbbbb", "gbgggbg", "gbgggbg", "ggggggg"],
            &[('g', GRASS), ('b', [130, 86, 44]), ('B', [166, 116, 64])],
        ),
        Material::Furnace => parse_tile(
            ["ddddddd", "dsssssd", "dsooosd", "dsoyosd", "dsooosd", "dsssssd", "ddddddd"],
            &[('d', [60, 60, 60]), ('s', [100, 100, 100]), ('o', [236, 120, 30]), ('y', [250, 210, 70])],
        ),
    }
}

fn creature_tile(kind: CreatureKind, variant: u8) -> Tile {
    let v = |c: Rgb| recolor(c, variant);
    match kind {
        CreatureKind::Cow => parse_tile(
            [".......", "..bb...", ".bwwbwb", "bwwbwwb", ".bwwwb.", ".b...b.", "......."],
            &[('b', v([70, 46, 30])), ('w', v([236, 232, 224]))],
        ),
        CreatureKind::Zombie => parse_tile(
            ["..ggg..", ".gkgkg.", "..ggg..", ".ccccc.", "g.ccc.g", "..c.c..", "..c.c.."],
            &[('g', v([80, 200, 90])), ('k', [20, 20, 20]), ('c', v([44, 84, 140]))],
        ),
        CreatureKind::Skeleton => parse_tile(
            ["..www..", ".wkwkw.", "..www..", "...w...", ".wwwww.", "...w...", "..w.w.."],
            &[('w', v([226, 226, 210])), ('k', [20, 20, 20])],
        ),
        CreatureKind::Arrow => parse_tile(
            [".......", ".......", ".......", "fsssssh", ".......", ".......", "......."],
            &[('f', [230, 230, 230]), ('s', [140, 100, 60]), ('h', [200, 200, 200])],
        ),
        CreatureKind::Plant => parse_tile(
            [".......", ".......", "...l...", "..lsl..", "...s...", "...s...", "......."],
            &[('l', [70, 200, 70]), ('s', [50, 130, 40])],
        ),
    }
}

fn ripe_plant_tile() -> Tile {
    parse_tile(
        ["...l...", "..lrl..", ".lrrrl.", "..lsl..", "...s...", "...s...", "......."],
        &[('l', [70, 200, 70]), ('r', [220, 40, 50]), ('s', [50, 130, 40])],
    )
}

fn player_tile(facing: Direction, sleeping: bool) -> Tile {
    let mut t = parse_tile(
        ["..hhh..", "..fff..", ".ccccc.", "f.ccc.f", "..ccc..", "..p.p..", "..p.p.."],
        &[('h', [90, 50, 20]), ('f', [240, 190, 150]), ('c', [200, 50, 50]), ('p', [40, 40, 120])],
    );
    let (x, y) = match facing {
        Direction::Up => (3, 0),
        Direction::Down => (3, 6),
        Direction::Left => (0, 3),
        Direction::Right => (6, 3),
    };
    t.0[y][x] = Some([255, 255, 0]);
    if sleeping {
        for row in t.0.iter_mut() {
            for c in row.iter_mut().flatten() {
                *c = [c[0] / 2, c[1] / 2, c[2] / 2 + 40];
            }
        }
    }
    t
}

/// Immutable lookup of every sprite.
#[derive(Debug, Clone)]
pub struct TextureAtlas {
    materials: Vec<Tile>,
    creatures: Vec<Tile>,
    ripe: Tile,
    players: Vec<Tile>,
}

const DIRECTIONS: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

impl TextureAtlas {
    pub fn new() -> Self {
        let materials = Material::ALL
            .iter()
            .flat_map(|m| (1..=4).map(move |v| material_tile(*m, v)))
            .collect();
        let creatures = CreatureKind::ALL
            .iter()
            .flat_map(|k| (1..=4).map(move |v| creature_tile(*k, v)))
            .collect();
        let players = DIRECTIONS
            .iter()
            .flat_map(|d| [false, true].map(|s| player_tile(*d, s)))
            .collect();
        Self {
            materials,
            creatures,
            ripe: ripe_plant_tile(),
            players,
        }
    }

    pub fn tile(&self, sprite: Sprite) -> &Tile {
        let v = |variant: u8| (variant.clamp(1, 4) - 1) as usize;
        match sprite {
            Sprite::Material(m, variant) => &self.materials[m.index() * 4 + v(variant)],
            Sprite::Creature(k, variant) => &self.creatures[k as usize * 4 + v(variant)],
            Sprite::RipePlant => &self.ripe,
            Sprite::Player(d, s) => {
                let di = DIRECTIONS.iter().position(|x| *x == d).expect("direction");
                &self.players[di * 2 + s as usize]
            }
        }
    }
}

impl Default for TextureAtlas {
    fn default() -> Self {
        Self::new()
    }
}

static ATLAS: std::sync::OnceLock<TextureAtlas> = std::sync::OnceLock::new();

pub fn atlas() -> &'static TextureAtlas {
    ATLAS.get_or_init(TextureAtlas::new)
}

/// Color of an item's bar in the inventory strip.
pub fn item_color(item: Item) -> Rgb {
    match item {
        Item::Health => [230, 40, 40],
        Item::Food => [230, 140, 40],
        Item::Drink => [50, 120, 240],
        Item::Energy => [240, 230, 60],
        Item::Sapling => [80, 200, 80],
        Item::Wood => [150, 100, 50],
        Item::Stone => [150, 150, 150],
        Item::Coal => [70, 70, 70],
        Item::Iron => [210, 160, 120],
        Item::Diamond => [200, 250, 255],
        Item::WoodPickaxe => [190, 140, 80],
        Item::StonePickaxe => [180, 180, 200],
        Item::IronPickaxe => [230, 200, 170],
        Item::WoodSword => [170, 110, 60],
        Item::StoneSword => [120, 120, 150],
        Item::IronSword => [250, 220, 200],
    }
}

/// Multiplier applied to map pixels for the time of day.
pub fn shade_factor(state: &WorldState) -> f64 {
    let mut f = 0.35 + 0.65 * brightness(state.daylight);
    if state.player.sleeping {
        f *= 0.5;
    }
    f
}

fn sprite_at(state: &WorldState, pos: (i32, i32)) -> (Sprite, Option<Sprite>) {
    let m = state.map.material(pos);
    let base = Sprite::Material(m, state.map.variant(pos));
    let over = if pos == state.player.pos {
        Some(Sprite::Player(state.player.facing, state.player.sleeping))
    } else {
        state.creature_at(pos).map(|c| {
            if c.is_ripe() {
                Sprite::RipePlant
            } else {
                Sprite::Creature(c.kind, c.variant)
            }
        })
    };
    (base, over)
}

fn blit(obs: &mut Observation, atlas: &TextureAtlas, x0: usize, y0: usize, sprite: Sprite, shade: f64) {
    let tile = atlas.tile(sprite);
    for (dy, row) in tile.0.iter().enumerate() {
        for (dx, px) in row.iter().enumerate() {
            if let Some(c) = px {
                let c = if shade < 1.0 {
                    c.map(|v| (v as f64 * shade) as u8)
                } else {
                    *c
                };
                obs.put(x0 + dx, y0 + dy, c);
            }
        }
    }
}

/// Renders the agent's view. Pure in `(state, spec)`.
pub fn render(state: &WorldState, spec: &EnvSpec) -> Observation {
    render_with(state, spec.show_inventory, atlas())
}

pub fn render_with(state: &WorldState, show_inventory: bool, atlas: &TextureAtlas) -> Observation {
    let mut obs = Observation::blank();
    let shade = shade_factor(state);
    let (px, py) = state.player.pos;
    for ty in 0..VIEW_H {
        for tx in 0..VIEW_W {
            let pos = (px - VIEW_W / 2 + tx, py - VIEW_H / 2 + ty);
            if !state.map.in_bounds(pos) {
                continue;
            }
            let (x0, y0) = (tx as usize * TILE, MAP_TOP + ty as usize * TILE);
            let (base, over) = sprite_at(state, pos);
            blit(&mut obs, atlas, x0, y0, base, shade);
            if let Some(s) = over {
                blit(&mut obs, atlas, x0, y0, s, shade);
            }
        }
    }
    if show_inventory {
        draw_inventory(&mut obs, state);
    }
    obs
}

fn draw_inventory(obs: &mut Observation, state: &WorldState) {
    for item in Item::ALL {
        let count = state.player.get(item) as usize;
        let x0 = item.index() * SLOT_WIDTH;
        let color = item_color(item);
        for k in 0..count.min(STRIP_HEIGHT) {
            let y = OBS_SIZE - 1 - k;
            for dx in 0..SLOT_WIDTH - 1 {
                obs.put(x0 + dx, y, color);
            }
        }
    }
}

/// Reads inventory counts back from a rendered strip.
pub fn decode_inventory(obs: &Observation) -> [u8; Item::COUNT] {
    let mut out = [0; Item::COUNT];
    for (i, slot) in out.iter_mut().enumerate() {
        let x = i * SLOT_WIDTH;
        *slot = (0..STRIP_HEIGHT)
            .take_while(|k| obs.pixel(x, OBS_SIZE - 1 - k) != [0, 0, 0])
            .count() as u8;
    }
    out
}

/// Whole-map render with `tile` px per cell (nearest-neighbor scaled).
pub fn render_full_map(state: &WorldState, tile: u32) -> RgbImage {
    let atlas = atlas();
    let (w, h) = (state.map.width(), state.map.height());
    let mut img = RgbImage::new(w * tile, h * tile);
    let night = is_night(state.daylight);
    for cy in 0..h as i32 {
        for cx in 0..w as i32 {
            let (base, over) = sprite_at(state, (cx, cy));
            for py in 0..tile {
                for px in 0..tile {
                    let sx = (px as usize * TILE) / tile as usize;
                    let sy = (py as usize * TILE) / tile as usize;
                    let mut c = atlas.tile(base).0[sy][sx].unwrap_or([0, 0, 0]);
                    if let Some(o) = over.and_then(|s| atlas.tile(s).0[sy][sx]) {
                        c = o;
                    }
                    if night {
                        c = c.map(|v| v / 2);
                    }
                    img.put_pixel(cx as u32 * tile + px, cy as u32 * tile + py, image::Rgb(c));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ood::AppearanceDist;
    use crate::world::{Creature, PlayerState, PopulationConfig, WorldMap};

    fn state() -> WorldState {
        WorldState::new(
            WorldMap::filled(20, 20, Material::Grass),
            PlayerState::new((10, 10)),
            vec![],
            100,
            PopulationConfig::disabled(),
            AppearanceDist::default(),
            0,
        )
    }

    #[test]
    fn inventory_round_trip() {
        let mut s = state();
        s.player.set(Item::Wood, 5);
        s.player.set(Item::Food, 3);
        let obs = render_with(&s, true, atlas());
        assert_eq!(decode_inventory(&obs), s.player.inventory);
    }

    #[test]
    fn hidden_inventory_strip_is_blank_and_map_unchanged() {
        let mut s = state();
        s.player.set(Item::Wood, 5);
        let on = render_with(&s, true, atlas());
        let off = render_with(&s, false, atlas());
        let strip = STRIP_TOP * OBS_SIZE * 3;
        assert!(off.pixels[strip..].iter().all(|&b| b == 0));
        assert_eq!(on.pixels[..strip], off.pixels[..strip]);
    }

    #[test]
    fn far_cells_do_not_matter() {
        let mut s = state();
        let a = render_with(&s, true, atlas());
        s.map.set((0, 0), Material::Lava);
        assert_eq!(a, render_with(&s, true, atlas()));
        s.map.set((14, 13), Material::Water);
        assert_ne!(a, render_with(&s, true, atlas()));
    }

    #[test]
    fn variant_tile_is_drawn() {
        let mut s = state();
        s.daylight = 0.5;
        s.add_creature(Creature::new(CreatureKind::Zombie, (11, 10), 3));
        let obs = render_with(&s, false, atlas());
        let tile = atlas().tile(Sprite::Creature(CreatureKind::Zombie, 3));
        let (x0, y0) = (5 * TILE, MAP_TOP + 3 * TILE);
        for (dy, row) in tile.0.iter().enumerate() {
            for (dx, px) in row.iter().enumerate() {
                if let Some(c) = px {
                    assert_eq!(obs.pixel(x0 + dx, y0 + dy), *c);
                }
            }
        }
    }

    #[test]
    fn variants_look_different() {
        for m in [Material::Tree, Material::Stone, Material::Coal] {
            let tiles: Vec<_> = (1..=4).map(|v| atlas().tile(Sprite::Material(m, v)).clone()).collect();
            for i in 0..4 {
                for j in i + 1..4 {
                    assert_ne!(tiles[i], tiles[j], "{m:?} {i} {j}");
                }
            }
        }
    }

    #[test]
    fn full_map_size() {
        let s = state();
        let img = render_full_map(&s, 4);
        assert_eq!(img.dimensions(), (80, 80));
    }
}
