//! Cell materials, inventory items, directions and the action set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Contents of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Material {
    Water,
    Grass,
    Stone,
    Path,
    Sand,
    Tree,
    Lava,
    Coal,
    Iron,
    Diamond,
    Table,
    Furnace,
}

impl Material {
    pub const ALL: [Material; 12] = [
        Material::Water,
        Material::Grass,
        Material::Stone,
        Material::Path,
        Material::Sand,
        Material::Tree,
        Material::Lava,
        Material::Coal,
        Material::Iron,
        Material::Diamond,
        Material::Table,
        Material::Furnace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Material::Water => "water",
            Material::Grass => "grass",
            Material::Stone => "stone",
            Material::Path => "path",
            Material::Sand => "sand",
            Material::Tree => "tree",
            Material::Lava => "lava",
            Material::Coal => "coal",
            Material::Iron => "iron",
            Material::Diamond => "diamond",
            Material::Table => "table",
            Material::Furnace => "furnace",
        }
    }

    /// Cells creatures and the player can stand on.
    pub fn is_walkable(self) -> bool {
        matches!(self, Material::Grass | Material::Sand | Material::Path)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Material {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Material::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::UnknownMaterial(s.to_string()))
    }
}

/// Everything the player can hold: the four vitals followed by resources, tools and weapons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Item {
    Health,
    Food,
    Drink,
    Energy,
    Sapling,
    Wood,
    Stone,
    Coal,
    Iron,
    Diamond,
    WoodPickaxe,
    StonePickaxe,
    IronPickaxe,
    WoodSword,
    StoneSword,
    IronSword,
}

impl Item {
    pub const COUNT: usize = 16;
    pub const MAX: u8 = 9;

    pub const ALL: [Item; 16] = [
        Item::Health,
        Item::Food,
        Item::Drink,
        Item::Energy,
        Item::Sapling,
        Item::Wood,
        Item::Stone,
        Item::Coal,
        Item::Iron,
        Item::Diamond,
        Item::WoodPickaxe,
        Item::StonePickaxe,
        Item::IronPickaxe,
        Item::WoodSword,
        Item::StoneSword,
        Item::IronSword,
    ];

    pub const VITALS: [Item; 4] = [Item::Health, Item::Food, Item::Drink, Item::Energy];

    pub fn name(self) -> &'static str {
        match self {
            Item::Health => "health",
            Item::Food => "food",
            Item::Drink => "drink",
            Item::Energy => "energy",
            Item::Sapling => "sapling",
            Item::Wood => "wood",
            Item::Stone => "stone",
            Item::Coal => "coal",
            Item::Iron => "iron",
            Item::Diamond => "diamond",
            Item::WoodPickaxe => "wood_pickaxe",
            Item::StonePickaxe => "stone_pickaxe",
            Item::IronPickaxe => "iron_pickaxe",
            Item::WoodSword => "wood_sword",
            Item::StoneSword => "stone_sword",
            Item::IronSword => "iron_sword",
        }
    }

    pub fn is_vital(self) -> bool {
        (self as usize) < 4
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Item {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Item::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown item `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

/// The 17 discrete player actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Action {
    Noop,
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    Do,
    Sleep,
    PlaceStone,
    PlaceTable,
    PlaceFurnace,
    PlacePlant,
    MakeWoodPickaxe,
    MakeStonePickaxe,
    MakeIronPickaxe,
    MakeWoodSword,
    MakeStoneSword,
    MakeIronSword,
}

impl Action {
    pub const COUNT: usize = 17;

    pub const ALL: [Action; 17] = [
        Action::Noop,
        Action::MoveUp,
        Action::MoveDown,
        Action::MoveLeft,
        Action::MoveRight,
        Action::Do,
        Action::Sleep,
        Action::PlaceStone,
        Action::PlaceTable,
        Action::PlaceFurnace,
        Action::PlacePlant,
        Action::MakeWoodPickaxe,
        Action::MakeStonePickaxe,
        Action::MakeIronPickaxe,
        Action::MakeWoodSword,
        Action::MakeStoneSword,
        Action::MakeIronSword,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Noop => "noop",
            Action::MoveUp => "move_up",
            Action::MoveDown => "move_down",
            Action::MoveLeft => "move_left",
            Action::MoveRight => "move_right",
            Action::Do => "do",
            Action::Sleep => "sleep",
            Action::PlaceStone => "place_stone",
            Action::PlaceTable => "place_table",
            Action::PlaceFurnace => "place_furnace",
            Action::PlacePlant => "place_plant",
            Action::MakeWoodPickaxe => "make_wood_pickaxe",
            Action::MakeStonePickaxe => "make_stone_pickaxe",
            Action::MakeIronPickaxe => "make_iron_pickaxe",
            Action::MakeWoodSword => "make_wood_sword",
            Action::MakeStoneSword => "make_stone_sword",
            Action::MakeIronSword => "make_iron_sword",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::MoveUp => Some(Direction::Up),
            Action::MoveDown => Some(Direction::Down),
            Action::MoveLeft => Some(Direction::Left),
            Action::MoveRight => Some(Direction::Right),
            _ => None,
        }
    }

    /// Name of the placed object for `place_*` actions.
    pub fn placed(self) -> Option<&'static str> {
        match self {
            Action::PlaceStone => Some("stone"),
            Action::PlaceTable => Some("table"),
            Action::PlaceFurnace => Some("furnace"),
            Action::PlacePlant => Some("plant"),
            _ => None,
        }
    }

    /// Crafted tool for `make_*` actions.
    pub fn crafted(self) -> Option<Item> {
        match self {
            Action::MakeWoodPickaxe => Some(Item::WoodPickaxe),
            Action::MakeStonePickaxe => Some(Item::StonePickaxe),
            Action::MakeIronPickaxe => Some(Item::IronPickaxe),
            Action::MakeWoodSword => Some(Item::WoodSword),
            Action::MakeStoneSword => Some(Item::StoneSword),
            Action::MakeIronSword => Some(Item::IronSword),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown action `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_space_has_seventeen_entries() {
        assert_eq!(Action::ALL.len(), 17);
        let moves = Action::ALL.iter().filter(|a| a.direction().is_some()).count();
        assert_eq!(moves, 4);
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(a.name().parse::<Action>().unwrap(), *a);
        }
        assert!("jump".parse::<Action>().is_err());
    }

    #[test]
    fn material_names_round_trip() {
        for m in Material::ALL {
            assert_eq!(m.name().parse::<Material>().unwrap(), m);
        }
    }
}
