use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::material::Item;

/// The 22 achievements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Achievement {
    CollectWood,
    CollectStone,
    CollectCoal,
    CollectIron,
    CollectDiamond,
    CollectDrink,
    CollectSapling,
    EatCow,
    EatPlant,
    DefeatZombie,
    DefeatSkeleton,
    MakeWoodPickaxe,
    MakeStonePickaxe,
    MakeIronPickaxe,
    MakeWoodSword,
    MakeStoneSword,
    MakeIronSword,
    PlaceStone,
    PlaceTable,
    PlaceFurnace,
    PlacePlant,
    WakeUp,
}

impl Achievement {
    pub const COUNT: usize = 22;

    pub const ALL: [Achievement; 22] = [
        Achievement::CollectWood,
        Achievement::CollectStone,
        Achievement::CollectCoal,
        Achievement::CollectIron,
        Achievement::CollectDiamond,
        Achievement::CollectDrink,
        Achievement::CollectSapling,
        Achievement::EatCow,
        Achievement::EatPlant,
        Achievement::DefeatZombie,
        Achievement::DefeatSkeleton,
        Achievement::MakeWoodPickaxe,
        Achievement::MakeStonePickaxe,
        Achievement::MakeIronPickaxe,
        Achievement::MakeWoodSword,
        Achievement::MakeStoneSword,
        Achievement::MakeIronSword,
        Achievement::PlaceStone,
        Achievement::PlaceTable,
        Achievement::PlaceFurnace,
        Achievement::PlacePlant,
        Achievement::WakeUp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Achievement::CollectWood => "collect_wood",
            Achievement::CollectStone => "collect_stone",
            Achievement::CollectCoal => "collect_coal",
            Achievement::CollectIron => "collect_iron",
            Achievement::CollectDiamond => "collect_diamond",
            Achievement::CollectDrink => "collect_drink",
            Achievement::CollectSapling => "collect_sapling",
            Achievement::EatCow => "eat_cow",
            Achievement::EatPlant => "eat_plant",
            Achievement::DefeatZombie => "defeat_zombie",
            Achievement::DefeatSkeleton => "defeat_skeleton",
            Achievement::MakeWoodPickaxe => "make_wood_pickaxe",
            Achievement::MakeStonePickaxe => "make_stone_pickaxe",
            Achievement::MakeIronPickaxe => "make_iron_pickaxe",
            Achievement::MakeWoodSword => "make_wood_sword",
            Achievement::MakeStoneSword => "make_stone_sword",
            Achievement::MakeIronSword => "make_iron_sword",
            Achievement::PlaceStone => "place_stone",
            Achievement::PlaceTable => "place_table",
            Achievement::PlaceFurnace => "place_furnace",
            Achievement::PlacePlant => "place_plant",
            Achievement::WakeUp => "wake_up",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// `collect_<item>` for a collected item, if that is an achievement.
    pub fn for_collected(item: Item) -> Option<Achievement> {
        Some(match item {
            Item::Wood => Achievement::CollectWood,
            Item::Stone => Achievement::CollectStone,
            Item::Coal => Achievement::CollectCoal,
            Item::Iron => Achievement::CollectIron,
            Item::Diamond => Achievement::CollectDiamond,
            Item::Drink => Achievement::CollectDrink,
            Item::Sapling => Achievement::CollectSapling,
            _ => return None,
        })
    }

    pub fn for_made(tool: Item) -> Option<Achievement> {
        Some(match tool {
            Item::WoodPickaxe => Achievement::MakeWoodPickaxe,
            Item::StonePickaxe => Achievement::MakeStonePickaxe,
            Item::IronPickaxe => Achievement::MakeIronPickaxe,
            Item::WoodSword => Achievement::MakeWoodSword,
            Item::StoneSword => Achievement::MakeStoneSword,
            Item::IronSword => Achievement::MakeIronSword,
            _ => return None,
        })
    }
}

impl fmt::Display for Achievement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Achievement {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Achievement::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown achievement `{s}`")))
    }
}

/// Compact set of achievements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AchievementSet(u32);

impl AchievementSet {
    pub fn insert(&mut self, a: Achievement) -> bool {
        let bit = 1 << a.index();
        let fresh = self.0 & bit == 0;
        self.0 |= bit;
        fresh
    }

    pub fn contains(&self, a: Achievement) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: AchievementSet) -> AchievementSet {
        AchievementSet(self.0 | other.0)
    }

    pub fn difference(self, other: AchievementSet) -> AchievementSet {
        AchievementSet(self.0 & !other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = Achievement> + '_ {
        Achievement::ALL.into_iter().filter(|a| self.contains(*a))
    }

    pub fn all() -> AchievementSet {
        AchievementSet((1 << Achievement::COUNT) - 1)
    }
}

impl FromIterator<Achievement> for AchievementSet {
    fn from_iter<I: IntoIterator<Item = Achievement>>(iter: I) -> Self {
        let mut set = AchievementSet::default();
        for a in iter {
            set.insert(a);
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_two_distinct_names() {
        let names: std::collections::HashSet<_> = Achievement::ALL.iter().map(|a| a.name()).collect();
        assert_eq!(names.len(), 22);
        for a in Achievement::ALL {
            assert_eq!(a.name().parse::<Achievement>().unwrap(), a);
        }
    }

    #[test]
    fn set_operations() {
        let mut s = AchievementSet::default();
        assert!(s.insert(Achievement::WakeUp));
        assert!(!s.insert(Achievement::WakeUp));
        assert_eq!(s.len(), 1);
        assert_eq!(AchievementSet::all().len(), 22);
        assert_eq!(AchievementSet::all().difference(s).len(), 21);
    }
}
