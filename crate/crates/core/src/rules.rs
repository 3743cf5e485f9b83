//! Declarative interaction and crafting rules loaded from a TOML document.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{CoreError, Result};
use crate::material::{Item, Material};

/// The rules document shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../assets/rules.toml");

pub const RULES_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRules {
    version: u32,
    nearby_radius: i32,
    #[serde(default)]
    collect: BTreeMap<String, RawCollect>,
    #[serde(default)]
    place: BTreeMap<String, RawPlace>,
    #[serde(default)]
    make: BTreeMap<String, RawMake>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCollect {
    #[serde(default)]
    require: BTreeMap<String, u8>,
    receive: BTreeMap<String, u8>,
    leaves: String,
    probability: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlace {
    uses: BTreeMap<String, u8>,
    #[serde(rename = "where")]
    target: Vec<String>,
    #[serde(default)]
    nearby: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMake {
    uses: BTreeMap<String, u8>,
    #[serde(default)]
    nearby: Vec<String>,
    gives: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectRule {
    pub require: Vec<(Item, u8)>,
    pub receive: Vec<(Item, u8)>,
    pub leaves: Material,
    pub probability: f64,
}

/// What a `place_*` action puts into the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placeable {
    Stone,
    Table,
    Furnace,
    Plant,
}

impl Placeable {
    pub const ALL: [Placeable; 4] = [
        Placeable::Stone,
        Placeable::Table,
        Placeable::Furnace,
        Placeable::Plant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeable::Stone => "stone",
            Placeable::Table => "table",
            Placeable::Furnace => "furnace",
            Placeable::Plant => "plant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceRule {
    pub uses: Vec<(Item, u8)>,
    pub target: Vec<Material>,
    pub nearby: Vec<Material>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MakeRule {
    pub uses: Vec<(Item, u8)>,
    pub nearby: Vec<Material>,
    pub gives: u8,
}

/// Typed rule set.
#[derive(Debug, Clone, PartialEq)]
pub struct Rules {
    pub nearby_radius: i32,
    collect: Vec<Option<CollectRule>>,
    place: Vec<Option<PlaceRule>>,
    make: Vec<(Item, MakeRule)>,
}

fn items(map: &BTreeMap<String, u8>) -> Result<Vec<(Item, u8)>> {
    map.iter()
        .map(|(k, v)| Ok((k.parse::<Item>()?, *v)))
        .collect()
}

fn materials(list: &[String]) -> Result<Vec<Material>> {
    list.iter().map(|s| s.parse::<Material>()).collect()
}

impl Rules {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawRules = toml::from_str(text)?;
        if raw.version != RULES_VERSION {
            return Err(CoreError::Config(format!(
                "unsupported rules version {} (expected {RULES_VERSION})",
                raw.version
            )));
        }
        if raw.nearby_radius < 0 {
            return Err(CoreError::Config("nearby_radius must be non-negative".into()));
        }
        let mut collect = vec![None; Material::ALL.len()];
        for (name, rule) in &raw.collect {
            let material: Material = name.parse()?;
            let probability = rule.probability.unwrap_or(1.0);
            if !(0.0..=1.0).contains(&probability) {
                return Err(CoreError::Config(format!(
                    "collect.{name}: probability {probability} outside [0, 1]"
                )));
            }
            collect[material.index()] = Some(CollectRule {
                require: items(&rule.require)?,
                receive: items(&rule.receive)?,
                leaves: rule.leaves.parse()?,
                probability,
            });
        }
        let mut place = vec![None; Placeable::ALL.len()];
        for (name, rule) in &raw.place {
            let which = Placeable::ALL
                .into_iter()
                .position(|p| p.name() == name)
                .ok_or_else(|| CoreError::Config(format!("unknown placeable `{name}`")))?;
            place[which] = Some(PlaceRule {
                uses: items(&rule.uses)?,
                target: materials(&rule.target)?,
                nearby: materials(&rule.nearby)?,
            });
        }
        let mut make = Vec::new();
        for (name, rule) in &raw.make {
            let tool: Item = name.parse()?;
            make.push((
                tool,
                MakeRule {
                    uses: items(&rule.uses)?,
                    nearby: materials(&rule.nearby)?,
                    gives: rule.gives.unwrap_or(1),
                },
            ));
        }
        Ok(Self {
            nearby_radius: raw.nearby_radius,
            collect,
            place,
            make,
        })
    }

    pub fn collect(&self, material: Material) -> Option<&CollectRule> {
        self.collect[material.index()].as_ref()
    }

    pub fn place(&self, what: Placeable) -> Option<&PlaceRule> {
        self.place[what as usize].as_ref()
    }

    pub fn make(&self, tool: Item) -> Option<&MakeRule> {
        self.make.iter().find(|(t, _)| *t == tool).map(|(_, r)| r)
    }
}

impl Default for Rules {
    fn default() -> Self {
        Rules::parse(DEFAULT_RULES).expect("shipped rules are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_rules_parse() {
        let rules = Rules::default();
        assert_eq!(rules.place(Placeable::Table).unwrap().uses, vec![(Item::Wood, 2)]);
        let iron = rules.make(Item::IronPickaxe).unwrap();
        assert_eq!(iron.nearby, vec![Material::Table, Material::Furnace]);
        assert_eq!(iron.uses.len(), 3);
        assert_eq!(
            rules.collect(Material::Stone).unwrap().require,
            vec![(Item::WoodPickaxe, 1)]
        );
        assert!(rules.collect(Material::Lava).is_none());
    }

    #[test]
    fn overrides_are_one_line_changes() {
        let text = DEFAULT_RULES.replace("uses = { wood = 2 }", "uses = { wood = 1 }");
        let rules = Rules::parse(&text).unwrap();
        assert_eq!(rules.place(Placeable::Table).unwrap().uses, vec![(Item::Wood, 1)]);
    }

    #[test]
    fn bad_documents_rejected() {
        assert!(Rules::parse(&DEFAULT_RULES.replace("version = 1", "version = 2")).is_err());
        assert!(Rules::parse(&DEFAULT_RULES.replace("leaves = \"path\"", "leaves = \"cheese\"")).is_err());
        assert!(Rules::parse("version = 1\nnearby_radius = 1\nbogus = 3\n").is_err());
    }
}
