//! Wire protocol of the play server. Every message is one JSON text frame
//! with a `kind` field.
//!
//! Client to server: `hello`, `act`, `stats`.
//! Server to client: `hello`, `frame`, `stats`, `done`, `error`.
//!
//! A session answers `hello` with `hello` plus the reset frame, and every
//! applied `act` with exactly one `frame`. When an act ends the episode the
//! server follows its frame with `done`, `stats` and the next episode's reset
//! frame, so a transcript always has `frames = acts + resets`.

use std::collections::BTreeMap;

use base64::Engine;
use crafter_core::{Achievement, Action, EnvSpec, Item, Observation};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The client chooses every action.
    #[default]
    Human,
    /// The server's policy acts; each client `act` (without an action)
    /// advances one step.
    Spectate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        mode: Mode,
        /// Resume a paused session instead of starting a new one.
        #[serde(default)]
        session: Option<String>,
    },
    Act {
        #[serde(default)]
        action: Option<String>,
    },
    Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vitals {
    pub health: u8,
    pub food: u8,
    pub drink: u8,
    pub energy: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Frames sent in this session so far, this one included.
    pub frame: u64,
    pub episode: u64,
    pub step: u32,
    /// First frame of an episode.
    pub reset: bool,
    /// Re-sent after a paused session is resumed.
    #[serde(default)]
    pub resumed: bool,
    pub width: u32,
    pub height: u32,
    /// Row-major RGB bytes, base64.
    pub pixels: String,
    pub action: Option<String>,
    pub reward: f64,
    pub episode_reward: f64,
    pub done: bool,
    pub vitals: Vitals,
    pub inventory: BTreeMap<String, u8>,
    /// Achievements unlocked so far this episode, roster order.
    pub unlocked: Vec<String>,
    /// Achievements unlocked by this step.
    pub new_unlocks: Vec<String>,
    /// Crafter score of the session, counting the current episode.
    pub score: f64,
    pub daylight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        session: String,
        mode: Mode,
        preset: Option<String>,
        seed: u64,
        spec: EnvSpec,
        actions: Vec<String>,
        achievements: Vec<String>,
    },
    Frame(Frame),
    Stats {
        episodes: u64,
        score: f64,
        /// Success rate in percent per achievement over finished episodes.
        rates: BTreeMap<String, f64>,
    },
    Done {
        episode: u64,
        length: u32,
        reward: f64,
        achievements: Vec<String>,
    },
    Error {
        message: String,
    },
}

pub fn action_names() -> Vec<String> {
    Action::ALL.iter().map(|a| a.name().to_string()).collect()
}

pub fn achievement_names() -> Vec<String> {
    Achievement::ALL.iter().map(|a| a.name().to_string()).collect()
}

pub fn parse_action(name: &str) -> Option<Action> {
    Action::ALL.into_iter().find(|a| a.name() == name)
}

pub fn encode_pixels(obs: &Observation) -> String {
    base64::engine::general_purpose::STANDARD.encode(&obs.pixels)
}

pub fn decode_pixels(text: &str) -> Option<Vec<u8>> {
    base64::engine::general_purpose::STANDARD.decode(text).ok()
}

pub fn inventory_map(inventory: &[u8; Item::COUNT]) -> BTreeMap<String, u8> {
    Item::ALL
        .iter()
        .filter(|i| !matches!(i, Item::Health | Item::Food | Item::Drink | Item::Energy))
        .map(|i| (i.name().to_string(), inventory[*i as usize]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_str(r#"{"kind":"act","action":"do"}"#).unwrap();
        assert_eq!(m, ClientMessage::Act { action: Some("do".into()) });
        let m: ClientMessage = serde_json::from_str(r#"{"kind":"hello"}"#).unwrap();
        assert!(matches!(m, ClientMessage::Hello { mode: Mode::Human, .. }));
        let m: ClientMessage = serde_json::from_str(r#"{"kind":"hello","mode":"spectate","seed":4}"#).unwrap();
        assert!(matches!(m, ClientMessage::Hello { mode: Mode::Spectate, seed: Some(4), .. }));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"kind":"teleport"}"#).is_err());
        assert!(serde_json::from_str::<ClientMessage>(r#"{"action":"do"}"#).is_err());
        assert!(serde_json::from_str::<ClientMessage>(r#"{"kind":"act","action":"do","x":1}"#).is_err());
    }

    #[test]
    fn seventeen_action_names() {
        let names = action_names();
        assert_eq!(names.len(), 17);
        for n in &names {
            assert!(parse_action(n).is_some());
        }
        assert!(parse_action("jump").is_none());
        assert_eq!(achievement_names().len(), 22);
    }

    #[test]
    fn pixels_round_trip() {
        let mut obs = Observation::blank();
        obs.pixels[5] = 200;
        assert_eq!(decode_pixels(&encode_pixels(&obs)).unwrap(), obs.pixels);
    }

    #[test]
    fn server_kinds_are_tagged() {
        let m = ServerMessage::Error { message: "x".into() };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["kind"], "error");
    }
}
