//! Human-play server: a websocket endpoint driving environment sessions plus
//! static hosting of the browser client.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use crafter_agents::{Policy, RecurrentState, N_ACTIONS};
use crafter_core::env::episode_seed;
use crafter_core::{success_rates, Action, Env, EnvSpec, Item, Observation, StatsLog};
use crafter_core::scoring::score;
use crafter_nnet::ParamStore;
use crafter_ppo::dist;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::config::resolve_env;
use crate::error::{HarnessError, Result};
use crate::protocol::{
    achievement_names, action_names, encode_pixels, inventory_map, parse_action, ClientMessage, Frame, Mode,
    ServerMessage, Vitals, PROTOCOL_VERSION,
};

const FALLBACK_PAGE: &str = "<!doctype html><title>crafter</title><p>Play server running. \
Connect a client to <code>/ws</code>.</p>";

/// A policy that drives spectator sessions.
pub struct SpectatorPolicy {
    pub policy: Policy,
    pub store: ParamStore<f32>,
}

pub struct ServerConfig {
    pub spec: EnvSpec,
    pub seed: u64,
    pub stats_log: Option<StatsLog>,
    pub static_dir: Option<PathBuf>,
    pub spectator: Option<SpectatorPolicy>,
}

struct Session {
    env: Env,
    index: u64,
    seed: Option<u64>,
    mode: Mode,
    preset: Option<String>,
    episode: u64,
    frames: u64,
    connected: bool,
    rng: ChaCha8Rng,
    state: Option<RecurrentState<f32>>,
}

impl Session {
    fn episode_seed(&self, run_seed: u64) -> u64 {
        match self.seed {
            Some(s) => episode_seed(s, 0, self.episode),
            None => episode_seed(run_seed, self.index as usize, self.episode),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServerConfig>,
    sessions: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>>,
    next: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
            next: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Number of known sessions, connected or paused.
    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }
}

pub fn router(state: AppState) -> Router {
    let app = Router::new().route("/ws", get(ws_handler));
    let app = match &state.config.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(FALLBACK_PAGE) })),
    };
    app.with_state(state)
}

/// Serves until the task is dropped.
pub async fn serve(listener: TcpListener, config: ServerConfig) -> Result<()> {
    axum::serve(listener, router(AppState::new(config)))
        .await
        .map_err(|e| HarnessError::Runtime(e.to_string()))
}

/// Binds `addr` and returns the listener with its resolved address.
pub async fn bind(addr: &str) -> Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| HarnessError::Runtime(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

fn error(message: impl Into<String>) -> ServerMessage {
    ServerMessage::Error {
        message: message.into(),
    }
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let mut current: Option<(String, Arc<tokio::sync::Mutex<Session>>)> = None;
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            Message::Binary(_) => {
                if !send(&mut socket, &error("binary messages are not supported")).await {
                    break;
                }
                continue;
            }
            _ => continue,
        };
        let replies = match serde_json::from_str::<ClientMessage>(&text) {
            Err(e) => vec![error(format!("malformed message: {e}"))],
            Ok(msg) => handle(&state, &mut current, msg).await,
        };
        for r in replies {
            if !send(&mut socket, &r).await {
                break;
            }
        }
    }
    if let Some((_, session)) = current {
        session.lock().await.connected = false;
    }
}

async fn handle(
    state: &AppState,
    current: &mut Option<(String, Arc<tokio::sync::Mutex<Session>>)>,
    msg: ClientMessage,
) -> Vec<ServerMessage> {
    match msg {
        ClientMessage::Hello {
            preset,
            seed,
            mode,
            session,
        } => {
            if current.is_some() {
                return vec![error("this connection already controls a session")];
            }
            match session {
                Some(id) => resume(state, current, id).await,
                None => match start(state, current, preset, seed, mode).await {
                    Ok(r) => r,
                    Err(e) => vec![error(e.to_string())],
                },
            }
        }
        ClientMessage::Act { action } => {
            let Some((_, session)) = current else {
                return vec![error("send hello first")];
            };
            let mut s = session.lock().await;
            match act(&state.config, &mut s, action.as_deref()) {
                Ok(r) => r,
                Err(e) => vec![error(e.to_string())],
            }
        }
        ClientMessage::Stats => {
            let Some((_, session)) = current else {
                return vec![error("send hello first")];
            };
            vec![stats(&session.lock().await.env)]
        }
    }
}

async fn start(
    state: &AppState,
    current: &mut Option<(String, Arc<tokio::sync::Mutex<Session>>)>,
    preset: Option<String>,
    seed: Option<u64>,
    mode: Mode,
) -> Result<Vec<ServerMessage>> {
    let config = &state.config;
    let spec = match &preset {
        Some(name) => resolve_env(name, &config.spec)?,
        None => config.spec.clone(),
    };
    let mut env = Env::new(spec.clone())?;
    env.set_stats_log(config.stats_log.clone());
    let index = state.next.fetch_add(1, Ordering::SeqCst);
    let id = format!("s{index}");
    let mut session = Session {
        env,
        index,
        seed,
        mode,
        preset: preset.clone(),
        episode: 0,
        frames: 0,
        connected: true,
        rng: ChaCha8Rng::seed_from_u64(episode_seed(config.seed, index as usize, u64::MAX)),
        state: None,
    };
    let first_seed = session.episode_seed(config.seed);
    let obs = reset(config, &mut session)?;
    let hello = ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        session: id.clone(),
        mode,
        preset,
        seed: first_seed,
        spec,
        actions: action_names(),
        achievements: achievement_names(),
    };
    let frame = frame(&mut session, &obs, None, 0.0, false, true, Vec::new());
    let shared = Arc::new(tokio::sync::Mutex::new(session));
    state.sessions.lock().expect("session table").insert(id.clone(), shared.clone());
    *current = Some((id, shared));
    Ok(vec![hello, frame])
}

async fn resume(
    state: &AppState,
    current: &mut Option<(String, Arc<tokio::sync::Mutex<Session>>)>,
    id: String,
) -> Vec<ServerMessage> {
    let found = state.sessions.lock().expect("session table").get(&id).cloned();
    let Some(shared) = found else {
        return vec![error(format!("unknown session `{id}`"))];
    };
    let mut s = shared.lock().await;
    if s.connected {
        return vec![error(format!("session `{id}` already has a controller"))];
    }
    s.connected = true;
    let Some(obs) = s.env.observe() else {
        return vec![error("session has no live episode")];
    };
    let hello = ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        session: id.clone(),
        mode: s.mode,
        preset: s.preset.clone(),
        seed: s.env.seed(),
        spec: s.env.spec().clone(),
        actions: action_names(),
        achievements: achievement_names(),
    };
    let mut f = frame(&mut s, &obs, None, 0.0, false, false, Vec::new());
    if let ServerMessage::Frame(fr) = &mut f {
        fr.resumed = true;
    }
    drop(s);
    *current = Some((id, shared));
    vec![hello, f]
}

fn reset(config: &ServerConfig, s: &mut Session) -> Result<Observation> {
    let seed = s.episode_seed(config.seed);
    if let Some(p) = &config.spectator {
        s.state = p.policy.initial_state(1);
    }
    Ok(s.env.reset(seed)?)
}

fn choose(config: &ServerConfig, s: &mut Session) -> Result<Action> {
    let obs = s
        .env
        .observe()
        .ok_or_else(|| HarnessError::Runtime("no live episode".into()))?;
    match &config.spectator {
        None => Ok(Action::ALL[s.rng.random_range(0..N_ACTIONS)]),
        Some(p) => {
            let out = p.policy.forward(&p.store, &[obs], s.state.as_ref())?;
            s.state = out.state;
            let (a, _) = dist::sample(out.logits.data(), &mut s.rng);
            Ok(Action::ALL[a])
        }
    }
}

fn act(config: &ServerConfig, s: &mut Session, name: Option<&str>) -> Result<Vec<ServerMessage>> {
    let action = match (s.mode, name) {
        (Mode::Human, Some(n)) => {
            parse_action(n).ok_or_else(|| HarnessError::Usage(format!("unknown action `{n}`")))?
        }
        (Mode::Human, None) => return Err(HarnessError::Usage("act needs an action".into())),
        (Mode::Spectate, None) => choose(config, s)?,
        (Mode::Spectate, Some(_)) => {
            return Err(HarnessError::Usage("spectator sessions are driven by the server policy".into()))
        }
    };
    let result = s.env.step(action)?;
    let new_unlocks = result.info.unlocked.iter().map(|a| a.name().to_string()).collect();
    let mut out = vec![frame(s, &result.observation, Some(action), result.reward, result.done, false, new_unlocks)];
    if result.done {
        if let Some(line) = &result.info.episode {
            out.push(ServerMessage::Done {
                episode: s.episode,
                length: line.length,
                reward: line.reward,
                achievements: line.unlocked().iter().map(|a| a.name().to_string()).collect(),
            });
        }
        out.push(stats(&s.env));
        s.episode += 1;
        let obs = reset(config, s)?;
        out.push(frame(s, &obs, None, 0.0, false, true, Vec::new()));
    }
    Ok(out)
}

fn live_score(env: &Env) -> f64 {
    let mut ledger = env.ledger().clone();
    if !env.is_done() {
        ledger.end_episode();
    }
    success_rates(&ledger).map(|r| score(&r)).unwrap_or(0.0)
}

fn stats(env: &Env) -> ServerMessage {
    let ledger = env.ledger();
    let rates = success_rates(ledger).ok();
    ServerMessage::Stats {
        episodes: ledger.episodes,
        score: rates.as_ref().map(score).unwrap_or(0.0),
        rates: crafter_core::Achievement::ALL
            .iter()
            .map(|a| (a.name().to_string(), rates.as_ref().map(|r| r.rate(*a)).unwrap_or(0.0)))
            .collect(),
    }
}

fn frame(
    s: &mut Session,
    obs: &Observation,
    action: Option<Action>,
    reward: f64,
    done: bool,
    reset: bool,
    new_unlocks: Vec<String>,
) -> ServerMessage {
    s.frames += 1;
    let state = s.env.state().expect("frames follow a reset");
    let p = &state.player;
    ServerMessage::Frame(Frame {
        frame: s.frames,
        episode: s.episode,
        step: state.step_count,
        reset,
        resumed: false,
        width: 64,
        height: 64,
        pixels: encode_pixels(obs),
        action: action.map(|a| a.name().to_string()),
        reward,
        episode_reward: s.env.episode_reward(),
        done,
        vitals: Vitals {
            health: p.get(Item::Health),
            food: p.get(Item::Food),
            drink: p.get(Item::Drink),
            energy: p.get(Item::Energy),
        },
        inventory: inventory_map(&p.inventory),
        unlocked: s.env.ledger().episode.iter().map(|a| a.name().to_string()).collect(),
        new_unlocks,
        score: live_score(&s.env),
        daylight: state.daylight,
    })
}
