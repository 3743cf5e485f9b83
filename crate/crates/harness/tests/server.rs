use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;

use crafter_core::env::read_stats;
use crafter_core::{EnvSpec, StatsLog};
use crafter_harness::protocol::{decode_pixels, ServerMessage};
use crafter_harness::server::{bind, serve, ServerConfig};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Trees everywhere except the 3x3 block around the start.
fn forest() -> EnvSpec {
    EnvSpec::mini(9, 72, 30)
}

async fn start(spec: EnvSpec, stats: Option<PathBuf>, static_dir: Option<PathBuf>) -> SocketAddr {
    let (listener, addr) = bind("127.0.0.1:0").await.unwrap();
    let config = ServerConfig {
        spec,
        seed: 1,
        stats_log: stats.map(|p| StatsLog::open(&p).unwrap()),
        static_dir,
        spectator: None,
    };
    tokio::spawn(serve(listener, config));
    addr
}

async fn connect(addr: SocketAddr) -> Socket {
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Socket, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn recv(ws: &mut Socket) -> ServerMessage {
    loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Close(_) => panic!("socket closed"),
            _ => continue,
        }
    }
}

/// Reads until a frame arrives; returns the frame and the messages before it.
async fn until_frame(ws: &mut Socket) -> (crafter_harness::protocol::Frame, Vec<ServerMessage>) {
    let mut before = Vec::new();
    loop {
        match recv(ws).await {
            ServerMessage::Frame(f) => return (f, before),
            other => before.push(other),
        }
    }
}

async fn hello(ws: &mut Socket, extra: Value) -> (String, crafter_harness::protocol::Frame) {
    let mut msg = json!({"kind": "hello"});
    if let (Some(m), Some(e)) = (msg.as_object_mut(), extra.as_object()) {
        m.extend(e.clone());
    }
    send(ws, msg).await;
    let ServerMessage::Hello { session, actions, achievements, version, .. } = recv(ws).await else {
        panic!("expected hello");
    };
    assert_eq!(version, 1);
    assert_eq!(actions.len(), 17);
    assert_eq!(achievements.len(), 22);
    let (frame, before) = until_frame(ws).await;
    assert!(before.is_empty());
    (session, frame)
}

#[tokio::test]
async fn hello_returns_reset_frame() {
    let addr = start(EnvSpec::default(), None, None).await;
    let mut ws = connect(addr).await;
    let (session, frame) = hello(&mut ws, json!({"seed": 3})).await;
    assert!(!session.is_empty());
    assert!(frame.reset);
    assert_eq!(frame.step, 0);
    assert_eq!(frame.frame, 1);
    assert_eq!(decode_pixels(&frame.pixels).unwrap().len(), 64 * 64 * 3);
    assert_eq!(frame.vitals.health, 9);
}

#[tokio::test]
async fn lockstep_session_of_one_hundred_acts() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("play.jsonl");
    let addr = start(forest(), Some(log.clone()), None).await;
    let mut ws = connect(addr).await;
    let (_, first) = hello(&mut ws, json!({})).await;
    let names: Vec<&str> = vec![
        "noop", "move_up", "move_down", "move_left", "move_right", "do", "sleep", "place_stone", "place_table",
        "place_furnace", "place_plant", "make_wood_pickaxe", "make_stone_pickaxe", "make_iron_pickaxe",
        "make_wood_sword", "make_stone_sword", "make_iron_sword",
    ];
    let mut frames = 1;
    let mut resets = 1;
    let mut dones = 0;
    let mut last = first.frame;
    for i in 0..100 {
        let name = names[i % names.len()];
        send(&mut ws, json!({"kind": "act", "action": name})).await;
        let (f, before) = until_frame(&mut ws).await;
        assert!(before.is_empty(), "{before:?}");
        assert_eq!(f.action.as_deref(), Some(name));
        assert_eq!(f.frame, last + 1);
        frames += 1;
        last = f.frame;
        if f.done {
            let (reset, between) = until_frame(&mut ws).await;
            assert!(matches!(between[0], ServerMessage::Done { .. }));
            assert!(matches!(between[1], ServerMessage::Stats { .. }));
            assert!(reset.reset);
            frames += 1;
            resets += 1;
            dones += 1;
            last = reset.frame;
        }
    }
    assert_eq!(frames, 100 + resets);
    assert_eq!(last, frames);
    assert_eq!(dones, 3);
    let lines = read_stats(&log).unwrap();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.length == 30));
}

#[tokio::test]
async fn chopping_a_tree_shows_wood() {
    let addr = start(forest(), None, None).await;
    let mut ws = connect(addr).await;
    hello(&mut ws, json!({})).await;
    send(&mut ws, json!({"kind": "act", "action": "move_left"})).await;
    until_frame(&mut ws).await;
    send(&mut ws, json!({"kind": "act", "action": "do"})).await;
    let (f, _) = until_frame(&mut ws).await;
    assert_eq!(f.inventory["wood"], 1);
    assert_eq!(f.new_unlocks, vec!["collect_wood".to_string()]);
    assert!(f.unlocked.contains(&"collect_wood".to_string()));
    assert!(f.reward >= 1.0);
    assert!(f.score > 0.0);
}

#[tokio::test]
async fn bad_messages_get_errors_and_keep_the_session() {
    let addr = start(forest(), None, None).await;
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"kind": "act", "action": "do"})).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
    hello(&mut ws, json!({})).await;
    for bad in [
        json!({"kind": "act", "action": "jump"}),
        json!({"kind": "teleport"}),
        json!({"kind": "act"}),
        json!({"action": "do"}),
        json!({"kind": "hello"}),
    ] {
        send(&mut ws, bad).await;
        assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
    }
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
    send(&mut ws, json!({"kind": "act", "action": "noop"})).await;
    let (f, before) = until_frame(&mut ws).await;
    assert!(before.is_empty());
    assert_eq!(f.step, 1);
    assert_eq!(f.frame, 2);
}

#[tokio::test]
async fn stats_request_reports_roster() {
    let addr = start(forest(), None, None).await;
    let mut ws = connect(addr).await;
    hello(&mut ws, json!({})).await;
    send(&mut ws, json!({"kind": "stats"})).await;
    let ServerMessage::Stats { episodes, rates, .. } = recv(&mut ws).await else {
        panic!("expected stats");
    };
    assert_eq!(episodes, 0);
    let names: BTreeSet<String> = rates.keys().cloned().collect();
    let roster: BTreeSet<String> = crafter_harness::protocol::achievement_names().into_iter().collect();
    assert_eq!(names, roster);
}

#[tokio::test]
async fn presets_are_echoed() {
    let addr = start(EnvSpec::default(), None, None).await;
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"kind": "hello", "preset": "app_o1_97"})).await;
    let ServerMessage::Hello { preset, spec, .. } = recv(&mut ws).await else {
        panic!("expected hello");
    };
    assert_eq!(preset.as_deref(), Some("app_o1_97"));
    assert_eq!(spec.appearance.tree.0[0], 0.97);
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"kind": "hello", "preset": "nowhere"})).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
}

#[tokio::test]
async fn disconnect_pauses_and_resume_continues() {
    let addr = start(forest(), None, None).await;
    let mut ws = connect(addr).await;
    let (session, _) = hello(&mut ws, json!({})).await;
    for _ in 0..3 {
        send(&mut ws, json!({"kind": "act", "action": "noop"})).await;
        until_frame(&mut ws).await;
    }
    // A second controller is refused while the first is attached.
    let mut other = connect(addr).await;
    send(&mut other, json!({"kind": "hello", "session": session})).await;
    assert!(matches!(recv(&mut other).await, ServerMessage::Error { .. }));
    ws.close(None).await.unwrap();
    drop(ws);
    let mut ws = connect(addr).await;
    let mut resumed = None;
    for _ in 0..50 {
        send(&mut ws, json!({"kind": "hello", "session": session})).await;
        match recv(&mut ws).await {
            ServerMessage::Hello { .. } => {
                resumed = Some(until_frame(&mut ws).await.0);
                break;
            }
            _ => tokio::time::sleep(std::time::Duration::from_millis(20)).await,
        }
    }
    let f = resumed.expect("session resumed");
    assert!(f.resumed);
    assert_eq!(f.step, 3);
    send(&mut ws, json!({"kind": "act", "action": "noop"})).await;
    assert_eq!(until_frame(&mut ws).await.0.step, 4);
}

#[tokio::test]
async fn spectator_sessions_are_server_driven() {
    let addr = start(forest(), None, None).await;
    let mut ws = connect(addr).await;
    hello(&mut ws, json!({"mode": "spectate"})).await;
    for step in 1..=5 {
        send(&mut ws, json!({"kind": "act"})).await;
        let (f, _) = until_frame(&mut ws).await;
        assert_eq!(f.step, step);
        assert!(f.action.is_some());
    }
    send(&mut ws, json!({"kind": "act", "action": "do"})).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
}

async fn http_get(addr: SocketAddr, path: &str) -> String {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    buf
}

#[tokio::test]
async fn serves_static_client() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>client-page</html>").unwrap();
    std::fs::write(dir.path().join("keys.json"), "{\"ArrowUp\":\"move_up\"}").unwrap();
    let addr = start(forest(), None, Some(dir.path().to_path_buf())).await;
    let page = http_get(addr, "/").await;
    assert!(page.starts_with("HTTP/1.1 200"), "{page}");
    assert!(page.contains("client-page"));
    assert!(http_get(addr, "/keys.json").await.contains("move_up"));
    assert!(http_get(addr, "/missing.js").await.starts_with("HTTP/1.1 404"));

    let bare = start(forest(), None, None).await;
    assert!(http_get(bare, "/").await.contains("/ws"));
}
