use std::path::Path;

use crafter_core::env::read_stats;
use crafter_core::{Achievement, StatsLine, StatsLog};

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = crafter_harness::run(std::iter::once("crafter").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const MINI: [&str; 6] = ["--set", "env.mini={size=9, trees=20}", "--set", "env.episode_cap=20", "--set", "agent.reduced=true"];

fn with_mini<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(MINI);
    v
}

#[test]
fn score_of_complete_log_is_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stats.jsonl");
    let log = StatsLog::open(&path).unwrap();
    for _ in 0..3 {
        log.append(&StatsLine {
            length: 100,
            reward: 22.0,
            achievements: [1; Achievement::COUNT],
        })
        .unwrap();
    }
    let (code, text) = run(&["score", p(&path)]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(text.lines().next(), Some("100.0"));
}

#[test]
fn census_of_default_world() {
    let (code, text) = run(&["gen", "--preset", "default", "--seed", "4"]);
    assert_eq!(code, 0, "{text}");
    let trees: Vec<&str> = text.lines().filter(|l| l.trim_start().starts_with("tree ")).collect();
    assert_eq!(trees.len(), 1);
    assert!(trees[0].trim().ends_with(" 189"), "{text}");
    let (_, text) = run(&["gen", "--preset", "hard_x4"]);
    assert!(text.lines().any(|l| l.trim() == "coal       13"), "{text}");
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("map.png");
    assert_eq!(run(&["gen", "--png", p(&png)]).0, 0);
    assert!(png.exists());
}

#[test]
fn replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("episode.json");
    let (code, text) = run(&["replay", p(&rec), "--create", "--seed", "12", "--steps", "300"]);
    assert_eq!(code, 0, "{text}");
    let (code, text) = run(&["replay", p(&rec)]);
    assert_eq!(code, 0, "{text}");
    assert!(text.starts_with("OK, byte-exact"));

    let mut json: serde_json::Value = serde_json::from_slice(&std::fs::read(&rec).unwrap()).unwrap();
    let actions = json["actions"].as_array_mut().unwrap();
    let flipped = if actions[0] == "noop" { "move_left" } else { "noop" };
    actions[0] = flipped.into();
    std::fs::write(&rec, serde_json::to_vec(&json).unwrap()).unwrap();
    let (code, text) = run(&["replay", p(&rec)]);
    assert_eq!(code, 3, "{text}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["gen", "--count", "many"]).0, 1);
    assert_eq!(run(&["gen", "--count", "0"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["gen", "--preset", "nowhere"]).0, 2);
    assert_eq!(run(&["eval", "--random", "--set", "ppo.gamma=3"]).0, 2);
    assert_eq!(run(&["eval", "--random", "--set", "ppo.gama=0.9"]).0, 2);
    let (code, text) = run(&["score", "/nonexistent/stats.jsonl"]);
    assert_eq!(code, 3, "{text}");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[ppo\n").unwrap();
    assert_eq!(run(&["eval", "--random", "--config", p(&bad)]).0, 2);
}

#[test]
fn random_evaluation_writes_scoreable_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("eval.jsonl");
    let args = with_mini(&["eval", "--random", "--episodes", "10", "--stats-log", p(&log)]);
    let (code, text) = run(&args);
    assert_eq!(code, 0, "{text}");
    assert!(text.starts_with("score "));
    assert_eq!(read_stats(&log).unwrap().len(), 10);
    let (code, _) = run(&["score", p(&log)]);
    assert_eq!(code, 0);
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = with_mini(&[
        "train", "--out", p(&out), "--seed", "2",
        "--set", "ppo.total_steps=64", "--set", "ppo.n_lanes=2", "--set", "ppo.n_rollout_steps=32",
        "--set", "ppo.batch_size=16", "--set", "ppo.eval_interval=64", "--set", "ppo.eval_episodes=2",
    ]);
    let (code, text) = run(&args);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("score "), "{text}");
    let ckpt = out.join("final.ckpt");
    assert!(ckpt.exists() && out.join("config.toml").exists() && out.join("train_report.jsonl").exists());

    let (code, text) = run(&with_mini(&["eval", "--checkpoint", p(&ckpt), "--episodes", "3", "--greedy"]));
    assert_eq!(code, 0, "{text}");
    let saved = out.join("config.toml");
    let (code, _) = run(&["eval", "--config", p(&saved), "--checkpoint", p(&ckpt), "--episodes", "2"]);
    assert_eq!(code, 0);

    // A different agent config is refused unless the checkpoint is trusted.
    let mut other = with_mini(&["eval", "--checkpoint", p(&ckpt), "--episodes", "2"]);
    other.extend(["--set", "agent.architecture=lstm-cnn"]);
    let (code, text) = run(&other);
    assert_eq!(code, 2, "{text}");
    other.push("--trust-checkpoint");
    assert_eq!(run(&other).0, 0);

    let (code, _) = run(&["viz-attn", "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("viz"))]);
    assert_eq!(code, 2);
}

#[test]
fn attention_montage_has_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = with_mini(&["train", "--out", p(&out), "--set", "ppo.total_steps=0"]);
    args.extend(["--set", "agent.architecture=oc-ca"]);
    assert_eq!(run(&args).0, 0);
    let viz = dir.path().join("viz");
    let (code, text) = run(&with_mini(&[
        "viz-attn", "--checkpoint", p(&out.join("final.ckpt")), "--frames", "3", "--every", "2",
        "--scale", "2", "--out", p(&viz),
    ]));
    assert_eq!(code, 0, "{text}");
    // Scale 2 makes 128-pixel tiles; columns and rows are separated by a 2-pixel gap.
    assert_eq!(image_size(&viz.join("montage.png")), (3 * 128 + 2 * 2, 2 * 128 + 2));
    for i in 0..3 {
        assert!(viz.join(format!("step_{i:03}_input.png")).exists());
        assert!(viz.join(format!("step_{i:03}_attention.png")).exists());
    }
    assert!(!viz.join("step_003_input.png").exists());
}

/// Reads the PNG header.
fn image_size(path: &Path) -> (u32, u32) {
    let bytes = std::fs::read(path).unwrap();
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    (w, h)
}

#[test]
fn sweep_lists_the_grid() {
    let (code, text) = run(&["sweep", "--dry-run"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.starts_with("35 configurations"), "{text}");
    let (code, text) = run(&["sweep", "--dry-run", "--mode", "cartesian", "--axes", "clip_range,batch_size"]);
    assert_eq!(code, 0);
    assert!(text.starts_with("9 configurations"), "{text}");
    assert!(text.contains("clip_range=0.1,batch_size=64"));
    assert_eq!(run(&["sweep", "--dry-run", "--axes", "momentum"]).0, 1);
}

#[test]
fn tiny_sweep_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_mini(&[
        "sweep", "--axes", "clip_range", "--out", p(dir.path()),
        "--set", "ppo.total_steps=32", "--set", "ppo.n_lanes=1", "--set", "ppo.n_rollout_steps=32",
        "--set", "ppo.batch_size=16", "--set", "ppo.n_epochs=1", "--set", "ppo.eval_episodes=1",
    ]);
    let (code, text) = run(&args);
    assert_eq!(code, 0, "{text}");
    let results = std::fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 3);
}
