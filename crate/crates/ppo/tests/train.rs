use std::collections::HashMap;

use crafter_agents::{checkpoint, AgentConfig, Architecture, Policy};
use crafter_core::env::read_stats;
use crafter_core::{Achievement, Action, EnvSpec, Observation, StatsLog};
use crafter_ppo::{
    evaluate, train, ActionMode, PolicyActor, PpoConfig, RandomActor, ScriptedActor, TrainOptions,
};

fn tiny_run(lanes: usize, total: u64) -> PpoConfig {
    PpoConfig {
        n_lanes: lanes,
        n_rollout_steps: 32 * lanes,
        batch_size: 16,
        n_epochs: 2,
        total_steps: total,
        ..PpoConfig::default()
    }
}

fn mini() -> EnvSpec {
    EnvSpec::mini(9, 30, 40)
}

#[test]
fn zero_budget_returns_initial_params() {
    let agent = AgentConfig::reduced(Architecture::PpoCnn);
    let out = train::<f32>(&mini(), &agent, &tiny_run(1, 0), 5, &TrainOptions::default(), |_| {}).unwrap();
    assert!(out.report.iterations.is_empty());
    assert!(out.report.evaluations.is_empty());
    let (param_seed, ..) = crafter_ppo::train::run_seeds(5);
    let (_, fresh) = Policy::init::<f32>(&agent, param_seed).unwrap();
    assert_eq!(out.store.tensors(), fresh.tensors());
}

#[test]
fn single_lane_training_is_reproducible() {
    let agent = AgentConfig::reduced(Architecture::PpoCnn);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| {
            let options = TrainOptions {
                out_dir: Some(d.path().to_path_buf()),
                eval_spec: None,
            };
            train::<f32>(&mini(), &agent, &tiny_run(1, 64), 11, &options, |_| {}).unwrap()
        })
        .collect();
    assert_eq!(runs[0].store.tensors(), runs[1].store.tensors());
    let a = std::fs::read(dirs[0].path().join("final.ckpt")).unwrap();
    let b = std::fs::read(dirs[1].path().join("final.ckpt")).unwrap();
    assert_eq!(a, b);
    let other = train::<f32>(&mini(), &agent, &tiny_run(1, 64), 12, &TrainOptions::default(), |_| {}).unwrap();
    assert_ne!(runs[0].store.tensors(), other.store.tensors());
}

#[test]
fn report_stream_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let agent = AgentConfig::reduced(Architecture::PpoCnn);
    let config = PpoConfig {
        eval_interval: 64,
        eval_episodes: 3,
        checkpoint_interval: 64,
        ..tiny_run(2, 128)
    };
    let options = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        eval_spec: Some(EnvSpec::mini(9, 10, 20)),
    };
    let mut seen = Vec::new();
    let out = train::<f32>(&mini(), &agent, &config, 3, &options, |r| seen.push(r.steps)).unwrap();
    assert_eq!(seen, vec![64, 128]);
    assert_eq!(out.report.evaluations.len(), 2);
    assert!(out.report.iterations.iter().all(|r| r.eval_score.is_some()));

    let text = std::fs::read_to_string(dir.path().join("train_report.jsonl")).unwrap();
    let steps: Vec<u64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["steps"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, seen);
    for key in ["policy_loss", "value_loss", "entropy", "clip_fraction", "explained_variance", "steps_per_second"] {
        assert!(text.contains(key), "{key}");
    }
    assert!(dir.path().join("checkpoint_64.ckpt").exists());
    assert!(dir.path().join("checkpoint_128.ckpt").exists());
    let evals = read_stats(&dir.path().join("eval_stats.jsonl")).unwrap();
    assert_eq!(evals.len(), 6);
    assert!(evals.iter().all(|l| l.length <= 20));
    let trained = read_stats(&dir.path().join("train_stats.jsonl")).unwrap();
    assert_eq!(trained.len(), out.report.episodes.len());

    let (_, store) = checkpoint::load_matching::<f32>(&dir.path().join("final.ckpt"), &agent).unwrap();
    assert_eq!(store.tensors(), out.store.tensors());
    let wrong = AgentConfig::reduced(Architecture::PpoSpcnn);
    assert!(checkpoint::load_matching::<f32>(&dir.path().join("final.ckpt"), &wrong).is_err());
}

#[test]
fn recurrent_training_runs() {
    let agent = AgentConfig::reduced(Architecture::LstmCnn);
    let config = PpoConfig {
        seq_len: 8,
        ..tiny_run(2, 64)
    };
    let out = train::<f32>(&mini(), &agent, &config, 4, &TrainOptions::default(), |_| {}).unwrap();
    assert_eq!(out.report.iterations.len(), 1);
    assert!(out.report.iterations[0].update.minibatches > 0);
}

#[test]
fn random_policy_scores_above_zero() {
    let mut actor = RandomActor::new(1);
    let report = evaluate(&mut actor, &EnvSpec::default(), 16, 21, None).unwrap();
    assert_eq!(report.episodes, 16);
    assert!(report.score > 0.0, "{report:?}");
    assert!(report.rate(Achievement::CollectWood) > 0.0);
    assert!(report.mean_length > 0.0);
}

#[test]
fn evaluation_is_seeded() {
    let spec = EnvSpec::mini(9, 20, 30);
    let a = evaluate(&mut RandomActor::new(3), &spec, 10, 5, None).unwrap();
    let b = evaluate(&mut RandomActor::new(3), &spec, 10, 5, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_episodes_is_an_error() {
    assert!(evaluate(&mut RandomActor::new(0), &EnvSpec::default(), 0, 0, None).is_err());
}

#[test]
fn scripted_woodcutter_always_collects_wood() {
    // Trees fill every cell two or more steps from the start: step left, then
    // face a tree and chop.
    let spec = EnvSpec::mini(9, 72, 20);
    let mut turns: HashMap<usize, usize> = HashMap::new();
    let mut actor = ScriptedActor {
        script: |lane: usize, _: &Observation| {
            let t = turns.entry(lane).or_default();
            *t += 1;
            if *t % 2 == 1 { Action::MoveLeft } else { Action::Do }
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let log = StatsLog::open(&dir.path().join("stats.jsonl")).unwrap();
    let report = evaluate(&mut actor, &spec, 12, 9, Some(log)).unwrap();
    assert_eq!(report.rate(Achievement::CollectWood), 100.0);
    assert_eq!(read_stats(&dir.path().join("stats.jsonl")).unwrap().len(), 12);
}

#[test]
fn policy_actor_evaluates_checkpoint() {
    let agent = AgentConfig::reduced(Architecture::LstmCnn);
    let (policy, store) = Policy::init::<f32>(&agent, 0).unwrap();
    let spec = EnvSpec::mini(9, 20, 15);
    let mut greedy = PolicyActor::new(&policy, &store, ActionMode::Greedy, 0);
    let a = evaluate(&mut greedy, &spec, 9, 1, None).unwrap();
    let mut greedy = PolicyActor::new(&policy, &store, ActionMode::Greedy, 99);
    let b = evaluate(&mut greedy, &spec, 9, 1, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mean_length, 15.0);
}
