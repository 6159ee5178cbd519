use std::path::Path;
use std::process::{Command, Output};

fn uwan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwan"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const SMALL: &str = r#"
seed = 3
replications = 2

[scenario]
horizon_slots = 30

[traffic]
rates = [0.27, 0.99]

[actions.ga]
population = 40
generations = 20

[training]
episodes = 12
anneal_episodes = 6
batch_size = 2
window = 4
target_sync_episodes = 4
eval_every = 6
eval_episodes = 2
hidden_width = 6
recurrent_width = 6
"#;

#[test]
fn validate_config_echoes_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "ok.toml", SMALL);
    let out = uwan(&["validate-config", "--config", "ok.toml"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# sha256 "));
    assert!(text.contains("replications = 2"));

    let out = uwan(&["validate-config", "--config", "ok.toml", "--preset", "paper"], dir.path());
    assert!(String::from_utf8(out.stdout).unwrap().contains("replications = 100"));
}

#[test]
fn bad_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "typo.toml", "replicatons = 3\n");
    write(dir.path(), "zero.toml", "replications = 0\n");
    write(dir.path(), "policy.toml", "[policies]\nnames = [\"csma\"]\n");
    for name in ["typo.toml", "zero.toml", "policy.toml"] {
        let out = uwan(&["validate-config", "--config", name], dir.path());
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(String::from_utf8(out.stderr).unwrap().contains("config error"));
    }
    let out = uwan(&["validate-config", "--config", "absent.toml"], dir.path());
    assert_eq!(out.status.code(), Some(8));
}

#[test]
fn sweep_then_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", SMALL);
    let out = uwan(&["sweep", "--config", "cfg.toml", "--policy", "aloha,nf-tdma", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("res/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    let manifest = std::fs::read_to_string(dir.path().join("res/sweep.manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"complete\""));

    let out = uwan(&["plotdata", "--results", "res/sweep.csv", "--metric", "energy", "--out", "plots"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("plots/energy_aloha.csv").exists());
    assert!(dir.path().join("plots/energy_nf-tdma.csv").exists());

    let out = uwan(&["plotdata", "--results", "res/sweep.csv", "--metric", "latency"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_leaves_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", SMALL);
    let out = uwan(
        &["sweep", "--config", "cfg.toml", "--policy", "aloha,tarm", "--checkpoint", "nowhere", "--out", "res"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(7));
    let manifest = std::fs::read_to_string(dir.path().join("res/sweep.manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"partial\""));
}

#[test]
fn front_train_and_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", SMALL);
    let out = uwan(&["front", "--config", "cfg.toml", "--out", "front"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let actions = std::fs::read_to_string(dir.path().join("front/actions.txt")).unwrap();
    assert_eq!(actions.lines().count(), 7);

    let out = uwan(&["train", "--config", "cfg.toml", "--seed", "9", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "episode,train_return,loss,epsilon,mean_eval_reward");
    assert_eq!(log.lines().count(), 13);
    assert!(dir.path().join("run/checkpoint/manifest.toml").exists());

    let out = uwan(
        &["sweep", "--config", "cfg.toml", "--policy", "tarm", "--checkpoint", "run/checkpoint", "--out", "eval"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("eval/sweep.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.starts_with("tarm,rate,")));
}
