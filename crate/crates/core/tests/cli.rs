use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
ddpg.hidden = 16
ddpg.episodes = 20
ddpg.eval_every = 10
ddpg.eval_episodes = 3
ddpg.batch_size = 16
ddpg.expert_pairs = 300
ppo.hidden = 16
run.disc_hidden = 16
run.iterations = 2
run.episodes_per_iteration = 3
run.eval_episodes = 3
";

fn irlrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irlrec"))
        .arg("--config")
        .arg(dir.join("tiny.cfg"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let out = dir.path().join("out");

    let missing = irlrec(dir.path(), &["train"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("collect-expert"));

    ok(irlrec(dir.path(), &["train-expert"]));
    assert!(out.join("expert_nets.irlr").exists());
    let curve = std::fs::read_to_string(out.join("expert_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let text = ok(irlrec(dir.path(), &["collect-expert"]));
    assert!(text.starts_with("300 pairs"), "{text}");

    ok(irlrec(dir.path(), &["train"]));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("iteration,episodes,steps,"));
    for file in ["checkpoint.irlr", "events.log", "occupancy_js.csv"] {
        assert!(out.join(file).exists(), "{file}");
    }

    let text = ok(irlrec(dir.path(), &["evaluate"]));
    assert!(text.starts_with("ctr "), "{text}");
    let text = ok(irlrec(dir.path(), &["evaluate", "--random", "--episodes", "5"]));
    assert!(text.contains("over 5 episodes"), "{text}");
    let nets = out.join("expert_nets.irlr");
    ok(irlrec(dir.path(), &["evaluate", "--expert-nets", nets.to_str().unwrap()]));

    let ckpt = out.join("checkpoint.irlr");
    let text = ok(irlrec(dir.path(), &["diag-js", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "4"]));
    assert!(text.starts_with("occupancy_js "), "{text}");

    ok(irlrec(dir.path(), &["grid", "--lambdas", "0.95,0.99", "--clip", "0.2"]));
    let grid = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().filter(|l| !l.starts_with('#')).count(), 3, "{grid}");
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), "ppo.lr = 0.1\nppo.epochs = many\n").unwrap();
    let out = irlrec(dir.path(), &["evaluate", "--random"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}
