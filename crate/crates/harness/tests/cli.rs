use std::path::Path;
use std::process::Command;

use man_core::env::ArrivalPattern;
use man_harness::{load_config, EnvKind, RunConfig};

fn man(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_man")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    assert_eq!(man(&["--help"]).status.code(), Some(0));
    assert_eq!(man(&["--bogus"]).status.code(), Some(1));
    assert_eq!(man(&["--config", "/no/such/file", "train"]).status.code(), Some(1));

    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "[run]\nepochs = 0\n").unwrap();
    let o = man(&["--config", bad.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs"));

    let small = dir.path().join("small.ini");
    std::fs::write(&small, "[run]\nalgorithms = [\"MAAC\"]\nepochs = 50\nrecord_interval = 10\n[abstract]\nagents = 2\nstates = 3\n").unwrap();
    let cfg = small.to_str().unwrap();
    let o = man(&["--config", cfg, "--seed", "5", "--out", out, "train"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("runs/s5-maac.csv").exists());

    let o = man(&["--config", cfg, "--out", out, "summarize"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("MAAC"));
    assert!(dir.path().join("summary.csv").exists());

    let o = man(&["--out", out, "plot-data", "--kind", "congestion_curve"]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("congestion_curve.txt")).unwrap();
    assert_eq!(text.lines().nth(1), Some("epoch MAAC"));
    assert_eq!(man(&["--out", out, "plot-data", "--kind", "pie"]).status.code(), Some(1));

    let diverging = dir.path().join("div.ini");
    std::fs::write(
        &diverging,
        "[run]\nalgorithms = [\"MAAC\"]\nepochs = 50\n[critic]\ndivergence_threshold = 1e-6\n[abstract]\nagents = 2\nstates = 3\n",
    )
    .unwrap();
    let o = man(&["--config", diverging.to_str().unwrap(), "--seed", "1", "--out", out, "train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_env_and_analysis_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("c.ini");
    std::fs::write(&cfg, "[abstract]\nagents = 2\nstates = 3\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(man(&["--config", cfg, "--out", out, "gen-env"]).status.code(), Some(0));
    let env = dir.path().join("env.txt");
    assert!(man_harness::envfile::read_mdp(&env).is_ok());

    let o = man(&["--out", out, "analyze-kl", "--instances", "1", "--samples", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    let o = man(&["--out", out, "compare-deterministic", "--instances", "1", "--steps", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let o = man(&["--out", out, "check-fisher", "--samples", "2000", "--cases", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("10/10"));
}

#[test]
fn shipped_configs_match_the_defaults() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let abs = load_config(&dir.join("abstract.toml")).unwrap();
    let mut expected = RunConfig::defaults(EnvKind::Abstract);
    expected.out_dir = "out/abstract".into();
    assert_eq!(abs, expected);
    for (file, pattern) in [("traffic-pattern1.toml", ArrivalPattern::One), ("traffic-pattern2.toml", ArrivalPattern::Two)] {
        let c = load_config(&dir.join(file)).unwrap();
        let mut expected = RunConfig::defaults(EnvKind::Traffic);
        expected.seeds = (1..=5).collect();
        expected.traffic.pattern = pattern;
        expected.out_dir = c.out_dir.clone();
        assert_eq!(c, expected, "{file}");
    }
}
