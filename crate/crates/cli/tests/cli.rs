use clap::Parser;
use madqrl::config::{read_manifest, MANIFEST_FILE};
use madqrl::metrics::read_metrics;
use madqrl::runtime::{CHECKPOINT_DIR, METRICS_FILE};
use madqrl_cli::{dispatch, run, Cli, PLOT_FILE, REPORT_FILE};
use std::path::Path;

/// Tiny desk-scale settings so each run takes a second or two.
const TINY: &str = r#"
workers = 2
steps_per_worker = 32
batch_size = 64
minibatch_size = 32
epochs = 1
eval_every = 1
eval_episodes = 4
checkpoint_every = 1
threads = 1
"#;

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("madqrl").chain(args.iter().copied());
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn train(dir: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let cfg = tiny_config(dir);
    let out = out.display().to_string();
    let mut args = vec!["train", "--desk", "--config", &cfg, "--output-dir", &out];
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn desk_train_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let (code, text) = train(tmp.path(), &run_dir, &["--iterations", "3"]);
    assert_eq!(code, 0, "{text}");
    let rows = read_metrics(&run_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(
        rows.iter().map(|r| r.iteration).collect::<Vec<_>>(),
        [0, 1, 2]
    );
    assert!(run_dir.join(PLOT_FILE).exists());
    assert!(run_dir.join(CHECKPOINT_DIR).join("LATEST").exists());
    let report = std::fs::read_to_string(run_dir.join(REPORT_FILE)).unwrap();
    assert!(report.contains("random-policy baseline"));
    assert!(report.contains("greedy eval at iteration 0"));
}

#[test]
fn manifest_echoes_defaults_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, format!("{TINY}\nseed = 5\nlr = 0.002\n")).unwrap();
    let (cfg, out) = (cfg.display().to_string(), run_dir.display().to_string());
    let args = [
        "train",
        "--desk",
        "--config",
        &cfg,
        "--seed",
        "7",
        "--iterations",
        "1",
        "--output-dir",
        &out,
    ];
    assert_eq!(cli(&args).0, 0);
    let m = read_manifest(&run_dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.seed, 7);
    assert_eq!(m.lr, 0.002);
    assert_eq!(m.qubits, 4);
    assert_eq!(m.iterations, 1);

    let cli = Cli::try_parse_from([
        "madqrl",
        "train",
        "--desk",
        "--config",
        &cfg,
        "--seed",
        "7",
        "--iterations",
        "1",
    ])
    .unwrap();
    let madqrl_cli::Command::Train(a) = cli.command else {
        unreachable!()
    };
    let mut expected = a.settings.resolve().unwrap();
    expected.output_dir = run_dir.clone();
    assert_eq!(m, expected);
}

#[test]
fn no_flags_gives_reference_defaults() {
    let cli = Cli::try_parse_from(["madqrl", "train"]).unwrap();
    let madqrl_cli::Command::Train(a) = cli.command else {
        unreachable!()
    };
    let s = a.settings.resolve().unwrap();
    assert_eq!(
        (s.gamma, s.clip_eps, s.lr, s.batch_size),
        (0.95, 0.3, 1e-4, 512)
    );
    assert_eq!((s.kl_coef, s.vf_coef, s.entropy_coef), (0.2, 1.0, 0.5));
    assert_eq!((s.qubits, s.layers), (13, 9));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli(&["train", "--gamma", "1.5"]).0, 2);
    assert_eq!(
        cli(&["train", "--model", "classical", "--qubits", "4"]).0,
        2
    );
    assert_eq!(cli(&["train", "--strategy", "solo"]).0, 2);
    assert_eq!(cli(&["inspect", "--desk", "--lr=-1"]).0, 2);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "gama = 0.9\n").unwrap();
    assert_eq!(
        cli(&["inspect", "--config", &cfg.display().to_string()]).0,
        2
    );
}

#[test]
fn basic_entanglement_is_selected() {
    let cli = Cli::try_parse_from([
        "madqrl",
        "inspect",
        "--model",
        "quantum",
        "--entanglement",
        "basic",
    ])
    .unwrap();
    let madqrl_cli::Command::Inspect(a) = cli.command else {
        unreachable!()
    };
    assert_eq!(
        a.resolve().unwrap().entanglement,
        madqrl::qsim::Entanglement::Basic
    );
}

#[test]
fn inspect_counts() {
    let (code, text) = cli(&["inspect", "--desk", "--strategy", "joint"]);
    assert_eq!(code, 0);
    assert!(text.contains("trainable weights:"));
    assert!(text.contains("quantum 48  total"), "{text}");

    let (_, text) = cli(&["inspect", "--desk", "--model", "classical"]);
    assert!(text.contains("quantum 0  total"), "{text}");

    let (_, text) = cli(&["inspect", "--desk", "--strategy", "shared"]);
    assert!(text.contains("learner 0 actor (agents [0, 1])"), "{text}");
    assert_eq!(text.matches(" actor (agents").count(), 1);
}

#[test]
fn eval_is_repeatable_and_appends_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert_eq!(train(tmp.path(), &run_dir, &["--iterations", "1"]).0, 0);
    let ck = run_dir.display().to_string();
    let (c1, a) = cli(&["eval", "--checkpoint", &ck, "--episodes", "5"]);
    let (c2, b) = cli(&["eval", "--checkpoint", &ck, "--episodes", "5"]);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    assert!(a.contains("5 episodes"));
    let report = std::fs::read_to_string(run_dir.join(REPORT_FILE)).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("eval ")).count(), 2);
}

#[test]
fn untrained_eval_is_close_to_random_play() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert_eq!(
        train(tmp.path(), &run_dir, &["--iterations", "1", "--lr", "1e-9"]).0,
        0
    );
    let ck = run_dir.display().to_string();
    let (_, out) = cli(&["eval", "--checkpoint", &ck, "--episodes", "100"]);
    let rest = out.split("mean episode length ").nth(1).unwrap();
    let greedy: f64 = rest.split(',').next().unwrap().parse().unwrap();
    let s = madqrl::config::Settings::desk();
    let t = madqrl::runtime::Trainer::new(s.run_config(), s.env().unwrap()).unwrap();
    let random = t.random_baseline(100).unwrap().mean_episode_len;
    assert!(
        (greedy - random).abs() / random < 0.2,
        "greedy {greedy} random {random}"
    );
}

#[test]
fn eval_errors_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let args = Cli::try_parse_from([
        "madqrl",
        "eval",
        "--checkpoint",
        &missing.display().to_string(),
    ])
    .unwrap();
    let err = dispatch(args, &mut Vec::new()).unwrap_err().to_string();
    assert!(err.contains("nowhere"), "{err}");

    let run_dir = tmp.path().join("run");
    assert_eq!(train(tmp.path(), &run_dir, &["--iterations", "1"]).0, 0);
    let ck = run_dir.join(CHECKPOINT_DIR).join("iter_000001");
    std::fs::write(ck.join("learner_0.json"), "{ not json").unwrap();
    let args =
        Cli::try_parse_from(["madqrl", "eval", "--checkpoint", &ck.display().to_string()]).unwrap();
    let err = dispatch(args, &mut Vec::new()).unwrap_err().to_string();
    assert!(err.contains("learner_0.json"), "{err}");
}

#[test]
fn resume_continues_where_it_stopped() {
    let tmp = tempfile::tempdir().unwrap();
    let straight = tmp.path().join("straight");
    assert_eq!(train(tmp.path(), &straight, &["--iterations", "4"]).0, 0);

    let split = tmp.path().join("split");
    assert_eq!(train(tmp.path(), &split, &["--iterations", "2"]).0, 0);
    let out = split.display().to_string();
    let (code, text) = cli(&[
        "train",
        "--resume",
        "--output-dir",
        &out,
        "--iterations",
        "4",
    ]);
    assert_eq!(code, 0, "{text}");
    // Text comparison: NaN cells must match too.
    assert_eq!(
        std::fs::read_to_string(straight.join(METRICS_FILE)).unwrap(),
        std::fs::read_to_string(split.join(METRICS_FILE)).unwrap()
    );
    assert_eq!(
        cli(&["train", "--resume", "--output-dir", &out, "--seed", "3"]).0,
        2
    );
}

#[test]
fn plot_renders_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert_eq!(train(tmp.path(), &run_dir, &["--iterations", "2"]).0, 0);
    let svg = tmp.path().join("curve.svg");
    let m = run_dir.join(METRICS_FILE).display().to_string();
    let (code, _) = cli(&["plot", "--metrics", &m, "--out", &svg.display().to_string()]);
    assert_eq!(code, 0);
    assert!(std::fs::read_to_string(svg).unwrap().contains("<polyline"));
}
