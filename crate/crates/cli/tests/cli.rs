use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn navgym(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navgym"))
        .args(args)
        .current_dir(cwd)
        .env("NAVGYM_THREADS", "2")
        .output()
        .expect("spawn navgym")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

const QUICK: &[&str] = &[
    "--set",
    "train.num_agents=4",
    "--set",
    "train.num_trainers=2",
    "--set",
    "train.training_batch_size=8",
    "--set",
    "env.max_steps=60",
    "--progress-every",
    "0",
];

fn train(dir: &Path, out: &str, episodes: u64, extra: &[&str]) -> Output {
    let total = format!("train.total_episodes={episodes}");
    let mut args = vec!["train", "-o", out, "--set", &total];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    navgym(&args, dir)
}

fn episode_numbers(metrics: &Path) -> Vec<u64> {
    fs::read_to_string(metrics)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = navgym(&["--help"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for sub in ["train", "eval", "bench", "map", "fuse", "plot"] {
        assert!(text.contains(sub), "{sub} missing from help:\n{text}");
    }
    let o = navgym(&["train", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn short_training_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "run", 10, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "episodes"), Some("10"));
    let run = dir.path().join("run");
    for f in ["config.toml", "metrics.csv", "updates.csv", "final.ckpt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert_eq!(episode_numbers(&run.join("metrics.csv")), (0..10).collect::<Vec<_>>());
    // the snapshot is a complete config that reproduces the run settings
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("num_agents = 4"), "{snapshot}");
}

#[test]
fn unknown_config_key_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[train]\nnum_agentz = 3\n").unwrap();
    let o = navgym(&["train", "-c", "bad.toml", "-o", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("num_agentz"), "{}", stderr(&o));
    assert!(!dir.path().join("run").exists());

    let o = navgym(&["train", "--set", "train.gamma=2.0", "-o", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unknown_map_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "run", 2, &["--set", "train.maps=[{name=\"atlantis\"}]"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("atlantis"), "{}", stderr(&o));
}

#[test]
fn resume_continues_episode_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "run", 6, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    // the episode target counts the resumed episodes too
    let o = train(dir.path(), "run", 10, &["--resume", "run/final.ckpt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let numbers = episode_numbers(&dir.path().join("run/metrics.csv"));
    assert_eq!(numbers, (0..10).collect::<Vec<_>>());
    // same settings, so no mismatch warning
    assert!(!stderr(&o).contains("warning"), "{}", stderr(&o));

    let o = navgym(&["train", "--resume", "nope.ckpt", "-o", "other"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "run", 4, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = navgym(
        &[
            "eval",
            "--checkpoint",
            "run/final.ckpt",
            "--config",
            "run/config.toml",
            "--episodes",
            "5",
            "--trajectories",
            "traj",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(value(&text, "episodes"), Some("5"));
    let rates: f64 = ["success_rate", "collision_rate", "timeout_rate"]
        .iter()
        .map(|k| value(&text, k).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((rates - 1.0).abs() < 1e-3, "{text}");
    assert_eq!(fs::read_dir(dir.path().join("traj")).unwrap().count(), 5);

    let o = navgym(&["eval", "--checkpoint", "missing.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_prints_key_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = navgym(&["bench", "--obstacles", "20", "--iterations", "5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for key in ["scalar_scans_per_sec", "batched_scans_per_sec", "speedup"] {
        let v: f64 = value(&text, key)
            .unwrap_or_else(|| panic!("{key} missing:\n{text}"))
            .parse()
            .unwrap();
        assert!(v > 0.0);
    }
    assert_eq!(value(&text, "obstacles"), Some("20"));
}

#[test]
fn map_conversion_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let svg = r#"<svg xmlns="http://www.w3.org/2000/svg" width="400" height="300">
  <rect x="0" y="0" width="400" height="300" fill="none"/>
  <line x1="100" y1="0" x2="100" y2="200"/>
  <circle cx="300" cy="150" r="20"/>
  <g id="spawn"><rect x="20" y="20" width="60" height="60"/></g>
  <g id="goal"><circle cx="250" cy="250" r="30"/></g>
</svg>"#;
    fs::write(dir.path().join("room.svg"), svg).unwrap();
    let o = navgym(&["map", "room.svg", "-o", "room.map"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "name"), Some("room"));
    let map = navgym_core::worldmap::load_map(&fs::read_to_string(dir.path().join("room.map")).unwrap()).unwrap();
    assert!(map.obstacles.len() >= 6, "{:?}", map.obstacles);

    fs::write(dir.path().join("broken.svg"), "<svg").unwrap();
    let o = navgym(&["map", "broken.svg", "-o", "x.map"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fuse_lowers_ranges_for_low_obstacle() {
    let dir = tempfile::tempdir().unwrap();
    let laser: String = (0..1081).map(|_| "5.0\n").collect();
    fs::write(dir.path().join("laser.txt"), laser).unwrap();
    // a low box face one meter ahead, under the laser plane
    let mut cloud = String::new();
    for i in 0..21 {
        let y = -0.2 + 0.02 * i as f64;
        cloud.push_str(&format!("1.0 {y} 0.1\n"));
    }
    fs::write(dir.path().join("cloud.xyz"), cloud).unwrap();
    let o = navgym(
        &["fuse", "--scan", "laser.txt", "--cloud", "cloud.xyz", "-o", "fused.txt"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let changed: usize = value(&stdout(&o), "beams_changed").unwrap().parse().unwrap();
    assert!(changed > 0);
    let fused = fs::read_to_string(dir.path().join("fused.txt")).unwrap();
    let ranges: Vec<f64> = fused
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.trim().parse().unwrap())
        .collect();
    assert_eq!(ranges.len(), 1081);
    assert!(ranges[540] < 1.1 && ranges[540] >= 1.0, "{}", ranges[540]);
    assert_eq!(ranges[0], 5.0);

    let o = navgym(
        &["fuse", "--scan", "cloud.xyz", "--cloud", "cloud.xyz", "-o", "x.txt"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plot_writes_script() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "run", 3, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = navgym(
        &["plot", "run/metrics.csv", "-o", "plot.py", "--window", "10"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let script = fs::read_to_string(dir.path().join("plot.py")).unwrap();
    assert!(script.contains("WINDOW = 10"));
    assert!(script.contains("plot.png"));

    fs::write(dir.path().join("junk.csv"), "a,b\n1,2\n").unwrap();
    let o = navgym(&["plot", "junk.csv", "-o", "p.py"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_checkpoint_evaluates_reproducibly() {
    use navgym_core::acnet::{Checkpoint, CheckpointMeta, NetParams, NetShape, OptConfig};
    let dir = tempfile::tempdir().unwrap();
    let meta = CheckpointMeta {
        config_hash: 0,
        episodes: 0,
    };
    Checkpoint::new(NetParams::zeros(NetShape::default()), OptConfig::default(), meta)
        .save(&dir.path().join("zero.ckpt"))
        .unwrap();
    let args = ["eval", "--checkpoint", "zero.ckpt", "--episodes", "20", "--seed", "3"];
    let a = navgym(&args, dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let success: f64 = value(&stdout(&a), "success_rate").unwrap().parse().unwrap();
    assert!(success <= 0.1, "{}", stdout(&a));
    let b = navgym(&args, dir.path());
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn rect_svg_gives_four_segments() {
    let dir = tempfile::tempdir().unwrap();
    let svg = r#"<svg xmlns="http://www.w3.org/2000/svg">
  <rect x="0" y="0" width="500" height="400"/>
  <g id="spawn"><rect x="50" y="50" width="50" height="50"/></g>
  <g id="goal"><rect x="350" y="250" width="50" height="50"/></g>
</svg>"#;
    fs::write(dir.path().join("box.svg"), svg).unwrap();
    let o = navgym(&["map", "box.svg", "-o", "box.map"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("box.map")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("segment")).count(), 4, "{text}");
}

#[test]
fn empty_cloud_leaves_scan_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let laser: String = (0..1081).map(|i| format!("{}\n", 1.0 + 0.01 * i as f64)).collect();
    fs::write(dir.path().join("laser.txt"), &laser).unwrap();
    fs::write(dir.path().join("empty.xyz"), "# no points\n").unwrap();
    let o = navgym(
        &["fuse", "--scan", "laser.txt", "--cloud", "empty.xyz", "-o", "fused.txt"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "beams_changed"), Some("0"));
    let parse = |t: &str| t.lines().map(|l| l.parse::<f64>().unwrap()).collect::<Vec<_>>();
    assert_eq!(
        parse(&fs::read_to_string(dir.path().join("fused.txt")).unwrap()),
        parse(&laser)
    );
}
