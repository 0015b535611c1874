use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use navgym_core::acnet::Checkpoint;
use navgym_core::fusion::{fuse_scans, pointcloud_to_scan, read_point_cloud, read_scan, write_scan, VirtualScanSpec};
use navgym_core::ga3c::{evaluate, plot_script, run_training, RunOptions, TrainError};
use navgym_core::geometry::{cast_scan_scalar, Scanner};
use navgym_core::sim_env::write_trajectory_csv;
use navgym_core::worldmap::{convert_svg, sample_free_pose, save_map, scatter_obstacles, Rect, Region};
use navgym_core::{Environment, Obstacle, Pose, RunConfig, ScannerSpec, Vec2, WorldMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mapless navigation training and evaluation.
#[derive(Parser)]
#[command(name = "navgym", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with parallel actor-critic workers.
    Train(TrainArgs),
    /// Evaluate a checkpoint with greedy actions.
    Eval(EvalArgs),
    /// Time the scalar and batched ray casters.
    Bench(BenchArgs),
    /// Convert an SVG drawing into a map file.
    Map(MapArgs),
    /// Fuse a laser scan with a depth-camera point cloud.
    Fuse(FuseArgs),
    /// Write a plotting script for a metrics CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.num_agents=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Continue from a checkpoint; episode numbering carries on.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print progress every N episodes (0 disables).
    #[arg(long, default_value_t = 100)]
    progress_every: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Builtin map name or map file.
    #[arg(long, default_value = "simple_room")]
    map: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run configuration supplying robot, scanner and reward settings.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Write one trajectory CSV per episode into this directory.
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Builtin map name or map file. Without it, random clutter is generated.
    #[arg(long)]
    map: Option<String>,
    /// Number of random obstacles when no map is given.
    #[arg(long, default_value_t = 100)]
    obstacles: usize,
    /// Scans cast per path.
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MapArgs {
    /// Input SVG drawing.
    svg: PathBuf,
    /// Output map file.
    #[arg(short, long)]
    out: PathBuf,
    /// Drawing units per meter.
    #[arg(long, default_value_t = 100.0)]
    scale: f64,
    /// Map name (defaults to the SVG file stem).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct FuseArgs {
    /// Laser scan on the default 1081-beam grid, one range per line.
    #[arg(long)]
    scan: PathBuf,
    /// Point cloud in the robot frame, `x y z` per line.
    #[arg(long)]
    cloud: PathBuf,
    /// Fused scan output.
    #[arg(short, long)]
    out: PathBuf,
    /// Camera horizontal field of view in degrees.
    #[arg(long, default_value_t = VirtualScanSpec::default().fov)]
    fov: f64,
    #[arg(long, default_value_t = VirtualScanSpec::default().height_band[0])]
    z_min: f64,
    #[arg(long, default_value_t = VirtualScanSpec::default().height_band[1])]
    z_max: f64,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics CSV written by `train`.
    metrics: PathBuf,
    /// Script output path.
    #[arg(short, long)]
    out: PathBuf,
    /// Image the script renders (defaults to the script path with `.png`).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Moving-average window in episodes.
    #[arg(long, default_value_t = 100)]
    window: usize,
}

/// Exit code 1 for usage and configuration problems, 2 for runtime failures.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(usage)?,
        None => String::new(),
    };
    RunConfig::from_toml(&text, overrides)
        .with_context(|| match path {
            Some(p) => format!("config {}", p.display()),
            None => "config".to_string(),
        })
        .map_err(usage)
}

fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("NAVGYM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| usage(anyhow!("NAVGYM_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(out) = args.output {
        config.output_dir = out;
    }
    let resume = match &args.resume {
        Some(p) => Some(
            Checkpoint::load(p)
                .with_context(|| format!("loading checkpoint {}", p.display()))
                .map_err(usage)?,
        ),
        None => None,
    };
    fs::create_dir_all(&config.output_dir).with_context(|| format!("creating {}", config.output_dir.display()))?;
    fs::write(config.output_dir.join("config.toml"), config.to_toml()).context("writing config snapshot")?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        // a second handler cannot be installed in tests that call this twice; ignore that
        let _ = ctrlc::set_handler(move || {
            eprintln!("interrupt: stopping after in-flight work, then writing a final checkpoint");
            stop.store(true, Ordering::SeqCst);
        });
    }
    let options = RunOptions {
        resume,
        stop,
        max_threads: thread_cap()?,
        progress: (args.progress_every > 0).then(|| {
            Box::new(|p: &navgym_core::ga3c::Progress| {
                eprintln!(
                    "episode {:>6}  updates {:>6}  success(100) {:.2}  reward(100) {:>8.2}  {:.0}s",
                    p.episodes,
                    p.updates,
                    p.success_rate,
                    p.mean_reward,
                    p.elapsed.as_secs_f64()
                );
            }) as Box<dyn FnMut(&navgym_core::ga3c::Progress) + Send>
        }),
        progress_every: args.progress_every,
    };
    let summary = run_training(&config, options).map_err(|e| match e {
        TrainError::Config(_) | TrainError::Map { .. } | TrainError::Checkpoint(_) => usage(e),
        other => Failure::Runtime(other.into()),
    })?;
    if let Some(w) = &summary.config_warning {
        eprintln!("warning: {w}");
    }
    println!("episodes={}", summary.episodes);
    println!("updates={}", summary.updates);
    println!("samples={}", summary.samples_consumed);
    println!("elapsed_s={:.1}", summary.elapsed.as_secs_f64());
    println!("checkpoint={}", summary.final_checkpoint.display());
    if summary.interrupted {
        println!("interrupted=true");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref(), &[])?;
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))
        .map_err(usage)?;
    ckpt.ensure_shape(&config.net_shape()).map_err(usage)?;
    let map = WorldMap::resolve(&args.map)
        .with_context(|| format!("map `{}`", args.map))
        .map_err(usage)?;
    let env = Environment::new(Arc::new(map), config.env.clone());
    let report = evaluate(
        &ckpt.params,
        &env,
        args.episodes,
        args.seed,
        args.trajectories.is_some(),
    )?;
    if let Some(dir) = &args.trajectories {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, rows) in report.trajectories.iter().enumerate() {
            let path = dir.join(format!("episode_{i:04}.csv"));
            let mut out =
                BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            write_trajectory_csv(rows, &mut out)?;
            out.flush()?;
        }
    }
    println!("map={}", env.map().name);
    for (k, v) in report.key_values() {
        println!("{k}={v}");
    }
    Ok(())
}

fn time_per_scan(iterations: usize, mut cast: impl FnMut(usize) -> f64) -> Duration {
    // warm-up pass, and a checksum so the work cannot be optimized away
    let mut sink = cast(0);
    let t0 = Instant::now();
    for i in 0..iterations {
        sink += cast(i);
    }
    let elapsed = t0.elapsed();
    std::hint::black_box(sink);
    elapsed / iterations.max(1) as u32
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (name, obstacles, poses) = match &args.map {
        Some(m) => {
            let map = WorldMap::resolve(m)
                .with_context(|| format!("map `{m}`"))
                .map_err(usage)?;
            let regions = [Region::Rect(map.bounds)];
            let poses: Vec<Pose> = (0..64)
                .map(|_| sample_free_pose(&map, &regions, 0.2, &mut rng))
                .collect::<Result<_, _>>()?;
            (map.name.clone(), map.obstacles, poses)
        }
        None => {
            let bounds = Rect::new(Vec2::new(-10.0, -10.0), Vec2::new(10.0, 10.0));
            let obstacles: Vec<Obstacle> = scatter_obstacles(&bounds, args.obstacles, &mut rng);
            let poses = (0..64)
                .map(|i| Pose::new(-9.0 + 0.28 * i as f64, 0.3 * (i % 7) as f64 - 1.0, 0.1 * i as f64))
                .collect();
            (format!("random{}", args.obstacles), obstacles, poses)
        }
    };
    let spec = ScannerSpec::default();
    let scanner = Scanner::new(spec.clone());
    let scalar = time_per_scan(args.iterations, |i| {
        cast_scan_scalar(&poses[i % poses.len()], &obstacles, &spec).ranges[0]
    });
    let batched = time_per_scan(args.iterations, |i| {
        scanner.cast(&poses[i % poses.len()], &obstacles).ranges[0]
    });
    let per_sec = |d: Duration| 1.0 / d.as_secs_f64().max(1e-12);
    println!("map={name}");
    println!("obstacles={}", obstacles.len());
    println!("beams={}", spec.num_beams);
    println!("iterations={}", args.iterations);
    println!("scalar_scans_per_sec={:.1}", per_sec(scalar));
    println!("batched_scans_per_sec={:.1}", per_sec(batched));
    println!("speedup={:.2}", scalar.as_secs_f64() / batched.as_secs_f64().max(1e-12));
    Ok(())
}

fn cmd_map(args: MapArgs) -> Result<(), Failure> {
    let svg = fs::read_to_string(&args.svg)
        .with_context(|| format!("reading {}", args.svg.display()))
        .map_err(usage)?;
    let mut map = convert_svg(&svg, args.scale)
        .with_context(|| format!("converting {}", args.svg.display()))
        .map_err(usage)?;
    if let Some(name) = args.name {
        map.name = name;
    } else if let Some(stem) = args.svg.file_stem() {
        map.name = stem.to_string_lossy().into_owned();
    }
    fs::write(&args.out, save_map(&map))
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(usage)?;
    println!("name={}", map.name);
    println!("obstacles={}", map.obstacles.len());
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<(), Failure> {
    let open = |p: &Path| {
        fs::File::open(p)
            .map(BufReader::new)
            .with_context(|| format!("opening {}", p.display()))
            .map_err(usage)
    };
    let laser = read_scan(open(&args.scan)?)
        .with_context(|| format!("reading {}", args.scan.display()))
        .map_err(usage)?;
    let cloud = read_point_cloud(open(&args.cloud)?)
        .with_context(|| format!("reading {}", args.cloud.display()))
        .map_err(usage)?;
    let spec = ScannerSpec::default();
    let vspec = VirtualScanSpec {
        fov: args.fov,
        height_band: [args.z_min, args.z_max],
        ..VirtualScanSpec::default()
    };
    vspec.validate(&spec).map_err(|e| usage(anyhow!(e)))?;
    let virtual_scan = pointcloud_to_scan(&cloud, &vspec, &spec);
    let fused = fuse_scans(&laser, &virtual_scan).map_err(usage)?;
    let mut out = BufWriter::new(
        fs::File::create(&args.out)
            .with_context(|| format!("creating {}", args.out.display()))
            .map_err(usage)?,
    );
    write_scan(&fused, &mut out)?;
    out.flush()?;
    let changed = fused.ranges.iter().zip(&laser.ranges).filter(|(a, b)| a != b).count();
    println!("beams={}", fused.len());
    println!("points={}", cloud.points.len());
    println!("beams_changed={changed}");
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), Failure> {
    // fail early on something that is not a metrics file
    navgym_core::ga3c::read_metrics(&args.metrics)
        .with_context(|| format!("reading {}", args.metrics.display()))
        .map_err(usage)?;
    let image = args.image.unwrap_or_else(|| args.out.with_extension("png"));
    let script = plot_script(&args.metrics.to_string_lossy(), &image.to_string_lossy(), args.window);
    fs::write(&args.out, script)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(usage)?;
    println!("script={}", args.out.display());
    println!("image={}", image.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Map(a) => cmd_map(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
