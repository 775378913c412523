//! Command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{genie_shortest, upper_bound, write_genie_csv, GenieRow};
use crate::env::{EpisodeConfig, ObservationMode};
use crate::error::{Error, Result};
use crate::eval::{run_episode, run_eval, write_cdf_csv, write_metrics_csv, EvalConfig, Policy};
use crate::gridmap::{generate_city, load_grid, save_grid, Cell, CityGenParams, DEFAULT_ALTITUDE_M};
use crate::propagation::{compute_sinr_field, load_field, save_field, RadioParams, USER_HEIGHT_M};
use crate::qnet::{load_checkpoint, save_checkpoint, ArchSpec};
use crate::render::render;
use crate::rl::{train, write_curve_csv, TrainerConfig};
use crate::scenario::{derive_seed, Dataset, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "uav-dqn", version, about = "UAV access-point placement with deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural city height map.
    GenMap(GenMapArgs),
    /// Compute SINR fields for users on a map.
    Sinr(SinrArgs),
    /// Train a Q-network.
    Train(TrainArgs),
    /// Evaluate a policy on held-out fields.
    Eval(EvalArgs),
    /// Shortest paths to the target for every start cell.
    Genie(GenieArgs),
    /// Draw height and SINR images with optional policy trajectories.
    Render(RenderArgs),
    /// Mean gap between the target and the start SINR.
    UpperBound(UpperBoundArgs),
}

/// `W x H` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Extent(f64, f64);

impl FromStr for Extent {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Extent(p(w)?, p(h)?))
    }
}

/// `ROW,COL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CellArg(usize, usize);

impl FromStr for CellArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| format!("expected ROW,COL, got {s:?}"))?;
        let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        Ok(CellArg(p(r)?, p(c)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PolicyArg {
    Trained,
    Blind,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ObservationArg {
    Full,
    Blind,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct GenMapArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "256x256")]
    extent: Extent,
    #[arg(long, default_value_t = 0.35)]
    density: f64,
    #[arg(long, default_value_t = 4.0)]
    spacing: f64,
    #[arg(long)]
    out: PathBuf,
    /// JSON object whose keys override the flags above.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct SinrArgs {
    #[arg(long)]
    map: PathBuf,
    /// User cell; without it `--users` cells are drawn at random.
    #[arg(long)]
    user: Option<CellArg>,
    #[arg(long, default_value_t = 1)]
    users: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALTITUDE_M)]
    altitude: f64,
    /// Output file for a single user, or directory for several.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct DataArgs {
    /// Directory of `*.hgrid` maps and `<map>_*.sinr` fields.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many procedural maps instead of loading `--data`.
    #[arg(long, default_value_t = 0)]
    synthetic_maps: usize,
    #[arg(long, default_value_t = 10)]
    users_per_map: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    train_interval: usize,
    #[arg(long, default_value_t = 0.4)]
    dropout: f64,
    #[arg(long, default_value_t = 1.2)]
    explore_reward: f64,
    #[arg(long, default_value_t = 150_000)]
    steps: u64,
    #[arg(long, default_value_t = 2000)]
    target_sync: u64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 800)]
    t_max: usize,
    #[arg(long, default_value_t = 61)]
    obs_cells: usize,
    #[arg(long, value_enum, default_value_t = ObservationArg::Full)]
    observation: ObservationArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Best checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = PolicyArg::Trained)]
    policy: PolicyArg,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0.096)]
    random_prob: f64,
    #[arg(long, default_value_t = 500)]
    t_max: usize,
    #[arg(long, default_value_t = 5.0)]
    target: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    cdf: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct GenieArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5.0)]
    target: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Trajectories to overlay when a policy is given.
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    /// Writes `<prefix>_height.ppm` and `<prefix>_sinr.ppm`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct UpperBoundArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5.0)]
    target: f64,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Replaces fields of `args` with the keys of the JSON object at `path`.
/// Keys may use dashes or underscores.
fn apply_config<T: Serialize + DeserializeOwned>(args: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(path)?;
    let overrides: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(overrides) = overrides else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(args).map_err(|e| Error::Config(e.to_string()))?;
    let fields = merged.as_object_mut().expect("argument structs serialize to objects");
    for (key, value) in overrides {
        let key = key.replace('-', "_");
        if !fields.contains_key(&key) {
            return Err(Error::Config(format!("{}: unknown option {key:?}", path.display())));
        }
        fields.insert(key, value);
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    if args.synthetic_maps > 0 {
        return Dataset::synthetic(&SyntheticSpec {
            seed: args.data_seed,
            maps: args.synthetic_maps,
            users_per_map: args.users_per_map,
            ..SyntheticSpec::default()
        });
    }
    let dir = args
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("either --data or --synthetic-maps is required".into()))?;
    let data = Dataset::load_dir(dir)?;
    if data.fields.is_empty() {
        return Err(Error::EnvironmentUnusable(format!(
            "no SINR fields found in {}",
            dir.display()
        )));
    }
    Ok(data)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn gen_map(args: GenMapArgs) -> Result<()> {
    let grid = generate_city(&CityGenParams {
        seed: args.seed,
        extent_m: (args.extent.0, args.extent.1),
        building_density: args.density,
        spacing_m: args.spacing,
        ..CityGenParams::default()
    })?;
    save_grid(&grid, &args.out)?;
    println!("wrote {} ({}x{} cells)", args.out.display(), grid.ncols(), grid.nrows());
    Ok(())
}

fn sinr(args: SinrArgs) -> Result<()> {
    let grid = load_grid(&args.map)?;
    let radio = RadioParams::default();
    if let Some(CellArg(row, col)) = args.user {
        let field = compute_sinr_field(&grid, Cell::new(row, col), &radio, args.altitude, args.seed)?;
        save_field(&field, &args.out)?;
        println!("wrote {}", args.out.display());
        return Ok(());
    }
    let mut ground: Vec<Cell> = (0..grid.ncols() * grid.nrows())
        .map(|i| grid.cell_at(i))
        .filter(|&c| grid.height(c).is_ok_and(|h| h <= USER_HEIGHT_M))
        .collect();
    if ground.len() < args.users {
        return Err(Error::EnvironmentUnusable(format!(
            "only {} ground cells for {} users",
            ground.len(),
            args.users
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rand::seq::SliceRandom::shuffle(ground.as_mut_slice(), &mut rng);
    fs::create_dir_all(&args.out)?;
    let stem = args.map.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    for (u, &cell) in ground.iter().take(args.users).enumerate() {
        let field = compute_sinr_field(&grid, cell, &radio, args.altitude, derive_seed(args.seed, u as u64))?;
        let path = args.out.join(format!("{stem}_u{u:03}.sinr"));
        save_field(&field, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let config = TrainerConfig {
        gamma: args.gamma,
        batch_size: args.batch,
        train_interval: args.train_interval,
        target_sync_steps: args.target_sync,
        total_env_steps: args.steps,
        learning_rate: crate::rl::LrSchedule {
            initial: args.lr,
            ..Default::default()
        },
        arch: ArchSpec {
            input_cells: args.obs_cells,
            dropout: args.dropout,
            ..ArchSpec::default()
        },
        episode: EpisodeConfig {
            c_e: args.explore_reward,
            t_max: args.t_max,
            obs_cells: args.obs_cells,
            ..EpisodeConfig::training()
        },
        observation: match args.observation {
            ObservationArg::Full => ObservationMode::Full,
            ObservationArg::Blind => ObservationMode::Blind,
        },
        ..TrainerConfig::default()
    };
    info!("training on {} fields over {} maps", data.fields.len(), data.maps.len());
    let outcome = train(&data, &config, args.seed)?;
    save_checkpoint(&outcome.best, &args.out)?;
    if let Some(path) = &args.curve {
        write_curve_csv(&outcome.curve, create(path)?)?;
    }
    println!(
        "{} episodes, {} env steps, best trailing mean {}; wrote {}",
        outcome.curve.len(),
        outcome.env_steps,
        outcome
            .best_trailing_mean
            .map_or("n/a".into(), |v| format!("{v:.3} dB")),
        args.out.display()
    );
    Ok(())
}

fn load_policy_params(
    policy: PolicyArg,
    checkpoint: Option<&Path>,
) -> Result<Option<crate::qnet::QNetworkParams<f32>>> {
    match (policy, checkpoint) {
        (PolicyArg::Random, _) => Ok(None),
        (_, Some(path)) => Ok(Some(load_checkpoint(path)?)),
        (_, None) => Err(Error::Config(
            "--checkpoint is required for trained and blind policies".into(),
        )),
    }
}

fn as_policy<'p>(policy: PolicyArg, params: Option<&'p crate::qnet::QNetworkParams<f32>>) -> Policy<'p> {
    match (policy, params) {
        (PolicyArg::Trained, Some(p)) => Policy::Trained(p),
        (PolicyArg::Blind, Some(p)) => Policy::Blind(p),
        _ => Policy::Random,
    }
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let params = load_policy_params(args.policy, args.checkpoint.as_deref())?;
    let obs_cells = params
        .as_ref()
        .map_or(EpisodeConfig::default().obs_cells, |p| p.arch.input_cells);
    let config = EvalConfig {
        n_episodes: args.episodes,
        test_random_prob: args.random_prob,
        seed: args.seed,
        episode: EpisodeConfig {
            t_max: args.t_max,
            target_sinr_db: args.target,
            obs_cells,
            ..EpisodeConfig::testing()
        },
    };
    let metrics = run_eval(as_policy(args.policy, params.as_ref()), &data, &config)?;
    if let Some(path) = &args.metrics {
        write_metrics_csv(&metrics, create(path)?)?;
    }
    if let Some(path) = &args.cdf {
        write_cdf_csv(&metrics.cdf, create(path)?)?;
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |m| format!("{m}"));
    println!(
        "episodes {} success_rate {:.4} median_steps {} genie_median {}",
        metrics.records.len(),
        metrics.success_rate,
        fmt(metrics.median_steps),
        fmt(metrics.genie_median())
    );
    Ok(())
}

fn genie_cmd(args: GenieArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let mut rows = Vec::new();
    for (i, f) in data.fields.iter().enumerate() {
        for start in f.field.permissible_starts() {
            let result = genie_shortest(data.grid_of(i), &f.field, start, args.target, f.field.altitude_m())?;
            rows.push(GenieRow {
                field: i,
                start,
                result,
            });
        }
    }
    write_genie_csv(&rows, create(&args.out)?)?;
    let reachable = rows.iter().filter(|r| r.result.reachable).count();
    println!(
        "{} starts, {reachable} reachable; wrote {}",
        rows.len(),
        args.out.display()
    );
    Ok(())
}

fn render_cmd(args: RenderArgs) -> Result<()> {
    let grid = load_grid(&args.map)?;
    let field = load_field(&args.field)?;
    let mut trajectories = Vec::new();
    if let Some(policy) = args.policy {
        let params = load_policy_params(policy, args.checkpoint.as_deref())?;
        let config = EpisodeConfig {
            obs_cells: params.as_ref().map_or(61, |p| p.arch.input_cells),
            ..EpisodeConfig::testing()
        };
        let env = crate::env::Env::new(&grid, &field, config)?;
        let starts = env.permissible_starts();
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        for _ in 0..args.episodes {
            if starts.is_empty() {
                break;
            }
            let start = starts[rng.gen_range(0..starts.len())];
            let (_, _, _, _, path) = run_episode(
                as_policy(policy, params.as_ref()),
                &env,
                start,
                EvalConfig::default().test_random_prob,
                &mut rng,
            )?;
            trajectories.push(path);
        }
    }
    let (h, s) = render(&grid, &field, &trajectories, args.scale, &args.out_prefix)?;
    println!("wrote {} and {}", h.display(), s.display());
    Ok(())
}

fn upper_bound_cmd(args: UpperBoundArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    println!("{}", upper_bound(data.sinr_fields(), args.target)?);
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenMap(a) => {
            let c = a.config.clone();
            gen_map(apply_config(a, c.as_deref())?)
        }
        Command::Sinr(a) => {
            let c = a.config.clone();
            sinr(apply_config(a, c.as_deref())?)
        }
        Command::Train(a) => {
            let c = a.config.clone();
            train_cmd(apply_config(a, c.as_deref())?)
        }
        Command::Eval(a) => {
            let c = a.config.clone();
            eval_cmd(apply_config(a, c.as_deref())?)
        }
        Command::Genie(a) => {
            let c = a.config.clone();
            genie_cmd(apply_config(a, c.as_deref())?)
        }
        Command::Render(a) => {
            let c = a.config.clone();
            render_cmd(apply_config(a, c.as_deref())?)
        }
        Command::UpperBound(a) => {
            let c = a.config.clone();
            upper_bound_cmd(apply_config(a, c.as_deref())?)
        }
    }
}

/// Exit code for an error: 1 for bad usage or configuration, 2 for bad data.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParams(_) => 1,
        _ => 2,
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
