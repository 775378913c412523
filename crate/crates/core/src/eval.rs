//! Test-time episode runner and metrics.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::genie_shortest;
use crate::env::{DoneReason, Env, EpisodeConfig, ObservationMode};
use crate::error::{Error, Result};
use crate::gridmap::Cell;
use crate::qnet::{forward, ArchSpec, InputBatch, Mode, QNetworkParams};
use crate::rl::{masked_argmax, uniform_legal};
use crate::scenario::{derive_seed, Dataset};

pub const METRICS_CSV_HEADER: &str =
    "episode,field_id,start_row,start_col,steps,reached,start_sinr_db,end_sinr_db,genie_steps";
pub const CDF_CSV_HEADER: &str = "steps,cum_fraction";

#[derive(Debug, Clone, Copy)]
pub enum Policy<'p> {
    /// Full observations.
    Trained(&'p QNetworkParams<f32>),
    /// SINR-only observations.
    Blind(&'p QNetworkParams<f32>),
    Random,
}

impl Policy<'_> {
    fn network(&self) -> Option<(&QNetworkParams<f32>, ObservationMode)> {
        match *self {
            Policy::Trained(p) => Some((p, ObservationMode::Full)),
            Policy::Blind(p) => Some((p, ObservationMode::Blind)),
            Policy::Random => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_episodes: usize,
    /// Chance of replacing the greedy action with a uniform legal one.
    pub test_random_prob: f64,
    pub seed: u64,
    pub episode: EpisodeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_episodes: 1000,
            test_random_prob: 0.096,
            seed: 0,
            episode: EpisodeConfig::testing(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.test_random_prob) {
            return Err(Error::Config(format!(
                "test random probability {} outside [0, 1]",
                self.test_random_prob
            )));
        }
        if self.n_episodes == 0 {
            return Err(Error::Config("at least one episode is required".into()));
        }
        self.episode.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: usize,
    pub field: usize,
    pub start: Cell,
    pub steps: usize,
    pub reached: bool,
    pub start_sinr_db: f64,
    pub end_sinr_db: f64,
    /// `None` when no qualifying cell is reachable.
    pub genie_steps: Option<usize>,
    pub trajectory: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub records: Vec<EvalRecord>,
    pub success_rate: f64,
    /// Over successful episodes only.
    pub median_steps: Option<f64>,
    pub cdf: Vec<(usize, f64)>,
}

impl EvalMetrics {
    pub fn from_records(records: Vec<EvalRecord>, t_max: usize) -> Self {
        let n = records.len().max(1) as f64;
        let success_rate = records.iter().filter(|r| r.reached).count() as f64 / n;
        let successes: Vec<f64> = records.iter().filter(|r| r.reached).map(|r| r.steps as f64).collect();
        EvalMetrics {
            success_rate,
            median_steps: median(&successes),
            cdf: steps_cdf(&records, t_max),
            records,
        }
    }

    /// Median genie steps over episodes whose target is reachable.
    pub fn genie_median(&self) -> Option<f64> {
        let g: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.genie_steps)
            .map(|s| s as f64)
            .collect();
        median(&g)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Fraction of all episodes that reached the target within `k` steps, for
/// `k = 0..=t_max`.
pub fn steps_cdf(records: &[EvalRecord], t_max: usize) -> Vec<(usize, f64)> {
    let n = records.len().max(1) as f64;
    let mut hist = vec![0usize; t_max + 1];
    for r in records.iter().filter(|r| r.reached && r.steps <= t_max) {
        hist[r.steps] += 1;
    }
    let mut acc = 0;
    hist.iter()
        .enumerate()
        .map(|(k, &h)| {
            acc += h;
            (k, acc as f64 / n)
        })
        .collect()
}

/// Runs one test episode from `start`.
pub fn run_episode(
    policy: Policy<'_>,
    env: &Env<'_>,
    start: Cell,
    test_random_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, bool, f64, f64, Vec<Cell>)> {
    let config = env.config();
    let (mut state, _) = env.reset_at(start, crate::env::Rotation::new(config.rotation_quarter_turns))?;
    let mut trajectory = vec![start];
    while !state.done {
        let legal = env.legal_actions(&state);
        let explore = match policy {
            Policy::Random => true,
            _ => rng.gen::<f64>() < test_random_prob,
        };
        let action = if explore {
            uniform_legal(legal, rng)
        } else {
            let (params, mode) = policy.network().expect("non-random policies have a network");
            let obs = env.observe(&state, mode);
            let batch = InputBatch::from_observations([&obs], config.obs_cells, config.p_low_db, config.p_high_db)?;
            let q: Vec<f64> = forward(params, &batch, Mode::Infer)?
                .into_iter()
                .map(f64::from)
                .collect();
            masked_argmax(&q, legal)
        }
        .ok_or_else(|| Error::EnvironmentUnusable("UAV has no legal move".into()))?;
        env.step(&mut state, action)?;
        trajectory.push(state.uav_cell);
    }
    Ok((
        state.t,
        state.done_reason == DoneReason::TargetReached,
        state.start_sinr(),
        state.current_sinr(),
        trajectory,
    ))
}

/// Evaluates `policy` on uniformly drawn fields and starts. Field and start
/// of episode `i` depend only on `config.seed` and `i`, so different
/// policies are compared on the same episodes.
pub fn run_eval(policy: Policy<'_>, data: &Dataset, config: &EvalConfig) -> Result<EvalMetrics> {
    config.validate()?;
    if let Some((params, _)) = policy.network() {
        let arch = ArchSpec {
            input_cells: config.episode.obs_cells,
            ..params.arch.clone()
        };
        params.ensure_arch(&arch)?;
    }
    if data.fields.is_empty() {
        return Err(Error::EnvironmentUnusable("no evaluation fields".into()));
    }
    let envs = data.envs(&config.episode)?;
    let records = (0..config.n_episodes)
        .into_par_iter()
        .map(|episode| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, episode as u64));
            let field = rng.gen_range(0..envs.len());
            let env = &envs[field];
            let starts = env.permissible_starts();
            if starts.is_empty() {
                return Err(Error::EnvironmentUnusable(format!(
                    "field {field} has no permissible start"
                )));
            }
            let start = starts[rng.gen_range(0..starts.len())];
            let genie = genie_shortest(
                data.grid_of(field),
                &data.fields[field].field,
                start,
                config.episode.target_sinr_db,
                config.episode.altitude_m,
            )?;
            let mut policy_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed ^ 0x5eed, episode as u64));
            let (steps, reached, start_sinr_db, end_sinr_db, trajectory) =
                run_episode(policy, env, start, config.test_random_prob, &mut policy_rng)?;
            Ok(EvalRecord {
                episode,
                field,
                start,
                steps,
                reached,
                start_sinr_db,
                end_sinr_db,
                genie_steps: genie.reachable.then_some(genie.steps),
                trajectory,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalMetrics::from_records(records, config.episode.t_max))
}

pub fn write_metrics_csv(metrics: &EvalMetrics, mut w: impl Write) -> Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in &metrics.records {
        let genie = r.genie_steps.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.field,
            r.start.row,
            r.start.col,
            r.steps,
            r.reached as u8,
            r.start_sinr_db,
            r.end_sinr_db,
            genie
        )?;
    }
    Ok(())
}

pub fn write_cdf_csv(cdf: &[(usize, f64)], mut w: impl Write) -> Result<()> {
    writeln!(w, "{CDF_CSV_HEADER}")?;
    for (k, f) in cdf {
        writeln!(w, "{k},{f}")?;
    }
    Ok(())
}
