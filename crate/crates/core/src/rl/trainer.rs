use std::collections::VecDeque;
use std::io::Write;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{select_action, td_targets, Adam, EpsilonSchedule, LrSchedule, ReplayBuffer, TdBatch};
use crate::env::{Action, ActionSet, DoneReason, Env, EnvState, EpisodeConfig, Observation, ObservationMode, Rotation};
use crate::error::{Error, Result};
use crate::gridmap::Cell;
use crate::qnet::{forward, init_params, loss_and_grads, ArchSpec, InputBatch, Mode, QNetworkParams};
use crate::scenario::{derive_seed, Dataset};

pub const CURVE_CSV_HEADER: &str = "episode,start_sinr_db,end_sinr_db,steps,reached_target,trailing100_mean_increase";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    /// Env steps per gradient step.
    pub train_interval: usize,
    /// Gradient steps between target-network copies.
    pub target_sync_steps: u64,
    pub epsilon: EpsilonSchedule,
    pub learning_rate: LrSchedule,
    pub grad_clip_norm: f64,
    pub total_env_steps: u64,
    pub replay_capacity: usize,
    /// Transitions collected before the first gradient step.
    pub learning_starts: usize,
    /// Episodes in the trailing mean that selects the best checkpoint.
    pub trailing_window: usize,
    pub arch: ArchSpec,
    pub episode: EpisodeConfig,
    pub observation: ObservationMode,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            batch_size: 20,
            train_interval: 3,
            target_sync_steps: 2000,
            epsilon: EpsilonSchedule::default(),
            learning_rate: LrSchedule::default(),
            grad_clip_norm: 10.0,
            total_env_steps: 150_000,
            replay_capacity: ReplayBuffer::<()>::DEFAULT_CAPACITY,
            learning_starts: 1000,
            trailing_window: 100,
            arch: ArchSpec::default(),
            episode: EpisodeConfig::training(),
            observation: ObservationMode::Full,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.batch_size == 0 || self.train_interval == 0 || self.target_sync_steps == 0 {
            return bad("batch size, train interval and target sync must be positive".into());
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay capacity is smaller than one batch".into());
        }
        if self.trailing_window == 0 {
            return bad("trailing window must be positive".into());
        }
        if !(self.grad_clip_norm > 0.0) || !(self.learning_rate.initial > 0.0) {
            return bad("gradient clip and learning rate must be positive".into());
        }
        if self.arch.input_cells != self.episode.obs_cells {
            return bad(format!(
                "network input {} does not match observation size {}",
                self.arch.input_cells, self.episode.obs_cells
            ));
        }
        self.arch.validate()?;
        self.episode.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub field: usize,
    pub start: Cell,
    pub start_sinr_db: f64,
    pub end_sinr_db: f64,
    pub steps: usize,
    pub reached_target: bool,
    /// Mean SINR increase over the trailing window, once it is full.
    pub trailing_mean_increase: Option<f64>,
}

impl EpisodeRecord {
    pub fn increase(&self) -> f64 {
        self.end_sinr_db - self.start_sinr_db
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the highest trailing mean, or the final ones if the
    /// window never filled.
    pub best: QNetworkParams<f32>,
    pub best_trailing_mean: Option<f64>,
    pub last: QNetworkParams<f32>,
    pub curve: Vec<EpisodeRecord>,
    pub env_steps: u64,
    pub train_steps: u64,
}

pub fn write_curve_csv(curve: &[EpisodeRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{CURVE_CSV_HEADER}")?;
    for r in curve {
        let trailing = r.trailing_mean_increase.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.episode, r.start_sinr_db, r.end_sinr_db, r.steps, r.reached_target as u8, trailing
        )?;
    }
    Ok(())
}

/// Enough to re-render an observation: the field, the UAV pose and a slice of
/// the visit arena.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ObsKey {
    field: u32,
    row: u16,
    col: u16,
    rotation: u8,
    visits_start: usize,
    visits_len: u32,
}

#[derive(Debug, Clone, Copy)]
struct Stored {
    obs: ObsKey,
    action: u8,
    reward: f64,
    next: ObsKey,
    terminal: bool,
    next_legal: ActionSet,
}

/// Append-only log of measurements; each episode owns a contiguous run.
#[derive(Debug, Default)]
struct VisitArena {
    cells: Vec<(u16, u16, f32)>,
}

impl VisitArena {
    fn key(&self, field: usize, state: &EnvState, episode_start: usize) -> ObsKey {
        ObsKey {
            field: field as u32,
            row: state.uav_cell.row as u16,
            col: state.uav_cell.col as u16,
            rotation: state.rotation.quarter_turns(),
            visits_start: episode_start,
            visits_len: (self.cells.len() - episode_start) as u32,
        }
    }

    fn push(&mut self, cell: Cell, sinr: f64) {
        self.cells.push((cell.row as u16, cell.col as u16, sinr as f32));
    }

    fn render(&self, envs: &[Env<'_>], key: &ObsKey, mode: ObservationMode, obs: &mut Observation) {
        let visits = &self.cells[key.visits_start..key.visits_start + key.visits_len as usize];
        envs[key.field as usize].render_window(
            Cell::new(key.row as usize, key.col as usize),
            Rotation::new(key.rotation),
            visits
                .iter()
                .map(|&(r, c, s)| (Cell::new(r as usize, c as usize), s as f64)),
            mode,
            obs,
        );
    }
}

struct Learner<'e, 'd> {
    config: &'e TrainerConfig,
    envs: &'e [Env<'d>],
    online: QNetworkParams<f32>,
    target: QNetworkParams<f32>,
    adam: Adam<f32>,
    buffer: ReplayBuffer<Stored>,
    arena: VisitArena,
    scratch: Observation,
    train_steps: u64,
}

impl Learner<'_, '_> {
    fn input_batch<'k>(&mut self, keys: impl Iterator<Item = &'k ObsKey>, len: usize) -> InputBatch<f32> {
        let ep = &self.config.episode;
        let mut batch = InputBatch::with_capacity(len, ep.obs_cells);
        for key in keys {
            self.arena
                .render(self.envs, key, self.config.observation, &mut self.scratch);
            batch.push_observation(&self.scratch, ep.p_low_db, ep.p_high_db);
        }
        batch
    }

    fn greedy_q(&self, obs: &Observation) -> Result<Vec<f64>> {
        let ep = &self.config.episode;
        let batch = InputBatch::from_observations([obs], ep.obs_cells, ep.p_low_db, ep.p_high_db)?;
        Ok(forward(&self.online, &batch, Mode::Infer)?
            .into_iter()
            .map(|v| v as f64)
            .collect())
    }

    fn train_step(&mut self, rng: &mut ChaCha8Rng, lr: f64) -> Result<()> {
        let b = self.config.batch_size;
        let sample: Vec<Stored> = self.buffer.sample(b, rng)?.into_iter().copied().collect();
        let inputs = self.input_batch(sample.iter().map(|s| &s.obs), b);
        let next_inputs = self.input_batch(sample.iter().map(|s| &s.next), b);
        let rewards: Vec<f64> = sample.iter().map(|s| s.reward).collect();
        let terminal: Vec<bool> = sample.iter().map(|s| s.terminal).collect();
        let next_legal: Vec<ActionSet> = sample.iter().map(|s| s.next_legal).collect();
        let targets = td_targets(
            &TdBatch {
                rewards: &rewards,
                terminal: &terminal,
                next_inputs: &next_inputs,
                next_legal: &next_legal,
            },
            &self.online,
            &self.target,
            self.config.gamma,
        )?;
        let actions: Vec<usize> = sample.iter().map(|s| s.action as usize).collect();
        let targets: Vec<f32> = targets.into_iter().map(|v| v as f32).collect();
        let mut out = loss_and_grads(
            &self.online,
            &inputs,
            &actions,
            &targets,
            Mode::Train {
                dropout_seed: rng.gen(),
            },
        )?;
        out.grads.clip_global_norm(self.config.grad_clip_norm);
        self.adam.update(&mut self.online, &out.grads, lr);
        if let Some(stats) = &out.bn_stats {
            self.online.update_running_stats(stats);
        }
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.config.target_sync_steps) {
            self.target = self.online.clone();
        }
        Ok(())
    }
}

/// Runs double DQN over the fields of `data` for `config.total_env_steps`
/// environment steps. Identical inputs and seed give identical outcomes.
pub fn train(data: &Dataset, config: &TrainerConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if data.fields.is_empty() {
        return Err(Error::EnvironmentUnusable("no training fields".into()));
    }
    let envs = data.envs(&config.episode)?;
    if let Some(i) = envs.iter().position(|e| e.permissible_starts().is_empty()) {
        return Err(Error::EnvironmentUnusable(format!(
            "field {i} has no permissible start"
        )));
    }
    let online: QNetworkParams<f32> = init_params(derive_seed(seed, 0), &config.arch)?;
    let mut learner = Learner {
        config,
        envs: &envs,
        target: online.clone(),
        adam: Adam::new(&online),
        online,
        buffer: ReplayBuffer::new(config.replay_capacity),
        arena: VisitArena::default(),
        scratch: Observation {
            size: 0,
            topo: Vec::new(),
            sinr: Vec::new(),
        },
        train_steps: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let total = config.total_env_steps;
    let warmup = config.learning_starts.max(config.batch_size);
    let mut env_steps = 0u64;
    let mut curve: Vec<EpisodeRecord> = Vec::new();
    let mut window: VecDeque<f64> = VecDeque::with_capacity(config.trailing_window);
    let mut best: Option<(f64, QNetworkParams<f32>)> = None;
    let mut idle_episodes = 0usize;

    while env_steps < total {
        let field = rng.gen_range(0..envs.len());
        let env = &envs[field];
        let (mut state, mut obs) = env.reset(rng.gen())?;
        let episode_start = learner.arena.cells.len();
        learner.arena.push(state.uav_cell, state.current_sinr());
        if config.observation != ObservationMode::Full {
            obs = env.observe(&state, config.observation);
        }
        let mut prev: Option<Action> = None;
        let mut key = learner.arena.key(field, &state, episode_start);
        while !state.done && env_steps < total {
            let eps = config.epsilon.value(env_steps, total);
            let legal = env.legal_actions(&state);
            let selection = select_action(legal, eps, prev, &mut rng, || learner.greedy_q(&obs))?;
            let outcome = env.step(&mut state, selection.action)?;
            if outcome.newly_visited {
                learner.arena.push(state.uav_cell, state.current_sinr());
            }
            obs = match config.observation {
                ObservationMode::Full => outcome.observation,
                mode => env.observe(&state, mode),
            };
            let next = learner.arena.key(field, &state, episode_start);
            learner.buffer.push(Stored {
                obs: key,
                action: selection.action.index() as u8,
                reward: outcome.reward,
                next,
                terminal: outcome.done_reason == DoneReason::TargetReached,
                next_legal: env.legal_actions(&state),
            });
            key = next;
            prev = Some(selection.action);
            env_steps += 1;
            if env_steps.is_multiple_of(config.train_interval as u64) && learner.buffer.len() >= warmup {
                learner.train_step(&mut rng, config.learning_rate.value(env_steps))?;
            }
        }
        if !state.done {
            break;
        }
        if state.t == 0 {
            idle_episodes += 1;
            if idle_episodes > 100_000 {
                return Err(Error::EnvironmentUnusable(
                    "episodes keep starting at the target".into(),
                ));
            }
        } else {
            idle_episodes = 0;
        }
        let increase = state.current_sinr() - state.start_sinr();
        window.push_back(increase);
        if window.len() > config.trailing_window {
            window.pop_front();
        }
        let trailing =
            (window.len() == config.trailing_window).then(|| window.iter().sum::<f64>() / window.len() as f64);
        if let Some(t) = trailing {
            if best.as_ref().is_none_or(|(b, _)| t > *b) {
                best = Some((t, learner.online.clone()));
            }
        }
        curve.push(EpisodeRecord {
            episode: curve.len(),
            field,
            start: state.start_cell,
            start_sinr_db: state.start_sinr(),
            end_sinr_db: state.current_sinr(),
            steps: state.t,
            reached_target: state.done_reason == DoneReason::TargetReached,
            trailing_mean_increase: trailing,
        });
        if curve.len().is_multiple_of(200) {
            info!(
                "episode {} env step {env_steps}/{total} train step {} trailing {:.2}",
                curve.len(),
                learner.train_steps,
                trailing.unwrap_or(f64::NAN)
            );
        }
    }

    let last = learner.online;
    let (best_trailing_mean, best) = match best {
        Some((t, p)) => (Some(t), p),
        None => (None, last.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_trailing_mean,
        last,
        curve,
        env_steps,
        train_steps: learner.train_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::ConvSpec;
    use crate::scenario::SyntheticSpec;

    fn tiny_config(steps: u64) -> TrainerConfig {
        TrainerConfig {
            total_env_steps: steps,
            learning_starts: 50,
            target_sync_steps: 20,
            trailing_window: 10,
            arch: ArchSpec {
                input_cells: 9,
                convs: vec![
                    ConvSpec {
                        filters: 2,
                        kernel: 3,
                        stride: 2,
                    },
                    ConvSpec {
                        filters: 2,
                        kernel: 3,
                        stride: 1,
                    },
                ],
                fc_units: 8,
                actions: 4,
                dropout: 0.2,
            },
            episode: EpisodeConfig {
                obs_cells: 9,
                t_max: 60,
                ..EpisodeConfig::training()
            },
            ..TrainerConfig::default()
        }
    }

    fn small_data() -> Dataset {
        Dataset::synthetic(&SyntheticSpec {
            seed: 11,
            maps: 2,
            users_per_map: 2,
            city: crate::gridmap::CityGenParams {
                extent_m: (96.0, 96.0),
                ..Default::default()
            },
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn arena_reproduces_live_observations() {
        let data = small_data();
        let config = EpisodeConfig {
            obs_cells: 15,
            ..EpisodeConfig::training()
        };
        let envs = data.envs(&config).unwrap();
        let mut arena = VisitArena::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut scratch = Observation {
            size: 0,
            topo: vec![],
            sinr: vec![],
        };
        for episode in 0..20 {
            let field = episode % envs.len();
            let env = &envs[field];
            let (mut state, _) = env.reset(rng.gen()).unwrap();
            let start = arena.cells.len();
            arena.push(state.uav_cell, state.current_sinr());
            while !state.done && state.t < 40 {
                let legal = env.legal_actions(&state);
                let a = super::super::uniform_legal(legal, &mut rng).unwrap();
                let out = env.step(&mut state, a).unwrap();
                if out.newly_visited {
                    arena.push(state.uav_cell, state.current_sinr());
                }
                for mode in [ObservationMode::Full, ObservationMode::Blind] {
                    arena.render(&envs, &arena.key(field, &state, start), mode, &mut scratch);
                    assert_eq!(scratch, env.observe(&state, mode));
                }
            }
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = small_data();
        let config = tiny_config(600);
        let a = train(&data, &config, 5).unwrap();
        let b = train(&data, &config, 5).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.best, b.best);
        assert_eq!(a.last, b.last);
        assert!(a.train_steps > 0);
        assert_eq!(a.env_steps, 600);
        let c = train(&data, &config, 6).unwrap();
        assert_ne!(a.curve, c.curve);
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let data = small_data();
        let out = train(&data, &tiny_config(300), 1).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&out.curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CURVE_CSV_HEADER));
        assert_eq!(lines.count(), out.curve.len());
    }

    #[test]
    fn mismatched_observation_size_is_a_config_error() {
        let mut config = tiny_config(10);
        config.episode.obs_cells = 11;
        assert!(matches!(train(&small_data(), &config, 0), Err(Error::Config(_))));
    }
}
