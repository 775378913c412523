//! Experience replay, double-Q targets, steered exploration and training.

mod optim;
mod replay;
mod trainer;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionSet};
use crate::error::{Error, Result};
use crate::qnet::{forward, InputBatch, Mode, QNetworkParams, Scalar};

pub use optim::Adam;
pub use replay::ReplayBuffer;
pub use trainer::{train, write_curve_csv, EpisodeRecord, TrainOutcome, TrainerConfig, CURVE_CSV_HEADER};

/// Probability share of exploratory moves that repeat the previous action.
pub const REPEAT_SHARE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EpsilonSchedule {
    /// 1 at step 0, falling linearly to 0 at `decay_fraction` of the budget.
    Linear {
        decay_fraction: f64,
    },
    Constant(f64),
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule::Linear { decay_fraction: 0.8 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        match *self {
            EpsilonSchedule::Constant(e) => e,
            EpsilonSchedule::Linear { decay_fraction } => {
                let horizon = decay_fraction * total_steps as f64;
                if horizon <= 0.0 {
                    return 0.0;
                }
                (1.0 - step as f64 / horizon).max(0.0)
            }
        }
    }
}

/// Step-decayed learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    /// Env steps between halvings.
    pub halve_every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-4,
            halve_every: 50_000,
        }
    }
}

impl LrSchedule {
    pub fn value(&self, env_step: u64) -> f64 {
        let halvings = env_step.checked_div(self.halve_every).unwrap_or(0);
        self.initial * 0.5f64.powi(halvings.min(1000) as i32)
    }
}

/// Highest-valued legal action; ties go to the earlier action in
/// [`Action::ALL`].
pub fn masked_argmax(q: &[f64], legal: ActionSet) -> Option<Action> {
    let mut best: Option<(Action, f64)> = None;
    for a in legal.iter() {
        let v = q[a.index()];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a)
}

/// Uniform choice among legal actions.
pub fn uniform_legal<R: Rng + ?Sized>(legal: ActionSet, rng: &mut R) -> Option<Action> {
    if legal.is_empty() {
        return None;
    }
    legal.iter().nth(rng.gen_range(0..legal.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    Repeat,
    Uniform,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub action: Action,
    pub source: ActionSource,
}

/// Steered epsilon-greedy: with probability `0.4 eps` repeat `prev` if it is
/// still legal, with probability `0.6 eps` (or when the repeat is illegal)
/// pick uniformly among legal actions, otherwise take the legal argmax of
/// `q_values`, which is only evaluated on that branch.
pub fn select_action<R, F>(
    legal: ActionSet,
    epsilon: f64,
    prev: Option<Action>,
    rng: &mut R,
    q_values: F,
) -> Result<Selection>
where
    R: Rng + ?Sized,
    F: FnOnce() -> Result<Vec<f64>>,
{
    if legal.is_empty() {
        return Err(Error::InvalidParams("no legal action to select".into()));
    }
    let u: f64 = rng.gen();
    if u < epsilon {
        if u < REPEAT_SHARE * epsilon {
            if let Some(p) = prev.filter(|&p| legal.contains(p)) {
                return Ok(Selection {
                    action: p,
                    source: ActionSource::Repeat,
                });
            }
        }
        let action = uniform_legal(legal, rng).expect("legal set is non-empty");
        return Ok(Selection {
            action,
            source: ActionSource::Uniform,
        });
    }
    let q = q_values()?;
    let action = masked_argmax(&q, legal).expect("legal set is non-empty");
    Ok(Selection {
        action,
        source: ActionSource::Greedy,
    })
}

/// Next-state side of a sampled minibatch.
#[derive(Debug, Clone)]
pub struct TdBatch<'b, T> {
    pub rewards: &'b [f64],
    pub terminal: &'b [bool],
    pub next_inputs: &'b InputBatch<T>,
    pub next_legal: &'b [ActionSet],
}

/// Double-Q regression targets: the online network picks the best legal
/// next action and the target network values it.
pub fn td_targets<T: Scalar>(
    batch: &TdBatch<'_, T>,
    online: &QNetworkParams<T>,
    target: &QNetworkParams<T>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let b = batch.rewards.len();
    if batch.terminal.len() != b || batch.next_legal.len() != b || batch.next_inputs.batch != b {
        return Err(Error::Shape(format!(
            "minibatch parts disagree: {b} rewards, {} terminal flags, {} legal sets, {} inputs",
            batch.terminal.len(),
            batch.next_legal.len(),
            batch.next_inputs.batch
        )));
    }
    if batch.terminal.iter().all(|&t| t) || gamma == 0.0 {
        return Ok(batch.rewards.to_vec());
    }
    let na = online.arch.actions;
    let q_online = forward(online, batch.next_inputs, Mode::Infer)?;
    let q_target = forward(target, batch.next_inputs, Mode::Infer)?;
    Ok((0..b)
        .map(|i| {
            let r = batch.rewards[i];
            if batch.terminal[i] {
                return r;
            }
            let row: Vec<f64> = q_online[i * na..(i + 1) * na].iter().map(|v| v.as_f64()).collect();
            let legal = if batch.next_legal[i].is_empty() {
                ActionSet::FULL
            } else {
                batch.next_legal[i]
            };
            let a = masked_argmax(&row, legal).expect("legal set is non-empty");
            r + gamma * q_target[i * na + a.index()].as_f64()
        })
        .collect())
}
