//! The scaled-down learning experiment: train on procedural cities, test
//! on held-out ones against the blind agent and a random walk.

use log::info;
use serde::{Deserialize, Serialize};

use crate::env::ObservationMode;
use crate::error::Result;
use crate::eval::{run_eval, EvalConfig, EvalMetrics, Policy};
use crate::gridmap::CityGenParams;
use crate::rl::{train, TrainOutcome, TrainerConfig};
use crate::scenario::{derive_seed, Dataset, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskScaleConfig {
    pub data_seed: u64,
    pub train_maps: usize,
    pub test_maps: usize,
    pub users_per_map: usize,
    pub city: CityGenParams,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub train_seeds: Vec<u64>,
}

impl Default for DeskScaleConfig {
    fn default() -> Self {
        DeskScaleConfig {
            data_seed: 2024,
            train_maps: 8,
            test_maps: 4,
            users_per_map: 10,
            city: desk_city(),
            trainer: TrainerConfig::default(),
            eval: EvalConfig {
                n_episodes: 500,
                ..EvalConfig::default()
            },
            train_seeds: vec![1, 2, 3],
        }
    }
}

/// 64x64 cells of dense, narrow-street blocks.
pub fn desk_city() -> CityGenParams {
    CityGenParams {
        extent_m: (256.0, 256.0),
        building_density: 0.6,
        height_range_m: (4.0, 30.0),
        street_width_m: 4.0,
        block_size_m: (16.0, 32.0),
        ..CityGenParams::default()
    }
}

impl DeskScaleConfig {
    /// Training and held-out datasets; they never share a map.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let spec = |stream, maps| SyntheticSpec {
            seed: derive_seed(self.data_seed, stream),
            maps,
            users_per_map: self.users_per_map,
            city: self.city.clone(),
            ..SyntheticSpec::default()
        };
        Ok((
            Dataset::synthetic(&spec(0, self.train_maps))?,
            Dataset::synthetic(&spec(1, self.test_maps))?,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub full_training: TrainOutcome,
    pub blind_training: TrainOutcome,
    pub full: EvalMetrics,
    pub blind: EvalMetrics,
    pub random: EvalMetrics,
}

/// Trains a full and a blind agent with `seed` and evaluates both, plus the
/// random walk, on the held-out maps.
pub fn run_seed(config: &DeskScaleConfig, train_data: &Dataset, test_data: &Dataset, seed: u64) -> Result<SeedOutcome> {
    let train_mode = |observation| -> Result<TrainOutcome> {
        let trainer = TrainerConfig {
            observation,
            ..config.trainer.clone()
        };
        info!("training {observation:?} agent, seed {seed}");
        train(train_data, &trainer, seed)
    };
    let full_training = train_mode(ObservationMode::Full)?;
    let blind_training = train_mode(ObservationMode::Blind)?;
    let full = run_eval(Policy::Trained(&full_training.best), test_data, &config.eval)?;
    let blind = run_eval(Policy::Blind(&blind_training.best), test_data, &config.eval)?;
    let random = run_eval(Policy::Random, test_data, &config.eval)?;
    Ok(SeedOutcome {
        seed,
        full_training,
        blind_training,
        full,
        blind,
        random,
    })
}
