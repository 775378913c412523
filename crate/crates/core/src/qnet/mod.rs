//! Dueling convolutional Q-network with hand-derived gradients.
//!
//! Layout: three conv stages (convolution, batch norm, ReLU), one hidden
//! fully connected layer with ReLU and dropout, then a value head and an
//! advantage head combined as `Q = V + A - mean(A)`.

mod checkpoint;
mod network;
mod scalar;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use network::{forward, loss_and_grads, relu_pattern, BatchNormStats, LossAndGrads, Mode};
pub use scalar::Scalar;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Input channels: SINR measurements and relative heights.
pub const INPUT_CHANNELS: usize = 2;
/// Relative heights are clamped to +/- this many meters before scaling.
pub const TOPO_SCALE_M: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_cells: usize,
    pub convs: Vec<ConvSpec>,
    pub fc_units: usize,
    pub actions: usize,
    pub dropout: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            input_cells: 61,
            convs: vec![
                ConvSpec {
                    filters: 16,
                    kernel: 7,
                    stride: 2,
                },
                ConvSpec {
                    filters: 32,
                    kernel: 5,
                    stride: 2,
                },
                ConvSpec {
                    filters: 32,
                    kernel: 3,
                    stride: 1,
                },
            ],
            fc_units: 256,
            actions: Action::COUNT,
            dropout: 0.4,
        }
    }
}

impl ArchSpec {
    /// Small network over 9x9 inputs for gradient checks.
    pub fn tiny() -> Self {
        ArchSpec {
            input_cells: 9,
            convs: vec![
                ConvSpec {
                    filters: 2,
                    kernel: 3,
                    stride: 1,
                },
                ConvSpec {
                    filters: 2,
                    kernel: 3,
                    stride: 1,
                },
                ConvSpec {
                    filters: 2,
                    kernel: 3,
                    stride: 1,
                },
            ],
            fc_units: 8,
            actions: Action::COUNT,
            dropout: 0.0,
        }
    }

    /// Spatial side of each conv stage's output.
    pub fn conv_output_sides(&self) -> Result<Vec<usize>> {
        let mut side = self.input_cells;
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            if c.filters == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::Shape(format!("conv stage {i} has a zero dimension")));
            }
            if c.kernel > side {
                return Err(Error::Shape(format!(
                    "conv stage {i}: kernel {} exceeds input side {side}",
                    c.kernel
                )));
            }
            side = (side - c.kernel) / c.stride + 1;
            out.push(side);
        }
        Ok(out)
    }

    /// Length of the flattened conv output feeding the hidden layer.
    pub fn flat_features(&self) -> Result<usize> {
        let sides = self.conv_output_sides()?;
        let channels = self.convs.last().map_or(INPUT_CHANNELS, |c| c.filters);
        let side = sides.last().copied().unwrap_or(self.input_cells);
        Ok(channels * side * side)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_cells == 0 || self.fc_units == 0 || self.actions == 0 {
            return Err(Error::Shape("input, hidden and action sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Shape(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.flat_features().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage<T> {
    pub spec: ConvSpec,
    pub in_channels: usize,
    /// `[filters, in_channels, kernel, kernel]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub bn_scale: Vec<T>,
    pub bn_shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> ConvStage<T> {
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.spec.kernel * self.spec.kernel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams<T> {
    pub arch: ArchSpec,
    pub convs: Vec<ConvStage<T>>,
    pub hidden: Dense<T>,
    pub value: Dense<T>,
    pub advantage: Dense<T>,
}

/// Gradients (or any per-tensor quantity) in [`QNetworkParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &QNetworkParams<T>) -> Self {
        Gradients {
            tensors: params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.tensors.iter_mut().flatten() {
            *v = *v * factor;
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(T::from_f64(max_norm / norm));
        }
        norm
    }
}

fn dense<T: Scalar>(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Dense<T> {
    let bound = 1.0 / (inputs as f64).sqrt();
    Dense {
        inputs,
        outputs,
        weight: (0..inputs * outputs)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect(),
        bias: vec![T::zero(); outputs],
    }
}

/// Fresh parameters: uniform weights in `+/- 1/sqrt(fan_in)`, zero biases,
/// identity batch norm.
pub fn init_params<T: Scalar>(seed: u64, arch: &ArchSpec) -> Result<QNetworkParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut convs = Vec::with_capacity(arch.convs.len());
    let mut channels = INPUT_CHANNELS;
    for spec in &arch.convs {
        let fan_in = channels * spec.kernel * spec.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let f = spec.filters;
        convs.push(ConvStage {
            spec: *spec,
            in_channels: channels,
            weight: (0..f * fan_in)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                .collect(),
            bias: vec![T::zero(); f],
            bn_scale: vec![T::one(); f],
            bn_shift: vec![T::zero(); f],
            running_mean: vec![T::zero(); f],
            running_var: vec![T::one(); f],
        });
        channels = f;
    }
    let flat = arch.flat_features()?;
    let hidden = dense(flat, arch.fc_units, &mut rng);
    let value = dense(arch.fc_units, 1, &mut rng);
    let advantage = dense(arch.fc_units, arch.actions, &mut rng);
    Ok(QNetworkParams {
        arch: arch.clone(),
        convs,
        hidden,
        value,
        advantage,
    })
}

impl<T: Scalar> QNetworkParams<T> {
    /// Trainable tensors: per conv stage weight, bias, bn scale, bn shift;
    /// then weight and bias of the hidden, value and advantage layers.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for c in &self.convs {
            out.extend([&c.weight[..], &c.bias, &c.bn_scale, &c.bn_shift]);
        }
        for d in [&self.hidden, &self.value, &self.advantage] {
            out.extend([&d.weight[..], &d.bias]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut c.bn_scale);
            out.push(&mut c.bn_shift);
        }
        for d in [&mut self.hidden, &mut self.value, &mut self.advantage] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Every trainable value and running statistic set to zero (running
    /// variances stay positive).
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
        for c in &mut out.convs {
            c.running_mean.iter_mut().for_each(|v| *v = T::zero());
            c.running_var.iter_mut().for_each(|v| *v = T::one());
        }
        out
    }

    /// Folds the batch statistics of one train-mode pass into the running
    /// estimates.
    pub fn update_running_stats(&mut self, stats: &BatchNormStats<T>) {
        let m = T::from_f64(BN_MOMENTUM);
        for (conv, (mean, var)) in self.convs.iter_mut().zip(&stats.stages) {
            for (r, &b) in conv.running_mean.iter_mut().zip(mean) {
                *r = (T::one() - m) * *r + m * b;
            }
            for (r, &b) in conv.running_var.iter_mut().zip(var) {
                *r = (T::one() - m) * *r + m * b;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> QNetworkParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let d = |l: &Dense<T>| Dense {
            inputs: l.inputs,
            outputs: l.outputs,
            weight: c(&l.weight),
            bias: c(&l.bias),
        };
        QNetworkParams {
            arch: self.arch.clone(),
            convs: self
                .convs
                .iter()
                .map(|s| ConvStage {
                    spec: s.spec,
                    in_channels: s.in_channels,
                    weight: c(&s.weight),
                    bias: c(&s.bias),
                    bn_scale: c(&s.bn_scale),
                    bn_shift: c(&s.bn_shift),
                    running_mean: c(&s.running_mean),
                    running_var: c(&s.running_var),
                })
                .collect(),
            hidden: d(&self.hidden),
            value: d(&self.value),
            advantage: d(&self.advantage),
        }
    }
}

/// Normalized network input, `[batch, channel, row, col]` with channel 0
/// the SINR window and channel 1 the height window.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch<T> {
    pub batch: usize,
    pub cells: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> InputBatch<T> {
    pub fn new(batch: usize, cells: usize, data: Vec<T>) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if data.len() != batch * INPUT_CHANNELS * cells * cells {
            return Err(Error::Shape(format!(
                "batch of {batch} {cells}x{cells} inputs needs {} values, got {}",
                batch * INPUT_CHANNELS * cells * cells,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("input contains non-finite values".into()));
        }
        Ok(InputBatch { batch, cells, data })
    }

    pub fn with_capacity(batch: usize, cells: usize) -> Self {
        InputBatch {
            batch: 0,
            cells,
            data: Vec::with_capacity(batch * INPUT_CHANNELS * cells * cells),
        }
    }

    /// Appends one observation, normalizing SINR to `[0, 1]` between the
    /// sentinels and heights to `[-1, 1]`.
    pub fn push_observation(&mut self, obs: &Observation, p_low: f64, p_high: f64) {
        debug_assert_eq!(obs.size, self.cells);
        let span = p_high - p_low;
        self.data
            .extend(obs.sinr.iter().map(|&v| T::from_f64((v as f64 - p_low) / span)));
        self.data.extend(
            obs.topo
                .iter()
                .map(|&v| T::from_f64((v as f64).clamp(-TOPO_SCALE_M, TOPO_SCALE_M) / TOPO_SCALE_M)),
        );
        self.batch += 1;
    }

    pub fn from_observations<'o>(
        obs: impl IntoIterator<Item = &'o Observation>,
        cells: usize,
        p_low: f64,
        p_high: f64,
    ) -> Result<Self> {
        let mut batch = InputBatch::with_capacity(1, cells);
        for o in obs {
            if o.size != cells {
                return Err(Error::Shape(format!(
                    "observation side {} does not match network input {cells}",
                    o.size
                )));
            }
            batch.push_observation(o, p_low, p_high);
        }
        if batch.batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(batch)
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let n = INPUT_CHANNELS * self.cells * self.cells;
        &self.data[i * n..(i + 1) * n]
    }
}
