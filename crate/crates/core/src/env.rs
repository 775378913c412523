//! The placement PO-MDP: a UAV moving on the measurement lattice, observing
//! a local height window and the SINR it has measured so far.
//!
//! Observations and actions are expressed in the agent's frame, which may be
//! rotated by quarter turns relative to the map. The map itself is never
//! rotated.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmap::{Cell, HeightGrid, DEFAULT_ALTITUDE_M};
use crate::propagation::SinrField;

/// Sentinel for cells whose SINR has not been measured yet.
pub const P_HIGH_DB: f64 = 50.0;
/// Sentinel for cells the UAV can never occupy.
pub const P_LOW_DB: f64 = -150.0;
/// Height of the virtual wall encoding the map boundary, above altitude.
pub const BOUNDARY_WALL_M: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Side of the square observation window in cells; odd.
    pub obs_cells: usize,
    /// Lattice cells covered by one move.
    pub step_cells: usize,
    /// Exploration reward for entering a cell for the first time.
    pub c_e: f64,
    /// Target SINR in dB.
    pub target_sinr_db: f64,
    pub t_max: usize,
    pub p_high_db: f64,
    pub p_low_db: f64,
    /// Fixed frame rotation used when `random_rotation` is off.
    pub rotation_quarter_turns: u8,
    /// Draw the rotation uniformly at every reset (training).
    pub random_rotation: bool,
    pub altitude_m: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            obs_cells: 61,
            step_cells: 1,
            c_e: 1.2,
            target_sinr_db: 5.0,
            t_max: 800,
            p_high_db: P_HIGH_DB,
            p_low_db: P_LOW_DB,
            rotation_quarter_turns: 0,
            random_rotation: false,
            altitude_m: DEFAULT_ALTITUDE_M,
        }
    }
}

impl EpisodeConfig {
    /// Training defaults: 800-step episodes with random frame rotation.
    pub fn training() -> Self {
        EpisodeConfig {
            random_rotation: true,
            ..Default::default()
        }
    }

    /// Test defaults: 500-step episodes, no rotation.
    pub fn testing() -> Self {
        EpisodeConfig {
            t_max: 500,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.obs_cells.is_multiple_of(2) {
            return bad(format!("observation size must be odd, got {}", self.obs_cells));
        }
        if self.step_cells == 0 {
            return bad("step must cover at least one cell".into());
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1".into());
        }
        if !(self.p_low_db < self.p_high_db) {
            return bad("P_L must be below P_H".into());
        }
        if self.rotation_quarter_turns > 3 {
            return bad("rotation must be 0-3 quarter turns".into());
        }
        if !(self.altitude_m > 0.0) {
            return bad("altitude must be positive".into());
        }
        Ok(())
    }
}

/// One of the four lattice moves. `PlusY` points north (towards row 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::PlusX, Action::MinusX, Action::PlusY, Action::MinusY];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Action::PlusX => 0,
            Action::MinusX => 1,
            Action::PlusY => 2,
            Action::MinusY => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// (drow, dcol) of a single-cell move.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::PlusX => (0, 1),
            Action::MinusX => (0, -1),
            Action::PlusY => (-1, 0),
            Action::MinusY => (1, 0),
        }
    }

    fn from_delta(d: (isize, isize)) -> Action {
        match d {
            (0, 1) => Action::PlusX,
            (0, -1) => Action::MinusX,
            (-1, 0) => Action::PlusY,
            (1, 0) => Action::MinusY,
            _ => unreachable!("not a unit move: {d:?}"),
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Action::PlusX => "+x",
            Action::MinusX => "-x",
            Action::PlusY => "+y",
            Action::MinusY => "-y",
        };
        f.write_str(s)
    }
}

/// Counter-clockwise quarter turns from the map frame to the agent frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Rotation(u8);

impl Rotation {
    pub fn new(quarter_turns: u8) -> Self {
        Rotation(quarter_turns % 4)
    }

    pub fn quarter_turns(self) -> u8 {
        self.0
    }

    /// Map-frame offset to agent-frame offset.
    pub fn to_frame(self, (mut dr, mut dc): (isize, isize)) -> (isize, isize) {
        for _ in 0..self.0 {
            (dr, dc) = (-dc, dr);
        }
        (dr, dc)
    }

    /// Agent-frame offset to map-frame offset.
    pub fn to_world(self, (mut dr, mut dc): (isize, isize)) -> (isize, isize) {
        for _ in 0..self.0 {
            (dr, dc) = (dc, -dr);
        }
        (dr, dc)
    }

    pub fn action_to_world(self, action: Action) -> Action {
        Action::from_delta(self.to_world(action.delta()))
    }

    pub fn action_to_frame(self, action: Action) -> Action {
        Action::from_delta(self.to_frame(action.delta()))
    }
}

/// Subset of [`Action::ALL`] as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const FULL: ActionSet = ActionSet(0b1111);

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Self {
        ActionSet(bits & 0b1111)
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut set = ActionSet::EMPTY;
        for a in iter {
            set.insert(a);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    None,
    TargetReached,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub uav_cell: Cell,
    pub t: usize,
    pub rotation: Rotation,
    pub done: bool,
    pub done_reason: DoneReason,
    pub start_cell: Cell,
    ncols: usize,
    measured: Vec<Option<f64>>,
    visit_order: Vec<(Cell, f64)>,
}

impl EnvState {
    fn new(start: Cell, sinr: f64, rotation: Rotation, ncols: usize, nrows: usize) -> Self {
        let mut state = EnvState {
            uav_cell: start,
            t: 0,
            rotation,
            done: false,
            done_reason: DoneReason::None,
            start_cell: start,
            ncols,
            measured: vec![None; ncols * nrows],
            visit_order: Vec::new(),
        };
        state.record(start, sinr);
        state
    }

    fn record(&mut self, cell: Cell, sinr: f64) -> bool {
        let slot = &mut self.measured[cell.row * self.ncols + cell.col];
        if slot.is_some() {
            return false;
        }
        *slot = Some(sinr);
        self.visit_order.push((cell, sinr));
        true
    }

    /// Measured SINR at `cell`, if the UAV has been there.
    pub fn measured(&self, cell: Cell) -> Option<f64> {
        if cell.col >= self.ncols {
            return None;
        }
        self.measured.get(cell.row * self.ncols + cell.col).copied().flatten()
    }

    pub fn is_visited(&self, cell: Cell) -> bool {
        self.measured(cell).is_some()
    }

    /// Visited cells with their measurements, in first-visit order.
    pub fn visits(&self) -> &[(Cell, f64)] {
        &self.visit_order
    }

    pub fn current_sinr(&self) -> f64 {
        self.measured(self.uav_cell).expect("the UAV cell is always measured")
    }

    pub fn start_sinr(&self) -> f64 {
        self.visit_order[0].1
    }
}

/// Two stacked square windows centered on the UAV, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub size: usize,
    /// Terrain height relative to the UAV altitude, meters.
    pub topo: Vec<f32>,
    /// Measured SINR or a sentinel, dB.
    pub sinr: Vec<f32>,
}

impl Observation {
    pub fn center_index(&self) -> usize {
        (self.size / 2) * self.size + self.size / 2
    }

    /// The two channels rotated a quarter turn counter-clockwise.
    pub fn rotated_ccw(&self) -> Observation {
        let n = self.size;
        let rot = |src: &[f32]| {
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = src[j * n + (n - 1 - i)];
                }
            }
            out
        };
        Observation {
            size: n,
            topo: rot(&self.topo),
            sinr: rot(&self.sinr),
        }
    }
}

/// Which channels the agent gets to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ObservationMode {
    /// Height map plus SINR with both sentinels.
    #[default]
    Full,
    /// SINR only; unreachable cells look unvisited.
    Blind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
    pub newly_visited: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub newly_visited: bool,
    pub done: bool,
    pub done_reason: DoneReason,
}

/// An episode environment over one height map and one user's SINR field.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    grid: &'a HeightGrid,
    field: &'a SinrField,
    config: EpisodeConfig,
    starts: Vec<Cell>,
}

impl<'a> Env<'a> {
    pub fn new(grid: &'a HeightGrid, field: &'a SinrField, config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        if !field.matches_grid(grid) {
            return Err(Error::Shape(format!(
                "field is {}x{} at {} m, grid is {}x{} at {} m",
                field.nrows(),
                field.ncols(),
                field.spacing_m(),
                grid.nrows(),
                grid.ncols(),
                grid.spacing_m()
            )));
        }
        let (lo, hi) = (config.p_low_db, config.p_high_db);
        if let Some(v) = field
            .values()
            .iter()
            .zip(field.valid_mask())
            .find(|(v, &ok)| ok && !(**v > lo && **v < hi))
        {
            return Err(Error::InvalidParams(format!(
                "SINR {} dB collides with the sentinels ({lo}, {hi})",
                v.0
            )));
        }
        let starts = field.permissible_starts();
        Ok(Env {
            grid,
            field,
            config,
            starts,
        })
    }

    pub fn grid(&self) -> &'a HeightGrid {
        self.grid
    }

    pub fn field(&self) -> &'a SinrField {
        self.field
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    /// Cells an episode may start from.
    pub fn permissible_starts(&self) -> &[Cell] {
        &self.starts
    }

    /// A cell the UAV may occupy.
    pub fn is_open(&self, cell: Cell) -> bool {
        self.field.is_valid(cell) && !self.grid.blocked_unchecked(cell, self.config.altitude_m)
    }

    /// Starts an episode at a uniformly drawn permissible cell.
    pub fn reset(&self, seed: u64) -> Result<(EnvState, Observation)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = *self
            .starts
            .choose(&mut rng)
            .ok_or_else(|| Error::EnvironmentUnusable("no permissible start cell outside dead zones".into()))?;
        let rotation = if self.config.random_rotation {
            Rotation::new(rng.gen_range(0..4))
        } else {
            Rotation::new(self.config.rotation_quarter_turns)
        };
        self.reset_at(start, rotation)
    }

    /// Starts an episode at a chosen cell. An episode that starts at or
    /// above the target is finished immediately.
    pub fn reset_at(&self, start: Cell, rotation: Rotation) -> Result<(EnvState, Observation)> {
        let sinr = self.field.value(start).ok_or_else(|| {
            Error::EnvironmentUnusable(format!(
                "start ({}, {}) is blocked, a dead zone or off the map",
                start.row, start.col
            ))
        })?;
        if !self.is_open(start) {
            return Err(Error::EnvironmentUnusable("start cell is blocked".into()));
        }
        let mut state = EnvState::new(start, sinr, rotation, self.grid.ncols(), self.grid.nrows());
        if sinr >= self.config.target_sinr_db {
            state.done = true;
            state.done_reason = DoneReason::TargetReached;
        }
        let obs = self.build_observation(&state);
        Ok((state, obs))
    }

    fn destination(&self, from: Cell, world: Action) -> Option<Cell> {
        let (dr, dc) = world.delta();
        let mut cell = from;
        for _ in 0..self.config.step_cells {
            cell = cell.offset(dr, dc)?;
            if !self.is_open(cell) {
                return None;
            }
        }
        Some(cell)
    }

    /// Agent-frame moves that stay on the map and avoid blocked and
    /// dead-zone cells.
    pub fn legal_actions(&self, state: &EnvState) -> ActionSet {
        Action::ALL
            .into_iter()
            .filter(|&a| {
                self.destination(state.uav_cell, state.rotation.action_to_world(a))
                    .is_some()
            })
            .collect()
    }

    /// Applies an agent-frame action.
    pub fn step(&self, state: &mut EnvState, action: Action) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        let world = state.rotation.action_to_world(action);
        let next = self.destination(state.uav_cell, world).ok_or(Error::IllegalAction {
            action: action.to_string(),
            cell: state.uav_cell,
        })?;
        let before = state.current_sinr();
        let after = self.field.value(next).expect("legal destinations are valid cells");
        let newly_visited = state.record(next, after);
        state.uav_cell = next;
        state.t += 1;
        let reward = after - before + if newly_visited { self.config.c_e } else { 0.0 };
        if after >= self.config.target_sinr_db {
            state.done = true;
            state.done_reason = DoneReason::TargetReached;
        } else if state.t >= self.config.t_max {
            state.done = true;
            state.done_reason = DoneReason::Timeout;
        }
        Ok(StepOutcome {
            observation: self.build_observation(state),
            reward,
            newly_visited,
            done: state.done,
            done_reason: state.done_reason,
        })
    }

    pub fn build_observation(&self, state: &EnvState) -> Observation {
        self.observe(state, ObservationMode::Full)
    }

    pub fn observe(&self, state: &EnvState, mode: ObservationMode) -> Observation {
        let mut obs = Observation {
            size: self.config.obs_cells,
            topo: Vec::new(),
            sinr: Vec::new(),
        };
        self.render_window(
            state.uav_cell,
            state.rotation,
            state.visits().iter().copied(),
            mode,
            &mut obs,
        );
        obs
    }

    /// Fills `obs` for a UAV at `center` that has measured `visits`.
    pub fn render_window(
        &self,
        center: Cell,
        rotation: Rotation,
        visits: impl Iterator<Item = (Cell, f64)>,
        mode: ObservationMode,
        obs: &mut Observation,
    ) {
        let n = self.config.obs_cells;
        let half = (n / 2) as isize;
        let alt = self.config.altitude_m;
        let (p_high, p_low) = (self.config.p_high_db as f32, self.config.p_low_db as f32);
        obs.size = n;
        obs.topo.clear();
        obs.sinr.clear();
        obs.topo.reserve(n * n);
        obs.sinr.reserve(n * n);
        for i in 0..n as isize {
            for j in 0..n as isize {
                let (dr, dc) = rotation.to_world((i - half, j - half));
                let cell = center.offset(dr, dc).filter(|c| self.grid.contains(*c));
                let (topo, sinr) = match cell {
                    None => (BOUNDARY_WALL_M as f32, p_low),
                    Some(c) => {
                        let rel = (self.grid.height_unchecked(c) - alt) as f32;
                        let s = if self.is_open(c) { p_high } else { p_low };
                        (rel, s)
                    }
                };
                match mode {
                    ObservationMode::Full => {
                        obs.topo.push(topo);
                        obs.sinr.push(sinr);
                    }
                    ObservationMode::Blind => {
                        obs.topo.push(0.0);
                        obs.sinr.push(p_high);
                    }
                }
            }
        }
        for (cell, sinr) in visits {
            let dr = cell.row as isize - center.row as isize;
            let dc = cell.col as isize - center.col as isize;
            let (fr, fc) = rotation.to_frame((dr, dc));
            let (i, j) = (fr + half, fc + half);
            if (0..n as isize).contains(&i) && (0..n as isize).contains(&j) {
                obs.sinr[i as usize * n + j as usize] = sinr as f32;
            }
        }
    }
}
