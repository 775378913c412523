//! Reference policies: the genie planner, the blind observation, a random
//! walk, and the training upper bound.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;

use crate::env::{Action, Env, EnvState, Observation, ObservationMode};
use crate::error::{Error, Result};
use crate::gridmap::{Cell, HeightGrid};
use crate::propagation::SinrField;
use crate::rl::uniform_legal;

pub const GENIE_CSV_HEADER: &str = "field_id,start_row,start_col,reachable,steps";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenieResult {
    pub reachable: bool,
    pub steps: usize,
    /// Start to goal inclusive; empty when unreachable.
    pub path: Vec<Cell>,
}

/// Fewest unit moves over open cells from `start` to any cell with SINR at
/// least `target_db`. Among equally near goals the smallest `(row, col)`
/// wins.
pub fn genie_shortest(
    grid: &HeightGrid,
    field: &SinrField,
    start: Cell,
    target_db: f64,
    altitude_m: f64,
) -> Result<GenieResult> {
    if !field.matches_grid(grid) {
        return Err(Error::Shape("field does not match grid".into()));
    }
    let open = |c: Cell| field.is_valid(c) && !grid.blocked_unchecked(c, altitude_m);
    if !grid.contains(start) || !open(start) {
        return Err(Error::InvalidParams(format!(
            "genie start ({}, {}) is not an open cell",
            start.row, start.col
        )));
    }
    let qualifies = |c: Cell| field.value(c).is_some_and(|v| v >= target_db);
    let mut parent: Vec<Option<Cell>> = vec![None; grid.ncols() * grid.nrows()];
    let mut seen = vec![false; parent.len()];
    seen[grid.index(start)] = true;
    let mut frontier = vec![start];
    let mut goal = None;
    while !frontier.is_empty() {
        frontier.sort();
        if let Some(&g) = frontier.iter().find(|&&c| qualifies(c)) {
            goal = Some(g);
            break;
        }
        let mut next = Vec::new();
        for &c in &frontier {
            for n in grid.neighbors(c) {
                let i = grid.index(n);
                if !seen[i] && open(n) {
                    seen[i] = true;
                    parent[i] = Some(c);
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    let Some(goal) = goal else {
        return Ok(GenieResult {
            reachable: false,
            steps: 0,
            path: Vec::new(),
        });
    };
    let mut path = VecDeque::from([goal]);
    while let Some(p) = parent[grid.index(path[0])] {
        path.push_front(p);
    }
    Ok(GenieResult {
        reachable: true,
        steps: path.len() - 1,
        path: path.into(),
    })
}

/// SINR-only observation: heights zeroed and unreachable cells shown as
/// unvisited.
pub fn blind_observation(state: &EnvState, env: &Env<'_>) -> Observation {
    env.observe(state, ObservationMode::Blind)
}

/// Uniform choice among the legal actions of `state`.
pub fn random_walk_policy<R: Rng + ?Sized>(state: &EnvState, env: &Env<'_>, rng: &mut R) -> Result<Action> {
    uniform_legal(env.legal_actions(state), rng)
        .ok_or_else(|| Error::EnvironmentUnusable("UAV has no legal move".into()))
}

/// Mean over every field and every permissible start of `target_db` minus
/// the start SINR.
pub fn upper_bound<'f>(fields: impl IntoIterator<Item = &'f SinrField>, target_db: f64) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, field) in fields.into_iter().enumerate() {
        let starts = field.permissible_starts();
        if starts.is_empty() {
            return Err(Error::EnvironmentUnusable(format!(
                "field {i} has no permissible start"
            )));
        }
        for s in starts {
            sum += target_db - field.value(s).expect("permissible starts are valid");
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EnvironmentUnusable("no fields".into()));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenieRow {
    pub field: usize,
    pub start: Cell,
    pub result: GenieResult,
}

pub fn write_genie_csv(rows: &[GenieRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{GENIE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.field, r.start.row, r.start.col, r.result.reachable as u8, r.result.steps
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EpisodeConfig, P_HIGH_DB, P_LOW_DB};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field_from(grid: &HeightGrid, values: Vec<f64>) -> SinrField {
        let valid = (0..values.len())
            .map(|i| !grid.is_blocked(grid.cell_at(i), 10.0).unwrap())
            .collect();
        SinrField::new(
            grid.ncols(),
            grid.nrows(),
            grid.spacing_m(),
            Cell::new(0, 0),
            10.0,
            values,
            valid,
        )
        .unwrap()
    }

    /// Shortest simple path by exhaustive depth-first enumeration.
    fn brute_force(grid: &HeightGrid, field: &SinrField, start: Cell, target: f64) -> Option<usize> {
        fn dfs(
            grid: &HeightGrid,
            field: &SinrField,
            c: Cell,
            target: f64,
            depth: usize,
            on_path: &mut Vec<bool>,
            best: &mut Option<usize>,
        ) {
            if best.is_some_and(|b| depth >= b) {
                return;
            }
            if field.value(c).is_some_and(|v| v >= target) {
                *best = Some(depth);
                return;
            }
            for n in grid.neighbors(c).collect::<Vec<_>>() {
                let i = grid.index(n);
                if !on_path[i] && field.is_valid(n) && !grid.is_blocked(n, 10.0).unwrap() {
                    on_path[i] = true;
                    dfs(grid, field, n, target, depth + 1, on_path, best);
                    on_path[i] = false;
                }
            }
        }
        let mut on_path = vec![false; grid.ncols() * grid.nrows()];
        on_path[grid.index(start)] = true;
        let mut best = None;
        dfs(grid, field, start, target, 0, &mut on_path, &mut best);
        best
    }

    #[test]
    fn start_at_target_takes_no_steps() {
        let grid = HeightGrid::flat(5, 5, 4.0).unwrap();
        let field = field_from(&grid, vec![6.0; 25]);
        let g = genie_shortest(&grid, &field, Cell::new(2, 2), 5.0, 10.0).unwrap();
        assert_eq!(
            g,
            GenieResult {
                reachable: true,
                steps: 0,
                path: vec![Cell::new(2, 2)]
            }
        );
    }

    #[test]
    fn single_goal_at_manhattan_three() {
        let grid = HeightGrid::flat(5, 5, 4.0).unwrap();
        let mut values = vec![0.0; 25];
        values[grid.index(Cell::new(3, 3))] = 9.0;
        let field = field_from(&grid, values);
        let start = Cell::new(1, 2);
        let g = genie_shortest(&grid, &field, start, 5.0, 10.0).unwrap();
        assert_eq!(g.steps, 3);
        assert_eq!(brute_force(&grid, &field, start, 5.0), Some(3));
    }

    #[test]
    fn wall_forces_detour() {
        let mut grid = HeightGrid::flat(5, 5, 4.0).unwrap();
        for col in 0..4 {
            grid.set_height(Cell::new(2, col), 20.0).unwrap();
        }
        let mut values = vec![0.0; 25];
        values[grid.index(Cell::new(3, 1))] = 9.0;
        let field = field_from(&grid, values);
        let start = Cell::new(1, 1);
        let g = genie_shortest(&grid, &field, start, 5.0, 10.0).unwrap();
        assert_eq!(Some(g.steps), brute_force(&grid, &field, start, 5.0));
        assert!(g.steps > 2);
        assert_eq!(g.steps, 8);
        for w in g.path.windows(2) {
            assert_eq!(w[0].manhattan(w[1]), 1);
            assert!(!grid.is_blocked(w[1], 10.0).unwrap());
        }
    }

    #[test]
    fn unreachable_goal() {
        let mut grid = HeightGrid::flat(5, 5, 4.0).unwrap();
        for col in 0..5 {
            grid.set_height(Cell::new(2, col), 20.0).unwrap();
        }
        let mut values = vec![0.0; 25];
        values[grid.index(Cell::new(4, 4))] = 9.0;
        let field = field_from(&grid, values);
        let g = genie_shortest(&grid, &field, Cell::new(0, 0), 5.0, 10.0).unwrap();
        assert!(!g.reachable);
        assert!(g.path.is_empty());
    }

    #[test]
    fn ties_go_to_smallest_row_col() {
        let grid = HeightGrid::flat(5, 5, 4.0).unwrap();
        let mut values = vec![0.0; 25];
        for c in [Cell::new(3, 2), Cell::new(2, 3), Cell::new(1, 2)] {
            values[grid.index(c)] = 9.0;
        }
        let field = field_from(&grid, values);
        let g = genie_shortest(&grid, &field, Cell::new(2, 2), 5.0, 10.0).unwrap();
        assert_eq!(*g.path.last().unwrap(), Cell::new(1, 2));
    }

    #[test]
    fn blind_observation_hides_obstacles() {
        let mut grid = HeightGrid::flat(9, 9, 4.0).unwrap();
        grid.set_height(Cell::new(4, 6), 30.0).unwrap();
        let field = field_from(&grid, vec![-20.0; 81]);
        let env = Env::new(
            &grid,
            &field,
            EpisodeConfig {
                obs_cells: 11,
                ..EpisodeConfig::testing()
            },
        )
        .unwrap();
        let (mut state, _) = env.reset_at(Cell::new(4, 4), crate::env::Rotation::new(0)).unwrap();
        env.step(&mut state, Action::PlusX).unwrap();
        let full = env.build_observation(&state);
        let blind = blind_observation(&state, &env);
        assert!(blind.sinr.iter().all(|&v| v != P_LOW_DB as f32));
        assert!(blind.topo.iter().all(|&v| v == 0.0));
        for (f, b) in full.sinr.iter().zip(&blind.sinr) {
            if *f == P_LOW_DB as f32 {
                assert_eq!(*b, P_HIGH_DB as f32);
            } else {
                assert_eq!(f, b);
            }
        }
    }

    #[test]
    fn random_walk_in_corner_is_even_and_legal() {
        let grid = HeightGrid::flat(6, 6, 4.0).unwrap();
        let field = field_from(&grid, vec![-20.0; 36]);
        let env = Env::new(
            &grid,
            &field,
            EpisodeConfig {
                obs_cells: 5,
                ..EpisodeConfig::testing()
            },
        )
        .unwrap();
        let (state, _) = env.reset_at(Cell::new(0, 0), crate::env::Rotation::new(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[random_walk_policy(&state, &env, &mut rng).unwrap().index()] += 1;
        }
        let legal = env.legal_actions(&state);
        assert_eq!(legal.len(), 2);
        for a in Action::ALL {
            let f = counts[a.index()] as f64 / 1e4;
            if legal.contains(a) {
                assert!((f - 0.5).abs() < 0.02);
            } else {
                assert_eq!(counts[a.index()], 0);
            }
        }
        let mut again = ChaCha8Rng::seed_from_u64(8);
        let mut first = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            assert_eq!(
                random_walk_policy(&state, &env, &mut again).unwrap(),
                random_walk_policy(&state, &env, &mut first).unwrap()
            );
        }
    }

    #[test]
    fn upper_bound_arithmetic() {
        let grid = HeightGrid::flat(2, 1, 4.0).unwrap();
        let field = field_from(&grid, vec![-5.0, 1.0]);
        assert_eq!(upper_bound([&field], 5.0).unwrap(), 7.0);
        let at_target = field_from(&grid, vec![5.0, 5.0]);
        assert_eq!(upper_bound([&at_target], 5.0).unwrap(), 0.0);
    }

    #[test]
    fn genie_csv_rows() {
        let rows = vec![GenieRow {
            field: 2,
            start: Cell::new(3, 4),
            result: GenieResult {
                reachable: true,
                steps: 5,
                path: vec![],
            },
        }];
        let mut buf = Vec::new();
        write_genie_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{GENIE_CSV_HEADER}\n2,3,4,1,5\n")
        );
    }
}
