//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 1 4 6`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use uav_dqn::baselines::{genie_shortest, random_walk_policy, upper_bound};
use uav_dqn::env::{Action, ActionSet, Env, EpisodeConfig, P_HIGH_DB, P_LOW_DB};
use uav_dqn::eval::{median, run_eval, write_metrics_csv, EvalConfig, EvalMetrics, Policy};
use uav_dqn::experiment::{run_seed, DeskScaleConfig, SeedOutcome};
use uav_dqn::gridmap::{generate_city, Cell, CityGenParams, HeightGrid};
use uav_dqn::propagation::{compute_sinr_field, RadioParams, SinrField};
use uav_dqn::qnet::{
    forward, init_params, loss_and_grads, relu_pattern, write_checkpoint, ArchSpec, InputBatch, Mode, QNetworkParams,
    INPUT_CHANNELS,
};
use uav_dqn::rl::{select_action, td_targets, train, ActionSource, TdBatch, TrainerConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn flat_params(p: &QNetworkParams<f64>) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

fn set_flat(p: &mut QNetworkParams<f64>, values: &[f64]) {
    let mut i = 0;
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = values[i];
            i += 1;
        }
    }
}

fn loss_at(p: &QNetworkParams<f64>, batch: &InputBatch<f64>, actions: &[usize], targets: &[f64], mode: Mode) -> f64 {
    let q = forward(p, batch, mode).unwrap();
    let na = p.arch.actions;
    actions
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (&a, &t))| (t - q[i * na + a]).powi(2))
        .sum::<f64>()
        / actions.len() as f64
}

fn criterion_1() -> Verdict {
    let arch = ArchSpec::tiny();
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let (mut kept, mut total) = (0usize, 0usize);
    for draw in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + draw);
        let mut params: QNetworkParams<f64> = init_params(draw, &arch).unwrap();
        // Perturb every tensor, including batch-norm affine and running stats.
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        for c in &mut params.convs {
            c.running_mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.2..0.2));
            c.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
        }
        let b = 3;
        let n = b * INPUT_CHANNELS * arch.input_cells * arch.input_cells;
        let batch = InputBatch::new(b, arch.input_cells, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let actions: Vec<usize> = (0..b).map(|_| rng.gen_range(0..4)).collect();
        let targets: Vec<f64> = (0..b).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // Batch norm frozen to running statistics, dropout off.
        let mode = Mode::Infer;
        let analytic = loss_and_grads(&params, &batch, &actions, &targets, mode).unwrap();
        let ga: Vec<f64> = analytic.grads.tensors.iter().flatten().copied().collect();
        let base = flat_params(&params);
        let pattern = relu_pattern(&params, &batch, mode).unwrap();
        let mut probe = params.clone();
        let (mut ga_kept, mut gn_kept) = (Vec::new(), Vec::new());
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] = base[i] + h;
            set_flat(&mut probe, &v);
            let up = loss_at(&probe, &batch, &actions, &targets, mode);
            let smooth_up = relu_pattern(&probe, &batch, mode).unwrap() == pattern;
            v[i] = base[i] - h;
            set_flat(&mut probe, &v);
            let down = loss_at(&probe, &batch, &actions, &targets, mode);
            let smooth_down = relu_pattern(&probe, &batch, mode).unwrap() == pattern;
            total += 1;
            // A probe that switches a ReLU leaves the smooth piece the
            // analytic gradient describes.
            if smooth_up && smooth_down {
                ga_kept.push(ga[i]);
                gn_kept.push((up - down) / (2.0 * h));
            }
        }
        kept += ga_kept.len();
        let diff = ga_kept
            .iter()
            .zip(&gn_kept)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / norm(&ga_kept).max(norm(&gn_kept)).max(1e-12);
        worst = worst.max(rel);
    }
    verdict(
        worst < 1e-4 && kept * 2 > total,
        format!(
            "worst relative error {worst:.2e} over 20 draws (< 1e-4); {kept}/{total} coordinates away from ReLU kinks"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn constant_net(v: f64, adv: [f64; 4]) -> QNetworkParams<f64> {
    let mut p = init_params::<f64>(0, &ArchSpec::tiny()).unwrap().zeroed();
    p.value.bias[0] = v;
    p.advantage.bias.copy_from_slice(&adv);
    p
}

fn criterion_2() -> Verdict {
    // Online prefers action 0; target values action 0 at 7 and action 1 at 9.
    let online = constant_net(0.0, [5.0, 1.0, 1.0, 1.0]);
    let target = constant_net(7.0, [0.0, 2.0, -1.0, -1.0]);
    let n = ArchSpec::tiny().input_cells;
    let next = InputBatch::new(1, n, vec![0.25; INPUT_CHANNELS * n * n]).unwrap();
    let batch = TdBatch {
        rewards: &[1.0],
        terminal: &[false],
        next_inputs: &next,
        next_legal: &[ActionSet::FULL],
    };
    let y = td_targets(&batch, &online, &target, 0.5).unwrap()[0];
    let q_target = forward(&target, &next, Mode::Infer).unwrap();
    let vanilla = 1.0 + 0.5 * q_target.iter().cloned().fold(f64::MIN, f64::max);
    let pass = y == 4.5 && vanilla != y;
    verdict(
        pass,
        format!("double-Q target {y} (expected 4.5), vanilla max target {vanilla}"),
    )
}

// ---------------------------------------------------------------- 3

fn random_scene(rng: &mut ChaCha8Rng, extent: f64) -> (HeightGrid, SinrField) {
    loop {
        let grid = generate_city(&CityGenParams {
            seed: rng.gen(),
            extent_m: (extent, extent),
            building_density: rng.gen_range(0.1..0.6),
            ..CityGenParams::default()
        })
        .unwrap();
        let ground: Vec<Cell> = (0..grid.ncols() * grid.nrows())
            .map(|i| grid.cell_at(i))
            .filter(|&c| grid.height(c).unwrap() <= 1.5)
            .collect();
        let user = ground[rng.gen_range(0..ground.len())];
        let field = compute_sinr_field(&grid, user, &RadioParams::default(), 10.0, rng.gen()).unwrap();
        if !field.permissible_starts().is_empty() {
            return (grid, field);
        }
    }
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut episodes = 0;
    while episodes < 1000 {
        let (grid, field) = random_scene(&mut rng, 96.0);
        let env = Env::new(
            &grid,
            &field,
            EpisodeConfig {
                obs_cells: 9,
                ..EpisodeConfig::training()
            },
        )
        .unwrap();
        for _ in 0..50 {
            let (mut state, _) = env.reset(rng.gen()).unwrap();
            let (mut total, mut new_cells) = (0.0, 0usize);
            while !state.done {
                let a = random_walk_policy(&state, &env, &mut rng).unwrap();
                let out = env.step(&mut state, a).unwrap();
                total += out.reward;
                new_cells += out.newly_visited as usize;
            }
            let lhs = total - env.config().c_e * new_cells as f64;
            let rhs = state.current_sinr() - state.start_sinr();
            worst = worst.max((lhs - rhs).abs());
            episodes += 1;
        }
    }
    verdict(
        worst <= 1e-9,
        format!("max |sum(r) - c_E*new - (end - start)| = {worst:.2e} over {episodes} episodes"),
    )
}

// ---------------------------------------------------------------- 4

/// Distance-to-goal by repeated relaxation `d(c) = min(d(c), 1 + min d(n))`
/// until nothing changes.
fn relaxation_distance(open: &[bool], goal: &[bool], n: usize, start: usize) -> Option<usize> {
    let mut d = vec![usize::MAX; n * n];
    for i in 0..n * n {
        if open[i] && goal[i] {
            d[i] = 0;
        }
    }
    loop {
        let mut changed = false;
        for i in 0..n * n {
            if !open[i] {
                continue;
            }
            let (r, c) = (i / n, i % n);
            let mut nbrs = vec![];
            if r > 0 {
                nbrs.push(i - n);
            }
            if r + 1 < n {
                nbrs.push(i + n);
            }
            if c > 0 {
                nbrs.push(i - 1);
            }
            if c + 1 < n {
                nbrs.push(i + 1);
            }
            for j in nbrs {
                if d[j] != usize::MAX && d[j] + 1 < d[i] {
                    d[i] = d[j] + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (d[start] != usize::MAX).then_some(d[start])
}

fn criterion_4() -> Verdict {
    let t0 = Instant::now();
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut reachable = 0;
    for _ in 0..200 {
        let wall_p = rng.gen_range(0.0..0.45);
        let goal_p = rng.gen_range(0.002..0.05);
        let heights: Vec<f64> = (0..n * n)
            .map(|_| if rng.gen_bool(wall_p) { 20.0 } else { 0.0 })
            .collect();
        let grid = HeightGrid::new(n, n, 4.0, heights.clone()).unwrap();
        let dead: Vec<bool> = (0..n * n).map(|_| rng.gen_bool(0.05)).collect();
        let goal: Vec<bool> = (0..n * n).map(|_| rng.gen_bool(goal_p)).collect();
        let open: Vec<bool> = (0..n * n).map(|i| heights[i] < 10.0 && !dead[i]).collect();
        let values: Vec<f64> = (0..n * n)
            .map(|i| {
                if goal[i] {
                    rng.gen_range(5.0..40.0)
                } else {
                    rng.gen_range(-80.0..4.9)
                }
            })
            .collect();
        let field = SinrField::new(n, n, 4.0, Cell::new(0, 0), 10.0, values, open.clone()).unwrap();
        let starts: Vec<usize> = (0..n * n).filter(|&i| open[i]).collect();
        if starts.is_empty() {
            continue;
        }
        let s = starts[rng.gen_range(0..starts.len())];
        let g = genie_shortest(&grid, &field, Cell::new(s / n, s % n), 5.0, 10.0).unwrap();
        let oracle = relaxation_distance(&open, &goal, n, s);
        let ours = g.reachable.then_some(g.steps);
        reachable += ours.is_some() as usize;
        let path_ok = !g.reachable
            || (g.path.len() == g.steps + 1
                && g.path
                    .windows(2)
                    .all(|w| w[0].manhattan(w[1]) == 1 && open[w[1].row * n + w[1].col])
                && goal[g.path.last().unwrap().row * n + g.path.last().unwrap().col]);
        if ours != oracle || !path_ok {
            mismatches += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < 60.0,
        format!("{mismatches} mismatches on 200 maps ({reachable} reachable), {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 5

/// World offset of a frame offset under `k` counter-clockwise quarter turns.
fn frame_to_world(k: u8, (mut dr, mut dc): (isize, isize)) -> (isize, isize) {
    for _ in 0..k {
        (dr, dc) = (dc, -dr);
    }
    (dr, dc)
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut bad, mut counts) = (0usize, [0usize; 3]);
    for _ in 0..100 {
        let (grid, field) = random_scene(&mut rng, 128.0);
        let env = Env::new(&grid, &field, EpisodeConfig::training()).unwrap();
        let (mut state, _) = env.reset(rng.gen()).unwrap();
        for _ in 0..rng.gen_range(0..120) {
            if state.done {
                break;
            }
            let a = random_walk_policy(&state, &env, &mut rng).unwrap();
            env.step(&mut state, a).unwrap();
        }
        let obs = env.build_observation(&state);
        let k = state.rotation.quarter_turns();
        let half = (obs.size / 2) as isize;
        let visited: std::collections::HashMap<Cell, f64> = state.visits().iter().copied().collect();
        for i in 0..obs.size {
            for j in 0..obs.size {
                let v = obs.sinr[i * obs.size + j] as f64;
                let (dr, dc) = frame_to_world(k, (i as isize - half, j as isize - half));
                let cell = state.uav_cell.offset(dr, dc).filter(|&c| grid.contains(c));
                let expected = match cell {
                    None => P_LOW_DB,
                    Some(c) if !field.is_valid(c) || grid.is_blocked(c, 10.0).unwrap() => P_LOW_DB,
                    Some(c) => visited.get(&c).map_or(P_HIGH_DB, |&s| s as f32 as f64),
                };
                let class = if v == P_LOW_DB {
                    0
                } else if v == P_HIGH_DB {
                    1
                } else if (-140.0..=45.0).contains(&v) {
                    2
                } else {
                    bad += 1;
                    continue;
                };
                counts[class] += 1;
                if v != expected {
                    bad += 1;
                }
            }
        }
    }
    verdict(
        bad == 0,
        format!(
            "{bad} misencoded entries; {} P_L, {} P_H, {} measured",
            counts[0], counts[1], counts[2]
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    let (mut repeat, mut uniform) = (0, 0);
    let mut prev = Action::PlusX;
    for _ in 0..n {
        let s = select_action(ActionSet::FULL, 1.0, Some(prev), &mut rng, || unreachable!()).unwrap();
        match s.source {
            ActionSource::Repeat => repeat += 1,
            ActionSource::Uniform => uniform += 1,
            ActionSource::Greedy => {}
        }
        prev = s.action;
    }
    let (fr, fu) = (repeat as f64 / n as f64, uniform as f64 / n as f64);
    verdict(
        (fr - 0.4).abs() <= 0.01 && (fu - 0.6).abs() <= 0.01,
        format!("repeat {repeat}/{n} = {fr:.4} (0.4 +/- 0.01), uniform {uniform}/{n} = {fu:.4} (0.6 +/- 0.01)"),
    )
}

// ---------------------------------------------------------------- 7-9

struct Desk {
    outcomes: Vec<SeedOutcome>,
    upper_bound: f64,
}

fn desk_scale() -> Desk {
    let config = DeskScaleConfig::default();
    let (train_data, test_data) = config.datasets().unwrap();
    let t0 = Instant::now();
    let outcomes: Vec<SeedOutcome> = config
        .train_seeds
        .par_iter()
        .map(|&seed| run_seed(&config, &train_data, &test_data, seed).unwrap())
        .collect();
    eprintln!(
        "desk-scale runs finished in {:.1} min",
        t0.elapsed().as_secs_f64() / 60.0
    );
    let upper_bound = upper_bound(train_data.sinr_fields(), config.trainer.episode.target_sinr_db).unwrap();
    Desk { outcomes, upper_bound }
}

fn summary(m: &EvalMetrics) -> String {
    format!(
        "{:.3}/{}",
        m.success_rate,
        m.median_steps.map_or("-".into(), |v| v.to_string())
    )
}

fn criterion_7(desk: &Desk) -> Verdict {
    let per_seed: Vec<String> = desk
        .outcomes
        .iter()
        .map(|o| {
            format!(
                "seed {}: full {} random {} genie median {}",
                o.seed,
                summary(&o.full),
                summary(&o.random),
                o.full.genie_median().unwrap_or(f64::NAN)
            )
        })
        .collect();
    let success = median(&desk.outcomes.iter().map(|o| o.full.success_rate).collect::<Vec<_>>()).unwrap();
    let margin = median(
        &desk
            .outcomes
            .iter()
            .map(|o| o.full.success_rate - o.random.success_rate)
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let ratio = median(
        &desk
            .outcomes
            .iter()
            .map(|o| match (o.full.median_steps, o.full.genie_median()) {
                (Some(m), Some(g)) if g > 0.0 => m / g,
                (Some(0.0), Some(_)) => 0.0,
                _ => f64::INFINITY,
            })
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let pass = success >= 0.70 && margin >= 0.20 && ratio <= 4.0;
    verdict(
        pass,
        format!(
            "median success {success:.3} (>= 0.70), margin over random {margin:.3} (>= 0.20), steps/genie {ratio:.2} (<= 4) [{}]",
            per_seed.join("; ")
        ),
    )
}

fn criterion_8(desk: &Desk) -> Verdict {
    let full = median(&desk.outcomes.iter().map(|o| o.full.success_rate).collect::<Vec<_>>()).unwrap();
    let blind = median(&desk.outcomes.iter().map(|o| o.blind.success_rate).collect::<Vec<_>>()).unwrap();
    let per_seed: Vec<String> = desk
        .outcomes
        .iter()
        .map(|o| {
            format!(
                "seed {}: full {:.3} blind {:.3}",
                o.seed, o.full.success_rate, o.blind.success_rate
            )
        })
        .collect();
    verdict(
        full >= blind,
        format!(
            "median full {full:.3} >= median blind {blind:.3} [{}]",
            per_seed.join("; ")
        ),
    )
}

fn criterion_9(desk: &Desk) -> Verdict {
    let mut worst = f64::MIN;
    for o in &desk.outcomes {
        for t in [&o.full_training, &o.blind_training] {
            for r in &t.curve {
                if let Some(m) = r.trailing_mean_increase {
                    worst = worst.max(m);
                }
            }
        }
    }
    verdict(
        worst <= desk.upper_bound,
        format!(
            "max trailing-100 mean {worst:.3} dB vs upper bound {:.3} dB over 6 runs",
            desk.upper_bound
        ),
    )
}

// ---------------------------------------------------------------- 10

fn train_and_eval_bytes(budget: u64) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let config = DeskScaleConfig::default();
    let (train_data, test_data) = config.datasets().unwrap();
    let trainer = TrainerConfig {
        total_env_steps: budget,
        ..config.trainer.clone()
    };
    let outcome = train(&train_data, &trainer, 10).unwrap();
    let eval = EvalConfig {
        n_episodes: 200,
        seed: 10,
        ..config.eval.clone()
    };
    let metrics = run_eval(Policy::Trained(&outcome.best), &test_data, &eval).unwrap();
    let (mut ckpt, mut csv, mut curve) = (Vec::new(), Vec::new(), Vec::new());
    write_checkpoint(&outcome.best, &mut ckpt).unwrap();
    write_metrics_csv(&metrics, &mut csv).unwrap();
    uav_dqn::rl::write_curve_csv(&outcome.curve, &mut curve).unwrap();
    (ckpt, csv, curve)
}

fn criterion_10() -> Verdict {
    let budget = 6000;
    let a = train_and_eval_bytes(budget);
    let b = train_and_eval_bytes(budget);
    verdict(
        a == b,
        format!(
            "checkpoint {} B, metrics CSV {} B, curve CSV {} B identical across two {budget}-step runs: {}",
            a.0.len(),
            a.1.len(),
            a.2.len(),
            a == b
        ),
    )
}

type HeavyCriterion = fn(&Desk) -> Verdict;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| args.is_empty() || args.iter().any(|a| a == &n.to_string());
    let mut failed = 0;
    let mut report = |n: usize, v: Verdict, secs: f64| {
        println!(
            "criterion {n:>2}: {} ({:.1} s) {}",
            if v.pass { "PASS" } else { "FAIL" },
            secs,
            v.detail
        );
        if !v.pass {
            failed += 1;
        }
    };
    let cheap: [(usize, fn() -> Verdict); 7] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (10, criterion_10),
    ];
    for (n, f) in cheap {
        if wanted(n) {
            let t0 = Instant::now();
            let v = f();
            report(n, v, t0.elapsed().as_secs_f64());
        }
    }
    if wanted(7) || wanted(8) || wanted(9) {
        let t0 = Instant::now();
        let desk = desk_scale();
        let secs = t0.elapsed().as_secs_f64();
        let heavy: [(usize, HeavyCriterion); 3] = [(7, criterion_7), (8, criterion_8), (9, criterion_9)];
        for (n, f) in heavy {
            if wanted(n) {
                report(n, f(&desk), secs);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
