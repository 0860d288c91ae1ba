use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gate::gumbel_noise;
use super::loss::{relaxed_term, FixedDraw, Link, ScaleMode};
use super::mlp::{MlpGrad, MlpModel, DEFAULT_WIDTH};
use crate::dataset::{Environment, MultiEnvDataset};
use crate::error::{Error, Result};
use crate::invariance::{evaluate_subset, Aggregation, InvarianceConfig, LossTable, MIN_STAT_ROWS};
use crate::kernel::median_bandwidth;
use crate::nuisance::NuisanceConfig;
use crate::search::{SelectionMethod, SelectionResult};
use crate::seed;
use crate::subset::SubsetMask;

/// Weight of the running loss average watched by early stopping.
const SMOOTHING: f64 = 0.9;

/// Minimum rows per environment for training.
pub const MIN_TRAIN_ROWS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many epochs without a new best smoothed training
    /// loss.
    pub patience: usize,
    pub lr_gate: f64,
    pub lr_model: f64,
    pub tau_init: f64,
    pub anneal_rate: f64,
    pub anneal_every: usize,
    pub tau_final: f64,
    pub width: usize,
    /// Rows drawn per environment each epoch; `None` uses all rows.
    pub batch_size: Option<usize>,
    /// Point cap for the per-epoch bandwidth.
    pub bandwidth_cap: usize,
    /// Starting value of every gate logit.
    pub init_logit: f64,
    /// Also adjudicate the gate subsets seen at every anneal step, not only
    /// the final ones.
    pub snapshot_candidates: bool,
    /// Whether the gradient flows through the studentization denominator.
    pub scale_gradient: bool,
    pub seed: u64,
    /// Settings of the exact losses used to adjudicate between the two
    /// candidate subsets.
    pub invariance: InvarianceConfig,
    pub nuisance: NuisanceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 700,
            patience: 100,
            lr_gate: 0.1,
            lr_model: 0.1,
            tau_init: 1.0,
            anneal_rate: 0.9,
            anneal_every: 10,
            tau_final: 0.1,
            width: DEFAULT_WIDTH,
            batch_size: Some(256),
            bandwidth_cap: 256,
            scale_gradient: true,
            init_logit: 1.0,
            snapshot_candidates: true,
            seed: 0,
            invariance: InvarianceConfig {
                aggregation: Aggregation::Mean,
                ..InvarianceConfig::default()
            },
            nuisance: NuisanceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.seed = seed;
        cfg.invariance.seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.lr_gate > 0.0 && self.lr_model > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.anneal_rate > 0.0 && self.anneal_rate < 1.0) {
            return bad("anneal rate must lie in (0, 1)");
        }
        if !(self.tau_final > 0.0 && self.tau_init >= self.tau_final && self.tau_init.is_finite()) {
            return bad("temperatures must satisfy 0 < tau_final <= tau_init");
        }
        if self.anneal_every == 0 || self.width == 0 {
            return bad("anneal_every and width must be at least 1");
        }
        if matches!(self.batch_size, Some(b) if b < MIN_TRAIN_ROWS) {
            return bad("batch size must be at least 8");
        }
        Ok(())
    }

    /// Temperature in effect during `epoch` (1-based): annealed once every
    /// `anneal_every` epochs, never below `tau_final`.
    pub fn tau_at(&self, epoch: usize) -> f64 {
        let events = (epoch / self.anneal_every) as i32;
        (self.tau_init * self.anneal_rate.powi(events)).max(self.tau_final)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub tau: f64,
    pub loss_t: f64,
    pub loss_y: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    /// CSV with header `epoch,tau,loss_T,loss_Y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,tau,loss_T,loss_Y")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.epoch, r.tau, r.loss_t, r.loss_y)?;
        }
        Ok(())
    }
}

/// Result of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelRun {
    pub selection: SelectionResult,
    pub w_pi: Vec<f64>,
    pub w_y: Vec<f64>,
    pub trace: TrainingTrace,
    pub propensity_model: MlpModel,
    pub outcome_models: [MlpModel; 2],
    /// Learning rates actually used, after any restart.
    pub lr_gate: f64,
    pub lr_model: f64,
    pub restarted: bool,
}

struct State {
    w_pi: Vec<f64>,
    w_y: Vec<f64>,
    pi: MlpModel,
    y0: MlpModel,
    y1: MlpModel,
    trace: TrainingTrace,
    snapshots: Vec<SubsetMask>,
}

/// Trains the gates and returns the adjudicated subset.
pub fn gumbel_select(data: &MultiEnvDataset, cfg: &TrainConfig) -> Result<SelectionResult> {
    gumbel_train(data, cfg).map(|r| r.selection)
}

/// Trains the gates and keeps the trace and final logits. A non-finite loss
/// restarts once with halved learning rates.
pub fn gumbel_train(data: &MultiEnvDataset, cfg: &TrainConfig) -> Result<GumbelRun> {
    cfg.validate()?;
    data.require_multi_env()?;
    for (e, env) in data.envs().iter().enumerate() {
        if env.n() < MIN_TRAIN_ROWS {
            return Err(Error::InvalidInput(format!(
                "environment {e} has {} rows; training needs at least {MIN_TRAIN_ROWS}",
                env.n()
            )));
        }
    }
    let (state, lr_gate, lr_model, restarted) = match train(data, cfg, cfg.lr_gate, cfg.lr_model) {
        Ok(s) => (s, cfg.lr_gate, cfg.lr_model, false),
        Err(Error::Diverged(first)) => {
            log::warn!("gumbel training diverged ({first}); restarting with halved learning rates");
            let (g, m) = (cfg.lr_gate / 2.0, cfg.lr_model / 2.0);
            (train(data, cfg, g, m)?, g, m, true)
        }
        Err(e) => return Err(e),
    };
    let selection = adjudicate(data, cfg, &state)?;
    Ok(GumbelRun {
        selection,
        w_pi: state.w_pi,
        w_y: state.w_y,
        trace: state.trace,
        propensity_model: state.pi,
        outcome_models: [state.y0, state.y1],
        lr_gate,
        lr_model,
        restarted,
    })
}

fn positive(w: &[f64]) -> SubsetMask {
    SubsetMask::new(w.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(j, _)| j).collect())
}

/// Exact losses of `S_Y = {w_y > 0}`, `S_T = {w_π > 0}` and any
/// snapshots; the lowest combined loss wins, earlier candidates on ties.
fn adjudicate(data: &MultiEnvDataset, cfg: &TrainConfig, state: &State) -> Result<SelectionResult> {
    let mut candidates = vec![positive(&state.w_y), positive(&state.w_pi)];
    candidates.extend(state.snapshots.iter().cloned());
    let mut table = LossTable::new(cfg.invariance.aggregation);
    let mut best: Option<crate::invariance::Objective> = None;
    for subset in candidates {
        if table.contains(&subset) {
            continue;
        }
        let obj = evaluate_subset(data, &subset, &cfg.invariance, &cfg.nuisance)?;
        table.entries.extend(obj.entries.iter().cloned());
        if best.as_ref().is_none_or(|b| obj.combined < b.combined) {
            best = Some(obj);
        }
    }
    let best = best.expect("at least one candidate");
    Ok(SelectionResult::from_objective(&best, SelectionMethod::Gumbel, cfg.seed, table))
}

fn arm_mean(data: &MultiEnvDataset, arm: Option<u8>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for env in data.envs() {
        for i in 0..env.n() {
            let treated = env.t[i] == 1.0;
            match arm {
                None => sum += env.t[i],
                Some(a) if treated == (a == 1) => sum += env.y[i],
                Some(_) => continue,
            }
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(0.01, 0.99);
    (p / (1.0 - p)).ln()
}

/// Gated copy of `x` used only for the bandwidth.
fn gated(x: &Array2<f64>, gates: &[f64]) -> Array2<f64> {
    let mut z = x.clone();
    for mut row in z.rows_mut() {
        row.iter_mut().zip(gates).for_each(|(v, g)| *v *= g);
    }
    z
}

struct TermSlot<'a> {
    model: &'a MlpModel,
    link: Link,
    w: &'a [f64],
    scale: ScaleMode,
}

/// One term on `rows` of `env`: value, model gradient and logit gradient.
fn term(
    slot: &TermSlot<'_>,
    env: &Environment,
    rows: &[usize],
    target: &[f64],
    noise: &[(f64, f64)],
    tau: f64,
    cap: usize,
    bw_seed: u64,
) -> Result<super::loss::TermGrad> {
    let x = env.x.select(Axis(0), rows);
    let draw = FixedDraw {
        noise: noise.to_vec(),
        tau,
        sigma: 1.0,
        scale: slot.scale,
    };
    let gates = draw.gates(slot.w);
    let sigma = median_bandwidth(gated(&x, &gates).view(), cap, bw_seed);
    let draw = FixedDraw { sigma, ..draw };
    relaxed_term(slot.model, slot.link, x.view(), target, slot.w, &draw)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged(format!("non-finite {what}")))
    }
}

fn train(data: &MultiEnvDataset, cfg: &TrainConfig, lr_gate: f64, lr_model: f64) -> Result<State> {
    let d = data.d();
    let n_env = data.n_envs() as f64;
    let mut init_rng = seed::child_rng(cfg.seed, 0);
    let mut pi = MlpModel::new(d, cfg.width, &mut init_rng);
    let mut y0 = MlpModel::new(d, cfg.width, &mut init_rng);
    let mut y1 = MlpModel::new(d, cfg.width, &mut init_rng);
    pi.b2 = logit(arm_mean(data, None));
    y0.b2 = arm_mean(data, Some(0));
    y1.b2 = arm_mean(data, Some(1));
    let mut w_pi = vec![cfg.init_logit; d];
    let mut w_y = vec![cfg.init_logit; d];
    let mut trace = TrainingTrace::default();
    let mut rng: ChaCha8Rng = seed::child_rng(cfg.seed, 1);

    let scale = if cfg.scale_gradient {
        ScaleMode::Batch
    } else {
        ScaleMode::Detached
    };
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut smoothed = 0.0;
    let mut snapshots = Vec::new();
    for epoch in 1..=cfg.epochs {
        let tau = cfg.tau_at(epoch);
        let mut g_pi = MlpGrad::zeros(d, cfg.width);
        let mut g_y = [MlpGrad::zeros(d, cfg.width), MlpGrad::zeros(d, cfg.width)];
        let mut gw_pi = vec![0.0; d];
        let mut gw_y = vec![0.0; d];
        let (mut loss_t, mut loss_y) = (0.0, 0.0);

        for env in data.envs() {
            let n = env.n();
            let rows: Vec<usize> = match cfg.batch_size {
                Some(b) if b < n => index::sample(&mut rng, n, b).into_vec(),
                _ => {
                    let mut all: Vec<usize> = (0..n).collect();
                    all.shuffle(&mut rng);
                    all
                }
            };
            let noise_pi = gumbel_noise(d, &mut rng);
            let noise_y = gumbel_noise(d, &mut rng);
            let bw_seed = rand::Rng::gen::<u64>(&mut rng);

            let t_target: Vec<f64> = rows.iter().map(|&i| env.t[i]).collect();
            let slot = TermSlot {
                model: &pi,
                link: Link::Logistic,
                w: &w_pi,
                scale,
            };
            let tg = term(&slot, env, &rows, &t_target, &noise_pi, tau, cfg.bandwidth_cap, bw_seed)?;
            loss_t += tg.loss / n_env;
            g_pi.add_scaled(&tg.d_model, 1.0 / n_env);
            gw_pi.iter_mut().zip(&tg.d_logits).for_each(|(a, b)| *a += b / n_env);

            for arm in 0..2u8 {
                let arm_rows: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&i| (env.t[i] == 1.0) == (arm == 1))
                    .collect();
                if arm_rows.len() < MIN_STAT_ROWS {
                    continue;
                }
                let target: Vec<f64> = arm_rows.iter().map(|&i| env.y[i]).collect();
                let slot = TermSlot {
                    model: if arm == 1 { &y1 } else { &y0 },
                    link: Link::Identity,
                    w: &w_y,
                    scale,
                };
                let tg = term(&slot, env, &arm_rows, &target, &noise_y, tau, cfg.bandwidth_cap, bw_seed)?;
                let c = 1.0 / (2.0 * n_env);
                loss_y += tg.loss * c;
                g_y[arm as usize].add_scaled(&tg.d_model, c);
                gw_y.iter_mut().zip(&tg.d_logits).for_each(|(a, b)| *a += b * c);
            }
        }

        check_finite(&[loss_t, loss_y], "training loss")?;
        check_finite(&gw_pi, "gate gradient")?;
        check_finite(&gw_y, "gate gradient")?;
        for g in [&g_pi, &g_y[0], &g_y[1]] {
            check_finite(&g.flatten(), "model gradient")?;
        }
        w_pi.iter_mut().zip(&gw_pi).for_each(|(w, g)| *w -= lr_gate * g);
        w_y.iter_mut().zip(&gw_y).for_each(|(w, g)| *w -= lr_gate * g);
        pi.step(&g_pi, lr_model);
        y0.step(&g_y[0], lr_model);
        y1.step(&g_y[1], lr_model);
        trace.rows.push(TraceRow {
            epoch,
            tau,
            loss_t,
            loss_y,
        });
        if cfg.snapshot_candidates && epoch % cfg.anneal_every == 0 {
            for subset in [positive(&w_y), positive(&w_pi)] {
                if !snapshots.contains(&subset) {
                    snapshots.push(subset);
                }
            }
        }

        // patience watches a smoothed loss since batch losses are noisy
        let total = loss_t + loss_y;
        smoothed = if epoch == 1 { total } else { SMOOTHING * smoothed + (1.0 - SMOOTHING) * total };
        if smoothed < best {
            best = smoothed;
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(State {
        w_pi,
        w_y,
        pi,
        y0,
        y1,
        trace,
        snapshots,
    })
}

/// One point of the hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub tau_init: f64,
    pub anneal_rate: f64,
}

impl GridPoint {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lr_gate: self.lr,
            lr_model: self.lr,
            tau_init: self.tau_init,
            anneal_rate: self.anneal_rate,
            ..*base
        }
    }
}

/// Learning rate × initial temperature × anneal rate, 27 points.
pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::with_capacity(27);
    for lr in [0.001, 0.01, 0.1] {
        for tau_init in [0.5, 0.8, 1.0] {
            for anneal_rate in [0.9, 0.95, 0.99] {
                grid.push(GridPoint {
                    lr,
                    tau_init,
                    anneal_rate,
                });
            }
        }
    }
    grid
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub best: TrainConfig,
    pub selection: SelectionResult,
    /// Exact combined loss per grid point; `None` where training failed.
    pub losses: Vec<Option<f64>>,
}

/// Trains at every grid point and keeps the one with the lowest exact
/// combined loss (earliest on ties).
pub fn hyperparameter_sweep(data: &MultiEnvDataset, base: &TrainConfig, grid: &[GridPoint]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("hyperparameter grid is empty".into()));
    }
    let runs: Vec<(TrainConfig, Result<SelectionResult>)> = grid
        .par_iter()
        .map(|p| {
            let cfg = p.apply(base);
            (cfg, gumbel_select(data, &cfg))
        })
        .collect();
    let mut losses = Vec::with_capacity(runs.len());
    let mut best: Option<(TrainConfig, SelectionResult)> = None;
    let mut first_error = None;
    for (cfg, run) in runs {
        match run {
            Ok(sel) => {
                losses.push(Some(sel.loss));
                if best.as_ref().is_none_or(|(_, b)| sel.loss < b.loss) {
                    best = Some((cfg, sel));
                }
            }
            Err(e) => {
                log::warn!("grid point lr={} tau_init={} anneal={} failed: {e}", cfg.lr_gate, cfg.tau_init, cfg.anneal_rate);
                losses.push(None);
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some((best, selection)) => Ok(SweepResult {
            best,
            selection,
            losses,
        }),
        None => Err(first_error.expect("non-empty grid")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_formula() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.tau_at(9), 1.0);
        assert_eq!(cfg.tau_at(10), 0.9);
        assert!((cfg.tau_at(35) - 0.9f64.powi(3)).abs() < 1e-15);
        assert_eq!(cfg.tau_at(10_000), 0.1);
    }

    #[test]
    fn grid_has_27_points() {
        let g = default_grid();
        assert_eq!(g.len(), 27);
        assert_eq!(g[26].lr, 0.1);
        assert_eq!(g[0].anneal_rate, 0.9);
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::default();
        cfg.anneal_rate = 1.0;
        assert!(cfg.validate().is_err());
        cfg.anneal_rate = 0.9;
        cfg.tau_final = 2.0;
        assert!(cfg.validate().is_err());
    }
}
