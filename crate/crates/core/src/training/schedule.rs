//! Adam and the layerwise learn / re-learn schedule.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grad::{grad_check, grad_unconstrained, loss_at, Block, GradReport, Unconstrained};
use super::Sample;
use crate::error::{JadceError, Result};
use crate::estimator::{check_config, FatDlConfig, FatDlParams, Stop};
use crate::linalg::CMat;
use crate::rng::{child_seed, stream, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub batch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub steps_per_phase: usize,
    /// `rates[0]` drives the individual learn phases; the re-learn phases
    /// walk through `rates[1..]`, splitting their steps evenly.
    pub rates: Vec<f64>,
    pub sizes: DatasetSizes,
    pub seeds: Seeds,
    /// Validation loss is evaluated every this many steps.
    pub eval_every: usize,
    /// Run the finite-difference gate before the first phase.
    pub grad_check: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 128,
            steps_per_phase: 2000,
            rates: vec![1e-3, 5e-4, 1e-4, 1e-5],
            sizes: DatasetSizes {
                train: 2000,
                val: 200,
                test: 200,
            },
            seeds: Seeds { data: 1, batch: 2 },
            eval_every: 50,
            grad_check: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(JadceError::invalid("batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(JadceError::invalid("eval_every must be at least 1"));
        }
        if self.rates.is_empty() || self.rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(JadceError::invalid("learning rates must be a non-empty list of positive reals"));
        }
        if self.rates[1..].windows(2).any(|w| w[1] >= w[0]) {
            return Err(JadceError::invalid("re-learn rates must be strictly decreasing"));
        }
        Ok(())
    }

    fn rate(&self, kind: PhaseKind, step: usize) -> f64 {
        let global = &self.rates[1..];
        if kind == PhaseKind::Learn || global.is_empty() {
            return self.rates[0];
        }
        let chunk = self.steps_per_phase.div_ceil(global.len()).max(1);
        global[(step / chunk).min(global.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Learn,
    Relearn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub id: usize,
    pub kind: PhaseKind,
    /// Where the phase's loss is taken.
    pub stop: Stop,
    pub blocks: Vec<Block>,
    /// `(dst, src)` copies applied before the phase starts.
    pub init: Vec<(Block, Block)>,
}

impl Phase {
    pub fn label(&self) -> String {
        let kind = match self.kind {
            PhaseKind::Learn => "learn",
            PhaseKind::Relearn => "relearn",
        };
        let loss = match self.stop {
            Stop::Inner(i) => format!("inner {i}"),
            Stop::Outer(t) => format!("outer {t}"),
        };
        let names: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        format!("{kind} {} against {loss}", names.join(","))
    }
}

fn omegas(range: std::ops::Range<usize>) -> Vec<Block> {
    range.flat_map(|i| [Block::Weights(i), Block::Variances(i)]).collect()
}

/// The phase sequence for `T` outer and `tau` inner layers. The inner index
/// runs on across outer layers.
pub fn phase_plan(outer_layers: usize, inner_layers: usize) -> Vec<Phase> {
    let tau = inner_layers;
    let mut out: Vec<Phase> = Vec::new();
    let mut push = |kind, stop, blocks, init| {
        let id = out.len() + 1;
        out.push(Phase {
            id,
            kind,
            stop,
            blocks,
            init,
        })
    };
    if outer_layers == 0 || tau == 0 {
        return out;
    }
    for i in 0..tau {
        let init = if i > 0 {
            vec![(Block::Weights(i), Block::Weights(i - 1)), (Block::Variances(i), Block::Variances(i - 1))]
        } else {
            Vec::new()
        };
        push(PhaseKind::Learn, Stop::Inner(i + 1), omegas(i..i + 1), init);
        if i > 0 {
            push(PhaseKind::Relearn, Stop::Inner(i + 1), omegas(0..i + 1), Vec::new());
        }
    }
    push(PhaseKind::Learn, Stop::Outer(1), vec![Block::Beta(0)], Vec::new());
    let mut all = vec![Block::Beta(0)];
    all.extend(omegas(0..tau));
    push(PhaseKind::Relearn, Stop::Outer(1), all, Vec::new());
    for t in 1..outer_layers {
        for k in 0..tau {
            let i = t * tau + k;
            let mut init = vec![(Block::Weights(i), Block::Weights(i - 1)), (Block::Variances(i), Block::Variances(i - 1))];
            if k == 0 {
                init.insert(0, (Block::Beta(t), Block::Beta(t - 1)));
            }
            push(PhaseKind::Learn, Stop::Inner(i + 1), omegas(i..i + 1), init);
            push(PhaseKind::Relearn, Stop::Inner(i + 1), omegas(t * tau..i + 1), Vec::new());
        }
        let mut blocks: Vec<Block> = (0..t).map(Block::Beta).collect();
        blocks.extend(omegas(0..(t + 1) * tau));
        push(PhaseKind::Relearn, Stop::Outer(t + 1), blocks, Vec::new());
        push(PhaseKind::Learn, Stop::Outer(t + 1), vec![Block::Beta(t)], Vec::new());
        let mut blocks: Vec<Block> = (0..=t).map(Block::Beta).collect();
        blocks.extend(omegas(0..(t + 1) * tau));
        push(PhaseKind::Relearn, Stop::Outer(t + 1), blocks, Vec::new());
    }
    out
}

/// Adam over a flat vector; only the indices passed to [`Adam::step`] move.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], active: &[std::ops::Range<usize>], rate: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for r in active {
            for k in r.clone() {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g[k];
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g[k] * g[k];
                x[k] -= rate * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// One record per phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: usize,
    pub label: String,
    pub kind: PhaseKind,
    pub steps: usize,
    /// Mean mini-batch loss over the phase's last evaluation window.
    pub train_loss: f64,
    pub val_initial: f64,
    pub val_best: f64,
    /// Best-so-far validation loss after each evaluation.
    pub val_trace: Vec<f64>,
    pub diverged: bool,
    /// What ended the phase early, if anything.
    pub event: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: FatDlParams,
    /// Entry `t - 1` holds the first `t` outer layers as they stood after the
    /// last phase trained against outer layer `t`.
    pub per_outer: Vec<FatDlParams>,
    pub log: Vec<PhaseLog>,
    pub grad_report: Option<GradReport>,
}

/// Writes the phase log as JSON lines.
pub fn write_phase_log(path: &Path, log: &[PhaseLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in log {
        let line = serde_json::to_string(rec).map_err(|e| JadceError::format(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

/// Runs the whole schedule from `init`. Each phase resets Adam, tracks the
/// validation loss at the phase's stop point and finishes on its best
/// checkpoint. A validation loss above ten times the phase's starting value
/// ends the phase early.
pub fn train_layerwise(
    init: &FatDlParams,
    fat: &FatDlConfig,
    a: &CMat,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_config(init, fat, a.ncols())?;
    if fat.outer_layers != init.outer_layers {
        return Err(JadceError::invalid("training needs the config to use every outer layer"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(JadceError::invalid("training and validation sets must be non-empty"));
    }
    if cfg.steps_per_phase == 0 {
        return Ok(TrainOutcome {
            params: init.clone(),
            per_outer: (1..=init.outer_layers).map(|t| init.truncated(t)).collect(),
            log: Vec::new(),
            grad_report: None,
        });
    }
    let grad_report = if cfg.grad_check && fat.outer_layers > 0 {
        let batch: Vec<&Sample> = train.iter().take(4).collect();
        let rep = grad_check(init, fat, a, &batch, Stop::Outer(fat.outer_layers), 20, cfg.seeds.batch)?;
        if !rep.passed {
            return Err(JadceError::GradCheck(format!(
                "max relative error {:.3e} above {:.0e}",
                rep.max_rel_err, rep.tolerance
            )));
        }
        Some(rep)
    } else {
        None
    };

    let val_refs: Vec<&Sample> = val.iter().collect();
    let mut u = Unconstrained::from_params(init);
    let mut log = Vec::new();
    let mut per_outer = Vec::with_capacity(init.outer_layers);
    for phase in phase_plan(init.outer_layers, init.inner_layers) {
        let started = Instant::now();
        for &(dst, src) in &phase.init {
            u.copy_block(dst, src);
        }
        let ranges: Vec<_> = phase.blocks.iter().map(|&b| u.range(b)).collect();
        let val_initial = loss_at(&u.to_params(), fat, a, &val_refs, phase.stop)?;
        let mut best = (val_initial, u.values.clone());
        let mut trace = Vec::new();
        let mut adam = Adam::new(u.values.len());
        let mut rng = stream(child_seed(cfg.seeds.batch, phase.id as u64), streams::TRAIN_BATCH);
        let mut window = (0.0, 0usize);
        let mut last_window = f64::NAN;
        let mut event = None;
        let mut steps = 0;
        for s in 0..cfg.steps_per_phase {
            let batch: Vec<&Sample> = (0..cfg.batch_size).map(|_| &train[rng.random_range(0..train.len())]).collect();
            let (loss, g) = match grad_unconstrained(&u, fat, a, &batch, phase.stop) {
                Ok(x) => x,
                Err(e @ JadceError::Numerical(_)) | Err(e @ JadceError::NonFinite { .. }) => {
                    event = Some(format!("step {}: {e}", s + 1));
                    break;
                }
                Err(e) => return Err(e),
            };
            adam.step(&mut u.values, &g, &ranges, cfg.rate(phase.kind, s));
            steps = s + 1;
            window.0 += loss;
            window.1 += 1;
            if steps % cfg.eval_every == 0 || steps == cfg.steps_per_phase {
                last_window = window.0 / window.1 as f64;
                window = (0.0, 0);
                let vl = match loss_at(&u.to_params(), fat, a, &val_refs, phase.stop) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) | Err(JadceError::NonFinite { .. }) | Err(JadceError::Numerical(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                if vl < best.0 {
                    best = (vl, u.values.clone());
                }
                trace.push(best.0);
                if vl > 10.0 * val_initial {
                    event = Some(format!("step {steps}: validation loss {vl:.4e} above ten times {val_initial:.4e}"));
                    break;
                }
            }
        }
        let diverged = event.is_some();
        if let Some(ev) = &event {
            log::warn!("phase {} ({}) diverged at {ev}; restoring best checkpoint", phase.id, phase.label());
        }
        u.values = best.1;
        log::info!("phase {} {}: val {:.4e} -> {:.4e}", phase.id, phase.label(), val_initial, best.0);
        log.push(PhaseLog {
            phase: phase.id,
            label: phase.label(),
            kind: phase.kind,
            steps,
            train_loss: last_window,
            val_initial,
            val_best: best.0,
            val_trace: trace,
            diverged,
            event,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        if let Stop::Outer(t) = phase.stop {
            let snap = u.to_params().truncated(t);
            if per_outer.len() < t {
                per_outer.push(snap);
            } else {
                per_outer[t - 1] = snap;
            }
        }
    }
    Ok(TrainOutcome {
        params: u.to_params(),
        per_outer,
        log,
        grad_report,
    })
}
