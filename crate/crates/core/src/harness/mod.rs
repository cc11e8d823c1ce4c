//! Experiment specs, desk-scale presets, sweep execution, result tables and
//! the per-layer complexity benchmark.

mod bench;
mod presets;

pub use bench::{bench_complexity, BenchDims, BenchRow};
pub use presets::{preset, PRESET_NAMES};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::GmPrior;
use crate::detection::{aer, detect_activity, nmse_db};
use crate::error::{JadceError, Result};
use crate::estimator::{
    amp_run, default_fista_lambda, fatdl_forward, fista_run, omp_run, vamp_run, Denoiser, FatDlConfig, FatDlParams,
};
use crate::linalg::CMat;
use crate::reduction::{estimate_rank, lift, reduce, RankPolicy};
use crate::rng::child_seed;
use crate::scenario::{gen_device_state, gen_pilots_dims, noise_var_for_snr, synthesize, ChannelModel, PilotKind, PilotMatrix, SystemConfig};
use crate::training::{make_dataset, train_layerwise, Dataset, DatasetSizes, PhaseLog, Seeds, TrainOutcome, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PilotLen,
    SnrDb,
    Activity,
    Antennas,
    Mixture,
    TrainSize,
    OuterLayers,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::PilotLen => "L",
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::Activity => "epsilon",
            SweepAxis::Antennas => "M",
            SweepAxis::Mixture => "J",
            SweepAxis::TrainSize => "train_size",
            SweepAxis::OuterLayers => "outer_layers",
        }
    }

    fn integral(&self) -> bool {
        !matches!(self, SweepAxis::SnrDb | SweepAxis::Activity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Where a mixture-denoiser algorithm takes its parameters from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamSource {
    /// The untrained starting point.
    Init,
    /// Trained on data from the sweep point's scenario.
    Trained,
    /// The generating mixture (Gaussian-mixture channels only), mapped to
    /// the reduced domain and with its variances multiplied by `variance_scale`.
    Prior { variance_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    FatDl {
        outer_layers: usize,
        inner_layers: usize,
        em: bool,
        params: ParamSource,
    },
    /// VAMP with the mixture denoiser and fixed parameters.
    VampGm { layers: usize, params: ParamSource },
    VampSt { layers: usize, alpha: f64 },
    AmpSt { layers: usize, alpha: f64 },
    Fista { max_iter: usize },
    /// Per-column OMP with `ceil(N ε)` atoms.
    Omp,
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        let src = |p: &ParamSource| match p {
            ParamSource::Init => "init".to_string(),
            ParamSource::Trained => "trained".to_string(),
            ParamSource::Prior { variance_scale } => format!("prior x{variance_scale}"),
        };
        match self {
            AlgorithmSpec::FatDl {
                outer_layers,
                inner_layers,
                em,
                params,
            } => format!(
                "fatdl(T={outer_layers} tau={inner_layers} em={} {})",
                if *em { "on" } else { "off" },
                src(params)
            ),
            AlgorithmSpec::VampGm { layers, params } => format!("vamp-gm(T={layers} {})", src(params)),
            AlgorithmSpec::VampSt { layers, alpha } => format!("vamp-st(T={layers} alpha={alpha})"),
            AlgorithmSpec::AmpSt { layers, alpha } => format!("amp-st(T={layers} alpha={alpha})"),
            AlgorithmSpec::Fista { max_iter } => format!("fista(iter={max_iter})"),
            AlgorithmSpec::Omp => "omp".to_string(),
        }
    }

    fn with_layers(&self, t: usize) -> AlgorithmSpec {
        let mut a = self.clone();
        match &mut a {
            AlgorithmSpec::FatDl { outer_layers, .. } => *outer_layers = t,
            AlgorithmSpec::VampGm { layers, .. } | AlgorithmSpec::VampSt { layers, .. } | AlgorithmSpec::AmpSt { layers, .. } => {
                *layers = t
            }
            AlgorithmSpec::Fista { .. } | AlgorithmSpec::Omp => {}
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub train_size: usize,
    pub val_size: usize,
    pub steps_per_phase: usize,
    pub batch_size: usize,
    pub rates: Vec<f64>,
    pub eval_every: usize,
    pub grad_check: bool,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            train_size: 2000,
            val_size: 200,
            steps_per_phase: 300,
            batch_size: 32,
            rates: vec![1e-3, 5e-4, 1e-4, 1e-5],
            eval_every: 25,
            grad_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    /// Base scenario; the swept field is overwritten per point and the noise
    /// variance is always derived from `snr_db`.
    pub system: SystemConfig,
    pub pilot: PilotKind,
    pub channel: ChannelModel,
    pub sweep: Sweep,
    pub trials: usize,
    pub seed: u64,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_policy: Option<RankPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Free-form notes, e.g. the original scales a desk preset was shrunk from.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl ExperimentSpec {
    pub fn from_toml(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(s).map_err(|e| JadceError::format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| JadceError::format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(JadceError::invalid("trials must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(JadceError::invalid("no algorithms listed"));
        }
        if self.sweep.values.is_empty() || self.sweep.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(JadceError::invalid("sweep values must be non-empty and strictly increasing"));
        }
        if self.sweep.axis.integral() && self.sweep.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(JadceError::invalid(format!("{} sweep needs positive integers", self.sweep.axis.name())));
        }
        let needs_training = self.algorithms.iter().any(|a| {
            matches!(
                a,
                AlgorithmSpec::FatDl {
                    params: ParamSource::Trained,
                    ..
                }
            )
        });
        if needs_training && self.training.is_none() {
            return Err(JadceError::invalid("a trained algorithm needs a [training] section"));
        }
        for a in &self.algorithms {
            let src = match a {
                AlgorithmSpec::FatDl { params, inner_layers, .. } => {
                    if *inner_layers == 0 {
                        return Err(JadceError::invalid("FAT-DL needs at least one inner layer"));
                    }
                    Some(params)
                }
                AlgorithmSpec::VampGm { params, .. } => {
                    if *params == ParamSource::Trained {
                        return Err(JadceError::invalid("vamp-gm uses fixed parameters; use fat-dl for trained ones"));
                    }
                    Some(params)
                }
                _ => None,
            };
            if let Some(ParamSource::Prior { variance_scale }) = src {
                if !matches!(self.channel, ChannelModel::Bgm(_)) {
                    return Err(JadceError::invalid("prior parameters need a Gaussian-mixture channel model"));
                }
                if !(*variance_scale > 0.0) {
                    return Err(JadceError::invalid("variance scale must be positive"));
                }
            }
        }
        for (i, v) in self.sweep.values.iter().enumerate() {
            self.point_system(*v)
                .map_err(|e| JadceError::invalid(format!("sweep point {} ({v}): {e}", i + 1)))?;
        }
        Ok(())
    }

    fn point_system(&self, value: f64) -> Result<SystemConfig> {
        let mut s = self.system.clone();
        match self.sweep.axis {
            SweepAxis::PilotLen => s.pilot_len = value as usize,
            SweepAxis::SnrDb => s.snr_db = value,
            SweepAxis::Activity => s.activity_prob = value,
            SweepAxis::Antennas => s.n_antennas = value as usize,
            SweepAxis::Mixture => s.n_mixture = value as usize,
            SweepAxis::TrainSize | SweepAxis::OuterLayers => {}
        }
        if let ChannelModel::Bgm(p) = &self.channel {
            if p.n_devices() != s.n_devices {
                return Err(JadceError::invalid("channel prior does not match N"));
            }
        }
        s.noise_var = 1.0;
        s.validate()?;
        Ok(s)
    }

    fn point_algorithms(&self, value: f64) -> Vec<AlgorithmSpec> {
        match self.sweep.axis {
            SweepAxis::OuterLayers => self.algorithms.iter().map(|a| a.with_layers(value as usize)).collect(),
            _ => self.algorithms.clone(),
        }
    }

    fn rank_policy_for(&self, s: &SystemConfig) -> RankPolicy {
        self.rank_policy
            .unwrap_or_else(|| RankPolicy::default_for(Some(s.expected_active()), s.pilot_len, s.n_antennas))
    }
}

/// One aggregated row per (sweep value, algorithm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub algorithm: String,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub aer_median: f64,
    pub aer_q1: f64,
    pub aer_q3: f64,
    pub miss_median: f64,
    pub false_alarm_median: f64,
    /// Median over trials with at least one active device.
    pub nmse_db_median: f64,
    pub mean_wall_ms: f64,
    pub mean_reduce_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub id: String,
    pub axis: SweepAxis,
    pub rows: Vec<ResultRow>,
    /// First error message per failed (point, algorithm), for the record.
    pub failures: Vec<String>,
    pub training_logs: Vec<(f64, String, Vec<PhaseLog>)>,
}

impl ResultTable {
    pub fn row(&self, sweep_value: f64, algorithm: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == sweep_value && r.algorithm == algorithm)
    }
}

/// Per-trial outcome of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub aer: f64,
    pub miss: f64,
    pub false_alarm: f64,
    /// NaN when the trial has no active device.
    pub nmse_db: f64,
    pub wall_ms: f64,
}

/// Scenario of one sweep point: the swept field applied, noise variance
/// derived from the SNR and the point's pilot matrix drawn.
#[derive(Debug, Clone)]
pub struct PointScenario {
    pub value: f64,
    pub system: SystemConfig,
    pub pilots: PilotMatrix,
    pub rank_policy: RankPolicy,
    pub algorithms: Vec<AlgorithmSpec>,
}

pub fn point_scenario(spec: &ExperimentSpec, value: f64) -> Result<PointScenario> {
    let mut system = spec.point_system(value)?;
    let pilots = gen_pilots_dims(system.pilot_len, system.n_devices, spec.pilot, spec.seed)?;
    system.noise_var = noise_var_for_snr(
        system.n_devices,
        system.activity_prob,
        spec.channel.entry_power(&system),
        pilots.mean_power(),
        system.snr_db,
    );
    let rank_policy = spec.rank_policy_for(&system);
    Ok(PointScenario {
        value,
        system,
        pilots,
        rank_policy,
        algorithms: spec.point_algorithms(value),
    })
}

impl TrainingSpec {
    pub fn config(&self, train_size: usize, test_size: usize, seed: u64) -> TrainingConfig {
        TrainingConfig {
            batch_size: self.batch_size,
            steps_per_phase: self.steps_per_phase,
            rates: self.rates.clone(),
            sizes: DatasetSizes {
                train: train_size,
                val: self.val_size,
                test: test_size,
            },
            seeds: Seeds {
                data: child_seed(seed, DATA_SEED),
                batch: child_seed(seed, BATCH_SEED),
            },
            eval_every: self.eval_every,
            grad_check: self.grad_check,
        }
    }
}

const DATA_SEED: u64 = 0x7261_696e;
const VAL_SEED: u64 = 0x7661_6c00;
const BATCH_SEED: u64 = 0x6261_7463;

/// Training and validation sets for a sweep point, disjoint from the trial seeds.
pub fn training_sets(spec: &ExperimentSpec, point: &PointScenario) -> Result<(Dataset, Dataset)> {
    let ts = spec
        .training
        .as_ref()
        .ok_or_else(|| JadceError::invalid("spec has no [training] section"))?;
    let train_size = match spec.sweep.axis {
        SweepAxis::TrainSize => point.value as usize,
        _ => ts.train_size,
    };
    let s = &point.system;
    let train = make_dataset(s, &point.pilots, &spec.channel, point.rank_policy, train_size, child_seed(spec.seed, DATA_SEED))?;
    let val = make_dataset(s, &point.pilots, &spec.channel, point.rank_policy, ts.val_size, child_seed(spec.seed, VAL_SEED))?;
    Ok((train, val))
}

/// Trains FAT-DL with `outer_layers` outer layers on the point's scenario.
pub fn train_point(
    spec: &ExperimentSpec,
    point: &PointScenario,
    outer_layers: usize,
    inner_layers: usize,
    em: bool,
) -> Result<TrainOutcome> {
    let ts = spec
        .training
        .as_ref()
        .ok_or_else(|| JadceError::invalid("spec has no [training] section"))?;
    let (train, val) = training_sets(spec, point)?;
    let s = &point.system;
    let init = FatDlParams::init(outer_layers, inner_layers, s.n_devices, s.n_mixture);
    let fat = FatDlConfig {
        outer_layers,
        inner_layers,
        em,
        eps0: s.activity_prob,
        noise_var: s.noise_var,
    };
    let cfg = ts.config(train.samples.len(), spec.trials, spec.seed);
    train_layerwise(&init, &fat, &point.pilots.entries, &train.samples, &val.samples, &cfg)
}

/// Trained parameters per `(inner layers, em)`, one snapshot per outer layer.
type TrainedSet = BTreeMap<(usize, bool), Vec<FatDlParams>>;

fn train_for_point(
    spec: &ExperimentSpec,
    point: &PointScenario,
    max_outer: usize,
    logs: &mut Vec<(f64, String, Vec<PhaseLog>)>,
) -> Result<TrainedSet> {
    let mut out = TrainedSet::new();
    for a in &point.algorithms {
        if let AlgorithmSpec::FatDl {
            inner_layers,
            em,
            params: ParamSource::Trained,
            ..
        } = a
        {
            let key = (*inner_layers, *em);
            if out.contains_key(&key) {
                continue;
            }
            let res = train_point(spec, point, max_outer, key.0, key.1)?;
            logs.push((point.value, format!("tau={} em={}", key.0, key.1), res.log));
            out.insert(key, res.per_outer);
        }
    }
    Ok(out)
}

fn reduced_prior(spec: &ExperimentSpec, s: &SystemConfig, rank: usize, scale: f64) -> Result<GmPrior> {
    match &spec.channel {
        ChannelModel::Bgm(p) => {
            let mut q = p.scale_variances(s.n_antennas as f64 / rank as f64 * scale);
            q.activity = vec![s.activity_prob; s.n_devices];
            Ok(q)
        }
        _ => Err(JadceError::invalid("prior parameters need a Gaussian-mixture channel model")),
    }
}

fn fatdl_params(
    spec: &ExperimentSpec,
    s: &SystemConfig,
    rank: usize,
    outer: usize,
    inner: usize,
    em: bool,
    src: ParamSource,
    trained: &TrainedSet,
) -> Result<FatDlParams> {
    match src {
        ParamSource::Init => Ok(FatDlParams::init(outer.max(1), inner, s.n_devices, s.n_mixture)),
        ParamSource::Prior { variance_scale } => {
            Ok(FatDlParams::from_prior(outer.max(1), inner, &reduced_prior(spec, s, rank, variance_scale)?))
        }
        ParamSource::Trained => {
            let snaps = trained
                .get(&(inner, em))
                .ok_or_else(|| JadceError::invalid("no trained parameters for this configuration"))?;
            Ok(snaps[outer.max(1) - 1].clone())
        }
    }
}

/// Runs one estimator on the reduced observation; sees only `V`, `A` and the scenario config.
fn run_algorithm(
    spec: &ExperimentSpec,
    alg: &AlgorithmSpec,
    s: &SystemConfig,
    a: &CMat,
    v: &CMat,
    trained: &TrainedSet,
) -> Result<CMat> {
    let rank = v.ncols();
    match alg {
        AlgorithmSpec::FatDl {
            outer_layers,
            inner_layers,
            em,
            params,
        } => {
            let p = fatdl_params(spec, s, rank, *outer_layers, *inner_layers, *em, *params, trained)?;
            let cfg = FatDlConfig {
                outer_layers: *outer_layers,
                inner_layers: *inner_layers,
                em: *em,
                eps0: s.activity_prob,
                noise_var: s.noise_var,
            };
            Ok(fatdl_forward(v, a, &p, &cfg, None)?.report.estimate)
        }
        AlgorithmSpec::VampGm { layers, params } => {
            let p = fatdl_params(spec, s, rank, 1, 1, false, *params, trained)?;
            let prior = p.prior(0, &vec![s.activity_prob; s.n_devices])?;
            Ok(vamp_run(v, a, &Denoiser::Bgm(prior), s.noise_var, *layers, None, None)?.estimate)
        }
        AlgorithmSpec::VampSt { layers, alpha } => {
            Ok(vamp_run(v, a, &Denoiser::SoftThreshold { alpha: *alpha }, s.noise_var, *layers, None, None)?.estimate)
        }
        AlgorithmSpec::AmpSt { layers, alpha } => Ok(amp_run(v, a, &Denoiser::SoftThreshold { alpha: *alpha }, *layers, None)?.estimate),
        AlgorithmSpec::Fista { max_iter } => {
            let mut out = CMat::zeros(a.ncols(), rank);
            for r in 0..rank {
                let col = v.column(r).into_owned();
                let lambda = default_fista_lambda(&col, a);
                if lambda > 0.0 {
                    out.set_column(r, &fista_run(&col, a, lambda, *max_iter)?);
                }
            }
            Ok(out)
        }
        AlgorithmSpec::Omp => {
            let k = (s.expected_active().ceil() as usize).clamp(1, a.nrows().min(a.ncols()));
            let mut out = CMat::zeros(a.ncols(), rank);
            for r in 0..rank {
                out.set_column(r, &omp_run(&v.column(r).into_owned(), a, k)?);
            }
            Ok(out)
        }
    }
}

struct TrialOut {
    reduce_ms: f64,
    per_alg: Vec<Result<TrialMetrics>>,
}

fn run_trial(spec: &ExperimentSpec, point: &PointScenario, trained: &TrainedSet, seed: u64) -> Result<TrialOut> {
    let s = &point.system;
    let state = gen_device_state(s, &spec.channel, seed)?;
    let y = synthesize(&point.pilots, &state.x, s.noise_var, seed)?;
    let t0 = Instant::now();
    let rank = estimate_rank(&y, point.rank_policy)?;
    let red = reduce(&y, rank)?;
    let reduce_ms = t0.elapsed().as_secs_f64() * 1e3;
    let support = state.support();
    let per_alg = point
        .algorithms
        .iter()
        .map(|alg| {
            let t = Instant::now();
            let s_hat = run_algorithm(spec, alg, s, &point.pilots.entries, &red.v, trained)?;
            let wall_ms = t.elapsed().as_secs_f64() * 1e3;
            // metrics only after the estimator has returned
            let x_hat = lift(&s_hat, &red.u)?;
            let det = detect_activity(&x_hat, s.v1)?;
            let m = aer(&det.active, &state.activity)?;
            let nmse = if support.is_empty() {
                f64::NAN
            } else {
                nmse_db(&x_hat, &state.x, &support)?.value
            };
            Ok(TrialMetrics {
                aer: m.aer,
                miss: m.miss_rate,
                false_alarm: m.false_alarm_rate,
                nmse_db: nmse,
                wall_ms,
            })
        })
        .collect();
    Ok(TrialOut { reduce_ms, per_alg })
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Runs every sweep point and trial and aggregates them. Trials run on the
/// rayon pool; results are merged in (point, trial, algorithm) order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let max_outer = spec
        .sweep
        .values
        .iter()
        .flat_map(|v| spec.point_algorithms(*v))
        .filter_map(|a| match a {
            AlgorithmSpec::FatDl { outer_layers, .. } => Some(outer_layers),
            _ => None,
        })
        .max()
        .unwrap_or(1)
        .max(1);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut logs = Vec::new();
    let mut shared_training: Option<TrainedSet> = None;
    for (pi, &value) in spec.sweep.values.iter().enumerate() {
        let point = point_scenario(spec, value)?;
        let trained = match (&shared_training, spec.sweep.axis) {
            (Some(t), SweepAxis::OuterLayers) => t.clone(),
            _ => {
                let t = train_for_point(spec, &point, max_outer, &mut logs)?;
                if spec.sweep.axis == SweepAxis::OuterLayers {
                    shared_training = Some(t.clone());
                }
                t
            }
        };
        log::info!("{}: {} = {value}", spec.id, spec.sweep.axis.name());
        let trials: Vec<Result<TrialOut>> = (0..spec.trials)
            .into_par_iter()
            .map(|k| run_trial(spec, &point, &trained, child_seed(spec.seed, ((pi as u64) << 32) | k as u64)))
            .collect();
        let mut reduce_ms = Vec::new();
        let mut per_alg: Vec<Vec<TrialMetrics>> = vec![Vec::new(); point.algorithms.len()];
        let mut failed = vec![0usize; point.algorithms.len()];
        for (k, t) in trials.into_iter().enumerate() {
            match t {
                Ok(t) => {
                    reduce_ms.push(t.reduce_ms);
                    for (ai, r) in t.per_alg.into_iter().enumerate() {
                        match r {
                            Ok(m) => per_alg[ai].push(m),
                            Err(e) => {
                                if failed[ai] == 0 {
                                    failures.push(format!("{value} {} trial {k}: {e}", point.algorithms[ai].label()));
                                }
                                failed[ai] += 1;
                            }
                        }
                    }
                }
                Err(e) => {
                    failures.push(format!("{value} scenario trial {k}: {e}"));
                    failed.iter_mut().for_each(|f| *f += 1);
                }
            }
        }
        let mean_reduce = if reduce_ms.is_empty() {
            f64::NAN
        } else {
            reduce_ms.iter().sum::<f64>() / reduce_ms.len() as f64
        };
        for (ai, alg) in point.algorithms.iter().enumerate() {
            let ms = &per_alg[ai];
            let aers = sorted(ms.iter().map(|m| m.aer).collect());
            let nm = sorted(ms.iter().map(|m| m.nmse_db).filter(|x| !x.is_nan()).collect());
            rows.push(ResultRow {
                sweep_value: value,
                algorithm: alg.label(),
                trials_ok: ms.len(),
                trials_failed: failed[ai],
                aer_median: quantile(&aers, 0.5),
                aer_q1: quantile(&aers, 0.25),
                aer_q3: quantile(&aers, 0.75),
                miss_median: quantile(&sorted(ms.iter().map(|m| m.miss).collect()), 0.5),
                false_alarm_median: quantile(&sorted(ms.iter().map(|m| m.false_alarm).collect()), 0.5),
                nmse_db_median: quantile(&nm, 0.5),
                mean_wall_ms: if ms.is_empty() {
                    f64::NAN
                } else {
                    ms.iter().map(|m| m.wall_ms).sum::<f64>() / ms.len() as f64
                },
                mean_reduce_ms: mean_reduce,
            });
        }
    }
    Ok(ResultTable {
        id: spec.id.clone(),
        axis: spec.sweep.axis,
        rows,
        failures,
        training_logs: logs,
    })
}

/// Metric columns only; wall-clock numbers go to [`write_timings_csv`] so this
/// file is reproducible byte for byte.
pub fn write_results_csv<W: Write>(w: W, table: &ResultTable) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "sweep_axis",
        "sweep_value",
        "algorithm",
        "trials_ok",
        "trials_failed",
        "aer_median",
        "aer_q1",
        "aer_q3",
        "miss_median",
        "false_alarm_median",
        "nmse_db_median",
    ])
    .map_err(csv_err)?;
    for r in &table.rows {
        wr.write_record([
            table.axis.name().to_string(),
            r.sweep_value.to_string(),
            r.algorithm.clone(),
            r.trials_ok.to_string(),
            r.trials_failed.to_string(),
            r.aer_median.to_string(),
            r.aer_q1.to_string(),
            r.aer_q3.to_string(),
            r.miss_median.to_string(),
            r.false_alarm_median.to_string(),
            r.nmse_db_median.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(w: W, table: &ResultTable) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sweep_value", "algorithm", "mean_wall_ms", "mean_reduce_ms"])
        .map_err(csv_err)?;
    for r in &table.rows {
        wr.write_record([
            r.sweep_value.to_string(),
            r.algorithm.clone(),
            format!("{:.4}", r.mean_wall_ms),
            format!("{:.4}", r.mean_reduce_ms),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Gnuplot-style columns, one block per algorithm separated by two blank
/// lines: `x aer_median aer_q1 aer_q3 nmse_db_median`.
pub fn write_plot_data<W: Write>(mut w: W, table: &ResultTable) -> Result<()> {
    let mut order: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !order.contains(&r.algorithm.as_str()) {
            order.push(&r.algorithm);
        }
    }
    for (i, alg) in order.iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# {alg}")?;
        writeln!(w, "# {} aer_median aer_q1 aer_q3 nmse_db_median", table.axis.name())?;
        for r in table.rows.iter().filter(|r| r.algorithm == *alg) {
            writeln!(
                w,
                "{} {} {} {} {}",
                r.sweep_value, r.aer_median, r.aer_q1, r.aer_q3, r.nmse_db_median
            )?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> JadceError {
    JadceError::format(e.to_string())
}

/// Writes `results.csv`, `timings.csv`, `plot.dat`, `failures.txt` and, when
/// training ran, `training.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, table: &ResultTable) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_results_csv(std::fs::File::create(dir.join("results.csv"))?, table)?;
    write_timings_csv(std::fs::File::create(dir.join("timings.csv"))?, table)?;
    write_plot_data(std::io::BufWriter::new(std::fs::File::create(dir.join("plot.dat"))?), table)?;
    let mut f = std::fs::File::create(dir.join("failures.txt"))?;
    for line in &table.failures {
        writeln!(f, "{line}")?;
    }
    if !table.training_logs.is_empty() {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("training.jsonl"))?);
        for (value, key, log) in &table.training_logs {
            for rec in log {
                let line = serde_json::json!({ "sweep_value": value, "model": key, "phase": rec });
                writeln!(f, "{line}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        let mut spec = preset("fig5-desk").unwrap();
        spec.trials = 3;
        spec.sweep.values = vec![20.0];
        spec.algorithms = vec![AlgorithmSpec::VampSt { layers: 5, alpha: 1.0 }];
        spec.training = None;
        spec
    }

    #[test]
    fn single_point_single_algorithm_gives_one_row() {
        let mut spec = tiny_spec();
        spec.trials = 1;
        let t = run_experiment(&spec).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].trials_ok + t.rows[0].trials_failed, 1);
    }

    #[test]
    fn csv_is_reproducible() {
        let spec = tiny_spec();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_results_csv(&mut a, &run_experiment(&spec).unwrap()).unwrap();
        write_results_csv(&mut b, &run_experiment(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("sweep_axis,sweep_value,algorithm"));
        assert!(!text.contains("wall"));
    }

    #[test]
    fn toml_round_trip() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            let text = spec.to_toml().unwrap();
            assert_eq!(ExperimentSpec::from_toml(&text).unwrap(), spec, "{name}");
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = tiny_spec();
        spec.sweep.values = vec![20.0, 15.0];
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.trials = 0;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.algorithms = vec![AlgorithmSpec::FatDl {
            outer_layers: 1,
            inner_layers: 1,
            em: true,
            params: ParamSource::Trained,
        }];
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.algorithms = vec![AlgorithmSpec::VampGm {
            layers: 2,
            params: ParamSource::Prior { variance_scale: 1.0 },
        }];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn plot_data_has_a_block_per_algorithm() {
        let mut spec = tiny_spec();
        spec.algorithms.push(AlgorithmSpec::Omp);
        let t = run_experiment(&spec).unwrap();
        let mut out = Vec::new();
        write_plot_data(&mut out, &t).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.matches("# L aer_median").count(), 2);
    }
}
