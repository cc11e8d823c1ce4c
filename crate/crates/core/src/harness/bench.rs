use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{JadceError, Result};
use crate::estimator::{forward_sample, layer_operators, FatDlConfig, FatDlParams, Stop};
use crate::reduction::reduce;
use crate::rng::child_seed;
use crate::scenario::{gen_device_state, gen_pilots_dims, noise_var_for_snr, synthesize, ChannelModel, PilotKind, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchDims {
    pub l: usize,
    pub n: usize,
    pub r: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dims: BenchDims,
    /// Median over repetitions of the forward-pass time divided by the outer layer count.
    pub per_layer_ms: f64,
    pub reduce_ms: f64,
}

/// Times FAT-DL layers on a reduced observation. The LMMSE operators are
/// built outside the timed region, so the figure is the per-iteration cost.
pub fn bench_complexity(dims: &[BenchDims], layers: usize, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if layers == 0 || reps == 0 {
        return Err(JadceError::invalid("need at least one layer and one repetition"));
    }
    dims.iter()
        .enumerate()
        .map(|(k, d)| bench_one(*d, layers, reps, child_seed(seed, k as u64)))
        .collect()
}

fn bench_one(d: BenchDims, layers: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    if d.r == 0 || d.r > d.l.min(d.m) || d.n == 0 {
        return Err(JadceError::invalid(format!("rank {} must lie in 1..=min(L, M)", d.r)));
    }
    let eps = (d.r as f64 / d.n as f64).clamp(0.01, 0.5);
    let mut cfg = SystemConfig {
        n_devices: d.n,
        n_antennas: d.m,
        pilot_len: d.l,
        n_mixture: 3,
        activity_prob: eps,
        snr_db: 30.0,
        v1: 0.1,
        n_paths: 3,
        noise_var: 1.0,
    };
    let channel = ChannelModel::Spatial;
    let pilots = gen_pilots_dims(d.l, d.n, PilotKind::IidGaussian, seed)?;
    cfg.noise_var = noise_var_for_snr(d.n, eps, channel.entry_power(&cfg), pilots.mean_power(), cfg.snr_db);
    let state = gen_device_state(&cfg, &channel, seed)?;
    let y = synthesize(&pilots, &state.x, cfg.noise_var, seed)?;
    let t0 = Instant::now();
    let red = reduce(&y, d.r)?;
    let reduce_ms = t0.elapsed().as_secs_f64() * 1e3;

    let params = FatDlParams::init(layers, 1, d.n, cfg.n_mixture);
    let fat = FatDlConfig {
        outer_layers: layers,
        inner_layers: 1,
        em: true,
        eps0: eps,
        noise_var: cfg.noise_var,
    };
    let ops = layer_operators(&pilots.entries, &params, layers, cfg.noise_var)?;
    // warm-up
    forward_sample(&ops, &pilots.entries, &params, &fat, &red.v, Stop::Outer(layers))?;
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            forward_sample(&ops, &pilots.entries, &params, &fat, &red.v, Stop::Outer(layers))?;
            Ok(t.elapsed().as_secs_f64() * 1e3 / layers as f64)
        })
        .collect::<Result<_>>()?;
    times.sort_by(f64::total_cmp);
    Ok(BenchRow {
        dims: d,
        per_layer_ms: times[times.len() / 2],
        reduce_ms,
    })
}
