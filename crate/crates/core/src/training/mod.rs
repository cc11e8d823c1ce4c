//! Datasets, losses, hand-derived gradients and the layerwise training schedule.

mod grad;
mod schedule;

pub use grad::{
    active_blocks, grad, grad_check, grad_unconstrained, loss_at, outputs_at, Block, BlockCheck, GradReport, ParamGrad, Unconstrained,
    GRAD_CHECK_STEP, GRAD_CHECK_TOL,
};
pub use schedule::{
    phase_plan, train_layerwise, write_phase_log, Adam, DatasetSizes, Phase, PhaseKind, PhaseLog, Seeds, TrainOutcome,
    TrainingConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{JadceError, Result};
use crate::linalg::{fro_norm_sq, CMat};
use crate::reduction::{estimate_rank, project, reduce, RankPolicy};
use crate::rng::child_seed;
use crate::scenario::{gen_device_state, synthesize, ChannelModel, PilotMatrix, SystemConfig};

/// One training pair in reduced coordinates, plus what is needed to score
/// the lifted estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `L x r` reduced observation.
    pub v: CMat,
    /// `N x r` ground truth `X Uᴴ`.
    pub s: CMat,
    /// `r x M` basis.
    pub u: CMat,
    /// `N x M` device state.
    pub x: CMat,
    pub activity: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub system: SystemConfig,
    pub channel: ChannelModel,
    pub rank_policy: RankPolicy,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pilots: CMat,
    pub noise_var: f64,
    pub samples: Vec<Sample>,
    pub descriptor: DatasetDescriptor,
}

/// Draws `size` independent (activity, channel, noise) realisations with a
/// shared pilot matrix; sample `i` uses the child seed `(seed, i)`.
/// A zero noise variance is accepted here to build noiseless datasets.
pub fn make_dataset(
    cfg: &SystemConfig,
    pilots: &PilotMatrix,
    channel: &ChannelModel,
    rank_policy: RankPolicy,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    if size == 0 {
        return Err(JadceError::invalid("dataset size must be at least 1"));
    }
    if pilots.entries.shape() != (cfg.pilot_len, cfg.n_devices) {
        return Err(JadceError::invalid("pilot matrix does not match the system config"));
    }
    let samples = (0..size)
        .map(|i| make_sample(cfg, pilots, channel, rank_policy, child_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        pilots: pilots.entries.clone(),
        noise_var: cfg.noise_var,
        samples,
        descriptor: DatasetDescriptor {
            system: cfg.clone(),
            channel: channel.clone(),
            rank_policy,
            size,
            seed,
        },
    })
}

pub(crate) fn make_sample(
    cfg: &SystemConfig,
    pilots: &PilotMatrix,
    channel: &ChannelModel,
    rank_policy: RankPolicy,
    seed: u64,
) -> Result<Sample> {
    let state = gen_device_state(cfg, channel, seed)?;
    let y = synthesize(pilots, &state.x, cfg.noise_var, seed)?;
    let rank = estimate_rank(&y, rank_policy)?;
    let red = reduce(&y, rank)?;
    let s = project(&state.x, &red.u)?;
    Ok(Sample {
        v: red.v,
        s,
        u: red.u,
        x: state.x,
        activity: state.activity,
    })
}

/// `(1/B) Σ_b ||Ŝ_b − S_b||_F²`.
pub fn batch_loss(estimates: &[CMat], truth: &[CMat]) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(JadceError::invalid("loss needs equally many, non-zero estimates and targets"));
    }
    let mut acc = 0.0;
    for (e, t) in estimates.iter().zip(truth) {
        if e.shape() != t.shape() {
            return Err(JadceError::invalid("estimate and target differ in shape"));
        }
        acc += fro_norm_sq(&(e - t));
    }
    Ok(acc / estimates.len() as f64)
}

/// Loss on the denoiser-side estimates `Ŝ₁` of an inner layer.
pub fn inner_loss(s1: &[CMat], truth: &[CMat]) -> Result<f64> {
    batch_loss(s1, truth)
}

/// Loss on the LMMSE-side estimates `Ŝ₂` of an outer layer.
pub fn outer_loss(s2: &[CMat], truth: &[CMat]) -> Result<f64> {
    batch_loss(s2, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::GmPrior;
    use crate::linalg::gaussian_matrix;
    use crate::rng::stream;
    use crate::scenario::{gen_pilots, PilotKind};

    fn system(noise_var: f64) -> SystemConfig {
        SystemConfig {
            n_devices: 40,
            n_antennas: 8,
            pilot_len: 20,
            n_mixture: 2,
            activity_prob: 0.05,
            snr_db: 30.0,
            v1: 0.1,
            n_paths: 3,
            noise_var,
        }
    }

    #[test]
    fn noiseless_sample_is_consistent() {
        let cfg = system(0.0);
        let a = gen_pilots(&cfg, PilotKind::IidGaussian, 1).unwrap();
        let ds = make_dataset(&cfg, &a, &ChannelModel::Spatial, RankPolicy::Fixed(8), 1, 5).unwrap();
        let smp = &ds.samples[0];
        assert!((&a.entries * &smp.s - &smp.v).norm() <= 1e-10 * smp.v.norm());
    }

    #[test]
    fn datasets_are_reproducible() {
        let cfg = system(1e-2);
        let a = gen_pilots(&cfg, PilotKind::IidGaussian, 1).unwrap();
        let d1 = make_dataset(&cfg, &a, &ChannelModel::Spatial, RankPolicy::Fixed(4), 3, 9).unwrap();
        let d2 = make_dataset(&cfg, &a, &ChannelModel::Spatial, RankPolicy::Fixed(4), 3, 9).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn active_count_matches_rate() {
        let mut cfg = system(1e-2);
        cfg.n_devices = 1000;
        cfg.pilot_len = 4;
        cfg.n_antennas = 2;
        let a = gen_pilots(&cfg, PilotKind::IidGaussian, 1).unwrap();
        let prior = GmPrior::shared(1000, 0.05, &[1.0], &[1.0]).unwrap();
        let ds = make_dataset(&cfg, &a, &ChannelModel::Bgm(prior), RankPolicy::Fixed(2), 1000, 3).unwrap();
        let total: usize = ds.samples.iter().map(|s| s.activity.iter().filter(|&&x| x).count()).sum();
        let k = total as f64 / 1000.0;
        assert!((k - 50.0).abs() <= 0.15 * 50.0, "{k}");
    }

    #[test]
    fn loss_examples() {
        let mut rng = stream(1, 0);
        let s: Vec<CMat> = (0..3).map(|_| gaussian_matrix(&mut rng, 5, 2)).collect();
        let z: Vec<CMat> = (0..3).map(|_| CMat::zeros(5, 2)).collect();
        assert_eq!(inner_loss(&s, &s).unwrap(), 0.0);
        let expect: f64 = s.iter().map(fro_norm_sq).sum::<f64>() / 3.0;
        assert!((outer_loss(&z, &s).unwrap() - expect).abs() < 1e-12);
        let e: Vec<CMat> = (0..3).map(|_| gaussian_matrix(&mut rng, 5, 2)).collect();
        let mut acc = 0.0;
        for b in 0..3 {
            for i in 0..5 {
                for j in 0..2 {
                    acc += (e[b][(i, j)] - s[b][(i, j)]).norm_sqr();
                }
            }
        }
        assert!((batch_loss(&e, &s).unwrap() - acc / 3.0).abs() < 1e-12);
    }
}
