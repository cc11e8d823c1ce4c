//! Scenario synthesis: pilots, device states under three channel priors, and
//! noisy received signals `Y = A X + E`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StudentT, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::denoiser::GmPrior;
use crate::detection::Decibels;
use crate::error::{JadceError, Result};
use crate::linalg::{c, fro_norm_sq, gaussian_matrix, haar_orthonormal, CMat};
use crate::rng::{complex_normal, stream, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_devices: usize,
    pub n_antennas: usize,
    pub pilot_len: usize,
    pub n_mixture: usize,
    pub activity_prob: f64,
    pub snr_db: f64,
    pub v1: f64,
    pub n_paths: usize,
    pub noise_var: f64,
}

impl SystemConfig {
    /// Builds a config whose noise variance realises `snr_db` for a device
    /// state with the given mean per-entry power and unit-power pilots.
    pub fn with_snr(
        n_devices: usize,
        n_antennas: usize,
        pilot_len: usize,
        activity_prob: f64,
        snr_db: f64,
        entry_power: f64,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            n_devices,
            n_antennas,
            pilot_len,
            n_mixture: 3,
            activity_prob,
            snr_db,
            v1: 0.1,
            n_paths: 3,
            noise_var: noise_var_for_snr(n_devices, activity_prob, entry_power, 1.0, snr_db),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 || self.n_antennas == 0 || self.pilot_len == 0 {
            return Err(JadceError::invalid("N, M and L must all be at least 1"));
        }
        if !(self.activity_prob > 0.0 && self.activity_prob < 1.0) {
            return Err(JadceError::invalid(format!(
                "activity probability {} must lie in (0, 1)",
                self.activity_prob
            )));
        }
        if self.n_mixture == 0 {
            return Err(JadceError::invalid("J must be at least 1"));
        }
        if !(self.v1 > 0.0 && self.v1 < 1.0) {
            return Err(JadceError::invalid(format!("v1 = {} must lie in (0, 1)", self.v1)));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(JadceError::invalid(format!("noise variance {} must be positive", self.noise_var)));
        }
        Ok(())
    }

    pub fn expected_active(&self) -> f64 {
        self.n_devices as f64 * self.activity_prob
    }
}

/// Noise variance for which `E||AX||_F^2 / (L M sigma^2)` equals the target SNR.
pub fn noise_var_for_snr(n_devices: usize, activity_prob: f64, entry_power: f64, pilot_power: f64, snr_db: f64) -> f64 {
    n_devices as f64 * activity_prob * entry_power * pilot_power / 10f64.powf(snr_db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PilotKind {
    IidGaussian,
    NonzeroMean { mu: f64 },
    Conditioned { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    pub entries: CMat,
    pub kind: PilotKind,
}

impl PilotMatrix {
    pub fn pilot_len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_devices(&self) -> usize {
        self.entries.ncols()
    }

    pub fn mean_power(&self) -> f64 {
        fro_norm_sq(&self.entries) / self.entries.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub x: CMat,
    pub activity: Vec<bool>,
    pub energies: Vec<f64>,
    pub channels: CMat,
}

impl DeviceState {
    /// Assembles `x_n = alpha_n xi_n h_n`.
    pub fn assemble(activity: Vec<bool>, energies: Vec<f64>, channels: CMat) -> Self {
        let mut x = channels.clone();
        for (n, (&a, &xi)) in activity.iter().zip(&energies).enumerate() {
            let mut row = x.row_mut(n);
            row *= c(if a { xi } else { 0.0 });
        }
        DeviceState {
            x,
            activity,
            energies,
            channels,
        }
    }

    pub fn n_active(&self) -> usize {
        self.activity.iter().filter(|&&a| a).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.activity.iter().enumerate().filter(|(_, &a)| a).map(|(n, _)| n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub y: CMat,
}

pub fn gen_pilots(cfg: &SystemConfig, kind: PilotKind, seed: u64) -> Result<PilotMatrix> {
    gen_pilots_dims(cfg.pilot_len, cfg.n_devices, kind, seed)
}

pub fn gen_pilots_dims(l: usize, n: usize, kind: PilotKind, seed: u64) -> Result<PilotMatrix> {
    if l == 0 || n == 0 {
        return Err(JadceError::invalid("pilot dimensions must be positive"));
    }
    let mut rng = stream(seed, streams::PILOTS);
    let entries = match kind {
        PilotKind::IidGaussian => gaussian_matrix(&mut rng, l, n),
        PilotKind::NonzeroMean { mu } => {
            if !mu.is_finite() {
                return Err(JadceError::invalid("pilot mean must be finite"));
            }
            gaussian_matrix(&mut rng, l, n).map(|z| z + mu)
        }
        PilotKind::Conditioned { kappa } => {
            if !(kappa > 1.0 && kappa.is_finite()) {
                return Err(JadceError::invalid(format!("condition number {kappa} must exceed 1")));
            }
            let k = l.min(n);
            let left = haar_orthonormal(&mut rng, l, k);
            let right = haar_orthonormal(&mut rng, n, k);
            // geometric spectrum from 1 down to 1/kappa
            let spectrum: Vec<f64> = (0..k)
                .map(|i| if k == 1 { 1.0 } else { kappa.powf(-(i as f64) / (k - 1) as f64) })
                .collect();
            let energy: f64 = spectrum.iter().map(|s| s * s).sum();
            let scale = ((l * n) as f64 / energy).sqrt();
            let mut scaled_left = left;
            for (j, s) in spectrum.iter().enumerate() {
                let mut col = scaled_left.column_mut(j);
                col *= c(scale * s);
            }
            scaled_left * right.adjoint()
        }
    };
    Ok(PilotMatrix { entries, kind })
}

pub fn gen_activity(n: usize, eps: f64, seed: u64) -> Result<Vec<bool>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(JadceError::invalid(format!("activity probability {eps} must lie in (0, 1)")));
    }
    let mut rng = stream(seed, streams::ACTIVITY);
    Ok((0..n).map(|_| rng.random::<f64>() < eps).collect())
}

/// Antenna-array response used by the spatial channel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ArrayGeometry {
    /// Uniform linear array; element spacing in wavelengths.
    Ula { spacing: f64 },
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry::Ula { spacing: 0.5 }
    }
}

impl ArrayGeometry {
    pub fn steering(&self, azimuth: f64, element: usize) -> Complex64 {
        match *self {
            ArrayGeometry::Ula { spacing } => {
                Complex64::from_polar(1.0, 2.0 * PI * spacing * element as f64 * azimuth.sin())
            }
        }
    }
}

pub fn gen_channels_spatial(cfg: &SystemConfig, seed: u64) -> Result<CMat> {
    gen_channels_spatial_with(cfg, ArrayGeometry::default(), seed)
}

pub fn gen_channels_spatial_with(cfg: &SystemConfig, geometry: ArrayGeometry, seed: u64) -> Result<CMat> {
    if cfg.n_paths == 0 {
        return Err(JadceError::invalid("spatial channel needs at least one path"));
    }
    let mut rng = stream(seed, streams::CHANNELS);
    let azimuth = Uniform::new(-PI / 2.0, PI / 2.0).expect("valid range");
    let mut h = CMat::zeros(cfg.n_devices, cfg.n_antennas);
    for n in 0..cfg.n_devices {
        for _ in 0..cfg.n_paths {
            let gain = complex_normal(&mut rng, 1.0);
            let theta = azimuth.sample(&mut rng);
            for m in 0..cfg.n_antennas {
                h[(n, m)] += gain * geometry.steering(theta, m);
            }
        }
    }
    Ok(h)
}

/// Spatial channels combined with Bernoulli activity and unit pilot energy.
pub fn gen_device_state_spatial(cfg: &SystemConfig, seed: u64) -> Result<DeviceState> {
    let activity = gen_activity(cfg.n_devices, cfg.activity_prob, seed)?;
    let h = gen_channels_spatial(cfg, seed)?;
    Ok(DeviceState::assemble(activity, vec![1.0; cfg.n_devices], h))
}

/// Channel prior used to draw device states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChannelModel {
    /// Multipath ULA channels with `n_paths` paths per device.
    Spatial,
    Bgm(GmPrior),
    StudentT { nu: f64 },
}

impl ChannelModel {
    /// Nominal per-entry power used to set the noise level for a target SNR.
    /// The heavy-tailed prior has no finite variance; its scale parameter 1 is used.
    pub fn entry_power(&self, cfg: &SystemConfig) -> f64 {
        match self {
            ChannelModel::Spatial => cfg.n_paths as f64,
            ChannelModel::Bgm(p) => mixture_power(p),
            ChannelModel::StudentT { .. } => 1.0,
        }
    }
}

pub fn gen_device_state(cfg: &SystemConfig, model: &ChannelModel, seed: u64) -> Result<DeviceState> {
    match model {
        ChannelModel::Spatial => gen_device_state_spatial(cfg, seed),
        ChannelModel::Bgm(p) => gen_channels_bgm(cfg, p, seed),
        ChannelModel::StudentT { nu } => gen_channels_student(cfg, *nu, seed),
    }
}

/// Device state drawn from a Bernoulli-Gaussian-mixture prior; the prior's
/// per-device sparsity drives activity.
pub fn gen_channels_bgm(cfg: &SystemConfig, prior: &GmPrior, seed: u64) -> Result<DeviceState> {
    prior.validate()?;
    if prior.n_devices() != cfg.n_devices {
        return Err(JadceError::invalid(format!(
            "prior describes {} devices, config has {}",
            prior.n_devices(),
            cfg.n_devices
        )));
    }
    let mut act_rng = stream(seed, streams::ACTIVITY);
    let activity: Vec<bool> = (0..cfg.n_devices)
        .map(|n| act_rng.random::<f64>() < prior.activity[n])
        .collect();
    let mut rng = stream(seed, streams::CHANNELS);
    let mut h = CMat::zeros(cfg.n_devices, cfg.n_antennas);
    for n in 0..cfg.n_devices {
        let row = prior.row(n);
        for m in 0..cfg.n_antennas {
            let pick: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = row.weights.len() - 1;
            for (j, &q) in row.weights.iter().enumerate() {
                acc += q;
                if pick < acc {
                    comp = j;
                    break;
                }
            }
            h[(n, m)] = complex_normal(&mut rng, row.variances[comp]);
        }
    }
    Ok(DeviceState::assemble(activity, vec![1.0; cfg.n_devices], h))
}

/// Heavy-tailed density `Gamma((nu+1)/2) / (sqrt(pi) Gamma(nu/2)) (1 + s^2)^(-(nu+1)/2)`.
pub fn student_density(s: f64, nu: f64) -> f64 {
    let log_norm = ln_gamma((nu + 1.0) / 2.0) - 0.5 * PI.ln() - ln_gamma(nu / 2.0);
    (log_norm - 0.5 * (nu + 1.0) * (1.0 + s * s).ln()).exp()
}

/// Device state with Bernoulli activity and heavy-tailed entries; real and
/// imaginary parts are drawn independently from [`student_density`].
pub fn gen_channels_student(cfg: &SystemConfig, nu: f64, seed: u64) -> Result<DeviceState> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(JadceError::invalid(format!("degrees of freedom {nu} must be positive")));
    }
    let activity = gen_activity(cfg.n_devices, cfg.activity_prob, seed)?;
    let t = StudentT::new(nu).map_err(|e| JadceError::invalid(e.to_string()))?;
    let scale = 1.0 / nu.sqrt();
    let mut rng = stream(seed, streams::CHANNELS);
    let h = CMat::from_fn(cfg.n_devices, cfg.n_antennas, |_, _| {
        let re = t.sample(&mut rng) * scale;
        let im = t.sample(&mut rng) * scale;
        Complex64::new(re, im)
    });
    Ok(DeviceState::assemble(activity, vec![1.0; cfg.n_devices], h))
}

pub fn synthesize(a: &PilotMatrix, x: &CMat, noise_var: f64, seed: u64) -> Result<ReceivedSignal> {
    if a.entries.ncols() != x.nrows() {
        return Err(JadceError::invalid(format!(
            "pilot matrix has {} columns but device state has {} rows",
            a.entries.ncols(),
            x.nrows()
        )));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(JadceError::invalid(format!("noise variance {noise_var} must be non-negative")));
    }
    let mut y = &a.entries * x;
    if noise_var > 0.0 {
        let mut rng = stream(seed, streams::NOISE);
        // row-major draw order so the noise for a given (l, m) is stable
        for l in 0..y.nrows() {
            for m in 0..y.ncols() {
                y[(l, m)] += complex_normal(&mut rng, noise_var);
            }
        }
    }
    Ok(ReceivedSignal { y })
}

pub fn snr_db(a: &PilotMatrix, x: &CMat, noise_var: f64) -> Result<Decibels> {
    if !(noise_var > 0.0) {
        return Err(JadceError::invalid("SNR needs a positive noise variance"));
    }
    let ax = &a.entries * x;
    let ratio = fro_norm_sq(&ax) / ((ax.nrows() * ax.ncols()) as f64 * noise_var);
    Ok(Decibels::from_ratio(ratio))
}

/// Mean per-entry power `Σ_j q_j ϑ_j^2` averaged over devices.
pub fn mixture_power(prior: &GmPrior) -> f64 {
    let n = prior.n_devices();
    (0..n)
        .map(|d| {
            let r = prior.row(d);
            r.weights.iter().zip(r.variances).map(|(q, v)| q * v).sum::<f64>()
        })
        .sum::<f64>()
        / n as f64
}

/// Empirical row energies; handy for checking generator statistics.
pub fn row_energies(x: &CMat) -> Vec<f64> {
    x.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect()
}

/// Real matrix of per-entry magnitudes, used by plots and diagnostics.
pub fn magnitudes(x: &CMat) -> DMatrix<f64> {
    x.map(|z| z.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;

    fn cfg(n: usize, m: usize, l: usize) -> SystemConfig {
        SystemConfig {
            n_devices: n,
            n_antennas: m,
            pilot_len: l,
            n_mixture: 3,
            activity_prob: 0.05,
            snr_db: 30.0,
            v1: 0.1,
            n_paths: 3,
            noise_var: 1e-3,
        }
    }

    #[test]
    fn iid_pilots_have_unit_power() {
        let a = gen_pilots(&cfg(100, 4, 60), PilotKind::IidGaussian, 7).unwrap();
        assert!((a.mean_power() - 1.0).abs() < 0.05);
    }

    #[test]
    fn conditioned_pilots_hit_kappa() {
        let a = gen_pilots(&cfg(100, 4, 60), PilotKind::Conditioned { kappa: 20.0 }, 3).unwrap();
        let s = singular_values(&a.entries).unwrap();
        let ratio = s[0] / s[s.len() - 1];
        assert!(((ratio - 20.0) / 20.0).abs() < 1e-8, "ratio {ratio}");
        assert!((a.mean_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditioned_pilots_reject_small_kappa() {
        assert!(gen_pilots(&cfg(10, 1, 5), PilotKind::Conditioned { kappa: 1.0 }, 0).is_err());
        assert!(gen_pilots(&cfg(10, 1, 5), PilotKind::Conditioned { kappa: 0.5 }, 0).is_err());
    }

    #[test]
    fn nonzero_mean_pilots() {
        let a = gen_pilots(&cfg(100, 4, 60), PilotKind::NonzeroMean { mu: 7.0 }, 11).unwrap();
        let mean = a.entries.iter().sum::<Complex64>() / a.entries.len() as f64;
        assert!((mean - Complex64::new(7.0, 0.0)).norm() < 0.1, "{mean}");
    }

    #[test]
    fn activity_rejects_degenerate_probability() {
        assert!(gen_activity(100, 0.0, 1).is_err());
        assert!(gen_activity(100, 1.0, 1).is_err());
    }

    #[test]
    fn activity_is_reproducible_and_concentrates() {
        assert_eq!(gen_activity(4, 0.5, 42).unwrap(), gen_activity(4, 0.5, 42).unwrap());
        let a = gen_activity(10_000, 0.05, 5).unwrap();
        let frac = a.iter().filter(|&&b| b).count() as f64 / 1e4;
        assert!((frac - 0.05).abs() < 0.01, "{frac}");
    }

    #[test]
    fn single_antenna_channel_is_sum_of_gains() {
        let mut c1 = cfg(5, 1, 4);
        c1.n_paths = 3;
        let h = gen_channels_spatial(&c1, 9).unwrap();
        // replay the stream: gain, azimuth per path
        let mut rng = stream(9, streams::CHANNELS);
        let az = Uniform::new(-PI / 2.0, PI / 2.0).unwrap();
        for n in 0..5 {
            let mut sum = Complex64::new(0.0, 0.0);
            for _ in 0..3 {
                sum += complex_normal(&mut rng, 1.0);
                let _ = az.sample(&mut rng);
            }
            assert!((h[(n, 0)] - sum).norm() < 1e-15);
        }
    }

    #[test]
    fn single_path_has_constant_modulus() {
        let mut c1 = cfg(6, 16, 4);
        c1.n_paths = 1;
        let h = gen_channels_spatial(&c1, 2).unwrap();
        for n in 0..6 {
            let m0 = h[(n, 0)].norm();
            for m in 1..16 {
                assert!((h[(n, m)].norm() - m0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spatial_power_per_antenna_is_path_count() {
        let c1 = cfg(10_000, 64, 4);
        let h = gen_channels_spatial(&c1, 4).unwrap();
        let p = fro_norm_sq(&h) / h.len() as f64;
        assert!((p - 3.0).abs() / 3.0 < 0.1, "{p}");
    }

    #[test]
    fn bgm_mixture_variance() {
        let mut c1 = cfg(2_000, 50, 4);
        c1.n_mixture = 3;
        let prior = GmPrior::shared(2_000, 0.5, &[0.2, 0.3, 0.5], &[1.0, 4.0, 9.0]).unwrap();
        let st = gen_channels_bgm(&c1, &prior, 8).unwrap();
        let active: Vec<usize> = st.support();
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for &n in &active {
            for m in 0..50 {
                acc += st.x[(n, m)].norm_sqr();
                cnt += 1;
            }
        }
        let var = acc / cnt as f64;
        assert!((var - 5.9).abs() / 5.9 < 0.05, "{var}");
        for n in 0..2_000 {
            if !st.activity[n] {
                assert!(st.x.row(n).iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn bgm_point_mass_weight() {
        let c1 = cfg(50, 8, 4);
        let prior = GmPrior::shared(50, 0.5, &[1.0, 0.0, 0.0], &[1.0, 1e6, 1e6]).unwrap();
        let st = gen_channels_bgm(&c1, &prior, 1).unwrap();
        // with component 2/3 variances huge any draw from them would dwarf unit variance
        assert!(st.x.iter().all(|z| z.norm() < 10.0));
    }

    #[test]
    fn bgm_rejects_mismatched_prior() {
        let prior = GmPrior::shared(3, 0.5, &[1.0], &[1.0]).unwrap();
        assert!(gen_channels_bgm(&cfg(4, 2, 2), &prior, 0).is_err());
    }

    #[test]
    fn student_density_integrates_to_one() {
        // substitution s = tan(phi) maps the real line onto (-pi/2, pi/2)
        let nu = 1.9;
        let n = 200_000;
        let h = PI / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let phi = -PI / 2.0 + (i as f64 + 0.5) * h;
            let s = phi.tan();
            total += student_density(s, nu) * (1.0 + s * s) * h;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn student_channels_are_heavy_tailed() {
        let mut c1 = cfg(4_000, 16, 4);
        c1.activity_prob = 0.5;
        let st = gen_channels_student(&c1, 1.9, 3).unwrap();
        let vals: Vec<f64> = st
            .support()
            .iter()
            .flat_map(|&n| (0..16).map(move |m| (n, m)))
            .map(|(n, m)| st.x[(n, m)].re)
            .collect();
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / k;
        let excess = m4 / (m2 * m2) - 3.0;
        assert!(excess > 10.0, "excess kurtosis {excess}");
        for n in 0..4_000 {
            if !st.activity[n] {
                assert!(st.x.row(n).iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn synthesize_noiseless_and_scalar() {
        let a = PilotMatrix {
            entries: CMat::from_element(1, 1, c(2.0)),
            kind: PilotKind::IidGaussian,
        };
        let x = CMat::from_element(1, 1, c(3.0));
        let y = synthesize(&a, &x, 0.0, 1).unwrap();
        assert_eq!(y.y[(0, 0)], c(6.0));
    }

    #[test]
    fn synthesize_noise_only_variance() {
        let c1 = cfg(10, 200, 100);
        let a = gen_pilots(&c1, PilotKind::IidGaussian, 1).unwrap();
        let x = CMat::zeros(10, 200);
        let y = synthesize(&a, &x, 0.5, 2).unwrap();
        let var = fro_norm_sq(&y.y) / y.y.len() as f64;
        assert!((var - 0.5).abs() / 0.5 < 0.05, "{var}");
    }

    #[test]
    fn synthesize_rejects_mismatch() {
        let a = gen_pilots(&cfg(10, 2, 4), PilotKind::IidGaussian, 1).unwrap();
        assert!(synthesize(&a, &CMat::zeros(9, 2), 0.1, 0).is_err());
    }

    #[test]
    fn snr_reference_points() {
        let a = PilotMatrix {
            entries: CMat::identity(2, 2),
            kind: PilotKind::IidGaussian,
        };
        // ||AX||^2 = 4 = L M sigma^2 with sigma^2 = 1
        let x = CMat::from_element(2, 2, c(1.0));
        assert!(snr_db(&a, &x, 1.0).unwrap().value.abs() < 1e-12);
        let x10 = CMat::from_element(2, 2, c(10.0));
        assert!((snr_db(&a, &x10, 1.0).unwrap().value - 20.0).abs() < 1e-12);
        let zero = snr_db(&a, &CMat::zeros(2, 2), 1.0).unwrap();
        assert!(zero.degenerate && zero.value == f64::NEG_INFINITY);
    }

    #[test]
    fn snr_matches_direct_recomputation() {
        let c1 = cfg(20, 6, 12);
        let a = gen_pilots(&c1, PilotKind::IidGaussian, 5).unwrap();
        let st = gen_device_state_spatial(&c1, 6).unwrap();
        let mut power = 0.0;
        for l in 0..12 {
            for m in 0..6 {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..20 {
                    acc += a.entries[(l, n)] * st.x[(n, m)];
                }
                power += acc.norm_sqr();
            }
        }
        let expect = 10.0 * (power / (72.0 * 0.01)).log10();
        let got = snr_db(&a, &st.x, 0.01).unwrap();
        if st.n_active() > 0 {
            assert!((got.value - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn device_state_rows_follow_activity() {
        let st = DeviceState::assemble(vec![true, false], vec![2.0, 1.0], CMat::from_element(2, 3, c(1.5)));
        assert_eq!(st.x[(0, 1)], c(3.0));
        assert_eq!(st.x[(1, 1)], c(0.0));
        assert_eq!(st.n_active(), 1);
    }
}
