//! Forward pass of the unfolded FAT-DL network.
//!
//! Outer layer `t` runs `tau` inner layers (denoise, then optionally the EM
//! updates of the precision and of the per-device sparsity), followed by the
//! extrinsic conversion, the `β^t`-scaled LMMSE step and the conversion back.
//! The forward pass records everything the hand-written reverse sweep in
//! [`crate::training`] needs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lmmse::LmmseOperator;
use super::params::{FatDlParams, Omega};
use super::{check_finite, check_finite_vec, check_problem, clip_precision, matched_filter, EstimatorReport, Probe, GAMMA_INIT};
use crate::denoiser::{bgm_entry, EPS_MAX, EPS_MIN};
use crate::error::{JadceError, Result};
use crate::linalg::{c, CMat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FatDlConfig {
    pub outer_layers: usize,
    pub inner_layers: usize,
    /// Run the EM precision / sparsity updates inside the inner loop.
    pub em: bool,
    /// Starting per-device sparsity.
    pub eps0: f64,
    pub noise_var: f64,
}

/// Where a (possibly truncated) forward pass ends. Indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// After inner layer `i`; the output is its `Ŝ₁`.
    Inner(usize),
    /// After the LMMSE step of outer layer `t`; the output is its `Ŝ₂`.
    Outer(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct InnerRecord {
    pub gamma_in: Vec<f64>,
    pub eps_in: Vec<f64>,
    pub s1: CMat,
    pub sum_g: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_clipped: Vec<bool>,
    pub pi: DMatrix<f64>,
    pub gamma_out: Vec<f64>,
    pub gamma_out_clipped: Vec<bool>,
    pub eps_out: Vec<f64>,
    pub eps_out_clipped: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct OuterStep {
    pub gamma_a: Vec<f64>,
    pub eta1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub gamma2_clipped: Vec<bool>,
    pub u2: CMat,
    pub s2: CMat,
    pub trace: Vec<f64>,
    pub eta2: Vec<f64>,
    pub eta2_clipped: Vec<bool>,
    pub gamma1n: Vec<f64>,
    pub gamma1n_clipped: Vec<bool>,
    pub u1n: CMat,
}

#[derive(Debug, Clone)]
pub(crate) struct OuterRecord {
    pub u1: CMat,
    pub inner: Vec<InnerRecord>,
    pub step: Option<OuterStep>,
}

/// Full record of one sample's forward pass.
#[derive(Debug, Clone)]
pub(crate) struct SampleTape {
    pub ahv: CMat,
    pub outer: Vec<OuterRecord>,
    pub output: CMat,
    pub eps: Vec<f64>,
    pub clip_count: usize,
}

fn clip_eps_flag(x: f64) -> (f64, bool) {
    if x < EPS_MIN {
        (EPS_MIN, true)
    } else if x > EPS_MAX {
        (EPS_MAX, true)
    } else {
        (x, false)
    }
}

fn inner_layer(
    u1: &CMat,
    gamma_in: &[f64],
    eps_in: &[f64],
    om: &Omega,
    n_mix: usize,
    em: bool,
    layer: usize,
    clips: &mut usize,
) -> Result<InnerRecord> {
    let (n, cols) = u1.shape();
    let nf = n as f64;
    let mut s1 = CMat::zeros(n, cols);
    let mut pi = DMatrix::zeros(n, cols);
    let mut sum_g = vec![0.0; cols];
    let mut eta = vec![0.0; cols];
    let mut eta_clipped = vec![false; cols];
    let mut gamma_out = gamma_in.to_vec();
    let mut gamma_out_clipped = vec![false; cols];
    for r in 0..cols {
        let g = gamma_in[r];
        let mut acc = 0.0;
        let mut resid = 0.0;
        for k in 0..n {
            let sl = k * n_mix..(k + 1) * n_mix;
            let d = bgm_entry(u1[(k, r)], g, eps_in[k], &om.weights[sl.clone()], &om.variances[sl]);
            s1[(k, r)] = d.value;
            pi[(k, r)] = d.support_prob;
            acc += d.derivative;
            resid += (d.value - u1[(k, r)]).norm_sqr();
        }
        sum_g[r] = acc;
        let (e, ce) = clip_precision(g * nf / acc);
        eta[r] = e;
        eta_clipped[r] = ce;
        *clips += ce as usize;
        if em {
            let (go, cg) = clip_precision(1.0 / (resid / nf + 1.0 / e));
            gamma_out[r] = go;
            gamma_out_clipped[r] = cg;
            *clips += cg as usize;
        }
        check_finite_vec(&s1.column(r).into_owned(), layer, r, "denoiser estimate")?;
        check_finite(gamma_out[r], layer, r, "inner precision")?;
    }
    let mut eps_out = eps_in.to_vec();
    let mut eps_out_clipped = vec![false; n];
    if em {
        for k in 0..n {
            let mean = pi.row(k).sum() / cols as f64;
            let (e, ce) = clip_eps_flag(mean);
            eps_out[k] = e;
            eps_out_clipped[k] = ce;
        }
    }
    Ok(InnerRecord {
        gamma_in: gamma_in.to_vec(),
        eps_in: eps_in.to_vec(),
        s1,
        sum_g,
        eta,
        eta_clipped,
        pi,
        gamma_out,
        gamma_out_clipped,
        eps_out,
        eps_out_clipped,
    })
}

fn outer_step(
    op: &LmmseOperator,
    w: &CMat,
    u1: &CMat,
    last: &InnerRecord,
    layer: usize,
    clips: &mut usize,
) -> Result<OuterStep> {
    let (n, cols) = u1.shape();
    let nf = n as f64;
    let mut st = OuterStep {
        gamma_a: last.gamma_in.clone(),
        eta1: last.eta.clone(),
        gamma2: vec![0.0; cols],
        gamma2_clipped: vec![false; cols],
        u2: CMat::zeros(n, cols),
        s2: CMat::zeros(n, cols),
        trace: vec![0.0; cols],
        eta2: vec![0.0; cols],
        eta2_clipped: vec![false; cols],
        gamma1n: vec![0.0; cols],
        gamma1n_clipped: vec![false; cols],
        u1n: CMat::zeros(n, cols),
    };
    for r in 0..cols {
        let (ga, e1) = (st.gamma_a[r], st.eta1[r]);
        let (g2, c2) = clip_precision(e1 - ga);
        let u1c = u1.column(r);
        let u2 = (last.s1.column(r) * c(e1) - u1c * c(ga)) / c(g2);
        let s2 = op.solve_projected(&u2, g2, &w.column(r).into_owned());
        let tr = op.trace_inverse(g2);
        let (e2, c3) = clip_precision(nf / tr);
        let (g1n, c4) = clip_precision(e2 - g2);
        let u1n = (&s2 * c(e2) - &u2 * c(g2)) / c(g1n);
        *clips += c2 as usize + c3 as usize + c4 as usize;
        check_finite_vec(&s2, layer, r, "LMMSE estimate")?;
        check_finite_vec(&u1n, layer, r, "denoiser input")?;
        st.gamma2[r] = g2;
        st.gamma2_clipped[r] = c2;
        st.trace[r] = tr;
        st.eta2[r] = e2;
        st.eta2_clipped[r] = c3;
        st.gamma1n[r] = g1n;
        st.gamma1n_clipped[r] = c4;
        st.u2.set_column(r, &u2);
        st.s2.set_column(r, &s2);
        st.u1n.set_column(r, &u1n);
    }
    Ok(st)
}

/// Builds one LMMSE operator per outer layer up to `outer_layers`.
pub(crate) fn layer_operators(a: &CMat, params: &FatDlParams, outer_layers: usize, noise_var: f64) -> Result<Vec<LmmseOperator>> {
    params.beta[..outer_layers]
        .iter()
        .map(|b| LmmseOperator::new(a, b, noise_var))
        .collect()
}

/// Forward pass of one sample until `stop`.
pub(crate) fn forward_sample(
    ops: &[LmmseOperator],
    a: &CMat,
    params: &FatDlParams,
    cfg: &FatDlConfig,
    v: &CMat,
    stop: Stop,
) -> Result<SampleTape> {
    let tau = cfg.inner_layers;
    let (stop_outer, stop_inner) = match stop {
        Stop::Inner(i) => ((i - 1) / tau + 1, Some((i - 1) % tau + 1)),
        Stop::Outer(t) => (t, None),
    };
    let cols = v.ncols();
    let ahv = a.adjoint() * v;
    let mut u1 = &ahv / c(a.nrows() as f64);
    let mut gamma = vec![GAMMA_INIT; cols];
    let mut eps = vec![cfg.eps0.clamp(EPS_MIN, EPS_MAX); a.ncols()];
    let mut clips = 0;
    let mut outer = Vec::with_capacity(stop_outer);
    let mut output = u1.clone();
    for t in 1..=stop_outer {
        let n_inner = if t == stop_outer { stop_inner.unwrap_or(tau) } else { tau };
        let mut inner: Vec<InnerRecord> = Vec::with_capacity(n_inner);
        let mut g_in = gamma.clone();
        for k in 1..=n_inner {
            let i = (t - 1) * tau + k;
            let rec = inner_layer(&u1, &g_in, &eps, &params.omega[i - 1], params.n_mix, cfg.em, i, &mut clips)?;
            g_in = rec.gamma_out.clone();
            eps = rec.eps_out.clone();
            inner.push(rec);
        }
        if t == stop_outer && stop_inner.is_some() {
            output = inner.last().expect("at least one inner layer").s1.clone();
            outer.push(OuterRecord { u1, inner, step: None });
            break;
        }
        let op = &ops[t - 1];
        let w = op.project_obs_from_ahv(&ahv);
        let step = outer_step(op, &w, &u1, inner.last().expect("at least one inner layer"), t, &mut clips)?;
        output = step.s2.clone();
        let next_u1 = step.u1n.clone();
        gamma = step.gamma1n.clone();
        outer.push(OuterRecord {
            u1,
            inner,
            step: Some(step),
        });
        u1 = next_u1;
    }
    Ok(SampleTape {
        ahv,
        outer,
        output,
        eps,
        clip_count: clips,
    })
}

pub(crate) fn check_config(params: &FatDlParams, cfg: &FatDlConfig, n: usize) -> Result<()> {
    params.validate()?;
    if params.n_devices != n {
        return Err(JadceError::invalid(format!(
            "parameters cover {} devices, problem has {n}",
            params.n_devices
        )));
    }
    if cfg.inner_layers == 0 || cfg.inner_layers != params.inner_layers {
        return Err(JadceError::invalid(format!(
            "config asks for {} inner layers, parameters hold {}",
            cfg.inner_layers, params.inner_layers
        )));
    }
    if cfg.outer_layers > params.outer_layers {
        return Err(JadceError::invalid(format!(
            "config asks for {} outer layers, parameters hold {}",
            cfg.outer_layers, params.outer_layers
        )));
    }
    if !(cfg.eps0 > 0.0 && cfg.eps0 < 1.0) {
        return Err(JadceError::invalid(format!("starting sparsity {} outside (0, 1)", cfg.eps0)));
    }
    Ok(())
}

/// Per-layer results of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FatDlOutput {
    pub report: EstimatorReport,
    /// `γ₁` entering the last outer layer's denoiser, per column.
    pub gamma1: Vec<f64>,
}

/// Runs the network; the estimate is `Ŝ₂` of the last outer layer.
pub fn fatdl_forward(v: &CMat, a: &CMat, params: &FatDlParams, cfg: &FatDlConfig, probe: Probe<'_>) -> Result<FatDlOutput> {
    check_problem(v, a, cfg.noise_var)?;
    check_config(params, cfg, a.ncols())?;
    if cfg.outer_layers == 0 {
        return Ok(FatDlOutput {
            report: EstimatorReport {
                estimate: matched_filter(a, v),
                nmse_trace: Vec::new(),
                eps: vec![cfg.eps0.clamp(EPS_MIN, EPS_MAX); a.ncols()],
                layers: 0,
                clip_count: 0,
                s1_layers: Vec::new(),
                s2_layers: Vec::new(),
            },
            gamma1: vec![GAMMA_INIT; v.ncols()],
        });
    }
    let ops = layer_operators(a, params, cfg.outer_layers, cfg.noise_var)?;
    let tape = forward_sample(&ops, a, params, cfg, v, Stop::Outer(cfg.outer_layers))?;
    let mut report = EstimatorReport {
        estimate: tape.output.clone(),
        nmse_trace: Vec::new(),
        eps: tape.eps.clone(),
        layers: tape.outer.len(),
        clip_count: tape.clip_count,
        s1_layers: Vec::new(),
        s2_layers: Vec::new(),
    };
    for rec in &tape.outer {
        let step = rec.step.as_ref().expect("complete outer layer");
        if let Some(p) = probe {
            report.nmse_trace.push(p(&step.s2));
        }
        report.s1_layers.push(rec.inner.last().expect("inner layer").s1.clone());
        report.s2_layers.push(step.s2.clone());
    }
    let last = tape.outer.last().expect("outer layer");
    Ok(FatDlOutput {
        report,
        gamma1: last.inner[0].gamma_in.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerEmOut {
    pub s1: CMat,
    /// Precision after the last EM update (unchanged when EM is off).
    pub gamma1: Vec<f64>,
    /// Precision used by the last denoising pass.
    pub gamma_used: Vec<f64>,
    pub eps: Vec<f64>,
    pub eta1: Vec<f64>,
    pub support_prob: DMatrix<f64>,
    pub clip_count: usize,
}

/// The inner loop on its own: one denoising pass per mixture in `omegas`,
/// each followed (when `em` is set) by the closed-form precision update and
/// the per-device sparsity update.
pub fn inner_em_loop(u1: &CMat, gamma1: &[f64], eps: &[f64], omegas: &[Omega], n_mix: usize, em: bool) -> Result<InnerEmOut> {
    let (n, cols) = u1.shape();
    if gamma1.len() != cols || eps.len() != n {
        return Err(JadceError::invalid("precision / sparsity lengths do not match the input"));
    }
    if omegas.is_empty() {
        return Err(JadceError::invalid("inner loop needs at least one layer"));
    }
    if gamma1.iter().any(|&g| !(g > 0.0)) {
        return Err(JadceError::invalid("precisions must be positive"));
    }
    for om in omegas {
        if om.weights.len() != n * n_mix || om.variances.len() != n * n_mix {
            return Err(JadceError::invalid("mixture parameters do not match N x J"));
        }
    }
    let mut clips = 0;
    let mut g = gamma1.to_vec();
    let mut e: Vec<f64> = eps.iter().map(|&x| x.clamp(EPS_MIN, EPS_MAX)).collect();
    let mut last = None;
    for (i, om) in omegas.iter().enumerate() {
        let rec = inner_layer(u1, &g, &e, om, n_mix, em, i + 1, &mut clips)?;
        g = rec.gamma_out.clone();
        e = rec.eps_out.clone();
        last = Some(rec);
    }
    let rec = last.expect("non-empty");
    Ok(InnerEmOut {
        s1: rec.s1,
        gamma1: g,
        gamma_used: rec.gamma_in,
        eps: e,
        eta1: rec.eta,
        support_prob: rec.pi,
        clip_count: clips,
    })
}
