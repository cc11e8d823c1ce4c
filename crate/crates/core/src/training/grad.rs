//! Reverse sweep through a recorded [`SampleTape`], the unconstrained
//! parameterisation and the finite-difference gate.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::denoiser::bgm_entry_backward;
use crate::error::{JadceError, Result};
use crate::estimator::{
    check_config, forward_sample, layer_operators, FatDlConfig, FatDlParams, LmmseOperator, Omega, SampleTape, Stop,
};
use crate::linalg::{c, fro_norm_sq, CMat};
use crate::rng::{stream, streams};

/// Identifies one trainable parameter block. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    Beta(usize),
    Weights(usize),
    Variances(usize),
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Block::Beta(t) => write!(f, "beta[{}]", t + 1),
            Block::Weights(i) => write!(f, "q[{}]", i + 1),
            Block::Variances(i) => write!(f, "var[{}]", i + 1),
        }
    }
}

/// Flat parameter vector in free coordinates: `β = exp(b)`, `ϑ² = exp(ρ)`,
/// each row of `q` a softmax of free logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Unconstrained {
    pub outer_layers: usize,
    pub inner_layers: usize,
    pub n_devices: usize,
    pub n_mix: usize,
    pub values: Vec<f64>,
}

impl Unconstrained {
    pub fn from_params(p: &FatDlParams) -> Self {
        let mut values = Vec::with_capacity(p.outer_layers * p.n_devices + 2 * p.omega.len() * p.n_devices * p.n_mix);
        for b in &p.beta {
            values.extend(b.iter().map(|x| x.ln()));
        }
        for om in &p.omega {
            for row in om.weights.chunks(p.n_mix) {
                let logs: Vec<f64> = row.iter().map(|q| q.max(1e-300).ln()).collect();
                let mean = logs.iter().sum::<f64>() / logs.len() as f64;
                values.extend(logs.iter().map(|l| l - mean));
            }
            values.extend(om.variances.iter().map(|v| v.ln()));
        }
        Unconstrained {
            outer_layers: p.outer_layers,
            inner_layers: p.inner_layers,
            n_devices: p.n_devices,
            n_mix: p.n_mix,
            values,
        }
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut out: Vec<Block> = (0..self.outer_layers).map(Block::Beta).collect();
        for i in 0..self.outer_layers * self.inner_layers {
            out.push(Block::Weights(i));
            out.push(Block::Variances(i));
        }
        out
    }

    pub fn range(&self, b: Block) -> Range<usize> {
        let n = self.n_devices;
        let nj = n * self.n_mix;
        let base = self.outer_layers * n;
        match b {
            Block::Beta(t) => t * n..(t + 1) * n,
            Block::Weights(i) => base + 2 * i * nj..base + (2 * i + 1) * nj,
            Block::Variances(i) => base + (2 * i + 1) * nj..base + (2 * i + 2) * nj,
        }
    }

    pub fn to_params(&self) -> FatDlParams {
        let j = self.n_mix;
        let beta = (0..self.outer_layers)
            .map(|t| self.values[self.range(Block::Beta(t))].iter().map(|x| x.exp()).collect())
            .collect();
        let omega = (0..self.outer_layers * self.inner_layers)
            .map(|i| {
                let mut weights = Vec::with_capacity(self.n_devices * j);
                for row in self.values[self.range(Block::Weights(i))].chunks(j) {
                    weights.extend(softmax(row));
                }
                Omega {
                    weights,
                    variances: self.values[self.range(Block::Variances(i))].iter().map(|x| x.exp()).collect(),
                }
            })
            .collect();
        FatDlParams {
            outer_layers: self.outer_layers,
            inner_layers: self.inner_layers,
            n_devices: self.n_devices,
            n_mix: self.n_mix,
            beta,
            omega,
        }
    }

    /// Copies the values of block `src` into block `dst` (same kind).
    pub fn copy_block(&mut self, dst: Block, src: Block) {
        let s = self.range(src);
        let d = self.range(dst);
        assert_eq!(s.len(), d.len(), "blocks of different size");
        let tmp = self.values[s].to_vec();
        self.values[d].copy_from_slice(&tmp);
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Gradients in the natural coordinates `(β, q, ϑ²)`, laid out like [`FatDlParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub beta: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl ParamGrad {
    fn zeros(p: &FatDlParams) -> Self {
        let nj = p.n_devices * p.n_mix;
        ParamGrad {
            beta: vec![vec![0.0; p.n_devices]; p.outer_layers],
            weights: vec![vec![0.0; nj]; p.omega.len()],
            variances: vec![vec![0.0; nj]; p.omega.len()],
        }
    }

    fn add(&mut self, o: &ParamGrad) {
        for (a, b) in self.beta.iter_mut().zip(&o.beta) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.weights.iter_mut().zip(&o.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.variances.iter_mut().zip(&o.variances) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Chain rule into the free coordinates of `u`.
    pub fn to_unconstrained(&self, u: &Unconstrained, params: &FatDlParams) -> Vec<f64> {
        let j = u.n_mix;
        let mut g = vec![0.0; u.values.len()];
        for (t, gb) in self.beta.iter().enumerate() {
            let r = u.range(Block::Beta(t));
            for (k, (x, b)) in gb.iter().zip(&params.beta[t]).enumerate() {
                g[r.start + k] = x * b;
            }
        }
        for (i, om) in params.omega.iter().enumerate() {
            let r = u.range(Block::Weights(i));
            for (n, (qrow, grow)) in om.weights.chunks(j).zip(self.weights[i].chunks(j)).enumerate() {
                let dot: f64 = qrow.iter().zip(grow).map(|(q, g)| q * g).sum();
                for k in 0..j {
                    g[r.start + n * j + k] = qrow[k] * (grow[k] - dot);
                }
            }
            let r = u.range(Block::Variances(i));
            for (k, (x, v)) in self.variances[i].iter().zip(&om.variances).enumerate() {
                g[r.start + k] = x * v;
            }
        }
        g
    }
}

/// Loss `||out − S||²` of one sample and its parameter gradient.
pub(crate) fn backward_sample(
    ops: &[LmmseOperator],
    params: &FatDlParams,
    cfg: &FatDlConfig,
    tape: &SampleTape,
    target: &CMat,
) -> ParamGrad {
    let n = params.n_devices;
    let nf = n as f64;
    let jm = params.n_mix;
    let tau = cfg.inner_layers;
    let cols = target.ncols();
    let mut grad = ParamGrad::zeros(params);

    let out_adj = (&tape.output - target) * c(2.0);
    let n_outer = tape.outer.len();
    // adjoints flowing backwards from the following outer layer
    let mut adj_u1n = CMat::zeros(n, cols);
    let mut adj_g1n = vec![0.0; cols];
    let mut adj_eps = vec![0.0; n];

    for (ti, rec) in tape.outer.iter().enumerate().rev() {
        let last = ti + 1 == n_outer;
        let n_inner = rec.inner.len();
        let mut adj_u1 = CMat::zeros(n, cols);
        // adjoints of the last inner layer's outputs
        let mut adj_s1 = CMat::zeros(n, cols);
        let mut adj_eta = vec![0.0; cols];
        let mut adj_gamma_a = vec![0.0; cols];

        match &rec.step {
            None => adj_s1 = out_adj.clone(),
            Some(st) => {
                let op = &ops[ti];
                let inv_var = 1.0 / op.noise_var();
                let mut adj_s2 = if last { out_adj.clone() } else { CMat::zeros(n, cols) };
                let ahv = &tape.ahv;
                let s1 = &rec.inner[n_inner - 1].s1;
                for r in 0..cols {
                    let (g2, e2, g1n, e1, ga) = (st.gamma2[r], st.eta2[r], st.gamma1n[r], st.eta1[r], st.gamma_a[r]);
                    let u2 = st.u2.column(r).into_owned();
                    let s2 = st.s2.column(r).into_owned();
                    let u1n = st.u1n.column(r).into_owned();
                    let au = adj_u1n.column(r).into_owned();
                    // u1n = (e2 s2 − g2 u2) / g1n
                    let h = &au / c(g1n);
                    let mut as2 = adj_s2.column(r).into_owned() + &h * c(e2);
                    let mut ae2 = h.dotc(&s2).re;
                    let mut au2 = &h * c(-g2);
                    let mut ag2 = -h.dotc(&u2).re;
                    let ag1n = adj_g1n[r] - au.dotc(&u1n).re / g1n;
                    if !st.gamma1n_clipped[r] {
                        ae2 += ag1n;
                        ag2 -= ag1n;
                    }
                    if !st.eta2_clipped[r] {
                        let tr = st.trace[r];
                        let atr = -ae2 * nf / (tr * tr);
                        ag2 -= atr * op.trace_inverse_sq(g2);
                        for (b, d) in grad.beta[ti].iter_mut().zip(op.trace_beta_grad(g2)) {
                            *b += atr * d;
                        }
                    }
                    // s2 = W⁻¹ (g2 u2 + σ⁻² β ⊙ Aᴴv)
                    let cbar = op.apply_inverse(&as2, g2);
                    au2 += &cbar * c(g2);
                    ag2 += cbar.dotc(&(&u2 - &s2)).re;
                    let gd_s2 = op.gram_scaled(&s2);
                    let gd_c = op.gram_scaled(&cbar);
                    for k in 0..n {
                        grad.beta[ti][k] += inv_var
                            * ((cbar[k].conj() * ahv[(k, r)]).re
                                - (cbar[k].conj() * gd_s2[k]).re
                                - (gd_c[k].conj() * s2[k]).re);
                    }
                    as2.fill(c(0.0));
                    // u2 = (e1 s1 − ga u1) / g2
                    let gbar = &au2 / c(g2);
                    ag2 -= au2.dotc(&u2).re / g2;
                    let mut ae1 = gbar.dotc(&s1.column(r)).re;
                    let mut aga = -gbar.dotc(&rec.u1.column(r)).re;
                    let mut col = adj_s1.column_mut(r);
                    col += &gbar * c(e1);
                    let mut col = adj_u1.column_mut(r);
                    col -= &gbar * c(ga);
                    if !st.gamma2_clipped[r] {
                        ae1 += ag2;
                        aga -= ag2;
                    }
                    adj_eta[r] = ae1;
                    adj_gamma_a[r] = aga;
                }
                adj_s2.fill(c(0.0));
            }
        }

        // inner layers in reverse
        let mut adj_gamma_out = vec![0.0; cols];
        let mut adj_eps_out = std::mem::take(&mut adj_eps);
        for (k, ir) in rec.inner.iter().enumerate().rev() {
            let i = ti * tau + k;
            let om = &params.omega[i];
            let mut adj_gin = vec![0.0; cols];
            let mut adj_ein = vec![0.0; n];
            let mut a_s = if k + 1 == n_inner { std::mem::replace(&mut adj_s1, CMat::zeros(0, 0)) } else { CMat::zeros(n, cols) };
            let mut a_eta = if k + 1 == n_inner { adj_eta.clone() } else { vec![0.0; cols] };
            if k + 1 == n_inner {
                adj_gin.iter_mut().zip(&adj_gamma_a).for_each(|(x, y)| *x += y);
            }
            let mut a_pi = DMatrix::<f64>::zeros(n, cols);
            if cfg.em {
                for kk in 0..n {
                    if !ir.eps_out_clipped[kk] {
                        for r in 0..cols {
                            a_pi[(kk, r)] += adj_eps_out[kk] / cols as f64;
                        }
                    }
                }
                for r in 0..cols {
                    if ir.gamma_out_clipped[r] {
                        continue;
                    }
                    let go = ir.gamma_out[r];
                    let ad = -adj_gamma_out[r] * go * go;
                    let ares = ad / nf;
                    let eta = ir.eta[r];
                    a_eta[r] += -ad / (eta * eta);
                    for kk in 0..n {
                        let d = (ir.s1[(kk, r)] - rec.u1[(kk, r)]) * (2.0 * ares);
                        a_s[(kk, r)] += d;
                        adj_u1[(kk, r)] -= d;
                    }
                }
            } else {
                adj_gin.iter_mut().zip(&adj_gamma_out).for_each(|(x, y)| *x += y);
                adj_ein.iter_mut().zip(&adj_eps_out).for_each(|(x, y)| *x += y);
            }
            let mut a_sumg = vec![0.0; cols];
            for r in 0..cols {
                if !ir.eta_clipped[r] {
                    adj_gin[r] += a_eta[r] * nf / ir.sum_g[r];
                    a_sumg[r] = -a_eta[r] * ir.eta[r] / ir.sum_g[r];
                }
            }
            let (gw, gv) = (&mut grad.weights[i], &mut grad.variances[i]);
            for kk in 0..n {
                let sl = kk * jm..(kk + 1) * jm;
                let (q, var) = (&om.weights[sl.clone()], &om.variances[sl.clone()]);
                for r in 0..cols {
                    let eg = bgm_entry_backward(
                        rec.u1[(kk, r)],
                        ir.gamma_in[r],
                        ir.eps_in[kk],
                        q,
                        var,
                        a_s[(kk, r)],
                        a_sumg[r],
                        a_pi[(kk, r)],
                    );
                    adj_u1[(kk, r)] += eg.u;
                    adj_gin[r] += eg.gamma;
                    adj_ein[kk] += eg.eps;
                    for jj in 0..jm {
                        gw[sl.start + jj] += eg.q[jj];
                        gv[sl.start + jj] += eg.var[jj];
                    }
                }
            }
            a_s.fill(c(0.0));
            adj_gamma_out = adj_gin;
            adj_eps_out = adj_ein;
        }
        adj_u1n = adj_u1;
        adj_g1n = adj_gamma_out;
        adj_eps = adj_eps_out;
    }
    grad
}

/// Parameter blocks that influence the output at `stop`.
pub fn active_blocks(params: &FatDlParams, stop: Stop) -> Vec<Block> {
    let tau = params.inner_layers;
    let (n_inner, n_beta) = match stop {
        Stop::Inner(i) => (i, (i - 1) / tau),
        Stop::Outer(t) => (t * tau, t),
    };
    let mut out: Vec<Block> = (0..n_beta).map(Block::Beta).collect();
    for i in 0..n_inner {
        out.push(Block::Weights(i));
        out.push(Block::Variances(i));
    }
    out
}

fn check_stop(params: &FatDlParams, stop: Stop) -> Result<()> {
    let ok = match stop {
        Stop::Inner(i) => i >= 1 && i <= params.omega.len(),
        Stop::Outer(t) => t <= params.outer_layers,
    };
    if ok {
        Ok(())
    } else {
        Err(JadceError::invalid(format!("{stop:?} is outside the network")))
    }
}

fn ops_needed(cfg: &FatDlConfig, stop: Stop) -> usize {
    match stop {
        Stop::Inner(i) => (i - 1) / cfg.inner_layers + 1,
        Stop::Outer(t) => t,
    }
}

/// Network outputs at `stop` for every sample of the batch.
pub fn outputs_at(params: &FatDlParams, cfg: &FatDlConfig, a: &CMat, batch: &[&Sample], stop: Stop) -> Result<Vec<CMat>> {
    check_stop(params, stop)?;
    if matches!(stop, Stop::Outer(0)) {
        return Ok(batch.iter().map(|s| crate::estimator::matched_filter(a, &s.v)).collect());
    }
    let ops = layer_operators(a, params, ops_needed(cfg, stop), cfg.noise_var)?;
    batch
        .par_iter()
        .map(|s| forward_sample(&ops, a, params, cfg, &s.v, stop).map(|t| t.output))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Batch loss `(1/B) Σ ||out_b − S_b||²` at `stop`, without gradients.
pub fn loss_at(params: &FatDlParams, cfg: &FatDlConfig, a: &CMat, batch: &[&Sample], stop: Stop) -> Result<f64> {
    if batch.is_empty() {
        return Err(JadceError::invalid("empty batch"));
    }
    let outs = outputs_at(params, cfg, a, batch, stop)?;
    let acc: f64 = outs.iter().zip(batch).map(|(o, s)| fro_norm_sq(&(o - &s.s))).sum();
    Ok(acc / batch.len() as f64)
}

/// Loss and gradient in natural coordinates. Per-sample work runs in
/// parallel; partial results are summed in sample order.
pub fn grad(params: &FatDlParams, cfg: &FatDlConfig, a: &CMat, batch: &[&Sample], stop: Stop) -> Result<(f64, ParamGrad)> {
    check_config(params, cfg, a.ncols())?;
    check_stop(params, stop)?;
    if batch.is_empty() {
        return Err(JadceError::invalid("empty batch"));
    }
    let mut total = ParamGrad::zeros(params);
    if matches!(stop, Stop::Outer(0)) {
        return Ok((loss_at(params, cfg, a, batch, stop)?, total));
    }
    let ops = layer_operators(a, params, ops_needed(cfg, stop), cfg.noise_var)?;
    let parts: Vec<Result<(f64, ParamGrad)>> = batch
        .par_iter()
        .map(|s| {
            let tape = forward_sample(&ops, a, params, cfg, &s.v, stop)?;
            let loss = fro_norm_sq(&(&tape.output - &s.s));
            Ok((loss, backward_sample(&ops, params, cfg, &tape, &s.s)))
        })
        .collect();
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.add(&g);
    }
    let scale = 1.0 / batch.len() as f64;
    for v in total.beta.iter_mut().chain(total.weights.iter_mut()).chain(total.variances.iter_mut()) {
        v.iter_mut().for_each(|x| *x *= scale);
    }
    for (t, b) in total.beta.iter().enumerate() {
        if b.iter().any(|x| !x.is_finite()) {
            return Err(JadceError::numerical(format!("non-finite gradient in {}", Block::Beta(t))));
        }
    }
    for i in 0..total.weights.len() {
        if total.weights[i].iter().any(|x| !x.is_finite()) {
            return Err(JadceError::numerical(format!("non-finite gradient in {}", Block::Weights(i))));
        }
        if total.variances[i].iter().any(|x| !x.is_finite()) {
            return Err(JadceError::numerical(format!("non-finite gradient in {}", Block::Variances(i))));
        }
    }
    Ok((loss * scale, total))
}

/// Loss and gradient in the free coordinates of `u`.
pub fn grad_unconstrained(u: &Unconstrained, cfg: &FatDlConfig, a: &CMat, batch: &[&Sample], stop: Stop) -> Result<(f64, Vec<f64>)> {
    let params = u.to_params();
    let (loss, g) = grad(&params, cfg, a, batch, stop)?;
    Ok((loss, g.to_unconstrained(u, &params)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: Block,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Index inside the block of the worst scalar.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const GRAD_CHECK_STEP: f64 = 1e-4;
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// Central differences in free coordinates against the analytic gradient on
/// `per_block` scalars of every block that influences the output at `stop`.
/// Loss differences are formed from the outputs directly. The relative error of a scalar is `|a − f| / max(|a|, |f|, 1e-3 ||a_block||_∞)`.
pub fn grad_check(
    params: &FatDlParams,
    cfg: &FatDlConfig,
    a: &CMat,
    batch: &[&Sample],
    stop: Stop,
    per_block: usize,
    seed: u64,
) -> Result<GradReport> {
    let u = Unconstrained::from_params(params);
    let (_, g) = grad_unconstrained(&u, cfg, a, batch, stop)?;
    let mut rng = stream(seed, streams::GRAD_SAMPLE);
    let mut blocks = Vec::new();
    for b in active_blocks(params, stop) {
        let range = u.range(b);
        let ga = &g[range.clone()];
        let floor = 1e-3 * ga.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let picks = sample_indices(&mut rng, range.len(), per_block.min(range.len())).into_vec();
        let mut worst = (0.0f64, 0usize);
        for k in picks {
            let mut up = u.clone();
            up.values[range.start + k] += GRAD_CHECK_STEP;
            let op = outputs_at(&up.to_params(), cfg, a, batch, stop)?;
            let mut dn = u.clone();
            dn.values[range.start + k] -= GRAD_CHECK_STEP;
            let om = outputs_at(&dn.to_params(), cfg, a, batch, stop)?;
            // L+ − L− = Σ Re<o+ − o−, o+ + o− − 2S>, without cancelling two large losses
            let diff: f64 = op
                .iter()
                .zip(&om)
                .zip(batch)
                .map(|((p, m), s)| (p - m).dotc(&(p + m - &s.s * c(2.0))).re)
                .sum();
            let fd = diff / (batch.len() as f64 * 2.0 * GRAD_CHECK_STEP);
            let an = ga[k];
            let denom = an.abs().max(fd.abs()).max(floor);
            let err = if denom > 0.0 { (an - fd).abs() / denom } else { 0.0 };
            if !(err <= worst.0) {
                worst = (err, k);
            }
        }
        blocks.push(BlockCheck {
            block: b,
            checked: per_block.min(range.len()),
            max_rel_err: worst.0,
            worst_index: worst.1,
        });
    }
    let max_rel_err = blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        blocks,
        max_rel_err,
        tolerance: GRAD_CHECK_TOL,
        passed: max_rel_err <= GRAD_CHECK_TOL,
    })
}
