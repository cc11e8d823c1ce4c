//! Trainable FAT-DL state and its versioned parameter file.
//!
//! File layout (integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"JDCP"
//! 4       2     format version
//! 6       2     reserved (0)
//! 8       4     outer layers T
//! 12      4     inner layers per outer layer tau
//! 16      8     devices N
//! 24      4     mixture components J
//! 28      8     payload length in bytes
//! 36      32    SHA-256 of the payload
//! 68      ..    payload: T matrix containers (beta, N x 1 real), then for each
//!               of the T*tau inner layers two containers (weights, variances; N x J real)
//! ```

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{read_real, write_real};
use crate::denoiser::{GmPrior, MAX_MIX};
use crate::error::{JadceError, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"JDCP";
pub const PARAMS_VERSION: u16 = 1;
const HEADER_LEN: usize = 68;

/// Mixture weights and variances of one inner layer, `N x J` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Omega {
    pub weights: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatDlParams {
    pub outer_layers: usize,
    pub inner_layers: usize,
    pub n_devices: usize,
    pub n_mix: usize,
    /// One pilot scaling per outer layer.
    pub beta: Vec<Vec<f64>>,
    /// One mixture per inner layer, indexed `(t - 1) tau + tau'`.
    pub omega: Vec<Omega>,
}

impl FatDlParams {
    /// Untrained start: uniform weights, variances log-spaced over `[0.1, 10]`, unit `beta`.
    pub fn init(outer_layers: usize, inner_layers: usize, n_devices: usize, n_mix: usize) -> Self {
        let vars: Vec<f64> = if n_mix == 1 {
            vec![1.0]
        } else {
            (0..n_mix).map(|j| 10f64.powf(-1.0 + 2.0 * j as f64 / (n_mix - 1) as f64)).collect()
        };
        let omega = Omega {
            weights: vec![1.0 / n_mix as f64; n_devices * n_mix],
            variances: vars.iter().copied().cycle().take(n_devices * n_mix).collect(),
        };
        FatDlParams {
            outer_layers,
            inner_layers,
            n_devices,
            n_mix,
            beta: vec![vec![1.0; n_devices]; outer_layers],
            omega: vec![omega; outer_layers * inner_layers],
        }
    }

    /// Every inner layer uses the mixture of `prior`; `beta` is all ones.
    pub fn from_prior(outer_layers: usize, inner_layers: usize, prior: &GmPrior) -> Self {
        let omega = Omega {
            weights: prior.weights.clone(),
            variances: prior.variances.clone(),
        };
        FatDlParams {
            outer_layers,
            inner_layers,
            n_devices: prior.n_devices(),
            n_mix: prior.n_mix,
            beta: vec![vec![1.0; prior.n_devices()]; outer_layers],
            omega: vec![omega; outer_layers * inner_layers],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, j) = (self.n_devices, self.n_mix);
        if n == 0 || j == 0 || j > MAX_MIX {
            return Err(JadceError::invalid(format!("bad parameter dimensions N={n}, J={j}")));
        }
        if self.beta.len() != self.outer_layers || self.omega.len() != self.outer_layers * self.inner_layers {
            return Err(JadceError::invalid("layer counts do not match the stored parameter blocks"));
        }
        for (t, b) in self.beta.iter().enumerate() {
            if b.len() != n || b.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(JadceError::invalid(format!("beta of outer layer {} is invalid", t + 1)));
            }
        }
        for (i, om) in self.omega.iter().enumerate() {
            GmPrior::new(j, vec![0.5; n], om.weights.clone(), om.variances.clone())
                .map_err(|e| JadceError::invalid(format!("inner layer {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Mixture of inner layer `i` (0-based) with the given per-device sparsity.
    /// The first `t` outer layers (and their inner layers).
    pub fn truncated(&self, t: usize) -> FatDlParams {
        let t = t.min(self.outer_layers);
        FatDlParams {
            outer_layers: t,
            inner_layers: self.inner_layers,
            n_devices: self.n_devices,
            n_mix: self.n_mix,
            beta: self.beta[..t].to_vec(),
            omega: self.omega[..t * self.inner_layers].to_vec(),
        }
    }

    pub fn prior(&self, i: usize, eps: &[f64]) -> Result<GmPrior> {
        let om = &self.omega[i];
        GmPrior::new(self.n_mix, eps.to_vec(), om.weights.clone(), om.variances.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| JadceError::format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: FatDlParams = serde_json::from_str(s).map_err(|e| JadceError::format(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (n, j) = (self.n_devices, self.n_mix);
        let mut payload = Vec::new();
        for b in &self.beta {
            write_real(&mut payload, &DMatrix::from_column_slice(n, 1, b))?;
        }
        for om in &self.omega {
            write_real(&mut payload, &DMatrix::from_row_slice(n, j, &om.weights))?;
            write_real(&mut payload, &DMatrix::from_row_slice(n, j, &om.variances))?;
        }
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.outer_layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.inner_layers as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(j as u32).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(JadceError::format(format!("parameter file truncated: {} header bytes", bytes.len())));
        }
        if &bytes[0..4] != PARAMS_MAGIC {
            return Err(JadceError::format("not a parameter file (bad magic)"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != PARAMS_VERSION {
            return Err(JadceError::format(format!(
                "parameter file version {version}, expected {PARAMS_VERSION}"
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let outer_layers = u32_at(8);
        let inner_layers = u32_at(12);
        let n = u64_at(16) as usize;
        let j = u32_at(24);
        let len = u64_at(28) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != len {
            return Err(JadceError::format(format!(
                "parameter payload is {} bytes, header says {len}",
                payload.len()
            )));
        }
        if Sha256::digest(payload).as_slice() != &bytes[36..68] {
            return Err(JadceError::format("parameter payload checksum mismatch"));
        }
        let mut cursor = payload;
        let mut beta = Vec::with_capacity(outer_layers);
        for _ in 0..outer_layers {
            let m = read_real(&mut cursor)?;
            if m.shape() != (n, 1) {
                return Err(JadceError::format("beta block has the wrong shape"));
            }
            beta.push(m.as_slice().to_vec());
        }
        let row_major = |m: DMatrix<f64>| -> Result<Vec<f64>> {
            if m.shape() != (n, j) {
                return Err(JadceError::format("mixture block has the wrong shape"));
            }
            Ok(m.transpose().as_slice().to_vec())
        };
        let mut omega = Vec::with_capacity(outer_layers * inner_layers);
        for _ in 0..outer_layers * inner_layers {
            let weights = row_major(read_real(&mut cursor)?)?;
            let variances = row_major(read_real(&mut cursor)?)?;
            omega.push(Omega { weights, variances });
        }
        if !cursor.is_empty() {
            return Err(JadceError::format("trailing bytes after the last parameter block"));
        }
        let p = FatDlParams {
            outer_layers,
            inner_layers,
            n_devices: n,
            n_mix: j,
            beta,
            omega,
        };
        p.validate().map_err(|e| JadceError::format(format!("stored parameters are invalid: {e}")))?;
        Ok(p)
    }
}

pub fn save_params(params: &FatDlParams, path: &Path) -> Result<()> {
    let bytes = params.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<FatDlParams> {
    FatDlParams::from_bytes(&std::fs::read(path)?)
}
