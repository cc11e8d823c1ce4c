//! Binary and CSV matrix containers.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"JDCM"
//! 4       2     format version (1)
//! 6       1     dtype: 1 = complex f64 (re, im), 2 = real f64
//! 7       1     reserved (0)
//! 8       8     rows
//! 16      8     cols
//! 24      32    SHA-256 of the payload
//! 56      ..    payload, row-major, f64 little-endian
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{JadceError, Result};
use crate::linalg::CMat;

pub const MAGIC: &[u8; 4] = b"JDCM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 56;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    Complex64 = 1,
    Real64 = 2,
}

impl Dtype {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Dtype::Complex64),
            2 => Ok(Dtype::Real64),
            other => Err(JadceError::format(format!("unknown dtype tag {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::Complex64 => 16,
            Dtype::Real64 => 8,
        }
    }
}

/// A matrix read back from a container; real payloads stay real.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredMatrix {
    Complex(CMat),
    Real(DMatrix<f64>),
}

fn write_block<W: Write>(w: &mut W, dtype: Dtype, rows: usize, cols: usize, payload: &[u8]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype as u8, 0])?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    w.write_all(&Sha256::digest(payload))?;
    w.write_all(payload)?;
    Ok(())
}

pub fn write_complex<W: Write>(w: &mut W, m: &CMat) -> Result<()> {
    let mut payload = Vec::with_capacity(m.len() * 16);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            payload.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            payload.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    write_block(w, Dtype::Complex64, m.nrows(), m.ncols(), &payload)
}

pub fn write_real<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    let mut payload = Vec::with_capacity(m.len() * 8);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            payload.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    write_block(w, Dtype::Real64, m.nrows(), m.ncols(), &payload)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => JadceError::format(format!("truncated container while reading {what}")),
        _ => JadceError::Io(e),
    })
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<StoredMatrix> {
    let mut header = [0u8; HEADER_LEN];
    read_exact(r, &mut header, "header")?;
    if &header[0..4] != MAGIC {
        return Err(JadceError::format("bad magic bytes"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(JadceError::format(format!(
            "container version {version} is not supported (expected {VERSION})"
        )));
    }
    let dtype = Dtype::from_byte(header[6])?;
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.width()))
        .filter(|&n| n <= (1usize << 40))
        .ok_or_else(|| JadceError::format(format!("implausible dimensions {rows}x{cols}")))?;
    let mut payload = vec![0u8; len];
    read_exact(r, &mut payload, "payload")?;
    if Sha256::digest(&payload).as_slice() != &header[24..56] {
        return Err(JadceError::format("payload checksum mismatch"));
    }
    let f = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().unwrap());
    Ok(match dtype {
        Dtype::Complex64 => StoredMatrix::Complex(CMat::from_fn(rows, cols, |i, j| {
            let k = 2 * (i * cols + j);
            Complex64::new(f(k), f(k + 1))
        })),
        Dtype::Real64 => StoredMatrix::Real(DMatrix::from_fn(rows, cols, |i, j| f(i * cols + j))),
    })
}

pub fn read_complex<R: Read>(r: &mut R) -> Result<CMat> {
    match read_matrix(r)? {
        StoredMatrix::Complex(m) => Ok(m),
        StoredMatrix::Real(_) => Err(JadceError::format("expected a complex matrix, found real")),
    }
}

pub fn read_real<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    match read_matrix(r)? {
        StoredMatrix::Real(m) => Ok(m),
        StoredMatrix::Complex(_) => Err(JadceError::format("expected a real matrix, found complex")),
    }
}

pub fn save_complex(path: &std::path::Path, m: &CMat) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_complex(&mut f, m)?;
    f.flush()?;
    Ok(())
}

pub fn load_complex(path: &std::path::Path) -> Result<CMat> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_complex(&mut f)
}

/// CSV with one matrix row per line and interleaved `re,im` columns.
pub fn write_csv<W: Write>(w: W, m: &CMat) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..m.nrows() {
        let mut rec = Vec::with_capacity(2 * m.ncols());
        for j in 0..m.ncols() {
            rec.push(format!("{:e}", m[(i, j)].re));
            rec.push(format!("{:e}", m[(i, j)].im));
        }
        wr.write_record(&rec).map_err(|e| JadceError::format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<CMat> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| JadceError::format(e.to_string()))?;
        if rec.len() % 2 != 0 {
            return Err(JadceError::format("odd number of CSV fields in a complex row"));
        }
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| JadceError::format(e.to_string()))?;
        rows.push(vals.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect());
    }
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(JadceError::format("ragged CSV matrix"));
    }
    Ok(CMat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
