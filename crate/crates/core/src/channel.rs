//! Channel matrices `G` (N transmit antennas by K single-antenna users).
//!
//! Entries are dimensionless and normalized so that the receiver noise at
//! every user has unit variance. Antenna and user indices are 1-based at
//! every public boundary of this module.

use std::fs;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TasError};
use crate::linalg::{CMatrix, CVector, C64};

/// Tag written into files produced by [`generate_rayleigh`].
pub const RAYLEIGH_LABEL: &str = "iid-rayleigh";

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    gains: CMatrix,
    seed: u64,
    label: String,
}

impl ChannelMatrix {
    /// Wraps an explicit gain matrix. Fails on empty or non-finite input.
    pub fn new(gains: CMatrix, seed: u64, label: impl Into<String>) -> Result<Self> {
        if gains.nrows() == 0 || gains.ncols() == 0 {
            return Err(TasError::invalid("channel matrix must have at least one row and column"));
        }
        if let Some((idx, _)) = gains
            .iter()
            .enumerate()
            .find(|(_, z)| !(z.re.is_finite() && z.im.is_finite()))
        {
            // column-major storage
            let (row, col) = (idx % gains.nrows(), idx / gains.nrows());
            return Err(TasError::invalid(format!(
                "non-finite gain at antenna {}, user {}",
                row + 1,
                col + 1
            )));
        }
        Ok(Self {
            gains,
            seed,
            label: label.into(),
        })
    }

    /// Builds a channel from row-major `(re, im)` rows, one row per antenna.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(TasError::invalid("ragged channel rows"));
        }
        let gains = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
        Self::new(gains, 0, "explicit")
    }

    pub fn n_antennas(&self) -> usize {
        self.gains.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.gains.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn gains(&self) -> &CMatrix {
        &self.gains
    }

    /// `g(n)`: the channel from antenna `n` (1-based) to every user.
    pub fn row(&self, n: usize) -> Result<CVector> {
        if n == 0 || n > self.n_antennas() {
            return Err(TasError::invalid(format!(
                "antenna index {n} outside 1..={}",
                self.n_antennas()
            )));
        }
        Ok(self.row_unchecked(n - 1))
    }

    /// Zero-based row access for hot loops that already validated the index.
    pub(crate) fn row_unchecked(&self, idx: usize) -> CVector {
        DVector::from_iterator(self.n_users(), self.gains.row(idx).iter().copied())
    }

    /// Squared Euclidean norm of every row, in antenna order.
    pub fn row_norms_sqr(&self) -> Vec<f64> {
        self.gains
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    /// Stacks the given 1-based antenna rows into an `ℓ×K` matrix.
    pub fn submatrix(&self, antennas: &[usize]) -> Result<CMatrix> {
        let n = self.n_antennas();
        if let Some(&bad) = antennas.iter().find(|&&a| a == 0 || a > n) {
            return Err(TasError::invalid(format!("antenna index {bad} outside 1..={n}")));
        }
        Ok(self.gains.select_rows(antennas.iter().map(|a| a - 1).collect::<Vec<_>>().iter()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&ChannelFile::from(self))
            .expect("channel serialization is infallible");
        fs::write(path, text + "\n").map_err(|e| TasError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TasError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ChannelFile::from(self)).expect("channel serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(text).map_err(|e| TasError::from_json(&e))?;
        file.try_into()
    }
}

/// On-disk layout of a channel: row-major `N×K` real and imaginary parts.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    n_antennas: usize,
    n_users: usize,
    gains_re: Vec<Vec<f64>>,
    gains_im: Vec<Vec<f64>>,
    seed: u64,
    label: String,
}

impl From<&ChannelMatrix> for ChannelFile {
    fn from(ch: &ChannelMatrix) -> Self {
        let part = |f: fn(&C64) -> f64| {
            ch.gains
                .row_iter()
                .map(|r| r.iter().map(f).collect())
                .collect()
        };
        ChannelFile {
            n_antennas: ch.n_antennas(),
            n_users: ch.n_users(),
            gains_re: part(|z| z.re),
            gains_im: part(|z| z.im),
            seed: ch.seed,
            label: ch.label.clone(),
        }
    }
}

impl TryFrom<ChannelFile> for ChannelMatrix {
    type Error = TasError;

    fn try_from(f: ChannelFile) -> Result<Self> {
        let schema = |field: &str, message: String| TasError::Schema {
            field: field.to_string(),
            message,
        };
        if f.n_antennas == 0 || f.n_users == 0 {
            return Err(schema("n_antennas", "dimensions must be positive".into()));
        }
        for (name, part) in [("gains_re", &f.gains_re), ("gains_im", &f.gains_im)] {
            if part.len() != f.n_antennas {
                return Err(schema(
                    name,
                    format!("expected {} rows, found {}", f.n_antennas, part.len()),
                ));
            }
            if let Some((i, r)) = part.iter().enumerate().find(|(_, r)| r.len() != f.n_users) {
                return Err(schema(
                    name,
                    format!("row {} has {} columns, expected {}", i + 1, r.len(), f.n_users),
                ));
            }
        }
        let gains = DMatrix::from_fn(f.n_antennas, f.n_users, |i, j| {
            Complex::new(f.gains_re[i][j], f.gains_im[i][j])
        });
        ChannelMatrix::new(gains, f.seed, f.label)
    }
}

/// Draws an i.i.d. `CN(0, 1)` channel.
///
/// The stream is ChaCha20 keyed by `seed`; real and imaginary parts are
/// independent standard normals (ziggurat sampler) scaled by `1/√2`, filled
/// row-major. Identical `(n_antennas, n_users, seed)` give bit-identical
/// matrices within this implementation.
pub fn generate_rayleigh(n_antennas: usize, n_users: usize, seed: u64) -> Result<ChannelMatrix> {
    if n_antennas == 0 || n_users == 0 {
        return Err(TasError::invalid(format!(
            "channel dimensions must be positive (got {n_antennas}x{n_users})"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut draw = || -> f64 { scale * Distribution::<f64>::sample(&StandardNormal, &mut rng) };
    let mut entries = Vec::with_capacity(n_antennas * n_users);
    for _ in 0..n_antennas * n_users {
        let re = draw();
        let im = draw();
        entries.push(Complex::new(re, im));
    }
    let gains = DMatrix::from_row_slice(n_antennas, n_users, &entries);
    ChannelMatrix::new(gains, seed, RAYLEIGH_LABEL)
}

/// Independent random stream `index` under `master_seed`.
///
/// ChaCha20 supports 2^64 streams per key, so per-trial generators are a
/// pure function of `(master_seed, index)` and can be created in any order.
pub fn stream_rng(master_seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Channel seed for trial `index` of an experiment.
pub fn trial_seed(master_seed: u64, index: u64) -> u64 {
    stream_rng(master_seed, index).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(generate_rayleigh(0, 4, 1), Err(TasError::InvalidArgument(_))));
        assert!(matches!(generate_rayleigh(4, 0, 1), Err(TasError::InvalidArgument(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_rayleigh(16, 3, 99).unwrap();
        let b = generate_rayleigh(16, 3, 99).unwrap();
        let c = generate_rayleigh(16, 3, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.gains(), c.gains());
    }

    #[test]
    fn sample_mean_power_of_128_by_4_matrix() {
        for seed in [0, 1, 7, 12345] {
            let ch = generate_rayleigh(128, 4, seed).unwrap();
            let mean = ch.gains().iter().map(|z| z.norm_sqr()).sum::<f64>() / 512.0;
            assert!((0.85..=1.15).contains(&mean), "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn distribution_moments() {
        // 10^4 antennas × 2 users = 2·10^4 scalar samples
        let ch = generate_rayleigh(10_000, 2, 2024).unwrap();
        let m = ch.gains().len() as f64;
        let power = ch.gains().iter().map(|z| z.norm_sqr()).sum::<f64>() / m;
        let mean = ch.gains().iter().sum::<C64>() / m;
        assert!((power - 1.0).abs() < 0.05, "power {power}");
        assert!(mean.norm() < 0.05, "mean {mean}");
        let re_var = ch.gains().iter().map(|z| z.re * z.re).sum::<f64>() / m;
        assert!((re_var - 0.5).abs() < 0.03, "re var {re_var}");
    }

    #[test]
    fn row_access_is_one_based() {
        let a = Complex::new(1.0, 2.0);
        let b = Complex::new(-3.0, 0.5);
        let ch = ChannelMatrix::from_rows(&[vec![a], vec![b]]).unwrap();
        assert_eq!(ch.row(2).unwrap()[0], b);
        assert_eq!(ch.row(1).unwrap()[0], a);
        assert!(ch.row(0).is_err());
        assert!(ch.row(3).is_err());

        let g = generate_rayleigh(9, 3, 5).unwrap();
        let last = g.row(9).unwrap();
        assert_eq!(last.len(), 3);
        assert!(last.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert_eq!(last[2], g.gains()[(8, 2)]);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let ch = generate_rayleigh(8, 2, 31).unwrap();
        let back = ChannelMatrix::from_json(&ch.to_json()).unwrap();
        assert_eq!(ch, back);
        for (x, y) in ch.gains().iter().zip(back.gains().iter()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("tas-channel-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.json");
        let ch = generate_rayleigh(8, 2, 3).unwrap();
        ch.save(&path).unwrap();
        assert_eq!(ChannelMatrix::load(&path).unwrap(), ch);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(ChannelMatrix::from_json(""), Err(TasError::Parse { .. })));
        let wrong_cols = r#"{"n_antennas": 2, "n_users": 2,
            "gains_re": [[1.0, 0.0], [1.0]], "gains_im": [[0.0, 0.0], [0.0, 0.0]],
            "seed": 0, "label": "x"}"#;
        match ChannelMatrix::from_json(wrong_cols) {
            Err(TasError::Schema { field, message }) => {
                assert_eq!(field, "gains_re");
                assert!(message.contains("row 2"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
        let truncated = r#"{"n_antennas": 2,
            "n_users": "#;
        match ChannelMatrix::from_json(truncated) {
            Err(TasError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn streams_are_position_derived() {
        let a: Vec<u64> = (0..4).map(|i| trial_seed(11, i)).collect();
        let b: Vec<u64> = (0..4).rev().map(|i| trial_seed(11, i)).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(a[0], a[1]);
    }
}
