//! Small dense complex helpers shared by the precoders and the oracles.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Paper-convention Gram matrix `HᵀH*` (K×K, Hermitian).
///
/// This is the entrywise conjugate of the textbook `HᴴH`; with this
/// convention appending the row `gᵀ` adds `g gᴴ`.
pub fn gram(h: &CMatrix) -> CMatrix {
    h.transpose() * h.map(|z| z.conj())
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hermitian_inverse(m: &CMatrix) -> Option<CMatrix> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn trace_re(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn frobenius_sqr(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_frobenius_error(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    (diff / frobenius_sqr(b).max(f64::MIN_POSITIVE)).sqrt()
}

/// `xᴴ y`.
pub fn inner(x: &CVector, y: &CVector) -> C64 {
    x.dotc(y)
}

/// Appends `row` (as a `1×K` row) below `m`.
pub fn append_row(m: &CMatrix, row: impl Iterator<Item = C64>) -> CMatrix {
    let (l, k) = m.shape();
    let mut out = m.clone().insert_row(l, Complex::new(0.0, 0.0));
    for (j, z) in row.take(k).enumerate() {
        out[(l, j)] = z;
    }
    out
}

pub fn identity(k: usize) -> CMatrix {
    DMatrix::identity(k, k)
}

pub fn zeros(r: usize, c: usize) -> CMatrix {
    DMatrix::zeros(r, c)
}

pub fn zeros_vec(k: usize) -> CVector {
    DVector::zeros(k)
}
