//! Expansion bases: complex-exponential BEM, rotated spatial DFT, Slepian
//! sequences, discrete Legendre polynomials and Savitzky-Golay smoothing.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{ConfigError, Result, SimError};

/// Frequency of CE-BEM term `q`: `2π (q - (Q-1)/2) / MN`.
pub fn ce_frequency(q: usize, q_total: usize, mn: usize) -> f64 {
    2.0 * PI * (q as f64 - (q_total as f64 - 1.0) / 2.0) / mn as f64
}

/// `MN x Q` matrix with orthonormal columns `exp(j ω_q n) / sqrt(MN)`.
pub fn ce_bem(mn: usize, q: usize) -> Result<DMatrix<Complex64>> {
    if q % 2 == 0 {
        return Err(ConfigError::Bound("Q must be odd".into()).into());
    }
    if q > mn {
        return Err(ConfigError::Bound("Q <= M N".into()).into());
    }
    let scale = 1.0 / (mn as f64).sqrt();
    Ok(DMatrix::from_fn(mn, q, |n, col| {
        Complex64::from_polar(scale, ce_frequency(col, q, mn) * n as f64)
    }))
}

/// Rotated inverse DFT `diag(r(ϑ)) F^H` with `r(ϑ)[n] = exp(j n ϑ)`.
pub fn rotated_dft(n_r: usize, theta: f64) -> DMatrix<Complex64> {
    let scale = 1.0 / (n_r as f64).sqrt();
    DMatrix::from_fn(n_r, n_r, |row, col| {
        let phase = row as f64 * (2.0 * PI * col as f64 / n_r as f64 + theta);
        Complex64::from_polar(scale, phase)
    })
}

/// Spatial basis of one user: selected columns of a rotated DFT.
#[derive(Clone, Debug, PartialEq)]
pub struct SrBem {
    pub theta: f64,
    /// Selected DFT columns, sorted.
    pub columns: Vec<usize>,
    /// `N_r x Q_s`, orthonormal columns.
    pub d: DMatrix<Complex64>,
    /// Energy of the coarse vectors outside the selected columns.
    pub residual: f64,
}

impl SrBem {
    /// The full (unrotated) DFT basis, used when `Q_s = N_r` needs no search.
    pub fn identity(n_r: usize) -> Self {
        Self::from_angle(n_r, 0.0, (0..n_r).collect(), 0.0)
    }

    fn from_angle(n_r: usize, theta: f64, columns: Vec<usize>, residual: f64) -> Self {
        let a = rotated_dft(n_r, theta);
        let d = DMatrix::from_fn(n_r, columns.len(), |r, c| a[(r, columns[c])]);
        Self { theta, columns, d, residual }
    }

    pub fn q_s(&self) -> usize {
        self.columns.len()
    }
}

/// Candidate angles: a uniform grid over `[-π/N_r, π/N_r]` plus zero,
/// ordered by magnitude so that ties resolve toward the smallest rotation.
fn rotation_candidates(n_r: usize, grid: usize) -> Vec<f64> {
    let half = PI / n_r as f64;
    let mut c: Vec<f64> = (0..grid)
        .map(|i| -half + 2.0 * half * i as f64 / (grid - 1) as f64)
        .collect();
    c.push(0.0);
    c.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    c
}

/// Score the rotation `theta`: returns the retained columns and the energy left outside them.
fn rotation_residual(coarse: &[DVector<Complex64>], n_r: usize, q_s: usize, theta: f64) -> (Vec<usize>, f64) {
    let a = rotated_dft(n_r, theta);
    let mut weight = vec![0.0; n_r];
    let mut energy = vec![0.0; n_r];
    for c in coarse {
        let s = a.ad_mul(c);
        for (i, v) in s.iter().enumerate() {
            weight[i] += v.norm();
            energy[i] += v.norm_sqr();
        }
    }
    let mut order: Vec<usize> = (0..n_r).collect();
    order.sort_by(|&i, &j| weight[j].total_cmp(&weight[i]).then(i.cmp(&j)));
    let mut keep = order[..q_s].to_vec();
    keep.sort();
    let residual = order[q_s..].iter().map(|&i| energy[i]).sum();
    (keep, residual)
}

/// Grid search for the rotation that concentrates the coarse spatial vectors
/// on `q_s` DFT columns.
pub fn sr_bem_rotation(coarse: &[DVector<Complex64>], n_r: usize, q_s: usize, grid: usize) -> Result<SrBem> {
    if grid < 2 {
        return Err(ConfigError::Bound("rotation grid >= 2".into()).into());
    }
    if q_s == 0 || q_s > n_r {
        return Err(ConfigError::Bound("1 <= Q_s <= N_r".into()).into());
    }
    if let Some(c) = coarse.iter().find(|c| c.len() != n_r) {
        return Err(SimError::Length { expected: n_r, got: c.len() });
    }
    let mut best: Option<(f64, Vec<usize>, f64)> = None;
    for theta in rotation_candidates(n_r, grid) {
        let (cols, res) = rotation_residual(coarse, n_r, q_s, theta);
        if best.as_ref().is_none_or(|b| res < b.2) {
            best = Some((theta, cols, res));
        }
    }
    let (theta, cols, res) = best.expect("at least two candidates");
    Ok(SrBem::from_angle(n_r, theta, cols, res))
}

/// Leading `q_sp` discrete prolate spheroidal sequences of length `len` for
/// normalized bandwidth `nu` (cycles per sample), with their eigenvalues.
pub fn slepian_basis(len: usize, nu: f64, q_sp: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(nu > 0.0 && nu < 0.5) {
        return Err(ConfigError::Bound("0 < f_max T_s < 0.5".into()).into());
    }
    if q_sp == 0 || q_sp > len {
        return Err(ConfigError::Bound("1 <= Q_SP <= M N".into()).into());
    }
    let kernel = slepian_kernel(len, nu);
    let eig = SymmetricEigen::new(kernel);
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut basis = DMatrix::zeros(len, q_sp);
    let mut values = Vec::with_capacity(q_sp);
    for (c, &i) in order.iter().take(q_sp).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // Sign convention: the largest-magnitude entry of the first half is positive.
        let pivot = v.iter().take(len.div_ceil(2)).copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v.neg_mut();
        }
        basis.set_column(c, &v);
        values.push(eig.eigenvalues[i]);
    }
    Ok((basis, values))
}

/// Band-limiting kernel `sin(2πν(n-m)) / (π(n-m))` with diagonal `2ν`.
pub fn slepian_kernel(len: usize, nu: f64) -> DMatrix<f64> {
    DMatrix::from_fn(len, len, |i, j| {
        if i == j {
            2.0 * nu
        } else {
            let d = i as f64 - j as f64;
            (2.0 * PI * nu * d).sin() / (PI * d)
        }
    })
}

/// Legendre polynomials `φ_0..φ_{q-1}` evaluated at the points `t`.
pub fn legendre_at(t: &[f64], q: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(t.len(), q);
    for (row, &x) in t.iter().enumerate() {
        let (mut prev, mut cur) = (0.0, 1.0);
        for k in 0..q {
            out[(row, k)] = cur;
            let next = ((2 * k + 1) as f64 * x * cur - k as f64 * prev) / (k + 1) as f64;
            prev = cur;
            cur = next;
        }
    }
    out
}

/// Uniform grid of `n_points` on `[-1, 1]`.
pub fn dlp_grid(n_points: usize) -> Vec<f64> {
    (0..n_points).map(|i| 2.0 * i as f64 / (n_points - 1) as f64 - 1.0).collect()
}

/// `n_points x q` discrete Legendre matrix on the uniform grid.
pub fn dlp_basis(n_points: usize, q: usize) -> Result<DMatrix<f64>> {
    if n_points < 2 {
        return Err(SimError::Invalid("DLP basis needs at least two points".into()));
    }
    Ok(legendre_at(&dlp_grid(n_points), q))
}

/// `(2 N_sg + 1) x (Q_sg + 1)` Vandermonde matrix, rows `i = -N_sg..=N_sg`.
pub fn sg_basis(n_sg: usize, q_sg: usize) -> Result<DMatrix<f64>> {
    if q_sg >= 2 * n_sg + 1 {
        return Err(ConfigError::Bound("Q_sg < 2 N_sg + 1".into()).into());
    }
    Ok(vandermonde(-(n_sg as isize), 2 * n_sg + 1, q_sg))
}

fn vandermonde(first: isize, rows: usize, degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, degree + 1, |r, c| ((first + r as isize) as f64).powi(c as i32))
}

/// Local polynomial smoother with precomputed weights for every window offset.
#[derive(Clone, Debug)]
pub struct SgFilter {
    window: usize,
    /// `weights[o]` evaluates the fit at window position `o`.
    weights: Vec<Vec<f64>>,
}

impl SgFilter {
    /// Window `2 N_sg + 1`, polynomial order `Q_sg`.
    pub fn new(n_sg: usize, q_sg: usize) -> Result<Self> {
        sg_basis(n_sg, q_sg)?;
        Ok(Self::with_window(2 * n_sg + 1, q_sg))
    }

    /// Arbitrary window length; requires `order < window`.
    fn with_window(window: usize, order: usize) -> Self {
        let b = vandermonde(-((window / 2) as isize), window, order);
        let gram = (b.transpose() * &b).try_inverse().expect("Vandermonde on distinct nodes has full rank");
        let hat = &b * gram * b.transpose();
        let weights = (0..window).map(|o| hat.row(o).iter().copied().collect()).collect();
        Self { window, weights }
    }

    /// Smoother that fits a sequence of `len` samples, shrinking window and
    /// order when the sequence is shorter than the nominal window.
    pub fn adaptive(n_sg: usize, q_sg: usize, len: usize) -> Self {
        let window = (2 * n_sg + 1).min(len).max(1);
        Self::with_window(window, q_sg.min(window - 1))
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Smooth a sequence. Every sample is re-evaluated from the fit over the
    /// window centered on it, shifted inward at the boundaries.
    pub fn smooth<T>(&self, x: &[T]) -> Result<Vec<T>>
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::iter::Sum<T>,
    {
        let len = x.len();
        if self.window > len {
            return Err(ConfigError::Bound("2 N_sg + 1 <= sequence length".into()).into());
        }
        let half = self.window / 2;
        Ok((0..len)
            .map(|k| {
                let start = k.saturating_sub(half).min(len - self.window);
                let w = &self.weights[k - start];
                x[start..start + self.window].iter().zip(w).map(|(&v, &c)| v * c).sum()
            })
            .collect())
    }
}

/// `‖(I - B B^H) H‖_F^2 / ‖H‖_F^2` for an orthonormal basis `B`.
pub fn bem_modeling_error(h: &DMatrix<Complex64>, basis: &DMatrix<Complex64>) -> Result<f64> {
    if h.nrows() != basis.nrows() {
        return Err(SimError::Length { expected: basis.nrows(), got: h.nrows() });
    }
    let total = h.norm_squared();
    if total == 0.0 {
        return Err(SimError::ZeroNorm);
    }
    let proj = basis * basis.ad_mul(h);
    Ok((h - proj).norm_squared() / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormality_error(b: &DMatrix<Complex64>) -> f64 {
        (b.ad_mul(b) - DMatrix::identity(b.ncols(), b.ncols())).norm()
    }

    #[test]
    fn ce_bem_center_and_frequencies() {
        let b = ce_bem(1024, 3).unwrap();
        assert!(orthonormality_error(&b) < 1e-10);
        for n in 0..1024 {
            assert!((b[(n, 1)] - Complex64::new(1.0 / 32.0, 0.0)).norm() < 1e-15);
        }
        assert!((ce_frequency(0, 3, 1024) + 2.0 * PI / 1024.0).abs() < 1e-15);
        assert!((ce_frequency(2, 3, 1024) - 2.0 * PI / 1024.0).abs() < 1e-15);
        assert!(ce_bem(64, 4).is_err());
    }

    #[test]
    fn on_grid_steering_needs_one_column() {
        let n_r = 16;
        let a = rotated_dft(n_r, 0.0);
        let c = a.column(5) * Complex64::new(2.0, -1.0);
        let sr = sr_bem_rotation(&[c.into_owned()], n_r, 1, 64).unwrap();
        assert_eq!(sr.theta, 0.0);
        assert_eq!(sr.columns, vec![5]);
        assert!(sr.residual < 1e-20);
    }

    #[test]
    fn full_order_is_complete() {
        let n_r = 8;
        let c = DVector::from_fn(n_r, |i, _| Complex64::new(i as f64, 1.0 / (1.0 + i as f64)));
        let sr = sr_bem_rotation(&[c.clone()], n_r, n_r, 16).unwrap();
        let proj = &sr.d * sr.d.ad_mul(&c);
        assert!((proj - c).norm() < 1e-10);
        assert!(orthonormality_error(&sr.d) < 1e-10);
    }

    #[test]
    fn off_grid_rotation_beats_plain_dft() {
        let n_r = 16;
        // sin θ midway between DFT bins 3 and 4 (spacing 2/N_r in sin θ).
        let s = (2.0 * 3.5) / n_r as f64;
        let c = DVector::from_fn(n_r, |i, _| Complex64::from_polar(1.0, PI * i as f64 * s));
        let (_, plain) = rotation_residual(&[c.clone()], n_r, 2, 0.0);
        let sr = sr_bem_rotation(&[c], n_r, 2, 64).unwrap();
        assert!(sr.residual < plain);
        assert!(sr.theta.abs() <= PI / n_r as f64 + 1e-15);
    }

    #[test]
    fn rotation_rejects_tiny_grid() {
        assert!(sr_bem_rotation(&[], 4, 2, 1).is_err());
    }

    #[test]
    fn slepian_trace_and_ordering() {
        let (len, nu) = (64, 0.05);
        let kernel = slepian_kernel(len, nu);
        let all = SymmetricEigen::new(kernel).eigenvalues;
        assert!((all.sum() - 2.0 * nu * len as f64).abs() < 1e-8);
        let (b, chi) = slepian_basis(len, nu, 6).unwrap();
        assert!((b.transpose() * &b - DMatrix::identity(6, 6)).norm() < 1e-10);
        assert!(chi[0] > 0.0 && chi[0] < 1.0);
        assert!(chi[0] > chi[1]);
        assert!(chi.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn narrowband_leading_sequence_is_flat() {
        let (b, _) = slepian_basis(64, 1e-3, 1).unwrap();
        let corr: f64 = b.column(0).iter().sum::<f64>() / 8.0;
        assert!(corr.abs() > 0.99);
        assert!(slepian_basis(64, 0.5, 1).is_err());
    }

    #[test]
    fn legendre_values() {
        let omega = dlp_basis(5, 3).unwrap();
        assert!(omega.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(omega[(0, 1)], -1.0);
        assert_eq!(omega[(4, 1)], 1.0);
        let p2 = legendre_at(&[0.5], 3)[(0, 2)];
        assert!((p2 + 0.125).abs() < 1e-15);
        assert!(dlp_basis(1, 1).is_err());
    }

    #[test]
    fn sg_rows() {
        let b = sg_basis(5, 5).unwrap();
        assert_eq!(b.row(5).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.rank(1e-9), 6);
        let small = sg_basis(1, 1).unwrap();
        assert_eq!(small, DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0]));
        assert!(sg_basis(2, 5).is_err());
    }

    #[test]
    fn sg_reproduces_polynomials() {
        let f = SgFilter::new(5, 3).unwrap();
        let x: Vec<f64> = (0..40).map(|k| 0.5 - 0.2 * k as f64 + 0.03 * (k * k) as f64 - 1e-3 * (k as f64).powi(3)).collect();
        let y = f.smooth(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        assert!(f.smooth(&x[..10]).is_err());
    }

    #[test]
    fn modeling_error_extremes() {
        let b = ce_bem(16, 3).unwrap();
        let inside = &b * DMatrix::from_fn(3, 2, |i, j| Complex64::new(i as f64 + 1.0, j as f64));
        assert!(bem_modeling_error(&inside, &b).unwrap() < 1e-12);
        let outside = ce_bem(16, 5).unwrap().column(0).into_owned();
        let outside = DMatrix::from_column_slice(16, 1, outside.as_slice());
        assert!((bem_modeling_error(&outside, &b).unwrap() - 1.0).abs() < 1e-12);
    }
}
