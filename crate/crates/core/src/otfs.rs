//! OTFS modulation, cyclic time-domain channel and the sparse delay-Doppler
//! channel operator.
//!
//! Grids are flat vectors indexed `k = n * M + m` (delay index fastest).
//! Modulation applies `F_N^H ⊗ I_M`, demodulation `F_N ⊗ I_M`, both unitary.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{ChannelRealization, TapChannel};
use crate::dsp::{fft_unitary, ifft_unitary};
use crate::error::{Result, SimError};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn check_len(x: &[Complex64], m: usize, n: usize) -> Result<()> {
    if x.len() != m * n {
        return Err(SimError::Length { expected: m * n, got: x.len() });
    }
    Ok(())
}

/// Transform along the Doppler axis: every delay bin gets an `N`-point DFT.
fn doppler_transform(x: &[Complex64], m: usize, n: usize, inverse: bool) -> Vec<Complex64> {
    let mut out = vec![ZERO; m * n];
    let mut col = vec![ZERO; n];
    for mm in 0..m {
        for (nn, c) in col.iter_mut().enumerate() {
            *c = x[nn * m + mm];
        }
        if inverse {
            ifft_unitary(&mut col);
        } else {
            fft_unitary(&mut col);
        }
        for (nn, c) in col.iter().enumerate() {
            out[nn * m + mm] = *c;
        }
    }
    out
}

/// Time-domain frame `(F_N^H ⊗ I_M) x_dd`.
pub fn otfs_modulate(x_dd: &[Complex64], m: usize, n: usize) -> Result<Vec<Complex64>> {
    check_len(x_dd, m, n)?;
    Ok(doppler_transform(x_dd, m, n, true))
}

/// Delay-Doppler grid `(F_N ⊗ I_M) r`.
pub fn otfs_demodulate(r: &[Complex64], m: usize, n: usize) -> Result<Vec<Complex64>> {
    check_len(r, m, n)?;
    Ok(doppler_transform(r, m, n, false))
}

/// Circularly complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Pass one frame of per-user signals through the taps and add noise.
///
/// `out_r[t] = Σ_u Σ_l h_{r,u,l}[t-l] s_u[t-l] + w[t]` with indices mod `MN`.
pub fn apply_taps<R: Rng + ?Sized>(
    signals: &[Vec<Complex64>],
    taps: &TapChannel,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<Vec<Complex64>>> {
    let len = taps.samples();
    if signals.len() != taps.n_u() {
        return Err(SimError::Length { expected: taps.n_u(), got: signals.len() });
    }
    for s in signals {
        if s.len() != len {
            return Err(SimError::Length { expected: len, got: s.len() });
        }
    }
    let mut out = vec![vec![ZERO; len]; taps.n_r()];
    for (r, y) in out.iter_mut().enumerate() {
        for (u, s) in signals.iter().enumerate() {
            for (tap, &l) in taps.delays(u).iter().enumerate() {
                let h = taps.seq(r, u, tap);
                for t in 0..len {
                    let src = (t + len - l % len) % len;
                    y[t] += h[src] * s[src];
                }
            }
        }
        if noise_var > 0.0 {
            for v in y.iter_mut() {
                *v += complex_gaussian(rng, noise_var);
            }
        }
    }
    Ok(out)
}

/// Receive frame `frame` of a realization at every antenna.
pub fn apply_channel<R: Rng + ?Sized>(
    signals: &[Vec<Complex64>],
    real: &ChannelRealization,
    frame: usize,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<Vec<Complex64>>> {
    apply_taps(signals, &real.frame(frame)?, noise_var, rng)
}

/// Sparse `MN x MN` operator in compressed-column form.
#[derive(Clone, Debug, PartialEq)]
pub struct EffChannel {
    size: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<Complex64>,
}

impl EffChannel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.rows[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    /// `y += H x`.
    pub fn mul_add(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (j, &xj) in x.iter().enumerate() {
            if xj == ZERO {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.rows[k]] += self.vals[k] * xj;
            }
        }
    }

    /// `x += H^H y`.
    pub fn adjoint_mul_add(&self, y: &[Complex64], x: &mut [Complex64]) {
        for (j, xj) in x.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc += self.vals[k].conj() * y[self.rows[k]];
            }
            *xj += acc;
        }
    }

    pub fn row_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.size];
        for &r in &self.rows {
            counts[r] += 1;
        }
        counts
    }

    pub fn col_counts(&self) -> Vec<usize> {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let mut d = nalgebra::DMatrix::zeros(self.size, self.size);
        for j in 0..self.size {
            for (r, v) in self.column(j) {
                d[(r, j)] += v;
            }
        }
        d
    }
}

/// `B_r H_T B_t` for one (antenna, user) pair of a single-frame tap channel.
///
/// Column `j = n0 * M + m0` only touches delay bins `(m0 + l) mod M`, so each
/// tap contributes one `N`-point DFT per column.
pub fn effective_channel_pair(taps: &TapChannel, r: usize, u: usize, m: usize, n: usize) -> EffChannel {
    let mn = m * n;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let mut col_ptr = Vec::with_capacity(mn + 1);
    let mut rows = Vec::new();
    let mut vals = Vec::new();
    let mut z = vec![ZERO; n];
    col_ptr.push(0);
    for j in 0..mn {
        let (n0, m0) = (j / m, j % m);
        for (tap, &l) in taps.delays(u).iter().enumerate() {
            let h = taps.seq(r, u, tap);
            z.iter_mut().for_each(|v| *v = ZERO);
            let m_out = (m0 + l) % m;
            let carry = (m0 + l) / m;
            for nn in 0..n {
                let src = nn * m + m0;
                let phase = 2.0 * std::f64::consts::PI * ((nn * n0) % n) as f64 / n as f64;
                let s = Complex64::from_polar(inv_sqrt_n, phase);
                z[(nn + carry) % n] += h[src] * s;
            }
            fft_unitary(&mut z);
            for (nn, v) in z.iter().enumerate() {
                if *v != ZERO {
                    rows.push(nn * m + m_out);
                    vals.push(*v);
                }
            }
        }
        col_ptr.push(rows.len());
    }
    EffChannel { size: mn, col_ptr, rows, vals }
}

/// Effective channels of every (antenna, user) pair, indexed `[r][u]`.
pub fn effective_channels(taps: &TapChannel, m: usize, n: usize) -> Vec<Vec<EffChannel>> {
    (0..taps.n_r())
        .map(|r| (0..taps.n_u()).map(|u| effective_channel_pair(taps, r, u, m, n)).collect())
        .collect()
}

pub fn build_effective_channel(real: &ChannelRealization, frame: usize, m: usize, n: usize) -> Result<Vec<Vec<EffChannel>>> {
    Ok(effective_channels(&real.frame(frame)?, m, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
        (0..len).map(|_| complex_gaussian(rng, 1.0)).collect()
    }

    fn dense_modulator(m: usize, n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(m * n, m * n, |row, col| {
            if row % m != col % m {
                return ZERO;
            }
            crate::dsp::dft_entry(row / m, col / m, n).conj()
        })
    }

    #[test]
    fn unit_impulse_modulates_to_kronecker_column() {
        let (m, n) = (4, 8);
        let mut x = vec![ZERO; m * n];
        x[0] = Complex64::new(1.0, 0.0);
        let s = otfs_modulate(&x, m, n).unwrap();
        for (k, v) in s.iter().enumerate() {
            let expect = if k % m == 0 { 1.0 / (n as f64).sqrt() } else { 0.0 };
            assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn modulation_round_trip_and_norm() {
        let (m, n) = (8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, m * n);
        let s = otfs_modulate(&x, m, n).unwrap();
        let energy = |v: &[Complex64]| crate::dsp::norm_sqr(v).sqrt();
        assert!((energy(&s) - energy(&x)).abs() < 1e-12);
        let back = otfs_demodulate(&s, m, n).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
        let dense = dense_modulator(m, n) * DMatrix::from_column_slice(m * n, 1, &x);
        for (a, b) in dense.iter().zip(&s) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(matches!(otfs_modulate(&x[1..], m, n), Err(SimError::Length { .. })));
    }

    fn constant_taps(delay: usize, gain: Complex64, len: usize) -> TapChannel {
        let mut t = TapChannel::zeros(1, vec![vec![delay]], len);
        t.seq_mut(0, 0, 0).iter_mut().for_each(|v| *v = gain);
        t
    }

    #[test]
    fn zero_delay_unit_tap_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_vec(&mut rng, 16);
        let out = apply_taps(&[s.clone()], &constant_taps(0, Complex64::new(1.0, 0.0), 16), 0.0, &mut rng).unwrap();
        assert_eq!(out[0], s);
    }

    #[test]
    fn delay_two_is_cyclic_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_vec(&mut rng, 16);
        let out = apply_taps(&[s.clone()], &constant_taps(2, Complex64::new(1.0, 0.0), 16), 0.0, &mut rng).unwrap();
        for t in 0..16 {
            assert_eq!(out[0][t], s[(t + 14) % 16]);
        }
    }

    #[test]
    fn noise_variance_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let len = 10_000;
        let taps = constant_taps(0, ZERO, len);
        let out = apply_taps(&[vec![ZERO; len]], &taps, 1.0, &mut rng).unwrap();
        let var = crate::dsp::norm_sqr(&out[0]) / len as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn constant_zero_delay_gain_gives_scaled_identity() {
        let (m, n) = (8, 4);
        let g = Complex64::new(0.3, -1.1);
        let h = effective_channel_pair(&constant_taps(0, g, m * n), 0, 0, m, n).to_dense();
        let expect = DMatrix::<Complex64>::identity(m * n, m * n) * g;
        assert!((h - expect).norm() < 1e-12);
    }

    fn random_taps(rng: &mut ChaCha8Rng, n_r: usize, delays: Vec<Vec<usize>>, len: usize) -> TapChannel {
        let mut t = TapChannel::zeros(n_r, delays, len);
        for c in 0..t.columns() {
            for v in t.column_mut(c) {
                *v = complex_gaussian(rng, 1.0);
            }
        }
        t
    }

    #[test]
    fn sparse_operator_matches_dense_product() {
        let (m, n) = (8, 4);
        let mn = m * n;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let taps = random_taps(&mut rng, 2, vec![vec![0, 3, 7], vec![5]], mn);
        let b_t = dense_modulator(m, n);
        let b_r = b_t.adjoint();
        let eff = effective_channels(&taps, m, n);
        for r in 0..2 {
            for u in 0..2 {
                let mut h_t = DMatrix::<Complex64>::zeros(mn, mn);
                for (tap, &l) in taps.delays(u).iter().enumerate() {
                    for t in 0..mn {
                        let src = (t + mn - l) % mn;
                        h_t[(t, src)] += taps.seq(r, u, tap)[src];
                    }
                }
                let dense = &b_r * h_t * &b_t;
                assert!((dense - eff[r][u].to_dense()).norm() < 1e-10);
                let k = taps.delays(u).len();
                assert!(eff[r][u].row_counts().iter().all(|&c| c <= k * n));
                assert!(eff[r][u].col_counts().iter().all(|&c| c <= k * n));
            }
        }
    }

    #[test]
    fn end_to_end_matches_operator() {
        let (m, n) = (8, 4);
        let mn = m * n;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let taps = random_taps(&mut rng, 3, vec![vec![1, 2], vec![0, 6]], mn);
        let xs: Vec<Vec<Complex64>> = (0..2).map(|_| random_vec(&mut rng, mn)).collect();
        let signals: Vec<_> = xs.iter().map(|x| otfs_modulate(x, m, n).unwrap()).collect();
        let rx = apply_taps(&signals, &taps, 0.0, &mut rng).unwrap();
        let eff = effective_channels(&taps, m, n);
        for r in 0..3 {
            let y = otfs_demodulate(&rx[r], m, n).unwrap();
            let mut expect = vec![ZERO; mn];
            for u in 0..2 {
                eff[r][u].mul_add(&xs[u], &mut expect);
            }
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn adjoint_is_consistent() {
        let (m, n) = (4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let taps = random_taps(&mut rng, 1, vec![vec![0, 2]], m * n);
        let h = effective_channel_pair(&taps, 0, 0, m, n);
        let x = random_vec(&mut rng, m * n);
        let y = random_vec(&mut rng, m * n);
        let mut hx = vec![ZERO; m * n];
        h.mul_add(&x, &mut hx);
        let mut hy = vec![ZERO; m * n];
        h.adjoint_mul_add(&y, &mut hy);
        let lhs: Complex64 = y.iter().zip(&hx).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = hy.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-10);
    }
}
