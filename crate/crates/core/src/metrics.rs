//! Error and throughput metrics.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::TapChannel;
use crate::error::{Result, SimError};
use crate::pilot::qpsk_bits;

/// Reported in place of `-inf` for an exact match.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Linear ratio to dB with the exact-match sentinel.
pub fn to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
    }
}

/// `10 log10(‖h - ĥ‖² / ‖h‖²)` of two equally shaped sample sets.
pub fn nmse_db(truth: &[Complex64], est: &[Complex64]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(SimError::Length { expected: truth.len(), got: est.len() });
    }
    let den: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        return Err(SimError::ZeroNorm);
    }
    let num: f64 = truth.iter().zip(est).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(to_db(num / den))
}

/// Linear NMSE of per-frame tap channels whose supports may differ.
///
/// Taps are matched by delay; a tap present on one side only counts its
/// full energy as error.
pub fn channel_nmse(truth: &[TapChannel], est: &[TapChannel]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(SimError::Length { expected: truth.len(), got: est.len() });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, e) in truth.iter().zip(est) {
        if t.samples() != e.samples() || t.n_r() != e.n_r() || t.n_u() != e.n_u() {
            return Err(SimError::Invalid("channels differ in shape".into()));
        }
        den += t.energy();
        for u in 0..t.n_u() {
            let mut delays: Vec<usize> = t.delays(u).iter().chain(e.delays(u)).copied().collect();
            delays.sort();
            delays.dedup();
            for d in delays {
                for r in 0..t.n_r() {
                    match (t.seq_at_delay(r, u, d), e.seq_at_delay(r, u, d)) {
                        (Some(a), Some(b)) => num += a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>(),
                        (Some(a), None) | (None, Some(a)) => num += crate::dsp::norm_sqr(a),
                        (None, None) => {}
                    }
                }
            }
        }
    }
    if den == 0.0 {
        return Err(SimError::ZeroNorm);
    }
    Ok(num / den)
}

/// Bit error rate of Gray-mapped QPSK decisions.
pub fn ber(x_hat: &[Complex64], x_true: &[Complex64]) -> Result<f64> {
    if x_hat.len() != x_true.len() {
        return Err(SimError::Length { expected: x_true.len(), got: x_hat.len() });
    }
    if x_true.is_empty() {
        return Err(SimError::Invalid("no symbols to compare".into()));
    }
    let errors: usize = x_hat
        .iter()
        .zip(x_true)
        .map(|(&a, &b)| {
            let (a0, a1) = qpsk_bits(a);
            let (b0, b1) = qpsk_bits(b);
            usize::from(a0 != b0) + usize::from(a1 != b1)
        })
        .sum();
    Ok(errors as f64 / (2 * x_true.len()) as f64)
}

/// `N_r x N_u` channel at time sample `t` and subcarrier `sub` (of `m`).
pub fn frequency_response(h: &TapChannel, t: usize, sub: usize, m: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(h.n_r(), h.n_u(), |r, u| {
        h.delays(u)
            .iter()
            .enumerate()
            .map(|(tap, &l)| {
                let phase = -2.0 * std::f64::consts::PI * ((sub * l) % m) as f64 / m as f64;
                h.seq(r, u, tap)[t] * Complex64::from_polar(1.0, phase)
            })
            .sum()
    })
}

/// Unit-norm zero-forcing precoders (columns) for the channel `h` (`N_r x N_u`),
/// or `None` when the users are not separable.
pub fn zf_precoder(h: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let g = h.transpose();
    let gram = &g * g.adjoint();
    let scale = (0..gram.nrows()).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let chol = gram.cholesky()?;
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| l[(i, i)].re.powi(2) < 1e-12 * scale) {
        return None;
    }
    let mut w = g.adjoint() * chol.inverse();
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n == 0.0 {
            return None;
        }
        col /= Complex64::new(n, 0.0);
    }
    Some(w)
}

/// Sum rate over users with precoders `w` applied to the true channel `h`.
pub fn sum_rate(h: &DMatrix<Complex64>, w: &DMatrix<Complex64>, noise_var: f64) -> f64 {
    let gains = h.transpose() * w;
    (0..h.ncols())
        .map(|u| {
            let signal = gains[(u, u)].norm_sqr();
            let interference: f64 = (0..h.ncols()).filter(|&v| v != u).map(|v| gains[(u, v)].norm_sqr()).sum();
            (1.0 + signal / (interference + noise_var)).log2()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeStats {
    /// Mean sum rate per resource element, bits/s/Hz.
    pub se: f64,
    /// Resource elements whose predicted channel admitted no precoder (counted as zero rate).
    pub skipped: usize,
    pub elements: usize,
}

/// Downlink sum spectral efficiency of one frame with zero-forcing precoders
/// computed from `predicted` and evaluated on `truth`, averaged over the
/// `M` subcarriers of each of the `N` symbols (sampled mid-symbol).
pub fn dl_se(predicted: &TapChannel, truth: &TapChannel, noise_var: f64, m: usize, n: usize) -> Result<SeStats> {
    if predicted.samples() != m * n || truth.samples() != m * n {
        return Err(SimError::Length { expected: m * n, got: predicted.samples().min(truth.samples()) });
    }
    if truth.n_u() > truth.n_r() {
        return Err(SimError::Invalid("zero forcing needs N_u <= N_r".into()));
    }
    let mut total = 0.0;
    let mut skipped = 0;
    for sym in 0..n {
        let t = sym * m + m / 2;
        for sub in 0..m {
            let h_hat = frequency_response(predicted, t, sub, m);
            let h = frequency_response(truth, t, sub, m);
            match zf_precoder(&h_hat) {
                Some(w) => total += sum_rate(&h, &w, noise_var),
                None => skipped += 1,
            }
        }
    }
    let elements = m * n;
    Ok(SeStats { se: total / elements as f64, skipped, elements })
}

/// Ratio of mean spectral efficiencies.
pub fn aser(se_hat: &[f64], se_perfect: &[f64]) -> Result<f64> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let den = mean(se_perfect);
    if den <= 0.0 {
        return Err(SimError::Invalid("perfect-CSI spectral efficiency must be positive".into()));
    }
    Ok(mean(se_hat) / den)
}
