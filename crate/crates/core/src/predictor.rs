//! Downlink channel prediction from uplink estimates.
//!
//! The main predictor expands every tap sequence of every frame on a Slepian
//! basis, treats the per-frame coefficients as trajectories over the frame
//! index and extends them by iterated Legendre-polynomial extrapolation with
//! Savitzky-Golay smoothing. Two baselines are provided: an autoregressive
//! predictor on the same coefficient trajectories and a Prony predictor on the
//! raw per-sample gain sequences.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::basis::{dlp_basis, legendre_at, SgFilter};
use crate::channel::TapChannel;
use crate::error::{ConfigError, Result, SimError};

/// Frame-major Slepian coefficients: row = frame, column = `seq * Q_SP + q`
/// where `seq` enumerates the tap sequences of a [`TapChannel`].
#[derive(Clone, Debug, PartialEq)]
pub struct SlepianCoeffs {
    pub c: DMatrix<Complex64>,
    pub n_r: usize,
    pub delays: Vec<Vec<usize>>,
    pub q_sp: usize,
}

impl SlepianCoeffs {
    pub fn frames(&self) -> usize {
        self.c.nrows()
    }

    pub fn with_rows(&self, c: DMatrix<Complex64>) -> Self {
        Self { c, n_r: self.n_r, delays: self.delays.clone(), q_sp: self.q_sp }
    }
}

/// Project every frame on the Slepian basis: `C = B_SP^T H`.
pub fn slepian_fit(frames: &[TapChannel], b_sp: &DMatrix<f64>) -> Result<SlepianCoeffs> {
    let first = frames.first().ok_or_else(|| SimError::Invalid("no frames to fit".into()))?;
    let (len, q_sp) = (b_sp.nrows(), b_sp.ncols());
    let cols = first.columns();
    let mut c = DMatrix::zeros(frames.len(), cols * q_sp);
    for (f, frame) in frames.iter().enumerate() {
        if frame.samples() != len {
            return Err(SimError::Length { expected: len, got: frame.samples() });
        }
        if frame.all_delays() != first.all_delays() || frame.n_r() != first.n_r() {
            return Err(SimError::Invalid("frames differ in support".into()));
        }
        for s in 0..cols {
            let h = frame.column(s);
            for q in 0..q_sp {
                c[(f, s * q_sp + q)] = b_sp.column(q).iter().zip(h).map(|(&b, &v)| v * b).sum();
            }
        }
    }
    Ok(SlepianCoeffs { c, n_r: first.n_r(), delays: first.all_delays().to_vec(), q_sp })
}

/// Inverse of [`slepian_fit`]: one tap channel per coefficient row.
pub fn reconstruct_dl(coeffs: &SlepianCoeffs, b_sp: &DMatrix<f64>) -> Result<Vec<TapChannel>> {
    let (len, q_sp) = (b_sp.nrows(), b_sp.ncols());
    if q_sp != coeffs.q_sp {
        return Err(SimError::Length { expected: coeffs.q_sp, got: q_sp });
    }
    let template = TapChannel::zeros(coeffs.n_r, coeffs.delays.clone(), len);
    if coeffs.c.ncols() != template.columns() * q_sp {
        return Err(SimError::Length { expected: template.columns() * q_sp, got: coeffs.c.ncols() });
    }
    Ok((0..coeffs.frames())
        .map(|f| {
            let mut out = template.clone();
            for s in 0..out.columns() {
                let col = out.column_mut(s);
                for q in 0..q_sp {
                    let a = coeffs.c[(f, s * q_sp + q)];
                    for (v, &b) in col.iter_mut().zip(b_sp.column(q).iter()) {
                        *v += a * b;
                    }
                }
            }
            out
        })
        .collect())
}

/// Least-squares coefficients of `traj` on the real basis `omega`.
fn fit_real_basis(omega: &DMatrix<f64>, traj: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let gram = omega.transpose() * omega;
    let chol = gram
        .cholesky()
        .ok_or_else(|| SimError::Invalid("Legendre basis is rank deficient".into()))?;
    let rhs = omega.transpose().map(|v| Complex64::new(v, 0.0)) * traj;
    let inv = chol.inverse().map(|v| Complex64::new(v, 0.0));
    Ok(inv * rhs)
}

fn real_times_complex(a: &DMatrix<f64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.map(|v| Complex64::new(v, 0.0)) * b
}

/// Smoothing parameters applied to the coefficient trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SbeeParams {
    pub n_f: usize,
    pub delta: usize,
    pub q_dlp: usize,
    pub n_sg: usize,
    pub q_sg: usize,
}

/// Extend a coefficient trajectory (rows = frames) by `n_f` rows.
///
/// Each round evaluates the current Legendre fit beyond the right end of its
/// grid for the next `Δ` frames, appends them, smooths the whole trajectory
/// and refits on the grid of the new length.
pub fn sbee_predict(traj: &DMatrix<Complex64>, p: SbeeParams) -> Result<DMatrix<Complex64>> {
    let n_t = traj.nrows();
    if n_t < 2 {
        return Err(ConfigError::Bound("N_t >= 2".into()).into());
    }
    if p.delta == 0 || p.n_f % p.delta != 0 {
        return Err(ConfigError::Bound("N_f divisible by a positive step Delta".into()).into());
    }
    if p.q_dlp == 0 || p.q_dlp > n_t {
        return Err(ConfigError::Bound("1 <= Q_DLP <= N_t".into()).into());
    }
    if p.q_sg >= 2 * p.n_sg + 1 {
        return Err(ConfigError::Bound("Q_sg < 2 N_sg + 1".into()).into());
    }
    let cols = traj.ncols();
    let mut current = traj.clone();
    let mut fit = fit_real_basis(&dlp_basis(n_t, p.q_dlp)?, &current)?;
    for _ in 0..p.n_f / p.delta {
        let len = current.nrows();
        let t: Vec<f64> = (len..len + p.delta).map(|i| 2.0 * i as f64 / (len - 1) as f64 - 1.0).collect();
        let next = real_times_complex(&legendre_at(&t, p.q_dlp), &fit);
        let mut grown = DMatrix::zeros(len + p.delta, cols);
        grown.rows_mut(0, len).copy_from(&current);
        grown.rows_mut(len, p.delta).copy_from(&next);

        let filter = SgFilter::adaptive(p.n_sg, p.q_sg, grown.nrows());
        for c in 0..cols {
            let smoothed = filter.smooth(grown.column(c).as_slice())?;
            grown.column_mut(c).copy_from_slice(&smoothed);
        }
        fit = fit_real_basis(&dlp_basis(grown.nrows(), p.q_dlp)?, &grown)?;
        current = grown;
    }
    Ok(current.rows(n_t, p.n_f).into_owned())
}

/// Least squares through an SVD with relative singular-value cutoff.
/// Returns the solution and whether any singular value was truncated.
fn robust_ls(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> (DMatrix<Complex64>, bool) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-12 * smax.max(f64::MIN_POSITIVE);
    let truncated = svd.singular_values.iter().any(|&s| s <= eps) || a.nrows() < a.ncols();
    let x = svd.solve(b, eps).unwrap_or_else(|_| DMatrix::zeros(a.ncols(), b.ncols()));
    (x, truncated)
}

/// Forecast of one complex series by a Yule-Walker autoregression.
///
/// The biased autocorrelation keeps the fitted filter minimum phase, so the
/// forecast never grows without bound. The order is reduced when the series
/// is too short. Returns the forecast and whether the fit was degenerate.
pub fn ar_forecast(x: &[Complex64], order: usize, horizon: usize) -> (Vec<Complex64>, bool) {
    let n = x.len();
    let order = order.min(n.saturating_sub(1));
    if order == 0 {
        let last = x.last().copied().unwrap_or_default();
        return (vec![last; horizon], true);
    }
    let r: Vec<Complex64> = (0..=order)
        .map(|k| (k..n).map(|t| x[t] * x[t - k].conj()).sum::<Complex64>() / n as f64)
        .collect();
    let lag = |k: isize| if k >= 0 { r[k as usize] } else { r[(-k) as usize].conj() };
    let toeplitz = DMatrix::from_fn(order, order, |i, j| lag(i as isize - j as isize));
    let rhs = DMatrix::from_fn(order, 1, |i, _| r[i + 1]);
    let (coef, flag) = match toeplitz.cholesky() {
        Some(ch) if r[0].re > 0.0 => (ch.solve(&rhs), false),
        _ => (DMatrix::zeros(order, 1), true),
    };
    let mut hist = x.to_vec();
    for _ in 0..horizon {
        let m = hist.len();
        let next = (0..order).map(|i| coef[(i, 0)] * hist[m - 1 - i]).sum();
        hist.push(next);
    }
    (hist[n..].to_vec(), flag)
}

/// Roots of the monic polynomial `z^p + c[0] z^{p-1} + ... + c[p-1]`
/// by simultaneous Weierstrass iteration.
pub fn polynomial_roots(c: &[Complex64]) -> Vec<Complex64> {
    let p = c.len();
    let eval = |z: Complex64| c.iter().fold(Complex64::new(1.0, 0.0), |acc, &ci| acc * z + ci);
    let scale = 1.0 + c.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..p).map(|i| seed.powu(i as u32) * scale.min(2.0)).collect();
    for _ in 0..1000 {
        let mut moved = 0.0f64;
        for i in 0..p {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..p {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            if den.norm() == 0.0 {
                den = Complex64::new(1e-12, 0.0);
            }
            let step = eval(z[i]) / den;
            z[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-14 {
            break;
        }
    }
    z
}

/// Prony forecast of one complex series: linear-prediction polynomial by
/// least squares, its roots as modes (clamped to the unit circle), mode
/// amplitudes by least squares. The flag reports clamping or truncation.
pub fn prony_forecast(x: &[Complex64], order: usize, horizon: usize) -> (Vec<Complex64>, bool) {
    let len = x.len();
    let order = order.min(len / 2).max(1);
    if len < 2 {
        return (vec![x.first().copied().unwrap_or_default(); horizon], true);
    }
    let rows = len - order;
    let a = DMatrix::from_fn(rows, order, |t, i| x[t + order - 1 - i]);
    let b = DMatrix::from_fn(rows, 1, |t, _| -x[t + order]);
    let (lp, mut flag) = robust_ls(&a, &b);
    let coeffs: Vec<Complex64> = lp.column(0).iter().copied().collect();
    let mut roots = polynomial_roots(&coeffs);
    for z in roots.iter_mut() {
        if z.norm() > 1.0 {
            *z /= z.norm();
            flag = true;
        }
    }
    let v = DMatrix::from_fn(len, order, |t, i| roots[i].powu(t as u32));
    let rhs = DMatrix::from_column_slice(len, 1, x);
    let (amp, truncated) = robust_ls(&v, &rhs);
    let forecast = (len..len + horizon)
        .map(|t| (0..order).map(|i| amp[(i, 0)] * roots[i].powu(t as u32)).sum())
        .collect();
    (forecast, flag || truncated)
}

/// Downlink predictor choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predictor {
    Sbee,
    Ar,
    Prony,
    None,
}

impl Predictor {
    pub fn name(self) -> &'static str {
        match self {
            Predictor::Sbee => "sbee",
            Predictor::Ar => "ar",
            Predictor::Prony => "prony",
            Predictor::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Predictor::Sbee, Predictor::Ar, Predictor::Prony, Predictor::None].into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug)]
pub struct DlPrediction {
    pub predictor: Predictor,
    pub frames: Vec<TapChannel>,
    /// Some fit was rank deficient or unstable and was regularized.
    pub regularized: bool,
}

/// Predictor inputs shared by all methods.
#[derive(Clone, Debug)]
pub struct PredictSetup<'a> {
    pub b_sp: &'a DMatrix<f64>,
    pub sbee: SbeeParams,
    pub ar_order: usize,
    pub n_vp: usize,
}

/// Predict `n_f` downlink frames from uplink frames sharing one support.
pub fn predict(ul: &[TapChannel], predictor: Predictor, setup: &PredictSetup) -> Result<DlPrediction> {
    let n_f = setup.sbee.n_f;
    let first = ul.first().ok_or_else(|| SimError::Invalid("no uplink frames".into()))?;
    let mut regularized = false;
    let frames = match predictor {
        Predictor::None => Vec::new(),
        Predictor::Sbee => {
            let fit = slepian_fit(ul, setup.b_sp)?;
            let pred = sbee_predict(&fit.c, setup.sbee)?;
            reconstruct_dl(&fit.with_rows(pred), setup.b_sp)?
        }
        Predictor::Ar => {
            let fit = slepian_fit(ul, setup.b_sp)?;
            let mut pred = DMatrix::zeros(n_f, fit.c.ncols());
            for c in 0..fit.c.ncols() {
                let series: Vec<Complex64> = fit.c.column(c).iter().copied().collect();
                let (f, flag) = ar_forecast(&series, setup.ar_order, n_f);
                regularized |= flag;
                pred.column_mut(c).copy_from_slice(&f);
            }
            reconstruct_dl(&fit.with_rows(pred), setup.b_sp)?
        }
        Predictor::Prony => {
            let joined = TapChannel::concat(ul)?;
            let len = first.samples();
            let mut out = TapChannel::zeros(first.n_r(), first.all_delays().to_vec(), n_f * len);
            for c in 0..joined.columns() {
                let (f, flag) = prony_forecast(joined.column(c), setup.n_vp, n_f * len);
                regularized |= flag;
                out.column_mut(c).copy_from_slice(&f);
            }
            (0..n_f).map(|f| out.window(f * len, len)).collect::<Result<_>>()?
        }
    };
    Ok(DlPrediction { predictor, frames, regularized })
}
