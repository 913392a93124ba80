//! Acceptance checks with pinned tolerances.
//!
//! Each check returns a [`Verdict`] holding the measured quantities, so the
//! runner can print one line per criterion whether it passes or not.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{bem_modeling_error, ce_bem, ce_frequency, rotated_dft, slepian_basis, SgFilter};
use crate::channel::{gen_gain_process, gen_path_geometry, ChannelRealization, TapChannel};
use crate::dsp::dft_entry;
use crate::error::Result;
use crate::estimator::{
    coeffs_to_channel, dense_least_squares, Block, form_measurements, sg_smooth, vbl_somp, Estimator, MeasurementSystem,
    SparseCoeffs,
};
use crate::harness::{run_campaign, write_csv, Axis, CampaignSpec, PointResult, Selection, TrialResult};
use crate::metrics::to_db;
use crate::otfs::{apply_taps, complex_gaussian, otfs_demodulate, otfs_modulate};
use crate::pilot::{assemble_frame, build_pattern_with, precode, random_qpsk};
use crate::predictor::{predict, reconstruct_dl, sbee_predict, slepian_fit, PredictSetup, Predictor, SbeeParams};
use crate::SimConfig;

/// Outcome of one criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// A named criterion and its check.
pub struct Criterion {
    pub name: &'static str,
    pub check: fn() -> Result<Verdict>,
}

/// Every criterion, in reporting order.
pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { name: "linearization", check: linearization },
        Criterion { name: "shift-identity", check: shift_identity },
        Criterion { name: "orthonormality", check: orthonormality },
        Criterion { name: "vbl-exact-recovery", check: vbl_exact_recovery },
        Criterion { name: "bem-error-trend", check: bem_error_trend },
        Criterion { name: "prediction-floor", check: prediction_floor },
        Criterion { name: "polynomial-exactness", check: polynomial_exactness },
        Criterion { name: "estimator-ordering", check: estimator_ordering },
        Criterion { name: "iteration-convergence", check: iteration_convergence },
        Criterion { name: "pilot-overhead-plateau", check: overhead_plateau },
        Criterion { name: "dl-se-ratio", check: dl_se_ratio },
        Criterion { name: "determinism", check: determinism },
    ]
}

/// Run one criterion and time it.
pub fn run(c: &Criterion) -> (Verdict, f64) {
    let start = Instant::now();
    let v = (c.check)().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
    (v, start.elapsed().as_secs_f64())
}

const MC_TRIALS: usize = 200;

fn realization(cfg: &SimConfig, seed: u64) -> Result<ChannelRealization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = gen_path_geometry(cfg, &mut rng)?;
    Ok(gen_gain_process(&geometry, cfg))
}

fn random_spatial(rng: &mut ChaCha8Rng, n_r: usize, q_s: usize, n_u: usize) -> Vec<DMatrix<Complex64>> {
    (0..n_u)
        .map(|_| rotated_dft(n_r, rng.random_range(0.0..0.1)).columns(0, q_s).into_owned())
        .collect()
}

fn diff_energy(a: &TapChannel, b: &TapChannel) -> f64 {
    (0..a.columns())
        .map(|c| a.column(c).iter().zip(b.column(c)).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>())
        .sum()
}

fn identity_error(gram: &DMatrix<Complex64>) -> f64 {
    (gram - DMatrix::<Complex64>::identity(gram.nrows(), gram.ncols())).norm()
}

fn dense_operator(len: usize, f: impl Fn(&[Complex64]) -> Result<Vec<Complex64>>) -> Result<DMatrix<Complex64>> {
    let mut out = DMatrix::zeros(len, len);
    for j in 0..len {
        let mut e = vec![Complex64::new(0.0, 0.0); len];
        e[j] = Complex64::new(1.0, 0.0);
        out.column_mut(j).copy_from_slice(&f(&e)?);
    }
    Ok(out)
}

/// Noiseless frame through a channel synthesized from random sparse
/// coefficients; the sampled observations must equal `Φ̄ S̄`.
fn linearization() -> Result<Verdict> {
    let (m, n, q, g, n_u, n_r, q_s, l) = (32, 4, 3, 12, 2, 4, 2, 8);
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = build_pattern_with(m, n, q, g, n_u, 1.0, &mut rng)?;
        let spatial = random_spatial(&mut rng, n_r, q_s, n_u);
        let mut coeffs = SparseCoeffs::zeros(l, n_u, q_s, q);
        for (u, delays) in [[0usize, 3, 7], [3, 5, 6]].iter().enumerate() {
            for &d in delays {
                coeffs.support.push(Block { delay: d, user: u, common: d == 3 });
                for s in 0..q_s {
                    for c in 0..q {
                        let row = coeffs.row(d, u, s);
                        coeffs.s[(row, c)] = complex_gaussian(&mut rng, 1.0);
                    }
                }
            }
        }
        let taps = coeffs_to_channel(&coeffs, &spatial, m * n);
        let signals = (0..n_u)
            .map(|u| Ok(assemble_frame(&pattern, &random_qpsk(&mut rng, pattern.data_len()), u)?.time_signal()))
            .collect::<Result<Vec<_>>>()?;
        let rx = apply_taps(&signals, &taps, 0.0, &mut rng)?;
        let y_dd = rx.iter().map(|r| otfs_demodulate(r, m, n)).collect::<Result<Vec<_>>>()?;
        let sys = form_measurements(&y_dd, &pattern, &spatial, l)?;
        let rel = (sys.y() - sys.apply(&coeffs.s)).norm() / sys.y().norm();
        worst = worst.max(rel);
    }
    Ok(Verdict::new(worst < 1e-8, format!("max relative residual {worst:.2e} (< 1e-8)")))
}

/// `U_c^H U_q' = Π^{q'-c}` per antenna, with `U_q = B_r diag(b_q) F_MN^H`.
fn shift_identity() -> Result<Verdict> {
    let (m, n, q_total) = (8, 4, 3);
    let mn = m * n;
    let f = DMatrix::from_fn(mn, mn, |k, t| dft_entry(k, t, mn));
    let b_r = dense_operator(mn, |x| otfs_demodulate(x, m, n))?;
    let u = |q: usize| {
        let d = DMatrix::from_fn(mn, mn, |a, b| {
            if a == b {
                Complex64::from_polar(1.0, ce_frequency(q, q_total, mn) * a as f64)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        &b_r * d * f.adjoint()
    };
    let c = (q_total - 1) / 2;
    let u_c = u(c);
    let mut worst: f64 = 0.0;
    for qp in 0..q_total {
        let shift = qp as isize - c as isize;
        let pi = DMatrix::from_fn(mn, mn, |a, b| {
            let src = (a as isize - shift).rem_euclid(mn as isize) as usize;
            if b == src {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        worst = worst.max((u_c.adjoint() * u(qp) - pi).norm());
    }
    Ok(Verdict::new(worst < 1e-10, format!("max Frobenius error {worst:.2e} (< 1e-10)")))
}

fn orthonormality() -> Result<Verdict> {
    let cfg = SimConfig::desk();
    let (m, n, mn) = (cfg.m, cfg.n, cfg.mn());
    let ce = ce_bem(mn, cfg.q)?;
    let e_ce = identity_error(&ce.ad_mul(&ce));
    let (b_sp, _) = slepian_basis(mn, cfg.nu(), cfg.q_sp)?;
    let e_sp = (b_sp.transpose() * &b_sp - DMatrix::<f64>::identity(cfg.q_sp, cfg.q_sp)).norm();
    let p = dense_operator(mn, |x| precode(x, m, n))?;
    let e_p = identity_error(&p.ad_mul(&p)).max(identity_error(&(&p * p.adjoint())));
    let b_r = dense_operator(mn, |x| otfs_demodulate(x, m, n))?;
    let b_t = dense_operator(mn, |x| otfs_modulate(x, m, n))?;
    let e_r = identity_error(&b_r.ad_mul(&b_r));
    let e_t = identity_error(&b_t.ad_mul(&b_t));
    let worst = e_ce.max(e_sp).max(e_p).max(e_r).max(e_t);
    Ok(Verdict::new(
        worst < 1e-10,
        format!("CE-BEM {e_ce:.1e}, Slepian {e_sp:.1e}, precoder {e_p:.1e}, B_r {e_r:.1e}, B_t {e_t:.1e} (< 1e-10)"),
    ))
}

/// Exhaustive least squares over every support with one shared delay and
/// one distinct individual delay per user.
fn exhaustive_oracle(phi: &DMatrix<Complex64>, y: &DMatrix<Complex64>, sys: &MeasurementSystem) -> Option<(BTreeSet<(usize, usize)>, DMatrix<Complex64>)> {
    let l = sys.l;
    let mut best: Option<(f64, BTreeSet<(usize, usize)>, DMatrix<Complex64>)> = None;
    for c in 0..l {
        for a in (0..l).filter(|&a| a != c) {
            for b in (0..l).filter(|&b| b != c && b != a) {
                let blocks = [(c, 0), (c, 1), (a, 0), (b, 1)];
                let cols: Vec<usize> = blocks
                    .iter()
                    .flat_map(|&(d, u)| (0..sys.q_s).map(move |s| (d, u, s)))
                    .map(|col| sys.column_index(col))
                    .collect();
                let sub = DMatrix::from_fn(phi.nrows(), cols.len(), |r, k| phi[(r, cols[k])]);
                let Some(x) = dense_least_squares(&sub, y) else { continue };
                let res = (y - &sub * &x).norm();
                if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
                    let mut full = DMatrix::zeros(sys.n_cols(), y.ncols());
                    for (k, &col) in cols.iter().enumerate() {
                        full.row_mut(col).copy_from(&x.row(k));
                    }
                    best = Some((res, blocks.into_iter().collect(), full));
                }
            }
        }
    }
    best.map(|(_, s, x)| (s, x))
}

fn vbl_exact_recovery() -> Result<Verdict> {
    let (m, n, q, g, n_u, n_r, q_s, l) = (16, 4, 3, 12, 2, 4, 2, 6);
    let mut matched = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let pattern = build_pattern_with(m, n, q, g, n_u, 1.0, &mut rng)?;
        let spatial = random_spatial(&mut rng, n_r, q_s, n_u);
        let mut delays: Vec<usize> = (0..l).collect();
        for i in 0..3 {
            let j = rng.random_range(i..l);
            delays.swap(i, j);
        }
        let zero = MeasurementSystem::new(DMatrix::zeros(n_r * g, q), &pattern, &spatial, l)?;
        let mut s = DMatrix::zeros(zero.n_cols(), q);
        for (d, u) in [(delays[0], 0), (delays[0], 1), (delays[1], 0), (delays[2], 1)] {
            for qs in 0..q_s {
                for c in 0..q {
                    s[(zero.column_index((d, u, qs)), c)] = complex_gaussian(&mut rng, 1.0);
                }
            }
        }
        let sys = MeasurementSystem::new(zero.apply(&s), &pattern, &spatial, l)?;
        let Ok(est) = vbl_somp(&sys, 2, 1) else { continue };
        let Some((oracle_support, oracle_s)) = exhaustive_oracle(&sys.dense_phi(), sys.y(), &sys) else { continue };
        let support: BTreeSet<(usize, usize)> = est.support.iter().map(|b| (b.delay, b.user)).collect();
        if support == oracle_support {
            matched += 1;
            let est_s = DMatrix::from_fn(sys.n_cols(), q, |r, c| est.s[(r, c)]);
            worst = worst.max((est_s - &oracle_s).norm() / oracle_s.norm());
        }
    }
    Ok(Verdict::new(
        matched >= 95 && worst < 1e-8,
        format!("{matched}/100 supports match the exhaustive oracle (>= 95), max coefficient error {worst:.1e} (< 1e-8)"),
    ))
}

/// CE-BEM modeling NMSE of every tap sequence in one frame, ratio of sums.
fn bem_error_trend() -> Result<Verdict> {
    let mut levels = Vec::new();
    for m in [16, 32, 64] {
        let mut cfg = SimConfig::desk();
        cfg.m = m;
        cfg.n = 4;
        cfg.v = 120.0 / 3.6;
        cfg.g = 4;
        cfg.n_f = 0;
        let ce = ce_bem(cfg.mn(), cfg.q)?;
        let (mut err, mut tot) = (0.0, 0.0);
        for seed in 0..100u64 {
            let frame = realization(&cfg, seed)?.frame(0)?;
            let h = DMatrix::from_fn(cfg.mn(), frame.columns(), |t, c| frame.column(c)[t]);
            let e = bem_modeling_error(&h, &ce)?;
            err += e * h.norm_squared();
            tot += h.norm_squared();
        }
        levels.push(to_db(err / tot));
    }
    let decreasing = levels.windows(2).all(|w| w[1] < w[0]);
    Ok(Verdict::new(
        decreasing,
        format!(
            "modeling NMSE M=16/32/64: {:.2} / {:.2} / {:.2} dB (strictly decreasing)",
            levels[0], levels[1], levels[2]
        ),
    ))
}

/// Perfect uplink, one predicted frame; compared with projecting the true
/// downlink frame on the Slepian basis.
fn prediction_floor() -> Result<Verdict> {
    let mut rows = Vec::new();
    let mut pass = true;
    for m in [32, 64] {
        let mut cfg = SimConfig::desk();
        cfg.m = m;
        cfg.q_s = cfg.n_r;
        cfg.n_f = 1;
        let (b_sp, _) = slepian_basis(cfg.mn(), cfg.nu(), cfg.q_sp)?;
        let setup = PredictSetup {
            b_sp: &b_sp,
            sbee: SbeeParams { n_f: 1, delta: cfg.delta, q_dlp: cfg.q_dlp, n_sg: cfg.n_sg, q_sg: cfg.q_sg },
            ar_order: cfg.ar_order,
            n_vp: cfg.n_vp,
        };
        let (mut e_pred, mut e_floor, mut tot) = (0.0, 0.0, 0.0);
        for seed in 0..100u64 {
            let real = realization(&cfg, seed)?;
            let ul: Vec<TapChannel> = (0..cfg.n_t).map(|f| real.frame(f)).collect::<Result<_>>()?;
            let truth = real.frame(cfg.n_t)?;
            let pred = predict(&ul, Predictor::Sbee, &setup)?;
            let proj = reconstruct_dl(&slepian_fit(std::slice::from_ref(&truth), &b_sp)?, &b_sp)?;
            e_pred += diff_energy(&pred.frames[0], &truth);
            e_floor += diff_energy(&proj[0], &truth);
            tot += truth.energy();
        }
        let (p, f) = (to_db(e_pred / tot), to_db(e_floor / tot));
        pass &= p <= f + 3.0;
        rows.push((m, p, f));
    }
    pass &= rows[1].1 < rows[0].1;
    let detail = rows
        .iter()
        .map(|(m, p, f)| format!("M={m}: NMSE {p:.2} dB vs floor {f:.2} dB"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Verdict::new(pass, format!("{detail} (within 3 dB, decreasing in M)")))
}

fn polynomial_exactness() -> Result<Verdict> {
    let mut worst_sg: f64 = 0.0;
    for (n_sg, q_sg) in [(5, 2), (5, 5), (3, 1)] {
        let x: Vec<Complex64> = (0..40)
            .map(|t| {
                let t = t as f64 / 10.0;
                (0..=q_sg).map(|p| Complex64::new(0.3 + p as f64, 0.7 - 0.2 * p as f64) * t.powi(p as i32)).sum()
            })
            .collect();
        let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let y = SgFilter::new(n_sg, q_sg)?.smooth(&x)?;
        worst_sg = worst_sg.max(x.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale);
        let mut frames = vec![TapChannel::zeros(1, vec![vec![0]], 20); 2];
        for (f, fr) in frames.iter_mut().enumerate() {
            fr.seq_mut(0, 0, 0).copy_from_slice(&x[f * 20..(f + 1) * 20]);
        }
        let out = sg_smooth(&frames, n_sg, q_sg)?;
        for (a, b) in frames.iter().zip(&out) {
            let e = a.seq(0, 0, 0).iter().zip(b.seq(0, 0, 0)).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
            worst_sg = worst_sg.max(e / scale);
        }
    }

    let mut worst_sbee: f64 = 0.0;
    let desk = SimConfig::desk();
    let table = SimConfig::table3();
    for cfg in [&desk, &table] {
        let degree = cfg.q_dlp.min(cfg.q_sg + 1) - 1;
        for delta in [1, 2] {
            let p = SbeeParams { n_f: 4, delta, q_dlp: cfg.q_dlp, n_sg: cfg.n_sg, q_sg: cfg.q_sg };
            let poly = |t: f64, c: usize| -> Complex64 {
                (0..=degree)
                    .map(|k| Complex64::new(1.0 / (k + 1) as f64, c as f64 - 0.5 * k as f64) * (0.4 * t).powi(k as i32))
                    .sum()
            };
            let traj = DMatrix::from_fn(cfg.n_t, 3, |r, c| poly(r as f64, c));
            let pred = sbee_predict(&traj, p)?;
            for r in 0..p.n_f {
                for c in 0..3 {
                    let expect = poly((cfg.n_t + r) as f64, c);
                    worst_sbee = worst_sbee.max((pred[(r, c)] - expect).norm() / expect.norm());
                }
            }
        }
    }
    Ok(Verdict::new(
        worst_sg < 1e-9 && worst_sbee < 1e-6,
        format!("smoother {worst_sg:.1e} (< 1e-9), extrapolation {worst_sbee:.1e} (< 1e-6)"),
    ))
}

fn campaign(base: SimConfig, axis: Axis, values: Vec<f64>, selections: Vec<Selection>) -> Result<Vec<PointResult>> {
    run_campaign(&CampaignSpec { base, axis, values, trials: MC_TRIALS, selections, timing: false })
}

fn find<'a>(points: &'a [PointResult], value: f64, sel: Selection) -> &'a PointResult {
    points
        .iter()
        .find(|p| p.axis_value == value && p.selection == sel)
        .expect("campaign covers every value and selection")
}

fn estimator_ordering() -> Result<Verdict> {
    let mut base = SimConfig::desk();
    base.n_f = 0;
    let sel = |e| Selection::new(e, Predictor::None);
    let snrs = vec![0.0, 10.0, 20.0];
    let points = campaign(
        base,
        Axis::Snr,
        snrs.clone(),
        [Estimator::Vbl, Estimator::Bsomp, Estimator::Somp, Estimator::Genie].map(sel).to_vec(),
    )?;
    let mut pass = true;
    let mut parts = Vec::new();
    for &snr in &snrs {
        let db = |e| find(&points, snr, sel(e)).nmse_ce_db().unwrap_or(f64::INFINITY);
        let (v, b, s, g) = (db(Estimator::Vbl), db(Estimator::Bsomp), db(Estimator::Somp), db(Estimator::Genie));
        pass &= v <= b + 0.5 && b <= s + 0.5;
        if snr == 20.0 {
            pass &= v <= g + 3.0;
        }
        parts.push(format!("{snr} dB: vbl {v:.2} bsomp {b:.2} somp {s:.2} genie {g:.2}"));
    }
    Ok(Verdict::new(pass, format!("{} (vbl <= bsomp <= somp +0.5 dB, vbl within 3 dB of genie at 20 dB)", parts.join("; "))))
}

fn iteration_convergence() -> Result<Verdict> {
    let mut base = SimConfig::desk();
    base.n_f = 0;
    base.i_max = base.i_max.max(4);
    base.early_stop = false;
    let sel = Selection::new(Estimator::Vbl, Predictor::None);
    let points = campaign(base, Axis::Snr, vec![10.0], vec![sel])?;
    let (b3, b4) = (points[0].ber(3), points[0].ber(4));
    match (b3, b4) {
        (Some(b3), Some(b4)) => {
            let rel = if b3 > 0.0 { (b4 - b3).abs() / b3 } else if b4 == 0.0 { 0.0 } else { f64::INFINITY };
            Ok(Verdict::new(rel < 0.05, format!("BER iter 3 {b3:.3e}, iter 4 {b4:.3e}, relative change {rel:.3} (< 0.05)")))
        }
        _ => Ok(Verdict::new(false, "iteration trace shorter than four refinements")),
    }
}

fn overhead_plateau() -> Result<Verdict> {
    let mut base = SimConfig::desk();
    base.n_f = 0;
    let per_pilot = (2 * base.q - 1) as f64 / base.mn() as f64;
    let values: Vec<f64> = [6, 8, 10, 12, 14, 16, 20, 24].iter().map(|&g| g as f64 * per_pilot).collect();
    let sel = Selection::new(Estimator::Vbl, Predictor::None);
    let points = campaign(base, Axis::PilotOverhead, values.clone(), vec![sel])?;
    let nmse: Vec<f64> = values
        .iter()
        .map(|&v| find(&points, v, sel).nmse_ce_db().unwrap_or(f64::INFINITY))
        .collect();
    let best = nmse.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = nmse.iter().position(|&v| v <= best + 1.0).unwrap_or(0);
    let curve = values
        .iter()
        .zip(&nmse)
        .map(|(o, v)| format!("{:.0}%:{v:.2}", 100.0 * o))
        .collect::<Vec<_>>()
        .join(" ");
    let last = nmse[nmse.len() - 1];
    // The plateau is only demonstrated when two swept points lie above the threshold.
    let Some(&probe_nmse) = nmse.get(threshold + 2) else {
        return Ok(Verdict::new(
            false,
            format!("NMSE dB [{curve}], threshold {:.0}% leaves no second point above it", 100.0 * values[threshold]),
        ));
    };
    let gap = (probe_nmse - last).abs();
    Ok(Verdict::new(
        gap <= 1.0,
        format!(
            "NMSE dB [{curve}], threshold {:.0}%, gap at {:.0}% {gap:.2} dB (<= 1 dB)",
            100.0 * values[threshold],
            100.0 * values[threshold + 2]
        ),
    ))
}

/// Ratio of trial-averaged SEs of one predicted frame.
fn frame_aser(p: &PointResult, frame: usize) -> Option<f64> {
    let ok: Vec<&TrialResult> = p.ok().filter(|t| t.se.len() > frame).collect();
    let se: f64 = ok.iter().map(|t| t.se[frame]).sum();
    let up: f64 = ok.iter().map(|t| t.se_upper[frame]).sum();
    (up > 0.0).then(|| se / up)
}

fn dl_se_ratio() -> Result<Verdict> {
    let mut base = SimConfig::desk();
    base.n_f = 5;
    let sbee = Selection::new(Estimator::Vbl, Predictor::Sbee);
    let prony = Selection::new(Estimator::Vbl, Predictor::Prony);
    let points = campaign(base.clone(), Axis::Snr, vec![15.0], vec![sbee, prony])?;
    let a_s: Vec<f64> = (0..base.n_f).map(|f| frame_aser(find(&points, 15.0, sbee), f).unwrap_or(0.0)).collect();
    let a_p: Vec<f64> = (0..base.n_f).map(|f| frame_aser(find(&points, 15.0, prony), f).unwrap_or(0.0)).collect();
    let first = a_s[0] >= 0.85;
    let monotone = a_s.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let beats = a_s.iter().zip(&a_p).all(|(s, p)| s >= p);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok(Verdict::new(
        first && monotone && beats,
        format!(
            "ASER per frame sbee [{}] prony [{}] (first >= 0.85: {first}, non-increasing: {monotone}, sbee >= prony: {beats})",
            fmt(&a_s),
            fmt(&a_p)
        ),
    ))
}

fn determinism() -> Result<Verdict> {
    let mut base = SimConfig::desk();
    base.n_f = 2;
    let spec = CampaignSpec {
        base,
        axis: Axis::Snr,
        values: vec![5.0, 15.0],
        trials: 4,
        selections: vec![Selection::new(Estimator::Vbl, Predictor::Sbee), Selection::perfect(Predictor::Prony)],
        timing: false,
    };
    let render = || -> Result<String> {
        let mut buf = Vec::new();
        write_csv(&mut buf, &spec, &run_campaign(&spec)?)?;
        let text = String::from_utf8_lossy(&buf).into_owned();
        Ok(text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n"))
    };
    let (a, b) = (render()?, render()?);
    let rows = a.lines().count().saturating_sub(1);
    Ok(Verdict::new(a == b && rows > 0, format!("{rows} data rows, identical: {}", a == b)))
}
