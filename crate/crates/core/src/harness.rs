//! Monte Carlo trials and parameter sweeps with CSV output.
//!
//! A trial draws one channel realization over `N_t + N_f` frames, transmits
//! `N_t` uplink frames, estimates them, predicts the following `N_f` frames
//! and scores the prediction against the true continuation. Everything is a
//! pure function of `(config, snr, seed, selection)`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::{ce_bem, slepian_basis, sr_bem_rotation};
use crate::channel::{gen_gain_process, gen_path_geometry, TapChannel};
use crate::config::SimConfig;
use crate::error::{ConfigError, Result, SimError};
use crate::estimator::{coarse_spatial_vectors, iterative_refine, Estimator, IterStat, UlSetup, UlTruth};
use crate::metrics::{channel_nmse, dl_se, to_db};
use crate::otfs::{apply_channel, complex_gaussian, otfs_demodulate};
use crate::pilot::{assemble_frame, build_pattern, random_qpsk};
use crate::predictor::{predict, PredictSetup, Predictor, SbeeParams};

/// Number of predicted-frame and iteration columns in the CSV.
pub const CSV_FRAMES: usize = 5;
pub const CSV_ITERS: usize = 5;

/// Source of the channels handed to the predictor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UlSource {
    Estimated,
    Perfect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub estimator: Estimator,
    pub predictor: Predictor,
    pub ul_source: UlSource,
}

impl Selection {
    pub fn new(estimator: Estimator, predictor: Predictor) -> Self {
        Self { estimator, predictor, ul_source: UlSource::Estimated }
    }

    pub fn perfect(predictor: Predictor) -> Self {
        Self { estimator: Estimator::Genie, predictor, ul_source: UlSource::Perfect }
    }

    /// Estimator label written to the CSV.
    pub fn estimator_label(&self) -> &'static str {
        match self.ul_source {
            UlSource::Perfect => "perfect",
            UlSource::Estimated => self.estimator.name(),
        }
    }
}

/// Bases that depend on the configuration only.
#[derive(Clone, Debug)]
pub struct TrialContext {
    pub config: SimConfig,
    pub ce: DMatrix<Complex64>,
    pub b_sp: DMatrix<f64>,
}

impl TrialContext {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let ce = ce_bem(config.mn(), config.q)?;
        let (b_sp, _) = slepian_basis(config.mn(), config.nu(), config.q_sp)?;
        Ok(Self { config, ce, b_sp })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub uplink_ms: f64,
    pub prediction_ms: f64,
    pub metrics_ms: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.uplink_ms + self.prediction_ms + self.metrics_ms
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub snr_db: f64,
    pub selection: Selection,
    /// Linear NMSE of the final uplink estimate (absent with perfect uplink CSI).
    pub nmse_ce: Option<f64>,
    /// Linear NMSE per predicted frame.
    pub nmse_cp: Vec<f64>,
    /// Sum SE per predicted frame with predicted and with perfect CSI.
    pub se: Vec<f64>,
    pub se_upper: Vec<f64>,
    pub trace: Vec<IterStat>,
    /// Per-user true delays and the delays of the final uplink estimate.
    pub true_support: Vec<Vec<usize>>,
    pub est_support: Vec<Vec<usize>>,
    pub degenerate: usize,
    pub skipped_elements: usize,
    pub regularized: bool,
    pub times: StageTimes,
}

impl TrialResult {
    pub fn nmse_ce_db(&self) -> Option<f64> {
        self.nmse_ce.map(to_db)
    }

    pub fn nmse_cp_db(&self) -> Vec<f64> {
        self.nmse_cp.iter().map(|&v| to_db(v)).collect()
    }

    pub fn mean_se(&self) -> Option<f64> {
        mean(&self.se)
    }

    pub fn mean_se_upper(&self) -> Option<f64> {
        mean(&self.se_upper)
    }

    pub fn aser(&self) -> Option<f64> {
        match (self.mean_se(), self.mean_se_upper()) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        }
    }

    /// BER after each uplink iteration.
    pub fn ber(&self) -> Vec<f64> {
        self.trace.iter().filter_map(|s| s.ber).collect()
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Spatial bases from a noisy coarse view of the first frame.
fn spatial_bases(ctx: &TrialContext, first: &TapChannel, rng: &mut ChaCha8Rng) -> Result<Vec<DMatrix<Complex64>>> {
    let cfg = &ctx.config;
    let rel = 10f64.powf(cfg.coarse_noise_db / 10.0);
    (0..cfg.n_u)
        .map(|u| {
            let coarse: Vec<DVector<Complex64>> = coarse_spatial_vectors(first, u, &ctx.ce)
                .into_iter()
                .map(|v| {
                    let var = rel * v.norm_squared() / cfg.n_r as f64;
                    v.map(|x| x + complex_gaussian(rng, var))
                })
                .collect();
            Ok(sr_bem_rotation(&coarse, cfg.n_r, cfg.q_s, cfg.rotation_grid)?.d)
        })
        .collect()
}

/// Run the full uplink/downlink chain once.
pub fn run_trial(ctx: &TrialContext, snr_db: f64, seed: u64, sel: Selection) -> Result<TrialResult> {
    let cfg = &ctx.config;
    let (m, n) = (cfg.m, cfg.n);
    let noise_var = SimConfig::noise_var(snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();

    let geometry = gen_path_geometry(cfg, &mut rng)?;
    let real = gen_gain_process(&geometry, cfg);
    let pattern = build_pattern(cfg, &mut rng)?;
    let truth_ul: Vec<TapChannel> = (0..cfg.n_t).map(|f| real.frame(f)).collect::<Result<_>>()?;
    let spatial = spatial_bases(ctx, &truth_ul[0], &mut rng)?;

    let mut received = Vec::with_capacity(cfg.n_t);
    let mut payloads = Vec::with_capacity(cfg.n_t);
    for f in 0..cfg.n_t {
        let mut signals = Vec::with_capacity(cfg.n_u);
        let mut data = Vec::with_capacity(cfg.n_u);
        for u in 0..cfg.n_u {
            let payload = random_qpsk(&mut rng, pattern.data_len());
            signals.push(assemble_frame(&pattern, &payload, u)?.time_signal());
            data.push(payload);
        }
        let rx = apply_channel(&signals, &real, f, noise_var, &mut rng)?;
        received.push(rx.iter().map(|r| otfs_demodulate(r, m, n)).collect::<Result<Vec<_>>>()?);
        payloads.push(data);
    }

    let (ul, nmse_ce, trace, degenerate) = match sel.ul_source {
        UlSource::Perfect => (truth_ul.clone(), None, Vec::new(), 0),
        UlSource::Estimated => {
            let setup = UlSetup {
                pattern: &pattern,
                spatial,
                l: cfg.l,
                k: cfg.k,
                k_c: cfg.k_c,
                n_sg: cfg.n_sg,
                q_sg: cfg.q_sg,
                i_max: cfg.i_max,
                i_cg: cfg.i_cg,
                noise_var,
                early_stop: cfg.early_stop,
                method: sel.estimator,
                genie: Some((geometry.supports(), geometry.common_delays())),
            };
            let est = iterative_refine(&received, &setup, Some(UlTruth { channels: &truth_ul, data: &payloads }))?;
            let nmse = channel_nmse(&truth_ul, &est.smoothed)?;
            (est.smoothed, Some(nmse), est.trace, est.degenerate)
        }
    };
    let uplink_ms = ms_since(start);

    let start = Instant::now();
    let setup = PredictSetup {
        b_sp: &ctx.b_sp,
        sbee: SbeeParams { n_f: cfg.n_f, delta: cfg.delta, q_dlp: cfg.q_dlp, n_sg: cfg.n_sg, q_sg: cfg.q_sg },
        ar_order: cfg.ar_order,
        n_vp: cfg.n_vp,
    };
    let prediction = if cfg.n_f == 0 { None } else { Some(predict(&ul, sel.predictor, &setup)?) };
    let prediction_ms = ms_since(start);

    let start = Instant::now();
    let mut nmse_cp = Vec::new();
    let mut se = Vec::new();
    let mut se_upper = Vec::new();
    let mut skipped = 0;
    let mut regularized = false;
    if let Some(p) = &prediction {
        regularized = p.regularized;
        for (i, h_hat) in p.frames.iter().enumerate() {
            let truth = real.frame(cfg.n_t + i)?;
            nmse_cp.push(channel_nmse(std::slice::from_ref(&truth), std::slice::from_ref(h_hat))?);
            let stats = dl_se(h_hat, &truth, noise_var, m, n)?;
            skipped += stats.skipped;
            se.push(stats.se);
            se_upper.push(dl_se(&truth, &truth, noise_var, m, n)?.se);
        }
    }
    let metrics_ms = ms_since(start);

    Ok(TrialResult {
        seed,
        snr_db,
        selection: sel,
        nmse_ce,
        nmse_cp,
        se,
        se_upper,
        trace,
        true_support: geometry.supports(),
        est_support: ul[0].all_delays().to_vec(),
        degenerate,
        skipped_elements: skipped,
        regularized,
        times: StageTimes { uplink_ms, prediction_ms, metrics_ms },
    })
}

/// Swept parameter of a campaign.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Snr,
    NF,
    PilotOverhead,
    /// km/h.
    Velocity,
    NAntennas,
    Iterations,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Snr => "snr",
            Axis::NF => "n_f",
            Axis::PilotOverhead => "pilot_overhead",
            Axis::Velocity => "velocity",
            Axis::NAntennas => "n_antennas",
            Axis::Iterations => "iterations",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Axis::Snr, Axis::NF, Axis::PilotOverhead, Axis::Velocity, Axis::NAntennas, Axis::Iterations]
            .into_iter()
            .find(|a| a.name() == s)
    }

    /// Configuration and SNR of one sweep point.
    pub fn apply(self, base: &SimConfig, value: f64) -> Result<(SimConfig, f64)> {
        let mut cfg = base.clone();
        let mut snr = base.snr_db[0];
        let count = || -> Result<usize> {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(SimError::Invalid(format!("{} needs a non-negative integer, got {value}", self.name())));
            }
            Ok(value as usize)
        };
        match self {
            Axis::Snr => snr = value,
            Axis::NF => cfg.n_f = count()?,
            Axis::PilotOverhead => {
                cfg.g = (value * cfg.mn() as f64 / (2 * cfg.q - 1) as f64).round() as usize;
            }
            Axis::Velocity => cfg.v = value / 3.6,
            Axis::NAntennas => {
                let n_r = count()?;
                cfg.q_s = if base.q_s == base.n_r { n_r } else { base.q_s.min(n_r) };
                cfg.n_r = n_r;
            }
            Axis::Iterations => cfg.i_max = count()?,
        }
        cfg.validate()?;
        Ok((cfg, snr))
    }
}

#[derive(Clone, Debug)]
pub struct CampaignSpec {
    pub base: SimConfig,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub selections: Vec<Selection>,
    /// Fill the runtime column (breaks byte-identical reruns).
    pub timing: bool,
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(ConfigError::Bound("at least one axis value".into()).into());
        }
        if self.trials == 0 {
            return Err(ConfigError::Bound("trials >= 1".into()).into());
        }
        if self.selections.is_empty() {
            return Err(ConfigError::Bound("at least one estimator/predictor selection".into()).into());
        }
        Ok(())
    }
}

/// Seed of trial `t`, shared by every sweep point and selection.
pub fn trial_seed(master: u64, t: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(t as u64);
    rng.random()
}

/// Results of one sweep point and selection.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub axis_value: f64,
    pub snr_db: f64,
    pub selection: Selection,
    /// One entry per trial; failed trials keep their error message.
    pub trials: Vec<std::result::Result<TrialResult, String>>,
}

impl PointResult {
    pub fn ok(&self) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter_map(|t| t.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.is_err()).count()
    }

    /// Trial-averaged (linear) uplink NMSE in dB.
    pub fn nmse_ce_db(&self) -> Option<f64> {
        mean(&self.ok().filter_map(|t| t.nmse_ce).collect::<Vec<_>>()).map(to_db)
    }

    pub fn nmse_cp_db(&self, frame: usize) -> Option<f64> {
        mean(&self.ok().filter_map(|t| t.nmse_cp.get(frame).copied()).collect::<Vec<_>>()).map(to_db)
    }

    pub fn se(&self) -> Option<f64> {
        mean(&self.ok().filter_map(|t| t.mean_se()).collect::<Vec<_>>())
    }

    pub fn se_upper(&self) -> Option<f64> {
        mean(&self.ok().filter_map(|t| t.mean_se_upper()).collect::<Vec<_>>())
    }

    /// Ratio of trial-averaged SEs.
    pub fn aser(&self) -> Option<f64> {
        match (self.se(), self.se_upper()) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        }
    }

    pub fn ber(&self, iter: usize) -> Option<f64> {
        mean(&self.ok().filter_map(|t| t.ber().get(iter).copied()).collect::<Vec<_>>())
    }
}

/// Run every (axis value, selection, trial) combination in parallel.
pub fn run_campaign(spec: &CampaignSpec) -> Result<Vec<PointResult>> {
    spec.validate()?;
    let mut out = Vec::new();
    for &value in &spec.values {
        let (cfg, snr) = spec.axis.apply(&spec.base, value)?;
        let ctx = TrialContext::new(cfg)?;
        for &sel in &spec.selections {
            let trials = (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(&ctx, snr, trial_seed(spec.base.seed, t), sel).map_err(|e| e.to_string()))
                .collect();
            out.push(PointResult { axis_value: value, snr_db: snr, selection: sel, trials });
        }
    }
    Ok(out)
}

pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["kind", "axis", "axis_value", "seed", "snr_db", "estimator", "predictor", "nmse_ce_db"].map(String::from).to_vec();
    h.extend((1..=CSV_FRAMES).map(|f| format!("nmse_cp_db_f{f}")));
    h.extend(["se", "se_upper", "aser"].map(String::from));
    h.extend((0..CSV_ITERS).map(|i| format!("ber_i{i}")));
    h.push("runtime_ms".into());
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Data rows (no header) of a finished campaign: per point, one raw row per
/// trial followed by the aggregate row.
pub fn csv_rows(axis: Axis, points: &[PointResult], timing: bool) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for p in points {
        let sel = p.selection;
        let lead = |kind: &str, seed: String| {
            vec![
                kind.to_string(),
                axis.name().to_string(),
                p.axis_value.to_string(),
                seed,
                p.snr_db.to_string(),
                sel.estimator_label().to_string(),
                sel.predictor.name().to_string(),
            ]
        };
        for t in &p.trials {
            let Ok(t) = t else {
                // Failed trials keep their place with empty metric cells.
                let mut row = lead("raw", String::new());
                row.resize(csv_header().len(), String::new());
                rows.push(row);
                continue;
            };
            let mut row = lead("raw", t.seed.to_string());
            row.push(cell(t.nmse_ce_db()));
            let cp = t.nmse_cp_db();
            row.extend((0..CSV_FRAMES).map(|f| cell(cp.get(f).copied())));
            row.extend([cell(t.mean_se()), cell(t.mean_se_upper()), cell(t.aser())]);
            let ber = t.ber();
            row.extend((0..CSV_ITERS).map(|i| cell(ber.get(i).copied())));
            row.push(if timing { format!("{:.3}", t.times.total()) } else { String::new() });
            rows.push(row);
        }
        let mut row = lead("agg", String::new());
        row.push(cell(p.nmse_ce_db()));
        row.extend((0..CSV_FRAMES).map(|f| cell(p.nmse_cp_db(f))));
        row.extend([cell(p.se()), cell(p.se_upper()), cell(p.aser())]);
        row.extend((0..CSV_ITERS).map(|i| cell(p.ber(i))));
        let total: f64 = p.ok().map(|t| t.times.total()).sum();
        row.push(if timing { format!("{total:.3}") } else { String::new() });
        rows.push(row);
    }
    rows
}

/// Write the campaign CSV: a timestamp comment, the header and the rows.
pub fn write_csv<W: Write>(mut out: W, spec: &CampaignSpec, points: &[PointResult]) -> Result<()> {
    writeln!(out, "# otfs-sim sweep axis={} generated {}", spec.axis.name(), chrono::Utc::now().to_rfc3339())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    for row in csv_rows(spec.axis, points, spec.timing) {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, spec: &CampaignSpec, points: &[PointResult]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), spec, points)
}

/// Per-iteration uplink trace rows `(iter, nmse_db, ber)`.
pub fn trace_rows(trace: &[IterStat]) -> Vec<(usize, Option<f64>, Option<f64>)> {
    trace.iter().map(|s| (s.iter, s.nmse.map(to_db), s.ber)).collect()
}
