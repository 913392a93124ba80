use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use otfs_chanpred::acceptance;
use otfs_chanpred::estimator::Estimator;
use otfs_chanpred::harness::{run_campaign, write_csv, Axis, CampaignSpec, PointResult, Selection};
use otfs_chanpred::metrics::NMSE_FLOOR_DB;
use otfs_chanpred::predictor::Predictor;
use otfs_chanpred::SimConfig;

/// Monte Carlo simulator for uplink estimation and downlink prediction on
/// massive MIMO-OTFS links.
#[derive(Parser)]
#[command(name = "otfs-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uplink estimation only, swept over the configured SNR list.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// vbl-somp, bsomp, somp or genie-ls; repeatable.
        #[arg(long = "estimator", default_values_t = ["vbl-somp".to_string()])]
        estimators: Vec<String>,
    },
    /// Estimation followed by downlink prediction.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: Pipeline,
    },
    /// Campaign over one swept parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: Pipeline,
        /// snr, n_f, pilot_overhead, velocity (km/h), n_antennas or iterations.
        #[arg(long, default_value = "snr")]
        axis: String,
        /// Comma-separated axis values; defaults to the configured SNR list.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Run only criteria whose name contains one of these strings.
        filter: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key = value file overriding fields of the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Master seed; every trial seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Fill the runtime column.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct Pipeline {
    /// vbl-somp, bsomp, somp, genie-ls or perfect (true uplink channel); repeatable.
    #[arg(long = "estimator", default_values_t = ["vbl-somp".to_string()])]
    estimators: Vec<String>,
    /// sbee, ar or prony; repeatable.
    #[arg(long = "predictor", default_values_t = ["sbee".to_string()])]
    predictors: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::profile(&self.profile)?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg = cfg.overlay(&text).with_context(|| format!("in {}", path.display()))?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn estimator(name: &str) -> Result<Estimator> {
    Estimator::parse(name).with_context(|| format!("unknown estimator `{name}`"))
}

fn selections(p: &Pipeline) -> Result<Vec<Selection>> {
    let mut out = Vec::new();
    for e in &p.estimators {
        for name in &p.predictors {
            let pred = Predictor::parse(name).with_context(|| format!("unknown predictor `{name}`"))?;
            if pred == Predictor::None {
                bail!("predictor `none` is only meaningful for `estimate`");
            }
            out.push(if e == "perfect" { Selection::perfect(pred) } else { Selection::new(estimator(e)?, pred) });
        }
    }
    Ok(out)
}

fn fmt(v: Option<f64>, unit: &str) -> String {
    match v {
        Some(x) if x <= NMSE_FLOOR_DB => "exact".into(),
        Some(x) => format!("{x:.3}{unit}"),
        None => "-".into(),
    }
}

fn summarize(points: &[PointResult], axis: Axis) {
    for p in points {
        let cp: Vec<String> = (0..5).filter_map(|f| p.nmse_cp_db(f)).map(|v| format!("{v:.2}")).collect();
        eprintln!(
            "{}={} {}/{}: nmse_ce {} nmse_cp [{}] se {} aser {} failed {}",
            axis.name(),
            p.axis_value,
            p.selection.estimator_label(),
            p.selection.predictor.name(),
            fmt(p.nmse_ce_db(), " dB"),
            cp.join(" "),
            fmt(p.se(), ""),
            fmt(p.aser(), ""),
            p.failures()
        );
    }
}

fn campaign(common: &Common, base: SimConfig, axis: Axis, values: Vec<f64>, selections: Vec<Selection>) -> Result<()> {
    let spec = CampaignSpec { base, axis, values, trials: common.trials, selections, timing: common.timing };
    let points = run_campaign(&spec)?;
    summarize(&points, axis);
    match &common.out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(std::io::BufWriter::new(file), &spec, &points)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv(&mut lock, &spec, &points)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn selftest(filter: &[String]) -> bool {
    let mut all = true;
    for c in acceptance::criteria() {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let (v, secs) = acceptance::run(&c);
        all &= v.pass;
        println!("{} {}: {} [{secs:.1} s]", if v.pass { "PASS" } else { "FAIL" }, c.name, v.detail);
    }
    all
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Estimate { common, estimators } => {
            let mut base = common.config()?;
            base.n_f = 0;
            let sels = estimators
                .iter()
                .map(|e| Ok(Selection::new(estimator(e)?, Predictor::None)))
                .collect::<Result<Vec<_>>>()?;
            let values = base.snr_db.clone();
            campaign(&common, base, Axis::Snr, values, sels)?;
        }
        Command::Predict { common, pipeline } => {
            let base = common.config()?;
            if base.n_f == 0 {
                bail!("prediction needs n_f >= 1");
            }
            let values = base.snr_db.clone();
            campaign(&common, base, Axis::Snr, values, selections(&pipeline)?)?;
        }
        Command::Sweep { common, pipeline, axis, values } => {
            let axis = Axis::parse(&axis).with_context(|| format!("unknown axis `{axis}`"))?;
            let base = common.config()?;
            let values = if values.is_empty() {
                if axis != Axis::Snr {
                    bail!("--values is required for axis {}", axis.name());
                }
                base.snr_db.clone()
            } else {
                values
            };
            campaign(&common, base, axis, values, selections(&pipeline)?)?;
        }
        Command::Selftest { filter } => {
            if !selftest(&filter) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
