//! Simulation parameters and their consistency checks.
//!
//! The on-disk format is a flat `key = value` file (a TOML subset) whose keys
//! are exactly the field names of [`SimConfig`]. Missing keys take the value
//! of the desk profile.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Delay bins per OTFS frame.
    pub m: usize,
    /// Doppler bins per OTFS frame.
    pub n: usize,
    /// Base station antennas.
    pub n_r: usize,
    /// Single-antenna users.
    pub n_u: usize,
    /// Maximum number of delay taps.
    pub l: usize,
    /// Significant paths per user.
    pub k: usize,
    /// Paths shared by all users.
    pub k_c: usize,
    /// CE-BEM order (odd).
    pub q: usize,
    /// SR-BEM order.
    pub q_s: usize,
    /// Number of Slepian sequences.
    pub q_sp: usize,
    /// Discrete Legendre polynomial order.
    pub q_dlp: usize,
    /// Savitzky-Golay polynomial order.
    pub q_sg: usize,
    /// Savitzky-Golay half window.
    pub n_sg: usize,
    /// Non-zero pilots per frame.
    pub g: usize,
    /// Uplink frames used for estimation.
    pub n_t: usize,
    /// Downlink frames to predict.
    pub n_f: usize,
    /// Prediction step size in frames.
    pub delta: usize,
    /// User speed in m/s.
    pub v: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    pub snr_db: Vec<f64>,
    pub seed: u64,
    /// Data-aided refinement iterations after the initial estimate.
    pub i_max: usize,
    /// Conjugate gradient iterations of the LMMSE detector.
    pub i_cg: usize,
    /// Rays per scattering cluster.
    pub n_ray: usize,
    /// Path-norm threshold for counting significant paths.
    pub zeta: f64,
    /// Perturbation level of the coarse estimate used for the SR-BEM rotation search.
    pub coarse_noise_db: f64,
    /// Angular spread of each cluster, degrees.
    pub angular_spread_deg: f64,
    /// Grid points of the SR-BEM rotation search.
    pub rotation_grid: usize,
    /// Pilot power relative to unit data power.
    pub pilot_power: f64,
    /// Decay constant (in taps) of the exponential delay power profile.
    pub delay_spread_taps: f64,
    /// Explicit per-path powers overriding the exponential profile.
    pub path_powers: Vec<f64>,
    /// Order of the autoregressive baseline predictor.
    pub ar_order: usize,
    /// Order of the vector Prony baseline predictor.
    pub n_vp: usize,
    /// Stop the data-aided loop once detections settle.
    pub early_stop: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SimConfig {
    /// Small profile that runs the full pipeline in milliseconds per trial.
    pub fn desk() -> Self {
        Self {
            m: 32,
            n: 4,
            n_r: 8,
            n_u: 2,
            l: 16,
            k: 3,
            k_c: 1,
            q: 3,
            q_s: 8,
            q_sp: 5,
            q_dlp: 2,
            q_sg: 2,
            n_sg: 5,
            g: 16,
            n_t: 5,
            n_f: 2,
            delta: 1,
            v: 120.0 / 3.6,
            f_c: 3.0e9,
            delta_f: 30.0e3,
            snr_db: vec![10.0],
            seed: 1,
            i_max: 2,
            i_cg: 20,
            n_ray: 32,
            zeta: 1.0e-3,
            coarse_noise_db: -10.0,
            angular_spread_deg: 5.0,
            rotation_grid: 64,
            pilot_power: 5.0,
            delay_spread_taps: 4.0,
            path_powers: Vec::new(),
            ar_order: 2,
            n_vp: 5,
            early_stop: true,
        }
    }

    /// Full-scale parameters of the reference simulation (overnight runs).
    pub fn table3() -> Self {
        Self {
            m: 128,
            n: 8,
            n_r: 64,
            n_u: 2,
            l: 64,
            k: 4,
            k_c: 1,
            q: 3,
            q_s: 64,
            q_sp: 5,
            q_dlp: 5,
            q_sg: 5,
            n_sg: 5,
            g: 32,
            n_t: 5,
            n_f: 5,
            delta: 1,
            v: 120.0 / 3.6,
            f_c: 3.0e9,
            delta_f: 30.0e3,
            snr_db: vec![15.0],
            seed: 1,
            i_max: 4,
            i_cg: 20,
            n_ray: 32,
            zeta: 1.0e-3,
            coarse_noise_db: -10.0,
            angular_spread_deg: 5.0,
            rotation_grid: 64,
            pilot_power: 1.0,
            delay_spread_taps: 16.0,
            path_powers: Vec::new(),
            ar_order: 4,
            n_vp: 5,
            early_stop: true,
        }
    }

    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "table3" => Ok(Self::table3()),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys present in `text` replace the corresponding fields of `self`.
    pub fn overlay(&self, text: &str) -> Result<Self, ConfigError> {
        let parse = |t: &str| t.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()));
        let mut table = parse(&self.to_toml_string())?;
        table.extend(parse(text)?);
        let cfg: SimConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Samples per frame.
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// Sampling period `1 / (M Δf)`.
    pub fn t_s(&self) -> f64 {
        1.0 / (self.m as f64 * self.delta_f)
    }

    /// Maximum Doppler frequency `f_c v / c`.
    pub fn f_max(&self) -> f64 {
        self.f_c * self.v / SPEED_OF_LIGHT
    }

    /// Normalized Doppler `f_max T_s` (cycles per sample).
    pub fn nu(&self) -> f64 {
        self.f_max() * self.t_s()
    }

    /// Smallest admissible CE-BEM order for the configured Doppler.
    pub fn min_bem_order(&self) -> usize {
        2 * (self.n as f64 * self.nu()).ceil() as usize + 1
    }

    /// Noise variance for an SNR in dB with unit symbol power.
    pub fn noise_var(snr_db: f64) -> f64 {
        10f64.powf(-snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |bound: &str| Err(ConfigError::Bound(bound.to_string()));
        if self.m == 0 || self.n == 0 || self.n_r == 0 || self.n_u == 0 || self.l == 0 {
            return fail("M, N, N_r, N_u, L must be positive");
        }
        if self.q % 2 == 0 {
            return fail("Q must be odd");
        }
        if self.q < self.min_bem_order() {
            return fail("Q >= 2*ceil(N f_max T_s) + 1");
        }
        if self.k_c > self.k {
            return fail("K_C <= K");
        }
        if self.k > self.l {
            return fail("K <= L");
        }
        if self.l > self.m {
            return fail("L <= M");
        }
        if self.n_u * (self.k - self.k_c) + self.k_c > self.l {
            return fail("N_u (K - K_C) + K_C <= L");
        }
        if self.q_s == 0 || self.q_s > self.n_r {
            return fail("1 <= Q_s <= N_r");
        }
        if self.q_sg >= 2 * self.n_sg + 1 {
            return fail("Q_sg < 2 N_sg + 1");
        }
        if 2 * self.n_sg + 1 > self.mn() {
            return fail("2 N_sg + 1 <= M N");
        }
        if self.g * (2 * self.q - 1) > self.mn() {
            return fail("G (2Q - 1) <= M N");
        }
        if self.n_t < 2 {
            return fail("N_t >= 2");
        }
        if self.q_dlp == 0 || self.q_dlp > self.n_t {
            return fail("1 <= Q_DLP <= N_t");
        }
        if self.delta == 0 || self.n_f % self.delta != 0 {
            return fail("N_f divisible by a positive step Delta");
        }
        if self.q_sp == 0 || self.q_sp > self.mn() {
            return fail("1 <= Q_SP <= M N");
        }
        let nu = self.nu();
        if !(nu > 0.0 && nu < 0.5) {
            return fail("0 < f_max T_s < 0.5");
        }
        if self.n_ray < 8 {
            return fail("N_ray >= 8");
        }
        if self.rotation_grid < 2 {
            return fail("rotation grid >= 2");
        }
        if !self.path_powers.is_empty() && self.path_powers.len() != self.k {
            return fail("explicit path powers must list K values");
        }
        if self.snr_db.is_empty() {
            return fail("at least one SNR point");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        SimConfig::desk().validate().unwrap();
        SimConfig::table3().validate().unwrap();
    }

    #[test]
    fn table3_sampling_period() {
        let cfg = SimConfig::table3();
        assert!((cfg.t_s() - 2.604e-7).abs() < 1e-9);
        assert_eq!(cfg.min_bem_order(), 3);
    }

    #[test]
    fn bound_violations_are_named() {
        let mut cfg = SimConfig::desk();
        cfg.k_c = cfg.k + 1;
        assert_eq!(cfg.validate(), Err(ConfigError::Bound("K_C <= K".into())));
        let mut cfg = SimConfig::desk();
        cfg.q = 4;
        assert!(matches!(cfg.validate(), Err(ConfigError::Bound(b)) if b.contains("odd")));
        let mut cfg = SimConfig::desk();
        cfg.g = 100;
        assert!(matches!(cfg.validate(), Err(ConfigError::Bound(b)) if b.contains("G (2Q - 1)")));
    }

    #[test]
    fn flat_file_round_trip() {
        let cfg = SimConfig::table3();
        let text = cfg.to_toml_string();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = SimConfig::from_toml_str("m = 64\nn_f = 4\n").unwrap();
        assert_eq!(partial.m, 64);
        assert_eq!(partial.n_f, 4);
        assert_eq!(partial.n_r, SimConfig::desk().n_r);
        assert!(SimConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn overlay_keeps_unlisted_fields() {
        let cfg = SimConfig::table3().overlay("n_f = 2\nsnr_db = [0.0, 5.0]\n").unwrap();
        assert_eq!(cfg.n_f, 2);
        assert_eq!(cfg.snr_db, vec![0.0, 5.0]);
        assert_eq!(cfg.m, SimConfig::table3().m);
        assert!(SimConfig::desk().overlay("q = 4").is_err());
    }
}
