//! Hybrid dedicated/superimposed pilot frame and QPSK payload mapping.
//!
//! Pilots and data are placed on a pre-transform vector `u`; the transmitted
//! grid is `x_dd = (F_N ⊗ I_M) F_MN^H u`, i.e. `u` lives on the DFT of the
//! time-domain frame. Each non-zero pilot is followed and preceded by `Q - 1`
//! zeros so that the `Q` shifted observation sets collect only pilot energy
//! for channels inside the `Q`-term basis.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::dsp::{fft_unitary, ifft_unitary};
use crate::error::{ConfigError, Result, SimError};
use crate::otfs::{otfs_demodulate, otfs_modulate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotPattern {
    pub m: usize,
    pub n: usize,
    pub q: usize,
    /// Positions of the non-zero pilots in `u`.
    pub nonzero: Vec<usize>,
    /// Per-user pilot values (±√pilot_power).
    pub pilots: Vec<Vec<f64>>,
    /// Reserved positions (pilots and guards), sorted.
    pub dedicated: Vec<usize>,
    /// Data positions, sorted complement of `dedicated`.
    pub data: Vec<usize>,
}

impl PilotPattern {
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    pub fn center(&self) -> usize {
        (self.q - 1) / 2
    }

    /// Observation set `q`: the non-zero positions shifted by `q - (Q-1)/2`.
    pub fn observation_set(&self, q: usize) -> Vec<usize> {
        let mn = self.mn();
        self.nonzero.iter().map(|&p| (p + mn + q - self.center()) % mn).collect()
    }

    pub fn n_u(&self) -> usize {
        self.pilots.len()
    }

    pub fn g(&self) -> usize {
        self.nonzero.len()
    }

    pub fn data_len(&self) -> usize {
        self.data.len()
    }

    /// Config-file snippet listing the pilot positions.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("pattern always serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()).into())
    }
}

/// Fraction of resources reserved for dedicated pilots, `G (2Q - 1) / MN`.
pub fn pilot_overhead(pattern: &PilotPattern) -> f64 {
    pattern.dedicated.len() as f64 / pattern.mn() as f64
}

pub fn build_pattern<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<PilotPattern> {
    build_pattern_with(config.m, config.n, config.q, config.g, config.n_u, config.pilot_power, rng)
}

pub fn build_pattern_with<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    q: usize,
    g: usize,
    n_u: usize,
    pilot_power: f64,
    rng: &mut R,
) -> Result<PilotPattern> {
    let mn = m * n;
    if q % 2 == 0 {
        return Err(ConfigError::Bound("Q must be odd".into()).into());
    }
    let width = 2 * q - 1;
    if g * width > mn {
        return Err(ConfigError::Bound("G (2Q - 1) <= M N".into()).into());
    }
    let stride = if g == 0 { 0 } else { mn / g };
    let nonzero: Vec<usize> = (0..g).map(|i| i * stride + q - 1).map(|p| p % mn).collect();
    let mut reserved = vec![false; mn];
    for &p in &nonzero {
        for off in 0..width {
            reserved[(p + mn + off - (q - 1)) % mn] = true;
        }
    }
    let dedicated: Vec<usize> = (0..mn).filter(|&i| reserved[i]).collect();
    let data: Vec<usize> = (0..mn).filter(|&i| !reserved[i]).collect();
    let amp = pilot_power.sqrt();
    let pilots = (0..n_u)
        .map(|_| (0..g).map(|_| if rng.random::<bool>() { amp } else { -amp }).collect())
        .collect();
    Ok(PilotPattern { m, n, q, nonzero, pilots, dedicated, data })
}

/// `P u = (F_N ⊗ I_M) F_MN^H u`.
pub fn precode(u: &[Complex64], m: usize, n: usize) -> Result<Vec<Complex64>> {
    let mut s = u.to_vec();
    ifft_unitary(&mut s);
    otfs_demodulate(&s, m, n)
}

/// `P^H x = F_MN (F_N^H ⊗ I_M) x`.
pub fn precode_adjoint(x: &[Complex64], m: usize, n: usize) -> Result<Vec<Complex64>> {
    let mut s = otfs_modulate(x, m, n)?;
    fft_unitary(&mut s);
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TxFrame {
    pub u: Vec<Complex64>,
    pub x_dd: Vec<Complex64>,
    pub data_symbols: Vec<Complex64>,
}

impl TxFrame {
    /// Time-domain frame `F_MN^H u`.
    pub fn time_signal(&self) -> Vec<Complex64> {
        let mut s = self.u.clone();
        ifft_unitary(&mut s);
        s
    }
}

/// Pre-transform vector carrying pilots of `user` only.
pub fn pilot_vector(pattern: &PilotPattern, user: usize) -> Vec<Complex64> {
    let mut u = vec![Complex64::new(0.0, 0.0); pattern.mn()];
    for (&p, &v) in pattern.nonzero.iter().zip(&pattern.pilots[user]) {
        u[p] = Complex64::new(v, 0.0);
    }
    u
}

/// Pre-transform vector carrying `payload` on the data positions only.
pub fn data_vector(pattern: &PilotPattern, payload: &[Complex64]) -> Result<Vec<Complex64>> {
    if payload.len() != pattern.data_len() {
        return Err(SimError::Length { expected: pattern.data_len(), got: payload.len() });
    }
    let mut u = vec![Complex64::new(0.0, 0.0); pattern.mn()];
    for (&i, &v) in pattern.data.iter().zip(payload) {
        u[i] = v;
    }
    Ok(u)
}

pub fn assemble_frame(pattern: &PilotPattern, payload: &[Complex64], user: usize) -> Result<TxFrame> {
    if user >= pattern.n_u() {
        return Err(SimError::Invalid(format!("user {user} has no pilot sequence")));
    }
    let mut u = data_vector(pattern, payload)?;
    for (&p, &v) in pattern.nonzero.iter().zip(&pattern.pilots[user]) {
        u[p] = Complex64::new(v, 0.0);
    }
    let x_dd = precode(&u, pattern.m, pattern.n)?;
    Ok(TxFrame { u, x_dd, data_symbols: payload.to_vec() })
}

/// Gray-mapped QPSK: bit 0 on the real part, bit 1 on the imaginary part.
pub fn qpsk_map(b0: bool, b1: bool) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(if b0 { -s } else { s }, if b1 { -s } else { s })
}

pub fn qpsk_bits(x: Complex64) -> (bool, bool) {
    (x.re < 0.0, x.im < 0.0)
}

pub fn qpsk_slice(x: Complex64) -> Complex64 {
    let (b0, b1) = qpsk_bits(x);
    qpsk_map(b0, b1)
}

pub fn random_qpsk<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<Complex64> {
    (0..len).map(|_| qpsk_map(rng.random(), rng.random())).collect()
}
