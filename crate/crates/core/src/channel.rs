//! Sparse doubly-selective multi-user channels.
//!
//! Each user sees `K` delay taps out of `L`; `K_C` of them are shared by all
//! users. Every tap is a cluster of `N_ray` equal-power rays, so its gain follows
//! Jakes' temporal correlation `J0(2π f_max T_s n)` while the spatial signature
//! across the uniform linear array is the sum of the rays' steering vectors.
//! One realization spans `N_t + N_f` consecutive frames of a single continuous
//! process.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;

use crate::config::SimConfig;
use crate::error::{ConfigError, Result, SimError};

/// Complex gain sequences indexed by (antenna, user, tap).
///
/// Each user carries its own list of tap delays; sequences are stored in
/// user-major, tap, antenna order.
#[derive(Clone, Debug, PartialEq)]
pub struct TapChannel {
    n_r: usize,
    samples: usize,
    delays: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    data: Vec<Complex64>,
}

impl TapChannel {
    pub fn zeros(n_r: usize, delays: Vec<Vec<usize>>, samples: usize) -> Self {
        let mut offsets = Vec::with_capacity(delays.len());
        let mut total = 0;
        for d in &delays {
            offsets.push(total);
            total += d.len();
        }
        Self {
            n_r,
            samples,
            delays,
            offsets,
            data: vec![Complex64::new(0.0, 0.0); total * n_r * samples],
        }
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_u(&self) -> usize {
        self.delays.len()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn delays(&self, user: usize) -> &[usize] {
        &self.delays[user]
    }

    pub fn all_delays(&self) -> &[Vec<usize>] {
        &self.delays
    }

    /// Number of stored sequences (`N_r` times the total tap count).
    pub fn columns(&self) -> usize {
        self.data.len() / self.samples.max(1)
    }

    fn col_index(&self, r: usize, user: usize, tap: usize) -> usize {
        (self.offsets[user] + tap) * self.n_r + r
    }

    pub fn seq(&self, r: usize, user: usize, tap: usize) -> &[Complex64] {
        self.column(self.col_index(r, user, tap))
    }

    pub fn seq_mut(&mut self, r: usize, user: usize, tap: usize) -> &mut [Complex64] {
        let c = self.col_index(r, user, tap);
        self.column_mut(c)
    }

    /// Sequence of the tap at `delay`, if the user has one there.
    pub fn seq_at_delay(&self, r: usize, user: usize, delay: usize) -> Option<&[Complex64]> {
        let tap = self.delays[user].iter().position(|&d| d == delay)?;
        Some(self.seq(r, user, tap))
    }

    pub fn column(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn column_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Copy of samples `[start, start + len)` of every sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<TapChannel> {
        if start + len > self.samples {
            return Err(SimError::Invalid(format!(
                "window [{start}, {}) exceeds {} samples",
                start + len,
                self.samples
            )));
        }
        let mut out = TapChannel::zeros(self.n_r, self.delays.clone(), len);
        for c in 0..self.columns() {
            out.column_mut(c).copy_from_slice(&self.column(c)[start..start + len]);
        }
        Ok(out)
    }

    /// Concatenate equal-support channels along time.
    pub fn concat(parts: &[TapChannel]) -> Result<TapChannel> {
        let first = parts.first().ok_or_else(|| SimError::Invalid("nothing to concatenate".into()))?;
        let total: usize = parts.iter().map(|p| p.samples).sum();
        let mut out = TapChannel::zeros(first.n_r, first.delays.clone(), total);
        let mut at = 0;
        for p in parts {
            if p.delays != first.delays || p.n_r != first.n_r {
                return Err(SimError::Invalid("concatenated channels differ in support".into()));
            }
            for c in 0..p.columns() {
                out.column_mut(c)[at..at + p.samples].copy_from_slice(p.column(c));
            }
            at += p.samples;
        }
        Ok(out)
    }

    /// Same channel laid out over a (super)set of delays; absent taps are zero.
    pub fn with_delays(&self, delays: Vec<Vec<usize>>) -> TapChannel {
        let mut out = TapChannel::zeros(self.n_r, delays, self.samples);
        for user in 0..out.n_u().min(self.n_u()) {
            for tap in 0..out.delays[user].len() {
                let d = out.delays[user][tap];
                for r in 0..self.n_r {
                    if let Some(src) = self.seq_at_delay(r, user, d) {
                        out.seq_mut(r, user, tap).copy_from_slice(src);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    /// `cos ψ` of the ray's azimuth relative to the direction of motion.
    pub cos_azimuth: f64,
    /// Initial phase in `[0, 2π)`.
    pub phase: f64,
    /// Angle of arrival at the base station, radians.
    pub aoa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathParams {
    pub delay: usize,
    /// Delay shared by all users.
    pub common: bool,
    pub aoa_center: f64,
    pub angular_spread: f64,
    /// Mean power; the powers of one user sum to one.
    pub power: f64,
    pub rays: Vec<Ray>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathGeometry {
    /// Per user, paths sorted by delay.
    pub users: Vec<Vec<PathParams>>,
}

impl PathGeometry {
    pub fn support(&self, user: usize) -> Vec<usize> {
        self.users[user].iter().map(|p| p.delay).collect()
    }

    pub fn supports(&self) -> Vec<Vec<usize>> {
        (0..self.users.len()).map(|u| self.support(u)).collect()
    }

    pub fn common_delays(&self) -> Vec<usize> {
        self.users
            .first()
            .map(|paths| paths.iter().filter(|p| p.common).map(|p| p.delay).collect())
            .unwrap_or_default()
    }
}

/// A channel realization over `n_frames` consecutive frames.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub geometry: PathGeometry,
    pub gains: TapChannel,
    pub mn: usize,
    pub n_frames: usize,
    pub f_max: f64,
    pub t_s: f64,
}

impl ChannelRealization {
    /// Gains of one frame (`MN` samples per sequence).
    pub fn frame(&self, frame: usize) -> Result<TapChannel> {
        self.frames(frame, 1)
    }

    /// Gains of `count` consecutive frames starting at `first`.
    pub fn frames(&self, first: usize, count: usize) -> Result<TapChannel> {
        if first + count > self.n_frames {
            return Err(SimError::FrameOutOfRange { frame: first + count - 1, frames: self.n_frames });
        }
        self.gains.window(first * self.mn, count * self.mn)
    }
}

/// Draw delay supports, angles and ray parameters.
pub fn gen_path_geometry<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<PathGeometry> {
    let (k, k_c, l, n_u) = (config.k, config.k_c, config.l, config.n_u);
    if k_c > k {
        return Err(ConfigError::Bound("K_C <= K".into()).into());
    }
    if k > l {
        return Err(ConfigError::Bound("K <= L".into()).into());
    }
    let needed = n_u * (k - k_c) + k_c;
    if needed > l {
        return Err(ConfigError::Bound("N_u (K - K_C) + K_C <= L".into()).into());
    }
    if config.n_ray < 8 {
        return Err(ConfigError::Bound("N_ray >= 8".into()).into());
    }
    let picked = sample(rng, l, needed).into_vec();
    let common: Vec<usize> = picked[..k_c].to_vec();
    let common_aoa: Vec<f64> = (0..k_c).map(|_| rng.random_range(-PI / 2.0..PI / 2.0)).collect();
    let spread = config.angular_spread_deg.to_radians();

    let mut users = Vec::with_capacity(n_u);
    for u in 0..n_u {
        let individual = &picked[k_c + u * (k - k_c)..k_c + (u + 1) * (k - k_c)];
        let mut delays: Vec<(usize, Option<f64>)> =
            common.iter().zip(&common_aoa).map(|(&d, &a)| (d, Some(a))).collect();
        delays.extend(individual.iter().map(|&d| (d, None)));
        delays.sort_by_key(|&(d, _)| d);

        let raw: Vec<f64> = if config.path_powers.is_empty() {
            delays.iter().map(|&(d, _)| (-(d as f64) / config.delay_spread_taps).exp()).collect()
        } else {
            config.path_powers.clone()
        };
        let total: f64 = raw.iter().sum();

        let paths = delays
            .iter()
            .zip(&raw)
            .map(|(&(delay, shared_aoa), &p)| {
                let aoa_center = shared_aoa.unwrap_or_else(|| rng.random_range(-PI / 2.0..PI / 2.0));
                let rays = (0..config.n_ray)
                    .map(|_| Ray {
                        cos_azimuth: rng.random_range(0.0..2.0 * PI).cos(),
                        phase: rng.random_range(0.0..2.0 * PI),
                        aoa: aoa_center + spread * (rng.random::<f64>() - 0.5),
                    })
                    .collect();
                PathParams {
                    delay,
                    common: shared_aoa.is_some(),
                    aoa_center,
                    angular_spread: spread,
                    power: p / total,
                    rays,
                }
            })
            .collect();
        users.push(paths);
    }
    Ok(PathGeometry { users })
}

/// Synthesize the gain sequences over `N_t + N_f` frames.
pub fn gen_gain_process(geometry: &PathGeometry, config: &SimConfig) -> ChannelRealization {
    let mn = config.mn();
    let n_frames = config.n_t + config.n_f;
    let samples = n_frames * mn;
    let f_max = config.f_max();
    let t_s = config.t_s();
    let n_r = config.n_r;
    let mut gains = TapChannel::zeros(n_r, geometry.supports(), samples);

    let mut phasor = vec![Complex64::new(0.0, 0.0); samples];
    for (u, paths) in geometry.users.iter().enumerate() {
        for (tap, path) in paths.iter().enumerate() {
            let amp = (path.power / path.rays.len() as f64).sqrt();
            for ray in &path.rays {
                let w = 2.0 * PI * f_max * t_s * ray.cos_azimuth;
                for (t, p) in phasor.iter_mut().enumerate() {
                    *p = Complex64::from_polar(amp, -(w * t as f64 + ray.phase));
                }
                // Half-wavelength spacing: steering element exp(j π n_r sin θ).
                let step = Complex64::from_polar(1.0, PI * ray.aoa.sin());
                let mut steer = Complex64::new(1.0, 0.0);
                for r in 0..n_r {
                    for (g, p) in gains.seq_mut(r, u, tap).iter_mut().zip(&phasor) {
                        *g += steer * p;
                    }
                    steer *= step;
                }
            }
        }
    }
    ChannelRealization { geometry: geometry.clone(), gains, mn, n_frames, f_max, t_s }
}

/// Number of taps per user whose antenna-0 gain norm reaches `zeta`.
pub fn count_significant_paths(real: &ChannelRealization, zeta: f64) -> Vec<usize> {
    let g = &real.gains;
    (0..g.n_u())
        .map(|u| {
            (0..g.delays(u).len())
                .filter(|&tap| crate::dsp::norm_sqr(g.seq(0, u, tap)).sqrt() - zeta >= 0.0)
                .count()
        })
        .collect()
}

/// Write every gain sample as `frame n_r n_u path n re im`, one per line.
pub fn dump_realization<W: Write>(real: &ChannelRealization, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# frame n_r n_u path n re im")?;
    let g = &real.gains;
    for frame in 0..real.n_frames {
        for r in 0..g.n_r() {
            for u in 0..g.n_u() {
                for tap in 0..g.delays(u).len() {
                    let seq = &g.seq(r, u, tap)[frame * real.mn..(frame + 1) * real.mn];
                    for (n, v) in seq.iter().enumerate() {
                        writeln!(out, "{frame} {r} {u} {} {n} {:.17e} {:.17e}", g.delays(u)[tap], v.re, v.im)?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn realize(cfg: &SimConfig, seed: u64) -> ChannelRealization {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = gen_path_geometry(cfg, &mut rng).unwrap();
        gen_gain_process(&geom, cfg)
    }

    #[test]
    fn one_shared_delay_and_six_individual() {
        let mut cfg = SimConfig::desk();
        cfg.k = 4;
        cfg.k_c = 1;
        cfg.n_u = 2;
        let geom = gen_path_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (a, b) = (geom.support(0), geom.support(1));
        let shared: Vec<_> = a.iter().filter(|d| b.contains(d)).collect();
        assert_eq!(shared.len(), 1);
        let mut individual: Vec<_> = a.iter().chain(&b).filter(|d| !shared.contains(d)).collect();
        individual.sort();
        individual.dedup();
        assert_eq!(individual.len(), 6);
        assert_eq!(geom.common_delays(), vec![*shared[0]]);
    }

    #[test]
    fn fully_common_support() {
        let mut cfg = SimConfig::desk();
        cfg.k_c = cfg.k;
        let geom = gen_path_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(geom.support(0), geom.support(1));
    }

    #[test]
    fn geometry_is_deterministic_per_seed() {
        let cfg = SimConfig::desk();
        let a = gen_path_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gen_path_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_infeasible_supports() {
        let mut cfg = SimConfig::desk();
        cfg.l = 4;
        cfg.k = 3;
        cfg.k_c = 0;
        let err = gen_path_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(err.to_string().contains("N_u (K - K_C) + K_C <= L"));
    }

    #[test]
    fn broadside_paths_are_identical_across_antennas() {
        let cfg = SimConfig::desk();
        let mut geom = gen_path_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for p in geom.users.iter_mut().flatten() {
            for ray in &mut p.rays {
                ray.aoa = 0.0;
            }
        }
        let real = gen_gain_process(&geom, &cfg);
        for tap in 0..cfg.k {
            let base = real.gains.seq(0, 0, tap);
            for r in 1..cfg.n_r {
                assert_eq!(real.gains.seq(r, 0, tap), base);
            }
        }
    }

    #[test]
    fn single_ray_spatial_factorization() {
        let mut cfg = SimConfig::desk();
        cfg.n_ray = 8;
        let mut geom = gen_path_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        // Collapse every cluster to one direction so the ratio is a single steering term.
        for p in geom.users.iter_mut().flatten() {
            let aoa = p.rays[0].aoa;
            for ray in &mut p.rays {
                ray.aoa = aoa;
            }
        }
        let real = gen_gain_process(&geom, &cfg);
        let path = &geom.users[1][0];
        for r in 0..cfg.n_r {
            let expect = Complex64::from_polar(1.0, PI * r as f64 * path.rays[0].aoa.sin());
            for (h, h0) in real.gains.seq(r, 1, 0).iter().zip(real.gains.seq(0, 1, 0)).take(50) {
                assert!((h / h0 - expect).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn significant_path_counts() {
        let mut cfg = SimConfig::desk();
        cfg.k = 4;
        let real = realize(&cfg, 11);
        assert_eq!(count_significant_paths(&real, 0.0), vec![4, 4]);
        assert_eq!(count_significant_paths(&real, 1e-6), vec![4, 4]);
        let max_norm = (0..cfg.n_u)
            .flat_map(|u| (0..cfg.k).map(move |t| (u, t)))
            .map(|(u, t)| crate::dsp::norm_sqr(real.gains.seq(0, u, t)).sqrt())
            .fold(0.0, f64::max);
        assert_eq!(count_significant_paths(&real, max_norm * 1.01), vec![0, 0]);
    }

    #[test]
    fn frames_tile_the_continuous_process() {
        let cfg = SimConfig::desk();
        let real = realize(&cfg, 8);
        let f0 = real.frame(0).unwrap();
        let f1 = real.frame(1).unwrap();
        let both = real.frames(0, 2).unwrap();
        assert_eq!(TapChannel::concat(&[f0, f1]).unwrap(), both);
        assert!(matches!(
            real.frame(cfg.n_t + cfg.n_f),
            Err(SimError::FrameOutOfRange { .. })
        ));
    }

    #[test]
    fn dump_lists_every_sample() {
        let mut cfg = SimConfig::desk();
        cfg.n_t = 2;
        cfg.n_f = 0;
        cfg.n_r = 2;
        let real = realize(&cfg, 1);
        let mut buf = Vec::new();
        dump_realization(&real, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 2 * cfg.n_r * cfg.n_u * cfg.k * cfg.mn());
        let first: Vec<&str> = text.lines().nth(1).unwrap().split(' ').collect();
        assert_eq!(first.len(), 7);
    }
}
