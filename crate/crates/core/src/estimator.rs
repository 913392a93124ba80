//! Uplink channel estimation: pilot measurement system, greedy block-sparse
//! recovery, BEM reconstruction, Savitzky-Golay smoothing and the data-aided
//! refinement loop around a conjugate-gradient LMMSE detector.
//!
//! Measurement model: with `ỹ_r = P^H y_dd,r` (the DFT of the received time
//! frame), observation set `q` samples `ỹ_r` at the non-zero pilot positions
//! shifted by `q - (Q-1)/2`. For a channel inside the CE-BEM span these
//! samples are exactly
//!
//! `Y[(r, g), q] = Σ_{u, l, q_s} p_u[g] F[p_g, l] D_u[r, q_s] S[(l, u, q_s), q]`
//!
//! where `F` is the unitary `MN`-point DFT and `S` holds SR-BEM coefficients
//! of the delay-aligned gains (tap `l` carries the extra phase `exp(-j ω_q l)`,
//! undone in [`coeffs_to_channel`]).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::basis::{ce_frequency, SgFilter};
use crate::channel::TapChannel;
use crate::dsp::dft_entry;
use crate::error::{Result, SimError};
use crate::metrics::{ber, channel_nmse};
use crate::otfs::EffChannel;
use crate::pilot::{data_vector, pilot_vector, precode, precode_adjoint, qpsk_slice, PilotPattern};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative pivot below which the selected columns count as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Linear system `Y = Φ̄ S̄` kept in factored form.
///
/// Column `(l * N_u + u) * Q_s + q_s` of `Φ̄` is the outer product of
/// `p_u ⊙ F[P_nz, l]` (pilot positions) and `D_u[:, q_s]` (antennas); rows are
/// ordered `r * G + g`.
#[derive(Clone, Debug)]
pub struct MeasurementSystem {
    /// `(N_r G) x Q` observations.
    y: DMatrix<Complex64>,
    /// `Φ̄^H Y`, reused by every least-squares solve.
    corr_y: DMatrix<Complex64>,
    /// Per user `G x L`: pilot value times DFT entry.
    pilot_dft: Vec<DMatrix<Complex64>>,
    /// Per user `N_r x Q_s` spatial basis.
    spatial: Vec<DMatrix<Complex64>>,
    pub n_r: usize,
    pub g: usize,
    pub l: usize,
    pub n_u: usize,
    pub q_s: usize,
    pub q: usize,
    /// Gram factors `A_u^H A_v` and `D_u^H D_v`, indexed `u * N_u + v`.
    pilot_gram: Vec<DMatrix<Complex64>>,
    spatial_gram: Vec<DMatrix<Complex64>>,
}

/// One SR-BEM coefficient row: (delay, user, spatial index).
pub type Column = (usize, usize, usize);

impl MeasurementSystem {
    pub fn new(
        y: DMatrix<Complex64>,
        pattern: &PilotPattern,
        spatial: &[DMatrix<Complex64>],
        l: usize,
    ) -> Result<Self> {
        let n_u = spatial.len();
        if n_u == 0 || n_u != pattern.n_u() {
            return Err(SimError::Length { expected: pattern.n_u(), got: n_u });
        }
        let n_r = spatial[0].nrows();
        let q_s = spatial[0].ncols();
        if spatial.iter().any(|d| d.nrows() != n_r || d.ncols() != q_s) {
            return Err(SimError::Invalid("spatial bases differ in shape".into()));
        }
        let g = pattern.g();
        if y.nrows() != n_r * g || y.ncols() != pattern.q {
            return Err(SimError::Length { expected: n_r * g * pattern.q, got: y.len() });
        }
        let mn = pattern.mn();
        let pilot_dft: Vec<DMatrix<Complex64>> = (0..n_u)
            .map(|u| {
                DMatrix::from_fn(g, l, |gi, li| {
                    dft_entry(pattern.nonzero[gi], li, mn) * pattern.pilots[u][gi]
                })
            })
            .collect();
        let mut pilot_gram = Vec::with_capacity(n_u * n_u);
        let mut spatial_gram = Vec::with_capacity(n_u * n_u);
        for a in 0..n_u {
            for b in 0..n_u {
                pilot_gram.push(pilot_dft[a].ad_mul(&pilot_dft[b]));
                spatial_gram.push(spatial[a].ad_mul(&spatial[b]));
            }
        }
        let mut sys = Self {
            corr_y: DMatrix::zeros(0, 0),
            y,
            pilot_dft,
            spatial: spatial.to_vec(),
            n_r,
            g,
            l,
            n_u,
            q_s,
            q: pattern.q,
            pilot_gram,
            spatial_gram,
        };
        sys.corr_y = sys.correlate(&sys.y);
        Ok(sys)
    }

    pub fn y(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn n_cols(&self) -> usize {
        self.l * self.n_u * self.q_s
    }

    pub fn column_index(&self, (l, u, qs): Column) -> usize {
        (l * self.n_u + u) * self.q_s + qs
    }

    /// Position of a permuted column in the natural (user, spatial, delay)
    /// ordering of the unpermuted coefficient vector.
    pub fn natural_index(&self, col: usize) -> usize {
        let qs = col % self.q_s;
        let u = (col / self.q_s) % self.n_u;
        let l = col / (self.q_s * self.n_u);
        (u * self.q_s + qs) * self.l + l
    }

    /// Column range of block `(delay, user)`.
    pub fn block_range(&self, l: usize, u: usize) -> std::ops::Range<usize> {
        let start = self.column_index((l, u, 0));
        start..start + self.q_s
    }

    /// `Φ̄` as an explicit matrix.
    pub fn dense_phi(&self) -> DMatrix<Complex64> {
        let mut phi = DMatrix::zeros(self.n_r * self.g, self.n_cols());
        for l in 0..self.l {
            for u in 0..self.n_u {
                for qs in 0..self.q_s {
                    let c = self.column_index((l, u, qs));
                    for r in 0..self.n_r {
                        for g in 0..self.g {
                            phi[(r * self.g + g, c)] = self.pilot_dft[u][(g, l)] * self.spatial[u][(r, qs)];
                        }
                    }
                }
            }
        }
        phi
    }

    /// Column `q` of an `(N_r G) x Q` matrix viewed as `G x N_r`.
    fn slice(&self, m: &DMatrix<Complex64>, q: usize) -> DMatrix<Complex64> {
        DMatrix::from_column_slice(self.g, self.n_r, m.column(q).as_slice())
    }

    /// `Φ̄ S`.
    pub fn apply(&self, s: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(self.n_r * self.g, s.ncols());
        for q in 0..s.ncols() {
            let mut yq = DMatrix::<Complex64>::zeros(self.g, self.n_r);
            for u in 0..self.n_u {
                let su = DMatrix::from_fn(self.l, self.q_s, |l, qs| s[(self.column_index((l, u, qs)), q)]);
                yq += &self.pilot_dft[u] * su * self.spatial[u].transpose();
            }
            out.column_mut(q).copy_from_slice(yq.as_slice());
        }
        out
    }

    /// `Φ̄^H R`.
    pub fn correlate(&self, r: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(self.n_cols(), r.ncols());
        for q in 0..r.ncols() {
            let rq = self.slice(r, q);
            for u in 0..self.n_u {
                let c = self.pilot_dft[u].ad_mul(&rq) * self.spatial[u].map(|v| v.conj());
                for l in 0..self.l {
                    for qs in 0..self.q_s {
                        out[(self.column_index((l, u, qs)), q)] = c[(l, qs)];
                    }
                }
            }
        }
        out
    }

    fn gram_entry(&self, (la, ua, qa): Column, (lb, ub, qb): Column) -> Complex64 {
        let k = ua * self.n_u + ub;
        self.pilot_gram[k][(la, lb)] * self.spatial_gram[k][(qa, qb)]
    }

    /// Least squares on the given columns; `None` when they are rank deficient.
    pub fn least_squares(&self, cols: &[Column]) -> Option<DMatrix<Complex64>> {
        let n = cols.len();
        if n == 0 {
            return Some(DMatrix::zeros(0, self.q));
        }
        if n > self.n_r * self.g {
            return None;
        }
        let gram = DMatrix::from_fn(n, n, |i, j| self.gram_entry(cols[i], cols[j]));
        let max_diag = (0..n).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
        if max_diag <= 0.0 {
            return None;
        }
        let chol = gram.cholesky()?;
        let lmat = chol.l_dirty();
        let min_pivot = (0..n).map(|i| lmat[(i, i)].re.powi(2)).fold(f64::INFINITY, f64::min);
        if min_pivot < RANK_TOL * max_diag {
            return None;
        }
        let rhs = DMatrix::from_fn(n, self.q, |i, q| self.corr_y[(self.column_index(cols[i]), q)]);
        Some(chol.solve(&rhs))
    }

    /// `Φ̄` restricted to `cols` times `x`.
    fn apply_cols(&self, cols: &[Column], x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut s = DMatrix::zeros(self.n_cols(), self.q);
        for (i, &c) in cols.iter().enumerate() {
            s.row_mut(self.column_index(c)).copy_from(&x.row(i));
        }
        self.apply(&s)
    }
}

/// Sample the shifted observation sets of every antenna.
pub fn form_measurements(
    y_dd: &[Vec<Complex64>],
    pattern: &PilotPattern,
    spatial: &[DMatrix<Complex64>],
    l: usize,
) -> Result<MeasurementSystem> {
    let g = pattern.g();
    let n_r = y_dd.len();
    if let Some(d) = spatial.first() {
        if d.nrows() != n_r {
            return Err(SimError::Length { expected: d.nrows(), got: n_r });
        }
    }
    let sets: Vec<Vec<usize>> = (0..pattern.q).map(|q| pattern.observation_set(q)).collect();
    let mut y = DMatrix::zeros(n_r * g, pattern.q);
    for (r, grid) in y_dd.iter().enumerate() {
        if grid.len() != pattern.mn() {
            return Err(SimError::Length { expected: pattern.mn(), got: grid.len() });
        }
        let shifted = precode_adjoint(grid, pattern.m, pattern.n)?;
        for (q, set) in sets.iter().enumerate() {
            for (gi, &p) in set.iter().enumerate() {
                y[(r * g + gi, q)] = shifted[p];
            }
        }
    }
    MeasurementSystem::new(y, pattern, spatial, l)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Block {
    pub delay: usize,
    pub user: usize,
    /// Selected as part of a delay shared by all users.
    pub common: bool,
}

/// Recovered coefficient matrix with its block support.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCoeffs {
    /// `(L N_u Q_s) x Q`; rows outside the support are zero.
    pub s: DMatrix<Complex64>,
    /// Blocks in selection order.
    pub support: Vec<Block>,
    /// Residual Frobenius norm before the first and after every selection.
    pub residual_trace: Vec<f64>,
    pub l: usize,
    pub n_u: usize,
    pub q_s: usize,
}

impl SparseCoeffs {
    pub fn zeros(l: usize, n_u: usize, q_s: usize, q: usize) -> Self {
        Self { s: DMatrix::zeros(l * n_u * q_s, q), support: Vec::new(), residual_trace: Vec::new(), l, n_u, q_s }
    }

    /// Sorted delays selected for `user`.
    pub fn delays(&self, user: usize) -> Vec<usize> {
        let mut d: Vec<usize> = self.support.iter().filter(|b| b.user == user).map(|b| b.delay).collect();
        d.sort();
        d.dedup();
        d
    }

    pub fn row(&self, l: usize, u: usize, qs: usize) -> usize {
        (l * self.n_u + u) * self.q_s + qs
    }
}

struct Pursuit<'a> {
    sys: &'a MeasurementSystem,
    cols: Vec<Column>,
    blocks: Vec<Block>,
    coeffs: DMatrix<Complex64>,
    residual: DMatrix<Complex64>,
    trace: Vec<f64>,
}

impl<'a> Pursuit<'a> {
    fn new(sys: &'a MeasurementSystem) -> Self {
        Self {
            sys,
            cols: Vec::new(),
            blocks: Vec::new(),
            coeffs: DMatrix::zeros(0, sys.q),
            residual: sys.y.clone(),
            trace: vec![sys.y.norm()],
        }
    }

    fn correlation(&self) -> DMatrix<Complex64> {
        self.sys.correlate(&self.residual)
    }

    fn add(&mut self, cols: &[Column], blocks: &[Block]) -> Result<()> {
        let mut trial = self.cols.clone();
        trial.extend_from_slice(cols);
        let Some(x) = self.sys.least_squares(&trial) else {
            return Err(SimError::DegenerateSupport { selected: self.blocks.len(), partial: Box::new(self.finish()) });
        };
        self.residual = &self.sys.y - self.sys.apply_cols(&trial, &x);
        self.cols = trial;
        self.coeffs = x;
        self.blocks.extend_from_slice(blocks);
        self.trace.push(self.residual.norm());
        Ok(())
    }

    fn finish(&self) -> SparseCoeffs {
        let sys = self.sys;
        let mut out = SparseCoeffs::zeros(sys.l, sys.n_u, sys.q_s, sys.q);
        for (i, &c) in self.cols.iter().enumerate() {
            out.s.row_mut(sys.column_index(c)).copy_from(&self.coeffs.row(i));
        }
        out.support = self.blocks.clone();
        out.residual_trace = self.trace.clone();
        out
    }
}

fn block_score(sys: &MeasurementSystem, corr: &DMatrix<Complex64>, l: usize, u: usize) -> f64 {
    sys.block_range(l, u).map(|c| corr.row(c).iter().map(|v| v.norm()).sum::<f64>()).sum()
}

fn block_cols(sys: &MeasurementSystem, l: usize, u: usize) -> Vec<Column> {
    (0..sys.q_s).map(|qs| (l, u, qs)).collect()
}

/// Greedy recovery with `K_C` shared-delay selections of width `N_u Q_s`
/// followed by `N_u (K - K_C)` per-user selections of width `Q_s`, each made
/// inside the most correlated delay group.
pub fn vbl_somp(sys: &MeasurementSystem, k: usize, k_c: usize) -> Result<SparseCoeffs> {
    if k_c > k {
        return Err(crate::error::ConfigError::Bound("K_C <= K".into()).into());
    }
    let mut p = Pursuit::new(sys);
    let mut taken = vec![false; sys.l * sys.n_u];
    for _ in 0..k_c {
        let corr = p.correlation();
        let mut best: Option<(usize, f64)> = None;
        for l in 0..sys.l {
            if (0..sys.n_u).any(|u| taken[l * sys.n_u + u]) {
                continue;
            }
            let beta: f64 = (0..sys.n_u).map(|u| block_score(sys, &corr, l, u)).sum();
            if best.is_none_or(|(_, b)| beta > b) {
                best = Some((l, beta));
            }
        }
        let Some((l, _)) = best else { break };
        let cols: Vec<Column> = (0..sys.n_u).flat_map(|u| block_cols(sys, l, u)).collect();
        let blocks: Vec<Block> = (0..sys.n_u).map(|u| Block { delay: l, user: u, common: true }).collect();
        p.add(&cols, &blocks)?;
        for u in 0..sys.n_u {
            taken[l * sys.n_u + u] = true;
        }
    }
    grouped_blocks(&mut p, &mut taken, sys.n_u * (k - k_c))?;
    Ok(p.finish())
}

/// Per-user selections that first pick the delay with the largest summed
/// correlation over its unselected blocks, then the best user at that delay.
fn grouped_blocks(p: &mut Pursuit, taken: &mut [bool], count: usize) -> Result<()> {
    let sys = p.sys;
    for _ in 0..count {
        let corr = p.correlation();
        let open = |l: usize| (0..sys.n_u).filter(|&u| !taken[l * sys.n_u + u]).collect::<Vec<_>>();
        let mut group: Option<(usize, f64)> = None;
        for l in 0..sys.l {
            let users = open(l);
            if users.is_empty() {
                continue;
            }
            let beta: f64 = users.iter().map(|&u| block_score(sys, &corr, l, u)).sum();
            if group.is_none_or(|(_, b)| beta > b) {
                group = Some((l, beta));
            }
        }
        let Some((l, _)) = group else { break };
        let mut best: Option<(usize, f64)> = None;
        for u in open(l) {
            let beta = block_score(sys, &corr, l, u);
            if best.is_none_or(|(_, b)| beta > b) {
                best = Some((u, beta));
            }
        }
        let Some((u, _)) = best else { break };
        p.add(&block_cols(sys, l, u), &[Block { delay: l, user: u, common: false }])?;
        taken[l * sys.n_u + u] = true;
    }
    Ok(())
}

fn individual_blocks(p: &mut Pursuit, taken: &mut [bool], count: usize) -> Result<()> {
    let sys = p.sys;
    for _ in 0..count {
        let corr = p.correlation();
        let mut best: Option<(usize, usize, f64)> = None;
        for l in 0..sys.l {
            for u in 0..sys.n_u {
                if taken[l * sys.n_u + u] {
                    continue;
                }
                let beta = block_score(sys, &corr, l, u);
                if best.is_none_or(|(_, _, b)| beta > b) {
                    best = Some((l, u, beta));
                }
            }
        }
        let Some((l, u, _)) = best else { break };
        p.add(&block_cols(sys, l, u), &[Block { delay: l, user: u, common: false }])?;
        taken[l * sys.n_u + u] = true;
    }
    Ok(())
}

/// Fixed-width block pursuit: `block_sparsity` selections of width `Q_s`.
pub fn bsomp(sys: &MeasurementSystem, block_sparsity: usize) -> Result<SparseCoeffs> {
    let mut p = Pursuit::new(sys);
    let mut taken = vec![false; sys.l * sys.n_u];
    individual_blocks(&mut p, &mut taken, block_sparsity)?;
    Ok(p.finish())
}

/// Row-wise simultaneous pursuit: `sparsity` single-column selections.
pub fn somp(sys: &MeasurementSystem, sparsity: usize) -> Result<SparseCoeffs> {
    let mut p = Pursuit::new(sys);
    let mut taken = vec![false; sys.n_cols()];
    for _ in 0..sparsity.min(sys.n_cols()) {
        let corr = p.correlation();
        let mut best: Option<(usize, f64)> = None;
        for c in 0..sys.n_cols() {
            if taken[c] {
                continue;
            }
            let beta: f64 = corr.row(c).iter().map(|v| v.norm()).sum();
            if best.is_none_or(|(_, b)| beta > b) {
                best = Some((c, beta));
            }
        }
        let Some((c, _)) = best else { break };
        let col = (c / (sys.q_s * sys.n_u), (c / sys.q_s) % sys.n_u, c % sys.q_s);
        let new_block = !p.cols.iter().any(|&(l, u, _)| l == col.0 && u == col.1);
        let blocks = if new_block { vec![Block { delay: col.0, user: col.1, common: false }] } else { vec![] };
        p.add(&[col], &blocks)?;
        taken[c] = true;
    }
    Ok(p.finish())
}

/// Least squares on known supports (`supports[u]` lists user `u`'s delays).
pub fn genie_ls(sys: &MeasurementSystem, supports: &[Vec<usize>], common: &[usize]) -> Result<SparseCoeffs> {
    let mut p = Pursuit::new(sys);
    let mut cols = Vec::new();
    let mut blocks = Vec::new();
    for (u, delays) in supports.iter().enumerate() {
        for &l in delays {
            if l >= sys.l {
                return Err(SimError::Invalid(format!("delay {l} outside the {} taps", sys.l)));
            }
            cols.extend(block_cols(sys, l, u));
            blocks.push(Block { delay: l, user: u, common: common.contains(&l) });
        }
    }
    p.add(&cols, &blocks)?;
    Ok(p.finish())
}

/// Per-frame tap channel from SR-BEM coefficients.
///
/// `h_{r,u,l}[n] = Σ_q exp(j ω_q l) (D_u S_{u,l})[r, q] exp(j ω_q n) / sqrt(MN)`.
pub fn coeffs_to_channel(coeffs: &SparseCoeffs, spatial: &[DMatrix<Complex64>], mn: usize) -> TapChannel {
    let q_total = coeffs.s.ncols();
    let n_r = spatial.first().map_or(0, |d| d.nrows());
    let delays: Vec<Vec<usize>> = (0..coeffs.n_u).map(|u| coeffs.delays(u)).collect();
    let mut out = TapChannel::zeros(n_r, delays.clone(), mn);
    let scale = 1.0 / (mn as f64).sqrt();
    let steps: Vec<Complex64> = (0..q_total).map(|q| Complex64::from_polar(1.0, ce_frequency(q, q_total, mn))).collect();
    for (u, user_delays) in delays.iter().enumerate() {
        for (tap, &l) in user_delays.iter().enumerate() {
            let s_block = DMatrix::from_fn(coeffs.q_s, q_total, |qs, q| coeffs.s[(coeffs.row(l, u, qs), q)]);
            let c = &spatial[u] * s_block;
            for r in 0..n_r {
                let amps: Vec<Complex64> = (0..q_total)
                    .map(|q| c[(r, q)] * Complex64::from_polar(scale, ce_frequency(q, q_total, mn) * l as f64))
                    .collect();
                let mut phasors = vec![Complex64::new(1.0, 0.0); q_total];
                for h in out.seq_mut(r, u, tap).iter_mut() {
                    let mut acc = ZERO;
                    for q in 0..q_total {
                        acc += amps[q] * phasors[q];
                        phasors[q] *= steps[q];
                    }
                    *h = acc;
                }
            }
        }
    }
    out
}

/// Smooth a multi-frame channel estimate along time, frame boundaries included.
///
/// All frames must share one support; the sequences are concatenated, every
/// sample is replaced by the local polynomial fit and the result is split back.
pub fn sg_smooth(frames: &[TapChannel], n_sg: usize, q_sg: usize) -> Result<Vec<TapChannel>> {
    let filter = SgFilter::new(n_sg, q_sg)?;
    let joined = TapChannel::concat(frames)?;
    let mut smoothed = joined.clone();
    for c in 0..joined.columns() {
        let s = filter.smooth(joined.column(c))?;
        smoothed.column_mut(c).copy_from_slice(&s);
    }
    let len = frames[0].samples();
    (0..frames.len()).map(|f| smoothed.window(f * len, len)).collect()
}

/// Output of the LMMSE detector.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// Per user, data positions only.
    pub soft: Vec<Vec<Complex64>>,
    pub hard: Vec<Vec<Complex64>>,
    pub converged: bool,
    pub iterations: usize,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

struct DataOperator<'a> {
    heff: &'a [Vec<EffChannel>],
    pattern: &'a PilotPattern,
}

impl DataOperator<'_> {
    fn n_u(&self) -> usize {
        self.heff.first().map_or(0, |r| r.len())
    }

    fn d(&self) -> usize {
        self.pattern.data_len()
    }

    /// Received grids for stacked per-user data.
    fn forward(&self, x: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
        let (m, n, d) = (self.pattern.m, self.pattern.n, self.d());
        let mut y = vec![vec![ZERO; m * n]; self.heff.len()];
        for u in 0..self.n_u() {
            let z = precode(&data_vector(self.pattern, &x[u * d..(u + 1) * d])?, m, n)?;
            for (r, yr) in y.iter_mut().enumerate() {
                self.heff[r][u].mul_add(&z, yr);
            }
        }
        Ok(y)
    }

    fn adjoint(&self, y: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
        let (m, n, d) = (self.pattern.m, self.pattern.n, self.d());
        let mut x = vec![ZERO; self.n_u() * d];
        for u in 0..self.n_u() {
            let mut w = vec![ZERO; m * n];
            for (r, yr) in y.iter().enumerate() {
                self.heff[r][u].adjoint_mul_add(yr, &mut w);
            }
            let back = precode_adjoint(&w, m, n)?;
            for (i, &p) in self.pattern.data.iter().enumerate() {
                x[u * d + i] = back[p];
            }
        }
        Ok(x)
    }
}

/// Solve `(A^H A + snr_d I) x = A^H y` by conjugate gradients, where `A`
/// maps per-user data symbols to the received grids through `heff[r][u]`.
pub fn lmmse_detect(
    y_d: &[Vec<Complex64>],
    heff: &[Vec<EffChannel>],
    pattern: &PilotPattern,
    snr_d: f64,
    i_cg: usize,
) -> Result<Detection> {
    if y_d.len() != heff.len() {
        return Err(SimError::Length { expected: heff.len(), got: y_d.len() });
    }
    if snr_d < 0.0 {
        return Err(SimError::Invalid("regularization must be non-negative".into()));
    }
    let op = DataOperator { heff, pattern };
    let normal = |v: &[Complex64]| -> Result<Vec<Complex64>> {
        let mut out = op.adjoint(&op.forward(v)?)?;
        for (o, vi) in out.iter_mut().zip(v) {
            *o += vi * snr_d;
        }
        Ok(out)
    };
    let b = op.adjoint(y_d)?;
    let b_norm = dot(&b, &b).re.sqrt();
    let mut x = vec![ZERO; b.len()];
    let mut converged = b_norm == 0.0;
    let mut iterations = 0;
    if !converged {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rho = dot(&r, &r).re;
        while iterations < i_cg {
            let ap = normal(&p)?;
            let curv = dot(&p, &ap).re;
            if curv <= 0.0 {
                break;
            }
            let alpha = rho / curv;
            for i in 0..x.len() {
                x[i] += p[i] * alpha;
                r[i] -= ap[i] * alpha;
            }
            iterations += 1;
            let rho_next = dot(&r, &r).re;
            if rho_next.sqrt() <= 1e-8 * b_norm {
                converged = true;
                break;
            }
            let beta = rho_next / rho;
            for i in 0..p.len() {
                p[i] = r[i] + p[i] * beta;
            }
            rho = rho_next;
        }
    }
    let d = pattern.data_len();
    let soft: Vec<Vec<Complex64>> = (0..op.n_u()).map(|u| x[u * d..(u + 1) * d].to_vec()).collect();
    let hard = soft.iter().map(|s| s.iter().map(|&v| qpsk_slice(v)).collect()).collect();
    Ok(Detection { soft, hard, converged, iterations })
}

/// Recovery algorithm for the sparse coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Vbl,
    Bsomp,
    Somp,
    Genie,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Vbl => "vbl-somp",
            Estimator::Bsomp => "bsomp",
            Estimator::Somp => "somp",
            Estimator::Genie => "genie-ls",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Estimator::Vbl, Estimator::Bsomp, Estimator::Somp, Estimator::Genie]
            .into_iter()
            .find(|e| e.name() == s || (s == "vbl" && *e == Estimator::Vbl) || (s == "genie" && *e == Estimator::Genie))
    }
}

/// Everything the uplink receiver knows.
#[derive(Clone, Debug)]
pub struct UlSetup<'a> {
    pub pattern: &'a PilotPattern,
    /// Per user `N_r x Q_s` spatial basis.
    pub spatial: Vec<DMatrix<Complex64>>,
    pub l: usize,
    pub k: usize,
    pub k_c: usize,
    pub n_sg: usize,
    pub q_sg: usize,
    pub i_max: usize,
    pub i_cg: usize,
    pub noise_var: f64,
    pub early_stop: bool,
    pub method: Estimator,
    /// True supports and shared delays, required by [`Estimator::Genie`].
    pub genie: Option<(Vec<Vec<usize>>, Vec<usize>)>,
}

/// Reference data for per-iteration NMSE and BER traces.
#[derive(Clone, Copy, Debug)]
pub struct UlTruth<'a> {
    pub channels: &'a [TapChannel],
    /// `[frame][user]` transmitted payload.
    pub data: &'a [Vec<Vec<Complex64>>],
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterStat {
    pub iter: usize,
    /// Linear NMSE of the smoothed estimate, when truth is known.
    pub nmse: Option<f64>,
    pub ber: Option<f64>,
    /// Fraction of hard decisions that changed since the previous iteration.
    pub changed: f64,
}

#[derive(Clone, Debug)]
pub struct UlEstimate {
    /// Per-frame estimates before smoothing, on the union support.
    pub coarse: Vec<TapChannel>,
    /// Per-frame smoothed estimates.
    pub smoothed: Vec<TapChannel>,
    /// `[frame][user]` hard decisions of the last iteration.
    pub decisions: Vec<Vec<Vec<Complex64>>>,
    pub trace: Vec<IterStat>,
    /// Recoveries that stopped early on a rank-deficient selection.
    pub degenerate: usize,
}

fn recover(sys: &MeasurementSystem, setup: &UlSetup) -> Result<SparseCoeffs> {
    match setup.method {
        Estimator::Vbl => vbl_somp(sys, setup.k, setup.k_c),
        Estimator::Bsomp => bsomp(sys, sys.n_u * setup.k),
        Estimator::Somp => somp(sys, sys.q_s * sys.n_u * setup.k),
        Estimator::Genie => {
            let (supports, common) = setup
                .genie
                .as_ref()
                .ok_or_else(|| SimError::Invalid("genie recovery needs the true supports".into()))?;
            genie_ls(sys, supports, common)
        }
    }
}

fn subtract(y: &[Vec<Complex64>], heff: &[Vec<EffChannel>], x: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let mut out = y.to_vec();
    for (r, yr) in out.iter_mut().enumerate() {
        let mut acc = vec![ZERO; yr.len()];
        for (u, xu) in x.iter().enumerate() {
            heff[r][u].mul_add(xu, &mut acc);
        }
        for (a, b) in yr.iter_mut().zip(&acc) {
            *a -= b;
        }
    }
    out
}

/// Estimate the channel of every uplink frame, alternating recovery,
/// smoothing, detection and data cancellation.
///
/// `frames[f][r]` is the delay-Doppler grid received at antenna `r` in frame `f`.
pub fn iterative_refine(frames: &[Vec<Vec<Complex64>>], setup: &UlSetup, truth: Option<UlTruth>) -> Result<UlEstimate> {
    let pattern = setup.pattern;
    let (m, n) = (pattern.m, pattern.n);
    let n_u = setup.spatial.len();
    if frames.is_empty() {
        return Err(SimError::Invalid("no uplink frames".into()));
    }
    let pilot_grids: Vec<Vec<Complex64>> =
        (0..n_u).map(|u| precode(&pilot_vector(pattern, u), m, n)).collect::<Result<_>>()?;

    let mut pilot_obs: Vec<Vec<Vec<Complex64>>> = frames.to_vec();
    let mut decisions: Vec<Vec<Vec<Complex64>>> = Vec::new();
    let mut trace = Vec::new();
    let mut degenerate = 0;
    let mut coarse = Vec::new();
    let mut smoothed = Vec::new();

    for iter in 0..=setup.i_max {
        let mut per_frame = Vec::with_capacity(frames.len());
        for y in &pilot_obs {
            let sys = form_measurements(y, pattern, &setup.spatial, setup.l)?;
            let coeffs = match recover(&sys, setup) {
                Ok(c) => c,
                Err(SimError::DegenerateSupport { partial, .. }) => {
                    degenerate += 1;
                    *partial
                }
                Err(e) => return Err(e),
            };
            per_frame.push(coeffs_to_channel(&coeffs, &setup.spatial, pattern.mn()));
        }
        let union = union_support(&per_frame);
        coarse = per_frame.iter().map(|h| h.with_delays(union.clone())).collect();
        smoothed = sg_smooth(&coarse, setup.n_sg, setup.q_sg)?;

        let mut new_decisions = Vec::with_capacity(frames.len());
        let mut next_obs = Vec::with_capacity(frames.len());
        for (f, y) in frames.iter().enumerate() {
            let heff = crate::otfs::effective_channels(&smoothed[f], m, n);
            let y_d = subtract(y, &heff, &pilot_grids);
            let det = lmmse_detect(&y_d, &heff, pattern, setup.noise_var, setup.i_cg)?;
            let data_grids: Vec<Vec<Complex64>> =
                det.hard.iter().map(|x| precode(&data_vector(pattern, x)?, m, n)).collect::<Result<_>>()?;
            next_obs.push(subtract(y, &heff, &data_grids));
            new_decisions.push(det.hard);
        }

        let changed = if decisions.is_empty() { 1.0 } else { decision_change(&decisions, &new_decisions) };
        let (nmse, ber_value) = match truth {
            Some(t) => {
                let nmse = channel_nmse(t.channels, &smoothed)?;
                let tx: Vec<Complex64> = t.data.iter().flatten().flatten().copied().collect();
                let rx: Vec<Complex64> = new_decisions.iter().flatten().flatten().copied().collect();
                (Some(nmse), if tx.is_empty() { None } else { Some(ber(&rx, &tx)?) })
            }
            None => (None, None),
        };
        trace.push(IterStat { iter, nmse, ber: ber_value, changed });
        decisions = new_decisions;
        pilot_obs = next_obs;
        if setup.early_stop && iter > 0 && changed < 0.01 {
            break;
        }
    }
    Ok(UlEstimate { coarse, smoothed, decisions, trace, degenerate })
}

fn decision_change(a: &[Vec<Vec<Complex64>>], b: &[Vec<Vec<Complex64>>]) -> f64 {
    let mut total = 0usize;
    let mut diff = 0usize;
    for (x, y) in a.iter().flatten().flatten().zip(b.iter().flatten().flatten()) {
        total += 1;
        if x != y {
            diff += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        diff as f64 / total as f64
    }
}

/// Per-user union of the delays of several estimates.
pub fn union_support(frames: &[TapChannel]) -> Vec<Vec<usize>> {
    let n_u = frames.first().map_or(0, |f| f.n_u());
    (0..n_u)
        .map(|u| {
            let mut d: Vec<usize> = frames.iter().flat_map(|f| f.delays(u).iter().copied()).collect();
            d.sort();
            d.dedup();
            d
        })
        .collect()
}

/// Least-squares projection helper used by tests and the acceptance suite:
/// `Φ^+ y` through an SVD, returning `None` when `Φ` is rank deficient.
pub fn dense_least_squares(phi: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= 1e-10 * smax) || phi.ncols() > phi.nrows() {
        return None;
    }
    svd.solve(y, 0.0).ok()
}

/// Spatial coarse vectors of one user, one per (tap, CE-BEM term).
pub fn coarse_spatial_vectors(taps: &TapChannel, user: usize, ce: &DMatrix<Complex64>) -> Vec<DVector<Complex64>> {
    let mut out = Vec::new();
    for tap in 0..taps.delays(user).len() {
        for q in 0..ce.ncols() {
            let b = ce.column(q);
            out.push(DVector::from_fn(taps.n_r(), |r, _| {
                b.iter().zip(taps.seq(r, user, tap)).map(|(bq, h)| bq.conj() * h).sum()
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::rotated_dft;
    use crate::otfs::complex_gaussian;
    use crate::pilot::build_pattern_with;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spatial(n_r: usize, q_s: usize, n_u: usize) -> Vec<DMatrix<Complex64>> {
        (0..n_u).map(|_| rotated_dft(n_r, 0.0).columns(0, q_s).into_owned()).collect()
    }

    fn random_system(seed: u64, l: usize, n_r: usize, q_s: usize) -> MeasurementSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = build_pattern_with(8, 4, 3, 6, 2, 1.0, &mut rng).unwrap();
        let y = DMatrix::from_fn(n_r * 6, 3, |_, _| complex_gaussian(&mut rng, 1.0));
        MeasurementSystem::new(y, &pattern, &spatial(n_r, q_s, 2), l).unwrap()
    }

    #[test]
    fn structured_products_match_dense() {
        let sys = random_system(1, 5, 3, 2);
        let phi = sys.dense_phi();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = DMatrix::from_fn(sys.n_cols(), 3, |_, _| complex_gaussian(&mut rng, 1.0));
        assert!((sys.apply(&s) - &phi * &s).norm() < 1e-10);
        assert!((sys.correlate(&sys.y) - phi.ad_mul(&sys.y)).norm() < 1e-10);
        let cols = vec![(0, 0, 0), (3, 1, 1), (4, 0, 1)];
        let sub = DMatrix::from_fn(phi.nrows(), 3, |r, c| phi[(r, sys.column_index(cols[c]))]);
        let x = sys.least_squares(&cols).unwrap();
        let oracle = dense_least_squares(&sub, &sys.y).unwrap();
        assert!((x - oracle).norm() < 1e-9);
    }

    #[test]
    fn natural_index_is_a_permutation() {
        let sys = random_system(3, 5, 3, 2);
        let mut seen: Vec<usize> = (0..sys.n_cols()).map(|c| sys.natural_index(c)).collect();
        seen.sort();
        assert_eq!(seen, (0..sys.n_cols()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_observation_gives_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pattern = build_pattern_with(32, 4, 3, 16, 2, 1.0, &mut rng).unwrap();
        let sys = MeasurementSystem::new(DMatrix::zeros(4 * 16, 3), &pattern, &spatial(4, 2, 2), 6).unwrap();
        let s = vbl_somp(&sys, 2, 1).unwrap();
        assert_eq!(s.support.len(), 2 + 2);
        assert!(s.s.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn iteration_count_follows_sparsity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pattern = build_pattern_with(32, 8, 3, 40, 2, 1.0, &mut rng).unwrap();
        let y = DMatrix::from_fn(8 * 40, 3, |_, _| complex_gaussian(&mut rng, 1.0));
        let sys = MeasurementSystem::new(y, &pattern, &spatial(8, 2, 2), 16).unwrap();
        let s = vbl_somp(&sys, 4, 1).unwrap();
        // One shared selection adding a block per user, then six individual ones.
        assert_eq!(s.residual_trace.len(), 1 + 7);
        assert_eq!(s.support.len(), 2 + 6);
        assert!(s.residual_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn bsomp_equals_vbl_without_shared_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pattern = build_pattern_with(16, 4, 3, 12, 1, 1.0, &mut rng).unwrap();
        let y = DMatrix::from_fn(4 * 12, 3, |_, _| complex_gaussian(&mut rng, 1.0));
        let sys = MeasurementSystem::new(y, &pattern, &spatial(4, 2, 1), 8).unwrap();
        let a = vbl_somp(&sys, 3, 0).unwrap();
        let b = bsomp(&sys, 3).unwrap();
        assert_eq!(a.support, b.support);
    }

    #[test]
    fn degenerate_selection_reports_partial() {
        // More block columns than observations after a few selections.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pattern = build_pattern_with(8, 4, 3, 2, 1, 1.0, &mut rng).unwrap();
        let y = DMatrix::from_fn(2 * 2, 3, |_, _| complex_gaussian(&mut rng, 1.0));
        let sys = MeasurementSystem::new(y, &pattern, &spatial(2, 2, 1), 8).unwrap();
        match bsomp(&sys, 4) {
            Err(SimError::DegenerateSupport { selected, partial }) => {
                assert_eq!(partial.support.len(), selected);
            }
            other => panic!("expected degenerate support, got {other:?}"),
        }
    }

    #[test]
    fn zero_coefficients_give_zero_channel() {
        let s = SparseCoeffs::zeros(4, 2, 2, 3);
        let h = coeffs_to_channel(&s, &spatial(3, 2, 2), 32);
        assert_eq!(h.energy(), 0.0);
    }

    #[test]
    fn dc_coefficient_gives_constant_column() {
        let mut s = SparseCoeffs::zeros(4, 1, 2, 3);
        s.support.push(Block { delay: 2, user: 0, common: false });
        let row = s.row(2, 0, 0);
        s.s[(row, 1)] = Complex64::new(1.0, 0.0);
        let d = spatial(4, 2, 1);
        let h = coeffs_to_channel(&s, &d, 32);
        for r in 0..4 {
            let expect = d[0][(r, 0)] / (32f64).sqrt();
            assert!(h.seq(r, 0, 0).iter().all(|v| (v - expect).norm() < 1e-14));
        }
    }

    #[test]
    fn smoothing_keeps_polynomials_and_boundaries() {
        let mut frames = Vec::new();
        for f in 0..3 {
            let mut t = TapChannel::zeros(1, vec![vec![0]], 16);
            for (i, v) in t.seq_mut(0, 0, 0).iter_mut().enumerate() {
                let k = (f * 16 + i) as f64;
                *v = Complex64::new(1.0 + 0.1 * k - 0.002 * k * k, 0.5 * k);
            }
            frames.push(t);
        }
        let out = sg_smooth(&frames, 5, 2).unwrap();
        for (a, b) in frames.iter().zip(&out) {
            for (x, y) in a.seq(0, 0, 0).iter().zip(b.seq(0, 0, 0)) {
                assert!((x - y).norm() <= 1e-9 * x.norm());
            }
        }
        let short = vec![TapChannel::zeros(1, vec![vec![0]], 4)];
        assert!(sg_smooth(&short, 5, 2).is_err());
    }

    #[test]
    fn detector_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pattern = build_pattern_with(8, 4, 3, 2, 1, 1.0, &mut rng).unwrap();
        let mut identity = TapChannel::zeros(1, vec![vec![0]], 32);
        identity.seq_mut(0, 0, 0).iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        let heff = crate::otfs::effective_channels(&identity, 8, 4);
        let payload = crate::pilot::random_qpsk(&mut rng, pattern.data_len());
        let y = precode(&data_vector(&pattern, &payload).unwrap(), 8, 4).unwrap();
        let det = lmmse_detect(&[y.clone()], &heff, &pattern, 0.0, 20).unwrap();
        assert_eq!(det.hard[0], payload);
        assert!(det.converged);
        let det = lmmse_detect(&[y], &heff, &pattern, 1e12, 20).unwrap();
        assert!(det.soft[0].iter().all(|v| v.norm() < 1e-10));
    }
}
