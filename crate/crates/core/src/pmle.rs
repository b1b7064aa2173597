//! Penalized Poisson maximum likelihood over a quantized candidate set.
//!
//! Candidates live in rate space: every entry is a multiple of
//! `step = L0 / G` and the entries sum to at most `L0`. A candidate `lambda`
//! is scored by
//!
//! ```text
//! NLL(lambda + c L0 1_Omega) + 2 pen(lambda),    NLL(f) = sum_j mu_j - y_j ln mu_j,  mu = n tau A f
//! ```
//!
//! where `Omega` is a counter cover, so every `mu_j >= n tau c L0 > 0` once
//! the offset is on. Working with the integer matrix `A` and rates is the same
//! objective as working with `A / d` and `theta = n tau d lambda`; see
//! [`IntensityScale`].
//!
//! Whale localization keeps only flows whose counters all rank among the `kd`
//! largest, and [`pmle_reduced`] searches candidates supported there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expander::{BipartiteGraph, CoverSet};
use crate::metrics::{l1_norm, top_k_indices};
use crate::stream::ln_gamma;

/// Floor applied to `mu` inside the continuous solver.
pub const MU_FLOOR: f64 = 1e-12;

const BATCH: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// `s (ln U + ln(1 + G)) + 2 ln(1 + s) + ln 2` for `s` nonzero entries.
    #[default]
    L0Scaled,
    /// `ln |Lambda|` for every candidate.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once `|F_old - F_new| <= tol * max(1, |F_old|)`.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 5000,
            tol: 1e-8,
        }
    }
}

/// Tunable knobs; the data-dependent parts of [`PmleConfig`] are supplied
/// per decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmleParams {
    pub gamma: f64,
    /// With `false` the offset coefficient `c` is 0.
    pub offset: bool,
    /// `G = L0 / step`.
    pub grid_levels: u32,
    pub penalty_mode: PenaltyMode,
    pub max_support: Option<usize>,
    /// Largest candidate count searched exhaustively.
    pub enumeration_cap: f64,
    /// Fixed rate budget; when unset, `l0_factor * ||y||_1 / (n tau d)`.
    pub l0: Option<f64>,
    pub l0_factor: f64,
    pub solver: SolverOptions,
}

impl Default for PmleParams {
    fn default() -> Self {
        PmleParams {
            gamma: 1.0,
            offset: true,
            grid_levels: 16384,
            penalty_mode: PenaltyMode::L0Scaled,
            max_support: None,
            enumeration_cap: 1e6,
            l0: None,
            l0_factor: 1.25,
            solver: SolverOptions::default(),
        }
    }
}

impl PmleParams {
    /// The rate budget used for counters `y` observed over `scale`.
    pub fn budget(&self, y: &[f64], scale: IntensityScale) -> f64 {
        self.l0.unwrap_or_else(|| {
            let from_data = self.l0_factor * l1_norm(y) / (scale.time * scale.degree as f64);
            from_data.max(1.0 / (scale.time * scale.degree as f64))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmleConfig {
    pub l0: f64,
    pub k: usize,
    pub gamma: f64,
    /// `gamma / (k ln(N / k))`, or 0 with the offset disabled.
    pub c: f64,
    pub grid_levels: u32,
    pub penalty_mode: PenaltyMode,
    pub max_support: Option<usize>,
    pub enumeration_cap: f64,
    pub solver: SolverOptions,
    pub cover: CoverSet,
}

impl PmleConfig {
    pub fn new(n_flows: usize, l0: f64, k: usize, cover: CoverSet, p: &PmleParams) -> Result<Self> {
        if !(l0 > 0.0 && l0.is_finite()) {
            return Err(Error::InvalidParameter(format!("L0 = {l0} must be positive")));
        }
        if p.grid_levels == 0 {
            return Err(Error::InvalidParameter("grid_levels must be positive".into()));
        }
        if k == 0 || k > n_flows {
            return Err(Error::InvalidParameter(format!(
                "k = {k} must lie in 1..={n_flows}"
            )));
        }
        let c = if p.offset {
            if !(p.gamma > 0.0) {
                return Err(Error::InvalidParameter(format!("gamma = {} must be positive", p.gamma)));
            }
            let c = p.gamma / (k as f64 * (n_flows as f64 / k as f64).ln());
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "offset coefficient c = {c} outside (0, 1) for N = {n_flows}, k = {k}"
                )));
            }
            c
        } else {
            0.0
        };
        Ok(PmleConfig {
            l0,
            k,
            gamma: p.gamma,
            c,
            grid_levels: p.grid_levels,
            penalty_mode: p.penalty_mode,
            max_support: p.max_support,
            enumeration_cap: p.enumeration_cap,
            solver: p.solver,
            cover,
        })
    }

    pub fn step(&self) -> f64 {
        self.l0 / self.grid_levels as f64
    }

    /// The offset `c L0 1_Omega` in rate units.
    pub fn offset(&self, n_flows: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_flows];
        if self.c > 0.0 {
            for &i in self.cover.members() {
                v[i] = self.c * self.l0;
            }
        }
        v
    }
}

/// Converts between rates and intensities under the normalized matrix `A/d`.
///
/// `NLL` with `A`, rates `lambda` and scale `n tau` equals `NLL` with `A/d`,
/// intensities `theta = n tau d lambda` and scale 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityScale {
    /// `n tau`
    pub time: f64,
    pub degree: usize,
}

impl IntensityScale {
    pub fn new(epochs: u64, tau: f64, degree: usize) -> Result<Self> {
        let time = epochs as f64 * tau;
        if !(time > 0.0) || degree == 0 {
            return Err(Error::InvalidParameter(format!(
                "need n tau > 0 and d > 0, got {time} and {degree}"
            )));
        }
        Ok(IntensityScale { time, degree })
    }

    pub fn theta_from_rate(&self, lambda: &[f64]) -> Vec<f64> {
        let f = self.time * self.degree as f64;
        lambda.iter().map(|v| v * f).collect()
    }

    pub fn rate_from_theta(&self, theta: &[f64]) -> Vec<f64> {
        let f = self.time * self.degree as f64;
        theta.iter().map(|v| v / f).collect()
    }
}

/// Smallest `k'` with `15 k' d / 16 >= k d + 1`.
pub fn derive_k_prime(k: usize, d: usize) -> usize {
    let num = 16 * (k * d + 1);
    let den = 15 * d.max(1);
    num.div_ceil(den)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhaleLocalization {
    /// The `min(kd, M)` largest counters, ascending.
    pub b1: Vec<usize>,
    pub b2: Vec<usize>,
    /// Flows with every neighbor in `b1`.
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
    pub k_prime: usize,
}

pub fn localize_whales(y: &[f64], g: &BipartiteGraph, k: usize) -> Result<WhaleLocalization> {
    if y.len() != g.n_right() {
        return Err(Error::LengthMismatch {
            expected: g.n_right(),
            found: y.len(),
        });
    }
    let d = g.degree();
    let keep = (k * d).min(g.n_right());
    let mut b1 = top_k_indices(y, keep);
    b1.sort_unstable();
    let mut in_b1 = vec![false; g.n_right()];
    for &j in &b1 {
        in_b1[j] = true;
    }
    let b2 = (0..g.n_right()).filter(|&j| !in_b1[j]).collect();
    let (mut a1, mut a2) = (Vec::new(), Vec::new());
    // no early exit: every column costs exactly d lookups
    for (i, col) in g.columns().enumerate() {
        if col.iter().fold(true, |all, &j| all & in_b1[j]) {
            a1.push(i);
        } else {
            a2.push(i);
        }
    }
    Ok(WhaleLocalization {
        b1,
        b2,
        a1,
        a2,
        k_prime: derive_k_prime(k, d),
    })
}

/// `sum_j mu_j - y_j ln mu_j` with `mu = scale * A * theta`, dropping
/// `ln y_j!`.
pub fn neg_log_likelihood(theta: &[f64], g: &BipartiteGraph, y: &[f64], scale: f64) -> Result<f64> {
    if y.len() != g.n_right() {
        return Err(Error::LengthMismatch {
            expected: g.n_right(),
            found: y.len(),
        });
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!("scale = {scale} must be positive")));
    }
    let mu = g.apply(theta)?;
    nll_from_mu(&mu, y, scale)
}

fn nll_from_mu(mu: &[f64], y: &[f64], scale: f64) -> Result<f64> {
    let mut total = 0.0;
    for (j, (&m, &yj)) in mu.iter().zip(y).enumerate() {
        let m = m * scale;
        if m > 0.0 {
            total += m - yj * m.ln();
        } else if yj > 0.0 {
            return Err(Error::ZeroIntensity { counter: j });
        }
    }
    Ok(total)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// The grid candidates supported on `universe`, enumerated lazily in
/// lexicographic order of their level vectors (lower indices more
/// significant).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    universe: Vec<usize>,
    n_flows: usize,
    levels: u32,
    step: f64,
    mode: PenaltyMode,
    /// Universe size the penalty is defined against; a restricted set keeps
    /// the penalty of its parent.
    penalty_universe: usize,
    max_support: usize,
}

/// Nonzero `(flow, level)` pairs in ascending flow order.
pub type Candidate = Vec<(usize, u32)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KraftAudit {
    pub sum: f64,
    /// Whether every candidate was enumerated.
    pub exhaustive: bool,
    pub holds: bool,
}

impl CandidateSet {
    /// Every flow of an `n_flows`-flow problem.
    pub fn full(n_flows: usize, cfg: &PmleConfig) -> Self {
        Self::build((0..n_flows).collect(), n_flows, n_flows, cfg)
    }

    /// Candidates supported on `universe`, scored with the full-universe
    /// penalty.
    pub fn restricted(universe: &[usize], n_flows: usize, cfg: &PmleConfig) -> Result<Self> {
        let mut u = universe.to_vec();
        u.sort_unstable();
        u.dedup();
        if let Some(&last) = u.last() {
            if last >= n_flows {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    len: n_flows,
                });
            }
        }
        Ok(Self::build(u, n_flows, n_flows, cfg))
    }

    /// Explicit construction, mainly for audits.
    pub fn with_universe(
        universe: Vec<usize>,
        n_flows: usize,
        penalty_universe: usize,
        levels: u32,
        step: f64,
        mode: PenaltyMode,
        max_support: Option<usize>,
    ) -> Result<Self> {
        if levels == 0 || !(step > 0.0) {
            return Err(Error::InvalidParameter("need levels > 0 and step > 0".into()));
        }
        if penalty_universe < universe.len() {
            return Err(Error::InvalidParameter(
                "penalty universe smaller than the support universe".into(),
            ));
        }
        if universe.iter().any(|&i| i >= n_flows) {
            return Err(Error::InvalidParameter("universe index out of range".into()));
        }
        Ok(CandidateSet {
            max_support: max_support.unwrap_or(usize::MAX).min(universe.len()),
            universe,
            n_flows,
            levels,
            step,
            mode,
            penalty_universe,
        })
    }

    fn build(universe: Vec<usize>, n_flows: usize, penalty_universe: usize, cfg: &PmleConfig) -> Self {
        CandidateSet {
            max_support: cfg.max_support.unwrap_or(usize::MAX).min(universe.len()),
            universe,
            n_flows,
            levels: cfg.grid_levels,
            step: cfg.step(),
            mode: cfg.penalty_mode,
            penalty_universe,
        }
    }

    pub fn universe(&self) -> &[usize] {
        &self.universe
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    fn support_limit(&self, universe: usize) -> usize {
        self.max_support.min(universe).min(self.levels as usize)
    }

    /// `ln` of the number of candidates over a universe of size `u`.
    fn ln_count_over(&self, u: usize) -> f64 {
        let g = self.levels as usize;
        let smax = self.max_support.min(u).min(g);
        log_sum_exp((0..=smax).map(|s| ln_binomial(u, s) + ln_binomial(g, s)))
    }

    /// `ln |Lambda|`.
    pub fn ln_count(&self) -> f64 {
        self.ln_count_over(self.universe.len())
    }

    pub fn count(&self) -> f64 {
        self.ln_count().exp()
    }

    /// Penalty of any candidate with `s` nonzero entries.
    pub fn penalty_for_support(&self, s: usize) -> f64 {
        match self.mode {
            PenaltyMode::L0Scaled => {
                let per = (self.penalty_universe as f64).ln() + (1.0 + self.levels as f64).ln();
                s as f64 * per + 2.0 * (1.0 + s as f64).ln() + std::f64::consts::LN_2
            }
            PenaltyMode::Uniform => self.ln_count_over(self.penalty_universe),
        }
    }

    /// Penalty of a dense rate vector, checking it belongs to the set.
    pub fn penalty(&self, lambda: &[f64]) -> Result<f64> {
        let c = self.to_candidate(lambda)?;
        Ok(self.penalty_for_support(c.len()))
    }

    /// Snaps a dense rate vector to its level representation.
    pub fn to_candidate(&self, lambda: &[f64]) -> Result<Candidate> {
        if lambda.len() != self.n_flows {
            return Err(Error::LengthMismatch {
                expected: self.n_flows,
                found: lambda.len(),
            });
        }
        let mut out = Vec::new();
        let mut total: u64 = 0;
        for (i, &v) in lambda.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let m = (v / self.step).round();
            let on_grid = v > 0.0 && m >= 1.0 && (v - m * self.step).abs() <= 1e-9 * v.max(self.step);
            if !on_grid || self.universe.binary_search(&i).is_err() {
                return Err(Error::OffGrid { index: i, value: v });
            }
            total += m as u64;
            out.push((i, m as u32));
        }
        if total > self.levels as u64 || out.len() > self.max_support {
            return Err(Error::OffGrid {
                index: out.last().map_or(0, |p| p.0),
                value: total as f64 * self.step,
            });
        }
        Ok(out)
    }

    pub fn to_dense(&self, c: &Candidate) -> Vec<f64> {
        let mut v = vec![0.0; self.n_flows];
        for &(i, m) in c {
            v[i] = m as f64 * self.step;
        }
        v
    }

    pub fn iter(&self) -> CandidateIter<'_> {
        CandidateIter {
            cs: self,
            levels: vec![0; self.universe.len()],
            sum: 0,
            support: 0,
            started: false,
        }
    }

    /// `sum e^{-pen}` over every candidate; `None` above `cap` candidates.
    pub fn kraft_sum_exhaustive(&self, cap: f64) -> Option<f64> {
        if self.count() > cap {
            return None;
        }
        Some(self.iter().map(|c| (-self.penalty_for_support(c.len())).exp()).sum())
    }

    /// `sum e^{-pen}` from the closed-form count of candidates per support
    /// size.
    pub fn kraft_sum_counting(&self) -> f64 {
        let u = self.universe.len();
        let g = self.levels as usize;
        match self.mode {
            PenaltyMode::Uniform => (self.ln_count() - self.penalty_for_support(0)).exp(),
            PenaltyMode::L0Scaled => (0..=self.support_limit(u))
                .map(|s| (ln_binomial(u, s) + ln_binomial(g, s) - self.penalty_for_support(s)).exp())
                .sum(),
        }
    }

    /// Exhaustive audit up to `exhaustive_cap` candidates, counting bound
    /// beyond.
    pub fn kraft_audit(&self, exhaustive_cap: f64) -> KraftAudit {
        let (sum, exhaustive) = match self.kraft_sum_exhaustive(exhaustive_cap) {
            Some(s) => (s, true),
            None => (self.kraft_sum_counting(), false),
        };
        KraftAudit {
            sum,
            exhaustive,
            holds: sum <= 1.0 + 1e-12,
        }
    }
}

pub struct CandidateIter<'a> {
    cs: &'a CandidateSet,
    levels: Vec<u32>,
    sum: u32,
    support: usize,
    started: bool,
}

impl CandidateIter<'_> {
    fn current(&self) -> Candidate {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0)
            .map(|(p, &m)| (self.cs.universe[p], m))
            .collect()
    }
}

impl Iterator for CandidateIter<'_> {
    type Item = Candidate;

    fn next(&mut self) -> Option<Candidate> {
        if !self.started {
            self.started = true;
            return Some(self.current());
        }
        // lexicographic successor: bump the last position that can grow and
        // clear everything after it
        for p in (0..self.levels.len()).rev() {
            let grows = self.sum < self.cs.levels
                && (self.levels[p] > 0 || self.support < self.cs.max_support);
            if grows {
                if self.levels[p] == 0 {
                    self.support += 1;
                }
                self.levels[p] += 1;
                self.sum += 1;
                return Some(self.current());
            }
            if self.levels[p] > 0 {
                self.sum -= self.levels[p];
                self.support -= 1;
                self.levels[p] = 0;
            }
        }
        // every position cleared: wrap back to zero means exhausted
        self.levels.clear();
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmleEstimate {
    /// Estimated rates, `theta_hat / (n tau d)`.
    pub rates: Vec<f64>,
    /// Chosen candidate as `(flow, level)` pairs.
    pub candidate: Candidate,
    /// `NLL + 2 pen` of the chosen candidate.
    pub objective: f64,
    pub penalty: f64,
    pub candidates_evaluated: u64,
}

struct Scorer<'a> {
    g: &'a BipartiteGraph,
    y: &'a [f64],
    scale: f64,
    step: f64,
    /// `A (c L0 1_Omega)`
    base: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(g: &'a BipartiteGraph, y: &'a [f64], cfg: &PmleConfig, scale: IntensityScale) -> Result<Self> {
        let base = g.apply(&cfg.offset(g.n_left()))?;
        Ok(Scorer {
            g,
            y,
            scale: scale.time,
            step: cfg.step(),
            base,
        })
    }

    /// Negative log-likelihood of `candidate + offset`; infinite when a
    /// nonzero counter has zero intensity.
    fn nll(&self, c: &Candidate) -> f64 {
        let mut mu = self.base.clone();
        for &(i, m) in c {
            let v = m as f64 * self.step;
            for &j in self.g.column(i) {
                mu[j] += v;
            }
        }
        nll_from_mu(&mu, self.y, self.scale).unwrap_or(f64::INFINITY)
    }
}

/// Exhaustive penalized likelihood search over `cs`.
pub fn pmle_exhaustive(
    y: &[f64],
    g: &BipartiteGraph,
    cs: &CandidateSet,
    cfg: &PmleConfig,
    scale: IntensityScale,
) -> Result<PmleEstimate> {
    if y.len() != g.n_right() {
        return Err(Error::LengthMismatch {
            expected: g.n_right(),
            found: y.len(),
        });
    }
    let count = cs.count();
    if count > cfg.enumeration_cap {
        return Err(Error::EnumerationCap {
            count,
            cap: cfg.enumeration_cap,
        });
    }
    let scorer = Scorer::new(g, y, cfg, scale)?;
    let mut best: Option<(f64, f64, Candidate)> = None;
    let mut evaluated = 0u64;
    let mut it = cs.iter();
    loop {
        let batch: Vec<Candidate> = it.by_ref().take(BATCH).collect();
        if batch.is_empty() {
            break;
        }
        evaluated += batch.len() as u64;
        let scores: Vec<(f64, f64)> = batch
            .par_iter()
            .map(|c| {
                let pen = cs.penalty_for_support(c.len());
                (scorer.nll(c) + 2.0 * pen, pen)
            })
            .collect();
        // sequential scan keeps the first-enumerated minimum
        for (c, (obj, pen)) in batch.into_iter().zip(scores) {
            if best.as_ref().is_none_or(|b| obj < b.0) {
                best = Some((obj, pen, c));
            }
        }
    }
    let (objective, penalty, candidate) = best.ok_or_else(|| Error::Numerical("empty candidate set".into()))?;
    if !objective.is_finite() {
        return Err(Error::Numerical(
            "every candidate leaves a nonzero counter with zero intensity".into(),
        ));
    }
    Ok(PmleEstimate {
        rates: cs.to_dense(&candidate),
        candidate,
        objective,
        penalty,
        candidates_evaluated: evaluated,
    })
}

/// Penalized search restricted to flows in `loc.a1`.
///
/// Small candidate sets are searched exhaustively. Otherwise the continuous
/// likelihood is minimized on `a1`, the minimizer is snapped to the grid, and
/// the best penalized candidate among its top-`s` truncations is returned.
pub fn pmle_reduced(
    y: &[f64],
    g: &BipartiteGraph,
    loc: &WhaleLocalization,
    cfg: &PmleConfig,
    scale: IntensityScale,
) -> Result<PmleEstimate> {
    let n = g.n_left();
    if loc.a1.is_empty() {
        log::warn!("whale localization left no candidate flows; returning the zero estimate");
        return Ok(PmleEstimate {
            rates: vec![0.0; n],
            candidate: Vec::new(),
            objective: f64::NAN,
            penalty: 0.0,
            candidates_evaluated: 0,
        });
    }
    let cs = CandidateSet::restricted(&loc.a1, n, cfg)?;
    if cs.count() <= cfg.enumeration_cap {
        return pmle_exhaustive(y, g, &cs, cfg, scale);
    }

    let scorer = Scorer::new(g, y, cfg, scale)?;
    let background: Vec<f64> = scorer.base.iter().map(|b| b * scale.time).collect();
    let sol = sparse_poisson_solve(y, g, &loc.a1, scale.time, Some(&background), &cfg.solver)?;

    let step = cfg.step();
    let mut levels: Vec<f64> = sol.theta.iter().map(|v| (v / step).round()).collect();
    let total: f64 = levels.iter().sum();
    if total > cfg.grid_levels as f64 {
        let raw: f64 = sol.theta.iter().sum::<f64>() / step;
        let shrink = cfg.grid_levels as f64 / raw;
        levels = sol.theta.iter().map(|v| (v / step * shrink).floor()).collect();
    }
    let order: Vec<usize> = top_k_indices(&levels, levels.len())
        .into_iter()
        .filter(|&i| levels[i] > 0.0)
        .collect();
    let smax = order.len().min(cfg.max_support.unwrap_or(usize::MAX));

    let mut best: Option<(f64, f64, Candidate)> = None;
    for s in 0..=smax {
        let mut c: Candidate = order[..s].iter().map(|&i| (i, levels[i] as u32)).collect();
        c.sort_unstable();
        let pen = cs.penalty_for_support(s);
        let obj = scorer.nll(&c) + 2.0 * pen;
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, pen, c));
        }
    }
    let (objective, penalty, candidate) = best.expect("path includes the empty candidate");
    if !objective.is_finite() {
        return Err(Error::Numerical(
            "no truncation of the continuous solution has finite likelihood".into(),
        ));
    }
    Ok(PmleEstimate {
        rates: cs.to_dense(&candidate),
        candidate,
        objective,
        penalty,
        candidates_evaluated: smax as u64 + 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    /// Length-N, zero outside the support.
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting from the initial point.
    pub objective_trace: Vec<f64>,
}

/// Minimizes `sum_j mu_j - y_j ln mu_j`, `mu = scale A theta + background`,
/// over `theta >= 0` supported on `support`.
///
/// Projected gradient with Barzilai-Borwein steps and Armijo backtracking, so
/// the objective never increases. `ln mu` is floored at [`MU_FLOOR`].
pub fn sparse_poisson_solve(
    y: &[f64],
    g: &BipartiteGraph,
    support: &[usize],
    scale: f64,
    background: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<PoissonSolution> {
    let m = g.n_right();
    if y.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            found: y.len(),
        });
    }
    if support.is_empty() {
        return Err(Error::InvalidParameter("empty support".into()));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!("scale = {scale} must be positive")));
    }
    if let Some(&i) = support.iter().find(|&&i| i >= g.n_left()) {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: g.n_left(),
        });
    }
    let bg = match background {
        Some(b) if b.len() != m => {
            return Err(Error::LengthMismatch {
                expected: m,
                found: b.len(),
            })
        }
        Some(b) => b.to_vec(),
        None => vec![0.0; m],
    };
    let mut reachable: Vec<bool> = bg.iter().map(|&b| b > 0.0).collect();
    for &i in support {
        for &j in g.column(i) {
            reachable[j] = true;
        }
    }
    if let Some(j) = (0..m).find(|&j| y[j] > 0.0 && !reachable[j]) {
        return Err(Error::ZeroIntensity { counter: j });
    }

    let d = g.degree() as f64;
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut mu = bg.clone();
        for (&i, &v) in support.iter().zip(x) {
            for &j in g.column(i) {
                mu[j] += scale * v;
            }
        }
        let f = mu
            .iter()
            .zip(y)
            .map(|(&u, &yj)| u - yj * u.max(MU_FLOOR).ln())
            .sum();
        (f, mu)
    };
    let gradient = |mu: &[f64]| -> Vec<f64> {
        support
            .iter()
            .map(|&i| {
                scale
                    * g.column(i)
                        .iter()
                        .map(|&j| 1.0 - y[j] / mu[j].max(MU_FLOOR))
                        .sum::<f64>()
            })
            .collect()
    };

    // start from per-flow one-dimensional fits, rescaled to the observed mass
    let mut x: Vec<f64> = support
        .iter()
        .map(|&i| g.column(i).iter().map(|&j| y[j]).sum::<f64>() / (scale * d))
        .collect();
    let fitted: f64 = x.iter().sum::<f64>() * scale * d;
    let residual = (y.iter().sum::<f64>() - bg.iter().sum::<f64>()).max(0.0);
    if fitted > 0.0 {
        let r = residual / fitted;
        x.iter_mut().for_each(|v| *v *= r);
    }

    let (mut f, mut mu) = objective(&x);
    let mut grad = gradient(&mu);
    let mut trace = vec![f];
    let gmax = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let xmax = x.iter().fold(0.0f64, |a, v| a.max(*v));
    let mut alpha = if gmax > 0.0 { (xmax.max(1.0 / scale)) / gmax } else { 1.0 };
    let mut converged = false;
    let mut iterations = 0;
    const ARMIJO: f64 = 1e-4;

    for it in 1..=opts.max_iter {
        iterations = it;
        let mut accepted = None;
        for _ in 0..100 {
            let xn: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(v, gr)| (v - alpha * gr).max(0.0))
                .collect();
            let dist2: f64 = xn.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let (fn_, mun) = objective(&xn);
            if fn_ <= f - ARMIJO / alpha * dist2 {
                accepted = Some((xn, fn_, mun, dist2));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, mun, dist2)) = accepted else {
            converged = true;
            break;
        };
        if dist2 == 0.0 {
            converged = true;
            break;
        }
        let gn = gradient(&mun);
        let sy: f64 = xn
            .iter()
            .zip(&x)
            .zip(gn.iter().zip(&grad))
            .map(|((a, b), (c, e))| (a - b) * (c - e))
            .sum();
        alpha = if sy > 0.0 { (dist2 / sy).clamp(1e-30, 1e30) } else { alpha * 2.0 };
        let change = (f - fn_).abs();
        let done = change <= opts.tol * f.abs().max(1.0);
        x = xn;
        f = fn_;
        mu = mun;
        grad = gn;
        trace.push(f);
        if done {
            converged = true;
            break;
        }
    }
    let _ = mu;

    let mut theta = vec![0.0; g.n_left()];
    for (&i, &v) in support.iter().zip(&x) {
        theta[i] = v;
    }
    Ok(PoissonSolution {
        theta,
        objective: f,
        iterations,
        converged,
        objective_trace: trace,
    })
}
