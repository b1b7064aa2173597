//! Poisson flow simulation and the compressed counter bank.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expander::BipartiteGraph;
use crate::metrics;
use crate::seed;

/// Means below this use sequential inversion; larger ones use PTRS.
const INVERSION_LIMIT: f64 = 30.0;

/// Nonnegative per-flow rates together with the positions of the `k` largest.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector {
    rates: Vec<f64>,
    whale_support: Vec<usize>,
    k: usize,
}

impl RateVector {
    pub fn new(rates: Vec<f64>, k: usize) -> Result<Self> {
        if k > rates.len() {
            return Err(Error::InvalidParameter(format!(
                "k = {k} exceeds {} flows",
                rates.len()
            )));
        }
        if let Some(i) = rates.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "rate {i} = {} is not a finite nonnegative number",
                rates[i]
            )));
        }
        let mut whale_support = metrics::top_k_indices(&rates, k);
        whale_support.sort_unstable();
        Ok(RateVector {
            rates,
            whale_support,
            k,
        })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Sorted positions of the `k` largest rates, lowest index on ties.
    pub fn whale_support(&self) -> &[usize] {
        &self.whale_support
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// The rates with every non-whale entry zeroed.
    pub fn whales_only(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.rates.len()];
        for &i in &self.whale_support {
            v[i] = self.rates[i];
        }
        v
    }
}

/// Parameters of the heavy-tail class: `||l||_1 <= l0` and
/// `sigma_k(l) <= l0 k^-alpha` for every `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeavyTailParams {
    l0: f64,
    alpha: f64,
}

impl HeavyTailParams {
    pub fn new(l0: f64, alpha: f64) -> Result<Self> {
        if !(l0 > 0.0 && l0.is_finite()) {
            return Err(Error::InvalidParameter(format!("L0 = {l0} must be positive")));
        }
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be >= 1")));
        }
        Ok(HeavyTailParams { l0, alpha })
    }

    pub fn l0(&self) -> f64 {
        self.l0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeavyTailCheck {
    pub holds: bool,
    pub l1_within_budget: bool,
    /// Smallest `k` whose tail mass exceeds `l0 k^-alpha`.
    pub first_violating_k: Option<usize>,
}

pub fn check_heavy_tail(rates: &RateVector, p: HeavyTailParams) -> HeavyTailCheck {
    let tails = metrics::tail_masses(rates.rates());
    let l1_within_budget = tails[0] <= p.l0;
    let first_violating_k = (1..tails.len()).find(|&k| tails[k] > p.l0 * (k as f64).powf(-p.alpha));
    HeavyTailCheck {
        holds: l1_within_budget && first_violating_k.is_none(),
        l1_within_budget,
        first_violating_k,
    }
}

/// Distribution of a rate magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Magnitude {
    /// Every draw equals `value`.
    Constant { value: f64 },
    /// `|N(0, sigma^2)|`.
    AbsGaussian { sigma: f64 },
}

impl Magnitude {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Magnitude::Constant { value } => value,
            Magnitude::AbsGaussian { sigma } => {
                let n = Normal::new(0.0, sigma).expect("validated sigma");
                n.sample(rng).abs()
            }
        }
    }

    fn validate(&self, what: &str, allow_zero: bool) -> Result<()> {
        let ok = match *self {
            Magnitude::Constant { value } => {
                value.is_finite() && (value > 0.0 || (allow_zero && value == 0.0))
            }
            Magnitude::AbsGaussian { sigma } => sigma.is_finite() && sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid {what} distribution {self}")))
        }
    }
}

impl Display for Magnitude {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Magnitude::Constant { value } => write!(f, "const:{value}"),
            Magnitude::AbsGaussian { sigma } => write!(f, "abs-gaussian:{sigma}"),
        }
    }
}

impl FromStr for Magnitude {
    type Err = Error;

    /// Parses `const:<value>` or `abs-gaussian:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("expected kind:value, got {s:?}")))?;
        let v: f64 = arg
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad number in {s:?}")))?;
        match kind {
            "const" | "constant" => Ok(Magnitude::Constant { value: v }),
            "abs-gaussian" | "gaussian" => Ok(Magnitude::AbsGaussian { sigma: v }),
            _ => Err(Error::InvalidParameter(format!("unknown distribution {kind:?}"))),
        }
    }
}

/// Synthetic signal: `k` whales at uniformly random positions, minnows elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    pub n_flows: usize,
    pub k: usize,
    pub whale: Magnitude,
    pub minnow: Magnitude,
    pub seed: u64,
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k > self.n_flows {
            return Err(Error::InvalidParameter(format!(
                "k = {} exceeds {} flows",
                self.k, self.n_flows
            )));
        }
        self.whale.validate("whale", false)?;
        self.minnow.validate("minnow", true)
    }
}

pub fn gen_rates(spec: &SignalSpec) -> Result<RateVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut is_whale = vec![false; spec.n_flows];
    let mut rates = vec![0.0; spec.n_flows];
    for i in index::sample(&mut rng, spec.n_flows, spec.k).iter() {
        is_whale[i] = true;
        rates[i] = spec.whale.sample(&mut rng);
    }
    for (rate, _) in rates.iter_mut().zip(&is_whale).filter(|(_, w)| !**w) {
        *rate = spec.minnow.sample(&mut rng);
    }
    RateVector::new(rates, spec.k)
}

/// Draws from Poisson(`mean`). Zero mean returns 0 without touching `rng`.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < INVERSION_LIMIT {
        poisson_inversion(rng, mean)
    } else {
        poisson_ptrs(rng, mean)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    // the cap only triggers when u lands in the rounding slack of the cdf
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

// Hoermann's transformed rejection with squeeze.
fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -mean + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// ln Gamma(x) for x >= 1 via the Stirling series.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const A: [f64; 10] = [
        8.333333333333333e-02,
        -2.777777777777778e-03,
        7.936507936507937e-04,
        -5.952380952380952e-04,
        8.417508417508418e-04,
        -1.917526917526918e-03,
        6.410256410256410e-03,
        -2.955065359477124e-02,
        1.796443723688307e-01,
        -1.39243221690590e+00,
    ];
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let n = if x < 7.0 { (7.0 - x) as i64 } else { 0 };
    let mut x0 = x + n as f64;
    let x2 = 1.0 / (x0 * x0);
    let mut gl0 = A[9];
    for &c in A[..9].iter().rev() {
        gl0 = gl0 * x2 + c;
    }
    let mut gl = gl0 / x0 + 0.5 * (2.0 * std::f64::consts::PI).ln() + (x0 - 0.5) * x0.ln() - x0;
    for _ in 0..n {
        gl -= (x0 - 1.0).ln();
        x0 -= 1.0;
    }
    gl
}

/// Cumulative flow counts `X_n` and counters `Y_n = A X_n` of one stream.
///
/// Randomness for flow `i` in epoch `n` comes from its own ChaCha stream keyed
/// by `(seed, n)` with stream id `i`, so running `a` then `b` epochs produces
/// exactly the same state as running `a + b` epochs at once.
#[derive(Debug, Clone)]
pub struct StreamState {
    graph: Arc<BipartiteGraph>,
    rates: RateVector,
    tau: f64,
    epoch: u64,
    counts: Vec<u64>,
    counters: Vec<u64>,
    seed: u64,
}

impl StreamState {
    pub fn new(graph: Arc<BipartiteGraph>, rates: RateVector, tau: f64, seed: u64) -> Result<Self> {
        if rates.len() != graph.n_left() {
            return Err(Error::LengthMismatch {
                expected: graph.n_left(),
                found: rates.len(),
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau = {tau} must be positive")));
        }
        let n = graph.n_left();
        let m = graph.n_right();
        Ok(StreamState {
            graph,
            rates,
            tau,
            epoch: 0,
            counts: vec![0; n],
            counters: vec![0; m],
            seed,
        })
    }

    pub fn advance_epoch(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[self.epoch]));
        for (i, &rate) in self.rates.rates().iter().enumerate() {
            if rate == 0.0 {
                continue;
            }
            rng.set_stream(i as u64);
            rng.set_word_pos(0);
            let delta = sample_poisson(&mut rng, rate * self.tau);
            if delta > 0 {
                self.counts[i] += delta;
                for &j in self.graph.column(i) {
                    self.counters[j] += delta;
                }
            }
        }
        self.epoch += 1;
    }

    pub fn run_epochs(&mut self, n: u64) {
        for _ in 0..n {
            self.advance_epoch();
        }
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn rates(&self) -> &RateVector {
        &self.rates
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// `n * tau`.
    pub fn elapsed(&self) -> f64 {
        self.epoch as f64 * self.tau
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn counters_f64(&self) -> Vec<f64> {
        self.counters.iter().map(|&c| c as f64).collect()
    }
}

/// Writes `index,value` rows with a header.
pub fn write_vector_csv<T: Display>(path: &Path, values: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `index,value` file. Indices must run 0, 1, 2, ... in order.
pub fn read_vector_csv<T: FromStr>(path: &Path) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["index", "value"] {
        return Err(Error::Schema(format!(
            "{}: expected header index,value, got {:?}",
            path.display(),
            headers
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let idx: usize = rec[0].parse().map_err(|e| perr(format!("{e}")))?;
        if idx != row {
            return Err(perr(format!("expected index {row}, got {idx}")));
        }
        out.push(rec[1].parse::<T>().map_err(|e| perr(format!("{e}")))?);
    }
    Ok(out)
}
