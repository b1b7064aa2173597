//! Seeded sweeps over the number of heavy flows, and their CSV artifacts.
//!
//! Every `(k, trial)` pair derives its own seed from the root seed, so rows
//! do not depend on sweep order or thread count. Each trial builds a fresh
//! graph and signal, runs the stream, then hands the same counter snapshot to
//! every configured decoder.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::direct::{basis_pursuit, direct_estimate, LpOptions};
use crate::error::{Error, Result};
use crate::expander::{build_with_cover, default_degree, BipartiteGraph, CoverSet};
use crate::metrics::{l1_distance, mean_with_band, relative_l1_error, support_recovery_success};
use crate::pmle::{
    localize_whales, pmle_exhaustive, pmle_reduced, CandidateSet, IntensityScale, PmleConfig, PmleParams,
};
use crate::seed;
use crate::stream::{gen_rates, Magnitude, SignalSpec, StreamState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    Direct,
    PmleExhaustive,
    PmleReduced,
}

impl Decoder {
    pub fn name(self) -> &'static str {
        match self {
            Decoder::Direct => "direct",
            Decoder::PmleExhaustive => "pmle-exhaustive",
            Decoder::PmleReduced => "pmle-reduced",
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Decoder::Direct),
            "pmle-exhaustive" => Ok(Decoder::PmleExhaustive),
            "pmle-reduced" => Ok(Decoder::PmleReduced),
            _ => Err(Error::InvalidParameter(format!("unknown decoder {s:?}"))),
        }
    }
}

/// Whether decode times are measured. With `Off` every time is 0, which makes
/// results byte-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    #[default]
    Wall,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub n_flows: usize,
    pub n_counters: usize,
    /// Defaults to `ceil(2 log2(N / k))` per swept `k`, capped at `M`.
    #[serde(default)]
    pub degree: Option<usize>,
    pub epochs: u64,
    pub tau: f64,
    pub sweep: Vec<usize>,
    pub trials: usize,
    pub whale: Magnitude,
    pub minnow: Magnitude,
    pub decoders: Vec<Decoder>,
    #[serde(default)]
    pub solver: LpOptions,
    #[serde(default)]
    pub pmle: PmleParams,
    pub root_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub timing: Timing,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return bad("sweep must list at least one k".into());
        }
        if self.decoders.is_empty() {
            return bad("decoders must not be empty".into());
        }
        if self.epochs == 0 || !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("need epochs >= 1 and tau > 0".into());
        }
        if self.n_counters == 0 || self.n_counters > self.n_flows {
            return bad(format!(
                "need 1 <= n_counters <= n_flows, got M = {} and N = {}",
                self.n_counters, self.n_flows
            ));
        }
        if let Some(d) = self.degree {
            if d == 0 || d > self.n_counters {
                return bad(format!("degree {d} outside 1..={}", self.n_counters));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        for &k in &self.sweep {
            SignalSpec {
                n_flows: self.n_flows,
                k,
                whale: self.whale,
                minnow: self.minnow,
                seed: 0,
            }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn degree_for(&self, k: usize) -> usize {
        self.degree
            .unwrap_or_else(|| default_degree(self.n_flows, k))
            .min(self.n_counters)
    }
}

/// One decoder run on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub k: usize,
    pub trial: usize,
    pub decoder: Decoder,
    pub seed: u64,
    /// `ok`, or the error that stopped the decoder.
    pub status: String,
    pub success: bool,
    pub rel_error: f64,
    pub abs_error: f64,
    pub time_s: f64,
    pub a1_size: Option<usize>,
    pub whales_in_a1: Option<bool>,
    pub counters_hash: String,
}

/// Per `(k, decoder)` summary of trial rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub k: usize,
    pub decoder: Decoder,
    pub trials: usize,
    pub success_prob: f64,
    pub success_half_width: f64,
    pub mean_rel_error: f64,
    pub rel_error_half_width: f64,
    pub mean_time_s: f64,
    pub time_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Output of one decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub rates: Vec<f64>,
    pub a1: Option<Vec<usize>>,
}

/// Everything a decoder may consume.
pub struct DecodeInput<'a> {
    pub graph: &'a BipartiteGraph,
    pub cover: &'a CoverSet,
    pub counters: &'a [f64],
    pub epochs: u64,
    pub tau: f64,
    pub k: usize,
    pub solver: &'a LpOptions,
    pub pmle: &'a PmleParams,
}

pub fn decode(decoder: Decoder, input: &DecodeInput<'_>) -> Result<Decoded> {
    let g = input.graph;
    let y = input.counters;
    match decoder {
        Decoder::Direct => {
            let sol = basis_pursuit(g, y, input.solver)?;
            Ok(Decoded {
                rates: direct_estimate(&sol, input.epochs, input.tau)?,
                a1: None,
            })
        }
        Decoder::PmleExhaustive | Decoder::PmleReduced => {
            let scale = IntensityScale::new(input.epochs, input.tau, g.degree())?;
            let l0 = input.pmle.budget(y, scale);
            let cfg = PmleConfig::new(g.n_left(), l0, input.k, input.cover.clone(), input.pmle)?;
            if decoder == Decoder::PmleExhaustive {
                let cs = CandidateSet::full(g.n_left(), &cfg);
                let est = pmle_exhaustive(y, g, &cs, &cfg, scale)?;
                Ok(Decoded {
                    rates: est.rates,
                    a1: None,
                })
            } else {
                let loc = localize_whales(y, g, input.k)?;
                let est = pmle_reduced(y, g, &loc, &cfg, scale)?;
                Ok(Decoded {
                    rates: est.rates,
                    a1: Some(loc.a1),
                })
            }
        }
    }
}

/// Hex SHA-256 prefix of the counter vector.
pub fn counters_hash(counters: &[u64]) -> String {
    let mut h = Sha256::new();
    for c in counters {
        h.update(c.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn trial_seed(root: u64, k: usize, trial: usize) -> u64 {
    seed::derive(root, &[k as u64, trial as u64])
}

/// Runs every decoder on one `(k, trial)` instance. Failures become rows.
pub fn run_trial(cfg: &ExperimentConfig, k: usize, trial: usize) -> Vec<TrialRow> {
    let ts = trial_seed(cfg.root_seed, k, trial);
    let failed = |msg: String, hash: String| -> Vec<TrialRow> {
        cfg.decoders
            .iter()
            .map(|&decoder| TrialRow {
                k,
                trial,
                decoder,
                seed: ts,
                status: msg.clone(),
                success: false,
                rel_error: f64::NAN,
                abs_error: f64::NAN,
                time_s: 0.0,
                a1_size: None,
                whales_in_a1: None,
                counters_hash: hash.clone(),
            })
            .collect()
    };

    let d = cfg.degree_for(k);
    let covered = match build_with_cover(cfg.n_flows, cfg.n_counters, d, seed::derive(ts, &[0])) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string(), String::new()),
    };
    let spec = SignalSpec {
        n_flows: cfg.n_flows,
        k,
        whale: cfg.whale,
        minnow: cfg.minnow,
        seed: seed::derive(ts, &[1]),
    };
    let rates = match gen_rates(&spec) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string(), String::new()),
    };
    let graph = Arc::new(covered.graph);
    let mut stream = match StreamState::new(graph.clone(), rates.clone(), cfg.tau, seed::derive(ts, &[2])) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string(), String::new()),
    };
    stream.run_epochs(cfg.epochs);
    let hash = counters_hash(stream.counters());
    let y = stream.counters_f64();

    let input = DecodeInput {
        graph: &graph,
        cover: &covered.cover,
        counters: &y,
        epochs: cfg.epochs,
        tau: cfg.tau,
        k,
        solver: &cfg.solver,
        pmle: &cfg.pmle,
    };
    cfg.decoders
        .iter()
        .map(|&decoder| {
            let start = Instant::now();
            let out = decode(decoder, &input);
            let elapsed = start.elapsed().as_secs_f64();
            let time_s = match cfg.timing {
                Timing::Wall => elapsed,
                Timing::Off => 0.0,
            };
            let mut row = TrialRow {
                k,
                trial,
                decoder,
                seed: ts,
                status: "ok".into(),
                success: false,
                rel_error: f64::NAN,
                abs_error: f64::NAN,
                time_s,
                a1_size: None,
                whales_in_a1: None,
                counters_hash: hash.clone(),
            };
            match out {
                Ok(dec) => {
                    row.success = support_recovery_success(&dec.rates, &rates);
                    row.rel_error = relative_l1_error(&dec.rates, &rates).value;
                    row.abs_error = l1_distance(&dec.rates, rates.rates());
                    if let Some(a1) = dec.a1 {
                        row.a1_size = Some(a1.len());
                        row.whales_in_a1 = Some(rates.whale_support().iter().all(|i| a1.binary_search(i).is_ok()));
                    }
                }
                Err(e) => row.status = e.to_string(),
            }
            row
        })
        .collect()
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .sweep
        .iter()
        .flat_map(|&k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let work = || -> Vec<TrialRow> {
        jobs.par_iter()
            .flat_map_iter(|&(k, t)| run_trial(cfg, k, t))
            .collect()
    };
    let mut rows = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    };
    rows.sort_by_key(|r| (r.k, r.trial, r.decoder));
    let aggregates = aggregate(&rows);
    Ok(ExperimentResult { rows, aggregates })
}

fn band(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], f64::NAN),
        _ => {
            let r = mean_with_band(values).expect("two or more values");
            (r.mean, r.half_width)
        }
    }
}

/// Summaries in `(k, decoder)` order. Errored rows count as failures and are
/// left out of the error and time means.
pub fn aggregate(rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(usize, Decoder), Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.k, r.decoder)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((k, decoder), rs)| {
            let succ: Vec<f64> = rs.iter().map(|r| if r.success { 1.0 } else { 0.0 }).collect();
            let ok: Vec<&&TrialRow> = rs.iter().filter(|r| r.status == "ok").collect();
            let rel: Vec<f64> = ok.iter().map(|r| r.rel_error).filter(|v| v.is_finite()).collect();
            let time: Vec<f64> = ok.iter().map(|r| r.time_s).collect();
            let (success_prob, success_half_width) = band(&succ);
            let (mean_rel_error, rel_error_half_width) = band(&rel);
            let (mean_time_s, time_half_width) = band(&time);
            Aggregate {
                k,
                decoder,
                trials: rs.len(),
                success_prob,
                success_half_width,
                mean_rel_error,
                rel_error_half_width,
                mean_time_s,
                time_half_width,
            }
        })
        .collect()
}

/// Column order of the results file.
pub const CSV_HEADER: [&str; 21] = [
    "record",
    "k",
    "decoder",
    "trial",
    "seed",
    "status",
    "success",
    "rel_error",
    "abs_error",
    "time_s",
    "a1_size",
    "whales_in_a1",
    "counters_hash",
    "trials",
    "success_prob",
    "success_half_width",
    "mean_rel_error",
    "rel_error_half_width",
    "mean_time_s",
    "time_half_width",
    "schema_version",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes trial rows followed by aggregate rows.
pub fn emit_csv(res: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    let v = SCHEMA_VERSION.to_string();
    for r in &res.rows {
        w.write_record([
            "trial",
            &r.k.to_string(),
            r.decoder.name(),
            &r.trial.to_string(),
            &r.seed.to_string(),
            &r.status,
            &r.success.to_string(),
            &r.rel_error.to_string(),
            &r.abs_error.to_string(),
            &r.time_s.to_string(),
            &opt(r.a1_size),
            &opt(r.whales_in_a1),
            &r.counters_hash,
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            &v,
        ])?;
    }
    for a in &res.aggregates {
        w.write_record([
            "aggregate",
            &a.k.to_string(),
            a.decoder.name(),
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            &a.trials.to_string(),
            &a.success_prob.to_string(),
            &a.success_half_width.to_string(),
            &a.mean_rel_error.to_string(),
            &a.rel_error_half_width.to_string(),
            &a.mean_time_s.to_string(),
            &a.time_half_width.to_string(),
            &v,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn aggregates_match(a: &Aggregate, b: &Aggregate) -> bool {
    a.k == b.k
        && a.decoder == b.decoder
        && a.trials == b.trials
        && same(a.success_prob, b.success_prob)
        && same(a.success_half_width, b.success_half_width)
        && same(a.mean_rel_error, b.mean_rel_error)
        && same(a.rel_error_half_width, b.rel_error_half_width)
        && same(a.mean_time_s, b.mean_time_s)
        && same(a.time_half_width, b.time_half_width)
}

/// Reads a results file and checks its aggregates against the trial rows.
pub fn load_csv(path: &Path) -> Result<ExperimentResult> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(Error::Schema(format!("unexpected header {header:?}")));
    }
    let mut res = ExperimentResult::default();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn num<T: FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} {s:?}"))
        }
        fn opt_num<T: FromStr>(s: &str, what: &str) -> std::result::Result<Option<T>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, what).map(Some)
            }
        }
        if field(20) != SCHEMA_VERSION.to_string() {
            return Err(Error::Schema(format!("line {line}: schema_version {:?}", field(20))));
        }
        let k = num(field(1), "k").map_err(perr)?;
        let decoder = field(2).parse::<Decoder>().map_err(|e| perr(e.to_string()))?;
        match field(0) {
            "trial" => res.rows.push(TrialRow {
                k,
                decoder,
                trial: num(field(3), "trial").map_err(perr)?,
                seed: num(field(4), "seed").map_err(perr)?,
                status: field(5).to_string(),
                success: num(field(6), "success").map_err(perr)?,
                rel_error: num(field(7), "rel_error").map_err(perr)?,
                abs_error: num(field(8), "abs_error").map_err(perr)?,
                time_s: num(field(9), "time_s").map_err(perr)?,
                a1_size: opt_num(field(10), "a1_size").map_err(perr)?,
                whales_in_a1: opt_num(field(11), "whales_in_a1").map_err(perr)?,
                counters_hash: field(12).to_string(),
            }),
            "aggregate" => res.aggregates.push(Aggregate {
                k,
                decoder,
                trials: num(field(13), "trials").map_err(perr)?,
                success_prob: num(field(14), "success_prob").map_err(perr)?,
                success_half_width: num(field(15), "success_half_width").map_err(perr)?,
                mean_rel_error: num(field(16), "mean_rel_error").map_err(perr)?,
                rel_error_half_width: num(field(17), "rel_error_half_width").map_err(perr)?,
                mean_time_s: num(field(18), "mean_time_s").map_err(perr)?,
                time_half_width: num(field(19), "time_half_width").map_err(perr)?,
            }),
            other => return Err(perr(format!("unknown record kind {other:?}"))),
        }
    }
    let derived = aggregate(&res.rows);
    if derived.len() != res.aggregates.len()
        || !derived.iter().zip(&res.aggregates).all(|(a, b)| aggregates_match(a, b))
    {
        return Err(Error::Schema(
            "stored aggregates do not match the trial rows".into(),
        ));
    }
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Success,
    RelError,
    Time,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "success" => Ok(Metric::Success),
            "rel_error" | "rel-error" => Ok(Metric::RelError),
            "time" => Ok(Metric::Time),
            _ => Err(Error::InvalidParameter(format!(
                "unknown metric {s:?} (expected success, rel_error or time)"
            ))),
        }
    }
}

/// Whitespace-separated series, one block per decoder separated by two blank
/// lines (gnuplot `index` blocks). Columns: `k value half_width`.
pub fn emit_plot_data(res: &ExperimentResult, metric: Metric, path: &Path) -> Result<()> {
    if res.aggregates.is_empty() {
        return Err(Error::InvalidParameter("no aggregates to plot".into()));
    }
    let mut by_decoder: BTreeMap<Decoder, Vec<&Aggregate>> = BTreeMap::new();
    for a in &res.aggregates {
        by_decoder.entry(a.decoder).or_default().push(a);
    }
    let mut out = fs::File::create(path)?;
    for (n, (decoder, aggs)) in by_decoder.into_iter().enumerate() {
        if n > 0 {
            writeln!(out, "\n")?;
        }
        writeln!(out, "# decoder {decoder}")?;
        writeln!(out, "# k value half_width")?;
        for a in aggs {
            let (v, hw) = match metric {
                Metric::Success => (a.success_prob, a.success_half_width),
                Metric::RelError => (a.mean_rel_error, a.rel_error_half_width),
                Metric::Time => (a.mean_time_s, a.time_half_width),
            };
            writeln!(out, "{} {} {}", a.k, v, hw)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: 1,
            n_flows: 10,
            n_counters: 8,
            degree: Some(3),
            epochs: 5,
            tau: 1.0,
            sweep: vec![1],
            trials: 1,
            whale: Magnitude::Constant { value: 2.0 },
            minnow: Magnitude::Constant { value: 0.0 },
            decoders: vec![Decoder::Direct],
            solver: LpOptions::default(),
            pmle: PmleParams::default(),
            root_seed: 7,
            output_dir: None,
            threads: Some(1),
            timing: Timing::Off,
        }
    }

    #[test]
    fn single_trial_aggregates_equal_row() {
        let res = run_sweep(&tiny()).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.aggregates.len(), 1);
        let (r, a) = (&res.rows[0], &res.aggregates[0]);
        assert_eq!(r.status, "ok");
        assert_eq!(a.trials, 1);
        assert_eq!(a.success_prob, if r.success { 1.0 } else { 0.0 });
        assert_eq!(a.mean_rel_error.to_bits(), r.rel_error.to_bits());
        assert!(a.success_half_width.is_nan());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            decoders: vec![Decoder::Direct, Decoder::PmleReduced],
            ..tiny()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn config_validation() {
        let bad = [
            ExperimentConfig { schema_version: 2, ..tiny() },
            ExperimentConfig { trials: 0, ..tiny() },
            ExperimentConfig { sweep: vec![], ..tiny() },
            ExperimentConfig { sweep: vec![11], ..tiny() },
            ExperimentConfig { n_counters: 11, ..tiny() },
            ExperimentConfig { decoders: vec![], ..tiny() },
            ExperimentConfig { degree: Some(9), ..tiny() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        assert!(ExperimentConfig::from_toml_str("schema_version = 1\nbogus = 3").is_err());
    }

    #[test]
    fn csv_round_trip_and_audit() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            sweep: vec![1, 2],
            trials: 3,
            decoders: vec![Decoder::Direct, Decoder::PmleReduced],
            pmle: PmleParams {
                grid_levels: 16,
                ..Default::default()
            },
            ..tiny()
        };
        let res = run_sweep(&cfg).unwrap();
        assert_eq!(res.rows.len(), 12);
        let p = dir.path().join("r.csv");
        emit_csv(&res, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.rows.len(), res.rows.len());
        for (a, b) in back.rows.iter().zip(&res.rows) {
            assert_eq!((a.k, a.trial, a.decoder, &a.status, a.success), (b.k, b.trial, b.decoder, &b.status, b.success));
            assert!(same(a.rel_error, b.rel_error) && same(a.abs_error, b.abs_error));
        }
        assert!(back.aggregates.iter().zip(&res.aggregates).all(|(a, b)| aggregates_match(a, b)));

        // counters seen by both decoders of a trial are identical
        for pair in res.rows.chunks(2) {
            assert_eq!(pair[0].counters_hash, pair[1].counters_hash);
        }

        // tampering with an aggregate is detected
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let last = lines.last().unwrap();
        let mut cols: Vec<String> = last.split(',').map(String::from).collect();
        cols[14] = "0.123".into();
        let mut edited = lines[..lines.len() - 1].join("\n");
        edited.push('\n');
        edited.push_str(&cols.join(","));
        edited.push('\n');
        fs::write(&p, edited).unwrap();
        assert!(matches!(load_csv(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_result_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        emit_csv(&ExperimentResult::default(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(load_csv(&p).unwrap(), ExperimentResult::default());
    }

    #[test]
    fn hand_built_file_loads_known_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let mut text = CSV_HEADER.join(",");
        text.push('\n');
        text.push_str("trial,5,direct,0,1,ok,true,0.5,1,2,,,ab,,,,,,,,1\n");
        text.push_str("trial,5,direct,1,2,ok,false,1.5,3,4,,,cd,,,,,,,,1\n");
        let hw_s = 1.96 * 0.5f64.sqrt() / 2f64.sqrt();
        let hw_t = 1.96 * 2f64.sqrt() / 2f64.sqrt();
        text.push_str(&format!("aggregate,5,direct,,,,,,,,,,,2,0.5,{hw_s},1,{hw_s},3,{hw_t},1\n"));
        fs::write(&p, text).unwrap();
        let res = load_csv(&p).unwrap();
        let a = &res.aggregates[0];
        assert_eq!((a.trials, a.success_prob, a.mean_rel_error, a.mean_time_s), (2, 0.5, 1.0, 3.0));
    }

    #[test]
    fn errored_decoder_is_recorded() {
        let cfg = ExperimentConfig {
            decoders: vec![Decoder::PmleExhaustive, Decoder::Direct],
            pmle: PmleParams {
                enumeration_cap: 10.0,
                ..Default::default()
            },
            ..tiny()
        };
        let res = run_sweep(&cfg).unwrap();
        let ex = res.rows.iter().find(|r| r.decoder == Decoder::PmleExhaustive).unwrap();
        assert!(ex.status.contains("exceeds the cap"));
        assert!(!ex.success);
        assert_eq!(res.aggregates[1].success_prob, 0.0);
    }

    #[test]
    fn plot_data_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_sweep(&tiny()).unwrap();
        let p = dir.path().join("p.dat");
        emit_plot_data(&res, Metric::Success, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
        assert_eq!(data.len(), 1);
        let v: f64 = data[0].split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert!("speed".parse::<Metric>().is_err());
    }
}
