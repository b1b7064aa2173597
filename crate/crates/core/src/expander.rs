//! Left-regular bipartite graphs used as counter-update matrices.
//!
//! Left nodes are flows, right nodes are counters. The adjacency matrix `A`
//! (counters x flows) is binary with exactly `d` ones per column, stored as a
//! column-major adjacency list of right indices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::AddAssign;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Default enumeration cap for [`BipartiteGraph::verify_expansion`].
pub const DEFAULT_ENUMERATION_CAP: f64 = 1e7;

/// Number of reseeded constructions tried by [`build_with_cover`].
pub const MAX_COVER_RETRIES: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    n_left: usize,
    n_right: usize,
    degree: usize,
    seed: u64,
    // n_left * degree right indices, each column sorted ascending
    columns: Vec<usize>,
}

/// Result of a brute-force expansion check.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport {
    pub k_checked: usize,
    pub epsilon: f64,
    /// min over tested S of |N(S)| / (d |S|)
    pub worst_ratio: f64,
    pub is_expander: bool,
    pub subsets_tested: u64,
}

/// A set of left nodes whose neighborhoods cover every counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverSet {
    members: Vec<usize>,
    n_left: usize,
}

impl CoverSet {
    /// Members in ascending order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    /// The 0/1 indicator vector of the cover over all left nodes.
    pub fn indicator(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_left];
        for &i in &self.members {
            v[i] = 1.0;
        }
        v
    }
}

/// A graph together with its greedy cover, see [`build_with_cover`].
#[derive(Debug, Clone)]
pub struct CoveredGraph {
    pub graph: BipartiteGraph,
    pub cover: CoverSet,
    /// Number of reseeded constructions needed before a valid cover was found.
    pub retries: u32,
}

/// `ceil(2 log2(n / k))`, at least 1.
pub fn default_degree(n_left: usize, k: usize) -> usize {
    if k == 0 || n_left <= k {
        return 1;
    }
    let d = (2.0 * (n_left as f64 / k as f64).log2()).ceil();
    (d as usize).max(1)
}

impl BipartiteGraph {
    /// Draws every column as an independent uniform `d`-subset of the counters.
    pub fn random(n_left: usize, n_right: usize, degree: usize, seed: u64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter("degree must be at least 1".into()));
        }
        if degree > n_right {
            return Err(Error::InvalidParameter(format!(
                "degree {degree} exceeds the number of counters {n_right}"
            )));
        }
        if n_right > n_left {
            return Err(Error::InvalidParameter(format!(
                "{n_right} counters for {n_left} flows is not a compression"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns = Vec::with_capacity(n_left * degree);
        for _ in 0..n_left {
            let mut col = index::sample(&mut rng, n_right, degree).into_vec();
            col.sort_unstable();
            columns.extend_from_slice(&col);
        }
        Ok(BipartiteGraph {
            n_left,
            n_right,
            degree,
            seed,
            columns,
        })
    }

    /// Builds a graph from explicit columns. Each column must hold `degree`
    /// distinct indices below `n_right`; they are stored sorted.
    pub fn from_columns(n_right: usize, columns: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        let n_left = columns.len();
        let degree = columns.first().map_or(0, Vec::len);
        if degree == 0 {
            return Err(Error::InvalidParameter("degree must be at least 1".into()));
        }
        if n_right > n_left {
            return Err(Error::InvalidParameter(format!(
                "{n_right} counters for {n_left} flows is not a compression"
            )));
        }
        let mut flat = Vec::with_capacity(n_left * degree);
        for (i, mut col) in columns.into_iter().enumerate() {
            if col.len() != degree {
                return Err(Error::InvalidParameter(format!(
                    "column {i} has {} entries, expected {degree}",
                    col.len()
                )));
            }
            col.sort_unstable();
            if col.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "column {i} has repeated entries"
                )));
            }
            if let Some(&j) = col.last().filter(|&&j| j >= n_right) {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    len: n_right,
                });
            }
            flat.extend_from_slice(&col);
        }
        Ok(BipartiteGraph {
            n_left,
            n_right,
            degree,
            seed,
            columns: flat,
        })
    }

    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sorted right neighbors of left node `i`.
    #[inline]
    pub fn column(&self, i: usize) -> &[usize] {
        &self.columns[i * self.degree..(i + 1) * self.degree]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[usize]> {
        self.columns.chunks_exact(self.degree)
    }

    /// Left neighbors of every counter in CSR form: `(offsets, indices)`.
    pub fn right_adjacency(&self) -> (Vec<usize>, Vec<usize>) {
        let mut offsets = vec![0usize; self.n_right + 1];
        for &j in &self.columns {
            offsets[j + 1] += 1;
        }
        for j in 0..self.n_right {
            offsets[j + 1] += offsets[j];
        }
        let mut fill = offsets.clone();
        let mut indices = vec![0usize; self.columns.len()];
        for (i, col) in self.columns().enumerate() {
            for &j in col {
                indices[fill[j]] = i;
                fill[j] += 1;
            }
        }
        (offsets, indices)
    }

    /// `y = A x`. Exact for integer element types.
    pub fn apply<T>(&self, x: &[T]) -> Result<Vec<T>>
    where
        T: Copy + Default + AddAssign,
    {
        check_len(self.n_left, x.len())?;
        let mut y = vec![T::default(); self.n_right];
        for (col, &xi) in self.columns().zip(x) {
            for &j in col {
                y[j] += xi;
            }
        }
        Ok(y)
    }

    /// `y = (A / d) x`.
    pub fn apply_normalized(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.degree as f64;
        let mut y = self.apply(x)?;
        y.iter_mut().for_each(|v| *v /= d);
        Ok(y)
    }

    /// `x = A^T v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_right, v.len())?;
        Ok(self
            .columns()
            .map(|col| col.iter().map(|&j| v[j]).sum())
            .collect())
    }

    /// Adds `delta` packets of flow `i` to its `d` counters.
    pub fn increment(&self, counters: &mut [u64], i: usize, delta: u64) -> Result<()> {
        check_len(self.n_right, counters.len())?;
        if i >= self.n_left {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n_left,
            });
        }
        if delta == 0 {
            return Ok(());
        }
        for &j in self.column(i) {
            counters[j] += delta;
        }
        Ok(())
    }

    /// Brute-force expansion check over every nonempty left subset of size at
    /// most `k`, with the default enumeration cap.
    pub fn verify_expansion(&self, k: usize, epsilon: f64) -> Result<ExpansionReport> {
        self.verify_expansion_capped(k, epsilon, DEFAULT_ENUMERATION_CAP)
    }

    pub fn verify_expansion_capped(
        &self,
        k: usize,
        epsilon: f64,
        cap: f64,
    ) -> Result<ExpansionReport> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {epsilon} outside [0, 1)"
            )));
        }
        let k = k.min(self.n_left);
        let count: f64 = (1..=k).map(|s| binomial_f64(self.n_left, s)).sum();
        if count > cap {
            return Err(Error::EnumerationCap { count, cap });
        }

        let mut walk = SubsetWalk {
            graph: self,
            k,
            hits: vec![0u32; self.n_right],
            covered: 0,
            worst: 1.0,
            tested: 0,
        };
        walk.descend(0, 0);

        Ok(ExpansionReport {
            k_checked: k,
            epsilon,
            worst_ratio: walk.worst,
            is_expander: walk.worst >= 1.0 - epsilon,
            subsets_tested: walk.tested,
        })
    }

    /// Writes the text sidecar format: a header line `N M d seed`, then one
    /// line of `d` space-separated counter indices per flow.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{} {} {} {}",
            self.n_left, self.n_right, self.degree, self.seed
        )?;
        let mut line = String::new();
        for col in self.columns() {
            line.clear();
            for (a, j) in col.iter().enumerate() {
                if a > 0 {
                    line.push(' ');
                }
                line.push_str(&j.to_string());
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| perr(1, "missing header".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(perr(1, format!("expected `N M d seed`, got {header:?}")));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| perr(1, e.to_string()));
        let n_left = num(fields[0])? as usize;
        let n_right = num(fields[1])? as usize;
        let degree = num(fields[2])? as usize;
        let seed = num(fields[3])?;

        let mut columns = Vec::with_capacity(n_left);
        for (lineno, line) in (2..).zip(lines) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let col = line
                .split_whitespace()
                .map(|s| s.parse::<usize>().map_err(|e| perr(lineno, e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if col.len() != degree {
                return Err(perr(
                    lineno,
                    format!("expected {degree} indices, got {}", col.len()),
                ));
            }
            columns.push(col);
        }
        if columns.len() != n_left {
            return Err(perr(
                n_left + 1,
                format!("expected {n_left} columns, got {}", columns.len()),
            ));
        }
        Self::from_columns(n_right, columns, seed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), path)
    }
}

struct SubsetWalk<'g> {
    graph: &'g BipartiteGraph,
    k: usize,
    hits: Vec<u32>,
    covered: usize,
    worst: f64,
    tested: u64,
}

impl SubsetWalk<'_> {
    fn descend(&mut self, start: usize, size: usize) {
        let d = self.graph.degree as f64;
        for i in start..self.graph.n_left {
            for &j in self.graph.column(i) {
                if self.hits[j] == 0 {
                    self.covered += 1;
                }
                self.hits[j] += 1;
            }
            let ratio = self.covered as f64 / (d * (size + 1) as f64);
            self.tested += 1;
            if ratio < self.worst {
                self.worst = ratio;
            }
            if size + 1 < self.k {
                self.descend(i + 1, size + 1);
            }
            for &j in self.graph.column(i) {
                self.hits[j] -= 1;
                if self.hits[j] == 0 {
                    self.covered -= 1;
                }
            }
        }
    }
}

/// Greedy set cover: repeatedly take the flow that covers the most uncovered
/// counters, lowest index on ties.
pub fn greedy_cover(g: &BipartiteGraph) -> Result<CoverSet> {
    let (offsets, lefts) = g.right_adjacency();
    if let Some(j) = (0..g.n_right).find(|&j| offsets[j] == offsets[j + 1]) {
        return Err(Error::IsolatedCounter(j));
    }
    let mut gain = vec![g.degree; g.n_left];
    let mut covered = vec![false; g.n_right];
    let mut remaining = g.n_right;
    let mut members = Vec::new();
    while remaining > 0 {
        let (best, _) = gain
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        members.push(best);
        for &j in g.column(best) {
            if !covered[j] {
                covered[j] = true;
                remaining -= 1;
                for &l in &lefts[offsets[j]..offsets[j + 1]] {
                    gain[l] -= 1;
                }
            }
        }
    }
    members.sort_unstable();
    Ok(CoverSet {
        members,
        n_left: g.n_left,
    })
}

/// Builds a random graph and its greedy cover. When the cover cannot be built
/// (an isolated counter) or is larger than the number of counters, the graph
/// is redrawn from a derived seed, up to [`MAX_COVER_RETRIES`] times.
pub fn build_with_cover(
    n_left: usize,
    n_right: usize,
    degree: usize,
    seed: u64,
) -> Result<CoveredGraph> {
    let mut last_err = None;
    for attempt in 0..=MAX_COVER_RETRIES {
        let s = if attempt == 0 {
            seed
        } else {
            seed::derive(seed, &[u64::from(attempt)])
        };
        let graph = BipartiteGraph::random(n_left, n_right, degree, s)?;
        match greedy_cover(&graph) {
            Ok(cover) if cover.len() <= n_right => {
                return Ok(CoveredGraph {
                    graph,
                    cover,
                    retries: attempt,
                })
            }
            Ok(cover) => {
                log::warn!(
                    "greedy cover of size {} exceeds {n_right} counters (seed {s}); redrawing",
                    cover.len()
                );
                last_err = Some(Error::Numerical(format!(
                    "greedy cover of size {} exceeds {n_right}",
                    cover.len()
                )));
            }
            Err(e) => {
                log::warn!("graph with seed {s} has no cover: {e}; redrawing");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Numerical("no cover found".into())))
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

pub(crate) fn binomial_f64(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
