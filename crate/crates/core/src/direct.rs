//! Direct decoding: l1 minimization subject to `A u = y`, then clip and
//! divide by the elapsed time.
//!
//! The LP `min ||u||_1 s.t. A u = y` is solved in the split form `u = p - q`,
//! `p, q >= 0`, minimizing `1'(p + q)` with a Mehrotra predictor-corrector
//! interior point method. Newton systems are reduced to the `M x M` normal
//! matrix `A diag(w) A'`, which is dense and factored by Cholesky. An ADMM
//! basis-pursuit mode is available for instances where refactoring every
//! iteration is too expensive.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expander::BipartiteGraph;
use crate::metrics::positive_clip;

/// Above this many flows `LpMethod::Auto` switches to ADMM.
pub const AUTO_ADMM_THRESHOLD: usize = 100_000;

const IPM_DEFAULT_ITERS: usize = 200;
const ADMM_DEFAULT_ITERS: usize = 50_000;
const STEP_DAMPING: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpMethod {
    #[default]
    Auto,
    InteriorPoint,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    IterationCap,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LpOptions {
    /// Defaults to `1e-6 (1 + ||y||_inf)`.
    pub tol_feas: Option<f64>,
    /// Defaults to `1e-6 (1 + ||y||_1)`.
    pub tol_obj: Option<f64>,
    /// Defaults to 200 interior point or 50000 ADMM iterations.
    pub iter_cap: Option<usize>,
    pub method: LpMethod,
    /// Record one [`TraceRow`] per iteration.
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub u: Vec<f64>,
    /// `max_j |(A u - y)_j|`
    pub primal_feasibility: f64,
    /// `||u||_1`
    pub objective: f64,
    pub iterations: usize,
    pub status: LpStatus,
    pub trace: Vec<TraceRow>,
}

impl LpOptions {
    fn tolerances(&self, y: &[f64]) -> (f64, f64) {
        let inf = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let one: f64 = y.iter().map(|v| v.abs()).sum();
        (
            self.tol_feas.unwrap_or(1e-6 * (1.0 + inf)),
            self.tol_obj.unwrap_or(1e-6 * (1.0 + one)),
        )
    }
}

/// Solves `min ||u||_1 s.t. A u = y`.
pub fn basis_pursuit(g: &BipartiteGraph, y: &[f64], opts: &LpOptions) -> Result<LpSolution> {
    if y.len() != g.n_right() {
        return Err(Error::LengthMismatch {
            expected: g.n_right(),
            found: y.len(),
        });
    }
    let (tol_feas, tol_obj) = opts.tolerances(y);

    // a counter with no flows can only ever read zero
    let (offsets, _) = g.right_adjacency();
    if (0..g.n_right()).any(|j| offsets[j] == offsets[j + 1] && y[j].abs() > tol_feas) {
        let u = vec![0.0; g.n_left()];
        return Ok(finish(g, y, u, 0, LpStatus::Infeasible, Vec::new()));
    }
    if y.iter().all(|&v| v == 0.0) {
        let u = vec![0.0; g.n_left()];
        return Ok(finish(g, y, u, 0, LpStatus::Optimal, Vec::new()));
    }

    let method = match opts.method {
        LpMethod::Auto if g.n_left() > AUTO_ADMM_THRESHOLD => LpMethod::Admm,
        LpMethod::Auto => LpMethod::InteriorPoint,
        m => m,
    };
    match method {
        LpMethod::Admm => admm(
            g,
            y,
            tol_feas,
            tol_obj,
            opts.iter_cap.unwrap_or(ADMM_DEFAULT_ITERS),
            opts.trace,
        ),
        _ => interior_point(
            g,
            y,
            tol_feas,
            tol_obj,
            opts.iter_cap.unwrap_or(IPM_DEFAULT_ITERS),
            opts.trace,
        ),
    }
}

/// Rate estimate `u+ / (n tau)`.
pub fn direct_estimate(sol: &LpSolution, epochs: u64, tau: f64) -> Result<Vec<f64>> {
    if epochs == 0 || !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1 and tau > 0, got n = {epochs}, tau = {tau}"
        )));
    }
    let t = epochs as f64 * tau;
    Ok(positive_clip(&sol.u).into_iter().map(|v| v / t).collect())
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,objective,feasibility,gap")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{}",
            r.iteration, r.objective, r.feasibility, r.gap
        )?;
    }
    w.flush()?;
    Ok(())
}

fn finish(
    g: &BipartiteGraph,
    y: &[f64],
    u: Vec<f64>,
    iterations: usize,
    status: LpStatus,
    trace: Vec<TraceRow>,
) -> LpSolution {
    let au = g.apply(&u).expect("length checked");
    let primal_feasibility = au
        .iter()
        .zip(y)
        .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
    let objective = u.iter().map(|v| v.abs()).sum();
    LpSolution {
        u,
        primal_feasibility,
        objective,
        iterations,
        status,
        trace,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dense lower-triangular Cholesky factor stored row-major.
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors the lower triangle of `a` in place. Returns `None` on a
    /// non-positive pivot.
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        for j in 0..n {
            let (head, tail) = a.split_at_mut(j * n);
            let row_j = &mut tail[..n];
            // diagonal first: row j against itself
            let s = row_j[j] - dot(&row_j[..j], &row_j[..j]);
            if !(s > 0.0) || !s.is_finite() {
                return None;
            }
            let piv = s.sqrt();
            row_j[j] = piv;
            let _ = head;
            let row_j: Vec<f64> = row_j[..j].to_vec();
            for i in j + 1..n {
                let row_i = &mut a[i * n..i * n + n];
                let v = (row_i[j] - dot(&row_i[..j], &row_j)) / piv;
                row_i[j] = v;
            }
        }
        Some(Cholesky { n, l: a })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            x[i] = (x[i] - dot(row, &x[..i])) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let xi = x[i] / self.l[i * n + i];
            x[i] = xi;
            for k in 0..i {
                x[k] -= self.l[i * n + k] * xi;
            }
        }
        x
    }
}

/// Lower triangle of `A diag(w) A'`, row-major `m x m`.
fn normal_matrix(g: &BipartiteGraph, w: &[f64]) -> Vec<f64> {
    let m = g.n_right();
    let mut k = vec![0.0; m * m];
    for (col, &wi) in g.columns().zip(w) {
        for (a, &r) in col.iter().enumerate() {
            for &s in &col[..=a] {
                k[r * m + s] += wi;
            }
        }
    }
    k
}

/// Factors `A diag(w) A' + reg I`, raising the ridge until the factorization
/// succeeds.
fn factor_normal(g: &BipartiteGraph, w: &[f64]) -> Result<Cholesky> {
    let m = g.n_right();
    let base = normal_matrix(g, w);
    let max_diag = (0..m).fold(0.0f64, |a, j| a.max(base[j * m + j]));
    let mut reg = 1e-13 * max_diag.max(1e-300);
    for _ in 0..12 {
        let mut k = base.clone();
        for j in 0..m {
            k[j * m + j] += reg;
        }
        if let Some(c) = Cholesky::factor(k, m) {
            return Ok(c);
        }
        reg *= 100.0;
    }
    Err(Error::Numerical("normal matrix factorization failed".into()))
}

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0f64, |a, (v, d)| a.min(-v / d))
}

struct Newton<'a> {
    g: &'a BipartiteGraph,
    chol: Cholesky,
    z: &'a [f64],
    s: &'a [f64],
    rp: &'a [f64],
    rd: &'a [f64],
}

impl Newton<'_> {
    /// Direction for complementarity target `rc`; returns `(dz, dlam, ds)`.
    fn solve(&self, rc: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.g.n_left();
        let dd: Vec<f64> = self.z.iter().zip(self.s).map(|(z, s)| z / s).collect();
        let v: Vec<f64> = (0..2 * n)
            .map(|i| rc[i] / self.s[i] - dd[i] * self.rd[i])
            .collect();
        let bv: Vec<f64> = (0..n).map(|i| v[i] - v[n + i]).collect();
        let abv = self.g.apply(&bv)?;
        let rhs: Vec<f64> = self.rp.iter().zip(&abv).map(|(r, a)| r - a).collect();
        let dlam = self.chol.solve(&rhs);
        let atd = self.g.apply_transpose(&dlam)?;
        let mut dz = v;
        let mut ds = self.rd.to_vec();
        for i in 0..n {
            dz[i] += dd[i] * atd[i];
            dz[n + i] -= dd[n + i] * atd[i];
            ds[i] -= atd[i];
            ds[n + i] += atd[i];
        }
        Ok((dz, dlam, ds))
    }
}

fn interior_point(
    g: &BipartiteGraph,
    y: &[f64],
    tol_feas: f64,
    tol_obj: f64,
    iter_cap: usize,
    want_trace: bool,
) -> Result<LpSolution> {
    let n = g.n_left();
    let nn = 2 * n;
    let tol_dual = 1e-8;

    // Mehrotra's starting point. B = [A, -A] and c = 1, so B c = 0 and the
    // least-squares dual start is zero.
    let chol0 = factor_normal(g, &vec![2.0; n])?;
    let w0 = chol0.solve(y);
    let atw = g.apply_transpose(&w0)?;
    let mut z: Vec<f64> = atw.iter().copied().chain(atw.iter().map(|v| -v)).collect();
    let mut s = vec![1.0; nn];
    let mut lam = vec![0.0; g.n_right()];
    let shift = (-1.5 * z.iter().fold(f64::INFINITY, |a, &v| a.min(v))).max(0.0);
    z.iter_mut().for_each(|v| *v += shift);
    let zs = dot(&z, &s);
    let dz0 = 0.5 * zs / s.iter().sum::<f64>();
    let ds0 = 0.5 * zs / z.iter().sum::<f64>().max(1e-300);
    let floor = 1e-8 * (1.0 + inf_norm(y));
    z.iter_mut().for_each(|v| *v = (*v + dz0).max(floor));
    s.iter_mut().for_each(|v| *v += ds0);

    let mut trace = Vec::new();
    let mut status = LpStatus::IterationCap;
    let mut iterations = 0;
    for iter in 0..=iter_cap {
        let u: Vec<f64> = (0..n).map(|i| z[i] - z[n + i]).collect();
        let au = g.apply(&u)?;
        let rp: Vec<f64> = y.iter().zip(&au).map(|(a, b)| a - b).collect();
        let atl = g.apply_transpose(&lam)?;
        let mut rd = vec![0.0; nn];
        for i in 0..n {
            rd[i] = 1.0 - atl[i] - s[i];
            rd[n + i] = 1.0 + atl[i] - s[n + i];
        }
        let pobj: f64 = z.iter().sum();
        let gap = pobj - dot(y, &lam);
        let feas = inf_norm(&rp);
        if want_trace {
            trace.push(TraceRow {
                iteration: iter,
                objective: pobj,
                feasibility: feas,
                gap,
            });
        }
        iterations = iter;
        if feas <= tol_feas && inf_norm(&rd) <= tol_dual && gap.abs() <= tol_obj {
            status = LpStatus::Optimal;
            break;
        }
        if iter == iter_cap {
            break;
        }

        let w: Vec<f64> = (0..n).map(|i| z[i] / s[i] + z[n + i] / s[n + i]).collect();
        let newton = Newton {
            g,
            chol: factor_normal(g, &w)?,
            z: &z,
            s: &s,
            rp: &rp,
            rd: &rd,
        };
        let mu = dot(&z, &s) / nn as f64;

        let rc_aff: Vec<f64> = z.iter().zip(&s).map(|(a, b)| -a * b).collect();
        let (dz_a, _, ds_a) = newton.solve(&rc_aff)?;
        let ap = max_step(&z, &dz_a);
        let ad = max_step(&s, &ds_a);
        let mu_aff = (0..nn)
            .map(|i| (z[i] + ap * dz_a[i]) * (s[i] + ad * ds_a[i]))
            .sum::<f64>()
            / nn as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        let rc: Vec<f64> = (0..nn)
            .map(|i| -z[i] * s[i] - dz_a[i] * ds_a[i] + sigma * mu)
            .collect();
        let (dz, dlam, ds) = newton.solve(&rc)?;
        let ap = (STEP_DAMPING * max_step(&z, &dz)).min(1.0);
        let ad = (STEP_DAMPING * max_step(&s, &ds)).min(1.0);
        for i in 0..nn {
            z[i] += ap * dz[i];
            s[i] += ad * ds[i];
        }
        for (l, d) in lam.iter_mut().zip(&dlam) {
            *l += ad * d;
        }
        if z.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("interior point iterate diverged".into()));
        }
    }

    let u: Vec<f64> = (0..n).map(|i| z[i] - z[n + i]).collect();
    let mut sol = finish(g, y, u, iterations, status, trace);
    if sol.status == LpStatus::Optimal && sol.primal_feasibility > tol_feas {
        sol.status = LpStatus::IterationCap;
    }
    let _ = tol_obj;
    Ok(sol)
}

fn admm(
    g: &BipartiteGraph,
    y: &[f64],
    tol_feas: f64,
    tol_obj: f64,
    iter_cap: usize,
    want_trace: bool,
) -> Result<LpSolution> {
    let n = g.n_left();
    let rho = 1.0;
    let chol = factor_normal(g, &vec![1.0; n])?;
    let project = |v: &[f64]| -> Result<Vec<f64>> {
        let av = g.apply(v)?;
        let r: Vec<f64> = av.iter().zip(y).map(|(a, b)| a - b).collect();
        let corr = g.apply_transpose(&chol.solve(&r))?;
        Ok(v.iter().zip(&corr).map(|(a, c)| a - c).collect())
    };

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut trace = Vec::new();
    let mut status = LpStatus::IterationCap;
    let mut iterations = 0;
    for iter in 1..=iter_cap {
        iterations = iter;
        let v: Vec<f64> = z.iter().zip(&u).map(|(a, b)| a - b).collect();
        x = project(&v)?;
        let z_old = std::mem::take(&mut z);
        z = x
            .iter()
            .zip(&u)
            .map(|(a, b)| {
                let t = a + b;
                t.signum() * (t.abs() - 1.0 / rho).max(0.0)
            })
            .collect();
        for i in 0..n {
            u[i] += x[i] - z[i];
        }
        let r: f64 = x.iter().zip(&z).map(|(a, b)| (a - b).abs()).sum();
        let sres: f64 = rho * z.iter().zip(&z_old).map(|(a, b)| (a - b).abs()).sum::<f64>();
        if want_trace {
            trace.push(TraceRow {
                iteration: iter,
                objective: x.iter().map(|v| v.abs()).sum(),
                feasibility: r,
                gap: sres,
            });
        }
        if r <= tol_obj && sres <= tol_obj && inf_norm(&x.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>()) <= tol_feas {
            status = LpStatus::Optimal;
            break;
        }
    }
    let mut sol = finish(g, y, x, iterations, status, trace);
    if sol.status == LpStatus::Optimal && sol.primal_feasibility > tol_feas {
        sol.status = LpStatus::IterationCap;
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ipm() -> LpOptions {
        LpOptions {
            method: LpMethod::InteriorPoint,
            ..Default::default()
        }
    }

    #[test]
    fn cholesky_solves_small_system() {
        // [[4,2,0],[2,5,1],[0,1,3]]
        let a = vec![4.0, 0.0, 0.0, 2.0, 5.0, 0.0, 0.0, 1.0, 3.0];
        let c = Cholesky::factor(a, 3).unwrap();
        let x = c.solve(&[2.0, 8.0, 7.0]);
        let full = [[4.0, 2.0, 0.0], [2.0, 5.0, 1.0], [0.0, 1.0, 3.0]];
        for (row, b) in full.iter().zip([2.0, 8.0, 7.0]) {
            let v: f64 = row.iter().zip(&x).map(|(p, q)| p * q).sum();
            assert!((v - b).abs() < 1e-12);
        }
        assert!(Cholesky::factor(vec![1.0, 0.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn zero_counters_give_zero() {
        let g = BipartiteGraph::random(30, 10, 3, 1).unwrap();
        let sol = basis_pursuit(&g, &[0.0; 10], &ipm()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.objective, 0.0);
        assert!(sol.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn complete_graph_objective_is_forced() {
        let g = BipartiteGraph::random(2, 2, 2, 0).unwrap();
        let sol = basis_pursuit(&g, &[8.0, 8.0], &ipm()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 8.0).abs() < 1e-5);
        assert!((sol.u[0] + sol.u[1] - 8.0).abs() < 1e-5);
    }

    #[test]
    fn isolated_counter_with_mass_is_infeasible() {
        let g = BipartiteGraph::from_columns(3, vec![vec![0, 1], vec![1, 0], vec![0, 1]], 0).unwrap();
        let sol = basis_pursuit(&g, &[1.0, 1.0, 2.0], &ipm()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn recovers_sparse_nonnegative_signal() {
        let g = BipartiteGraph::random(200, 60, 6, 4).unwrap();
        let mut x = vec![0.0; 200];
        x[3] = 40.0;
        x[77] = 12.0;
        x[150] = 31.0;
        let y = g.apply(&x).unwrap();
        let sol = basis_pursuit(&g, &y, &ipm()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let err: f64 = sol.u.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        assert!(err < 1e-4, "error {err}");
    }

    #[test]
    fn objective_never_exceeds_feasible_point() {
        let g = BipartiteGraph::random(120, 30, 4, 9).unwrap();
        let x: Vec<f64> = (0..120).map(|i| ((i * 7919) % 13) as f64 / 4.0).collect();
        let y = g.apply(&x).unwrap();
        let sol = basis_pursuit(&g, &y, &ipm()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let (tf, to) = ipm().tolerances(&y);
        assert!(sol.primal_feasibility <= tf);
        let xl1: f64 = x.iter().sum();
        assert!(sol.objective <= xl1 + to);
    }

    #[test]
    fn admm_matches_interior_point_objective() {
        let g = BipartiteGraph::random(80, 24, 4, 2).unwrap();
        let x: Vec<f64> = (0..80).map(|i| if i % 9 == 0 { 10.0 } else { (i % 3) as f64 * 0.5 }).collect();
        let y = g.apply(&x).unwrap();
        let a = basis_pursuit(&g, &y, &ipm()).unwrap();
        let b = basis_pursuit(
            &g,
            &y,
            &LpOptions {
                method: LpMethod::Admm,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.status, LpStatus::Optimal);
        assert_eq!(b.status, LpStatus::Optimal, "admm after {} iterations", b.iterations);
        let (tf, to) = ipm().tolerances(&y);
        assert!(b.primal_feasibility <= tf);
        assert!((a.objective - b.objective).abs() <= 2.0 * to, "{} vs {}", a.objective, b.objective);
    }

    #[test]
    fn trace_is_recorded() {
        let g = BipartiteGraph::random(50, 20, 4, 2).unwrap();
        let mut x = vec![0.0; 50];
        x[5] = 3.0;
        let y = g.apply(&x).unwrap();
        let sol = basis_pursuit(
            &g,
            &y,
            &LpOptions {
                trace: true,
                ..ipm()
            },
        )
        .unwrap();
        assert_eq!(sol.trace.len(), sol.iterations + 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace_csv(&p, &sol.trace).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iteration,objective,feasibility,gap\n"));
        assert_eq!(text.lines().count(), sol.trace.len() + 1);
    }

    #[test]
    fn direct_estimate_examples() {
        let lambda = [0.5, 2.0, 0.0];
        let sol = LpSolution {
            u: lambda.iter().map(|l| l * 40.0 * 0.5).collect(),
            primal_feasibility: 0.0,
            objective: 0.0,
            iterations: 0,
            status: LpStatus::Optimal,
            trace: Vec::new(),
        };
        assert_eq!(direct_estimate(&sol, 40, 0.5).unwrap(), lambda.to_vec());
        let half = direct_estimate(&sol, 80, 0.5).unwrap();
        assert_eq!(half, vec![0.25, 1.0, 0.0]);

        let neg = LpSolution {
            u: vec![-3.0, 6.0],
            ..sol.clone()
        };
        assert_eq!(direct_estimate(&neg, 2, 1.0).unwrap(), vec![0.0, 3.0]);
        assert!(direct_estimate(&sol, 0, 1.0).is_err());
    }
}
