//! Ascent methods on `S(n, k)` and the multi-restart driver.
//!
//! Two methods are provided:
//!
//! * **coordinate** — exact block coordinate ascent. Row `i` is replaced by
//!   the maximizer of `F_A` over that row with the others fixed, which is
//!   `h_i / ||h_i||` with `h_i = sum_{j != i} A_ij s_j`. Every update is a
//!   non-decreasing step, so the objective trace is monotone.
//! * **rgrad** — Riemannian gradient ascent with the normalization retraction
//!   and an Armijo backtracking line search.
//!
//! Both stop when the Riemannian gradient satisfies
//! `||grad F||_F <= grad_tol * max(1, ||A||_2) * sqrt(n)`.
//! Saddle points are not escaped unless [`SolverConfig::perturb_on_stall`] is set.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::manifold::{dot, geodesic_curve, half_grad, norm, objective_increase, retract, SpherePoint, TangentVector, ZERO_NORM};
use crate::rng::{self, Tag};
use crate::symmat::{PowerOptions, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Coordinate,
    Rgrad,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Coordinate => "coordinate",
            Method::Rgrad => "rgrad",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordinate" => Ok(Method::Coordinate),
            "rgrad" => Ok(Method::Rgrad),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Backtracking parameters for [`riemannian_ascent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub init_step: f64,
    pub shrink: f64,
    /// Sufficient-increase constant `c` in `F(new) >= F(old) + c t ||grad||^2`.
    pub sufficient_increase: f64,
    pub max_halvings: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            init_step: 1.0,
            shrink: 0.5,
            sufficient_increase: 1e-4,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: Method,
    /// Scale-free gradient tolerance, multiplied by `max(1, ||A||_2) sqrt(n)`.
    pub grad_tol: f64,
    /// Coordinate ascent also stops once a sweep gains at most
    /// `obj_tol * (1 + |F|)`.
    pub obj_tol: f64,
    /// Sweeps (coordinate) or iterations (rgrad).
    pub max_iters: usize,
    pub line_search: LineSearch,
    pub seed: u64,
    /// Visit rows in a fresh random order every sweep.
    pub random_order: bool,
    /// After convergence, nudge by a random tangent step of size 1e-6 and
    /// solve again; keep the better point.
    pub perturb_on_stall: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Coordinate,
            grad_tol: 1e-8,
            obj_tol: 1e-15,
            max_iters: 20_000,
            line_search: LineSearch::default(),
            seed: 0,
            random_order: false,
            perturb_on_stall: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        if !(self.grad_tol > 0.0) || !(self.obj_tol >= 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(Error::invalid("line-search shrink must lie in (0, 1)"));
        }
        if !(ls.init_step > 0.0) || !(ls.sufficient_increase > 0.0) {
            return Err(Error::invalid("line-search step and constant must be positive"));
        }
        Ok(())
    }

    /// The absolute gradient threshold for a matrix with the given norm.
    pub fn grad_threshold(&self, n: usize, op_norm: f64) -> f64 {
        self.grad_tol * op_norm.max(1.0) * (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    ObjectiveStall,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub sigma: SpherePoint,
    /// Objective at the start and after every sweep / iteration.
    pub objective_trace: Vec<f64>,
    pub objective: f64,
    pub grad_norm_final: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub restart_seed: u64,
    pub method: Method,
}

/// JSON envelope of a [`SolveReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReportJson {
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_path: Option<String>,
}

impl SolveReport {
    pub fn to_json(&self, sigma_path: Option<String>) -> SolveReportJson {
        SolveReportJson {
            objective: self.objective,
            grad_norm: self.grad_norm_final,
            iterations: self.iterations,
            converged: self.converged,
            restart_seed: self.restart_seed,
            sigma_path,
        }
    }
}

/// Objective and Riemannian gradient norm at `s`, from one product `A s`.
fn objective_and_grad_norm(a: &SymMatrix, s: &SpherePoint) -> (f64, f64) {
    let g = half_grad(a, s).expect("shape checked by caller");
    let k = s.k();
    let mut f = 0.0;
    let mut gn2 = 0.0;
    for (si, gi) in s.rows().zip(g.chunks_exact(k)) {
        let c = dot(si, gi);
        f += c;
        gn2 += gi.iter().zip(si).map(|(x, y)| (x - c * y).powi(2)).sum::<f64>();
    }
    (f, 2.0 * gn2.sqrt())
}

/// Block coordinate ascent from `start`. `op_norm` is `||A||_2` (or an
/// estimate), used only to scale the gradient tolerance.
///
/// The objective trace is accumulated from the exact per-row increments
/// `2 (||h_i|| - <s_i, h_i>)`. A sweep whose in-sweep tangential residual
/// is below the threshold triggers an exact gradient evaluation; the solve
/// stops once that passes.
pub fn coordinate_ascent(a: &SymMatrix, start: SpherePoint, cfg: &SolverConfig, op_norm: f64) -> Result<SolveReport> {
    check_dim(a.n(), start.n())?;
    cfg.validate()?;
    let n = a.n();
    let k = start.k();
    let threshold = cfg.grad_threshold(n, op_norm);
    let mut s = start;
    let (f0, mut gn) = objective_and_grad_norm(a, &s);
    let mut f = f0;
    let mut trace = vec![f];
    let mut order: Vec<usize> = (0..n).collect();
    let mut order_rng = rng::stream(cfg.seed, Tag::Restart, u64::MAX);
    let mut h = vec![0.0; k];
    let shifted = a.shift() != 0.0;
    let mut colsum = if shifted {
        SymMatrix::block_column_sum(s.as_slice(), k)
    } else {
        Vec::new()
    };
    let mut stop = StopReason::MaxIterations;
    let mut sweeps = 0;

    if gn <= threshold {
        stop = StopReason::Gradient;
    }
    while stop == StopReason::MaxIterations && sweeps < cfg.max_iters {
        sweeps += 1;
        if cfg.random_order {
            order.shuffle(&mut order_rng);
        }
        let mut gain = 0.0;
        let mut resid2 = 0.0;
        for &i in &order {
            a.row_block_offdiag_with_sum(i, s.as_slice(), k, &colsum, &mut h);
            let hn = norm(&h);
            if hn < ZERO_NORM {
                continue;
            }
            let c = dot(s.row(i), &h);
            resid2 += (hn * hn - c * c).max(0.0);
            gain += 2.0 * (hn - c);
            if shifted {
                colsum.iter_mut().zip(s.row(i)).for_each(|(t, v)| *t -= v);
            }
            s.set_row_normalized(i, &h);
            if shifted {
                colsum.iter_mut().zip(s.row(i)).for_each(|(t, v)| *t += v);
            }
        }
        if shifted {
            // Resynchronize to keep the running sums from drifting.
            colsum = SymMatrix::block_column_sum(s.as_slice(), k);
        }
        f += gain;
        trace.push(f);
        if 2.0 * resid2.sqrt() <= threshold {
            let (_, g) = objective_and_grad_norm(a, &s);
            gn = g;
            if gn <= threshold {
                stop = StopReason::Gradient;
                break;
            }
        }
        if gain <= cfg.obj_tol * (1.0 + f.abs()) {
            stop = StopReason::ObjectiveStall;
        }
    }
    let (fx, g) = objective_and_grad_norm(a, &s);
    Ok(SolveReport {
        sigma: s,
        objective_trace: trace,
        objective: fx,
        grad_norm_final: g,
        iterations: sweeps,
        converged: stop != StopReason::MaxIterations,
        stop_reason: stop,
        restart_seed: cfg.seed,
        method: Method::Coordinate,
    })
}

/// Riemannian gradient ascent with Armijo backtracking from `start`.
pub fn riemannian_ascent(a: &SymMatrix, start: SpherePoint, cfg: &SolverConfig, op_norm: f64) -> Result<SolveReport> {
    check_dim(a.n(), start.n())?;
    cfg.validate()?;
    let n = a.n();
    let threshold = cfg.grad_threshold(n, op_norm);
    let ls = cfg.line_search;
    let mut s = start;
    let mut f = crate::manifold::objective(a, &s)?;
    let mut trace = vec![f];
    let mut iters = 0;
    let mut stop = StopReason::MaxIterations;
    let mut grad = crate::manifold::riemannian_grad(a, &s)?;
    let mut gn = grad.norm();

    loop {
        if gn <= threshold {
            stop = StopReason::Gradient;
            break;
        }
        if iters >= cfg.max_iters {
            break;
        }
        let g2 = gn * gn;
        let mut t = ls.init_step;
        let mut accepted = None;
        for _ in 0..=ls.max_halvings {
            if let Ok(cand) = retract(&s, &grad, t) {
                let gain = objective_increase(a, &s, &cand)?;
                if gain >= ls.sufficient_increase * t * g2 {
                    let fc = crate::manifold::objective(a, &cand)?;
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= ls.shrink;
        }
        let Some((cand, fc)) = accepted else {
            // Renormalizing the rows perturbs F by about eps * sum |lambda_i|;
            // below that floor no step can be told apart from noise.
            let floor = 64.0 * f64::EPSILON * (1.0 + f.abs() + 2.0 * op_norm * n as f64);
            stop = if ls.init_step * g2 <= floor {
                StopReason::ObjectiveStall
            } else {
                StopReason::LineSearchFailed
            };
            break;
        };
        iters += 1;
        s = cand;
        f = fc;
        trace.push(f);
        grad = crate::manifold::riemannian_grad(a, &s)?;
        gn = grad.norm();
    }
    Ok(SolveReport {
        sigma: s,
        objective_trace: trace,
        objective: f,
        grad_norm_final: gn,
        iterations: iters,
        converged: matches!(stop, StopReason::Gradient | StopReason::ObjectiveStall),
        stop_reason: stop,
        restart_seed: cfg.seed,
        method: Method::Rgrad,
    })
}

/// Runs the configured method from `start`, with the optional perturbation.
pub fn solve(a: &SymMatrix, start: SpherePoint, cfg: &SolverConfig, op_norm: f64) -> Result<SolveReport> {
    let run = |s: SpherePoint| match cfg.method {
        Method::Coordinate => coordinate_ascent(a, s, cfg, op_norm),
        Method::Rgrad => riemannian_ascent(a, s, cfg, op_norm),
    };
    let first = run(start)?;
    if !cfg.perturb_on_stall || !first.converged {
        return Ok(first);
    }
    let mut r = rng::stream(cfg.seed, Tag::Perturb, 0);
    let u = TangentVector::random(&first.sigma, &mut r);
    let un = u.norm();
    if un < ZERO_NORM {
        return Ok(first);
    }
    let nudged = geodesic_curve(&first.sigma, &u, 1e-6 / un);
    let mut second = run(nudged)?;
    if second.objective > first.objective {
        let mut trace = first.objective_trace;
        trace.extend(second.objective_trace);
        second.objective_trace = trace;
        second.iterations += first.iterations;
        Ok(second)
    } else {
        Ok(first)
    }
}

/// Reports of every restart plus the index of the best one.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRestart {
    pub best: usize,
    pub reports: Vec<SolveReport>,
    pub op_norm: f64,
}

impl MultiRestart {
    pub fn best_report(&self) -> &SolveReport {
        &self.reports[self.best]
    }

    pub fn any_converged(&self) -> bool {
        self.reports.iter().any(|r| r.converged)
    }
}

/// Seed of restart `r` under base seed `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    rng::derive_seed(seed, Tag::Restart as u64, r as u64)
}

/// Independent restarts from uniform random points; restart `r` draws from
/// stream `(seed, r)`. Results do not depend on scheduling, and ties in the
/// objective go to the lowest restart index.
pub fn multi_restart(a: &SymMatrix, k: usize, restarts: usize, cfg: &SolverConfig) -> Result<MultiRestart> {
    if restarts < 1 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    cfg.validate()?;
    let op_norm = a
        .op_norm(&PowerOptions {
            seed: cfg.seed,
            ..PowerOptions::default()
        })
        .value;
    multi_restart_with_norm(a, k, restarts, cfg, op_norm)
}

/// [`multi_restart`] with a precomputed `||A||_2`.
pub fn multi_restart_with_norm(
    a: &SymMatrix,
    k: usize,
    restarts: usize,
    cfg: &SolverConfig,
    op_norm: f64,
) -> Result<MultiRestart> {
    if restarts < 1 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    let reports = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let seed = restart_seed(cfg.seed, r);
            let mut rng = rng::stream(seed, Tag::Restart, 0);
            let start = SpherePoint::random(a.n(), k, &mut rng);
            let sub = SolverConfig {
                seed,
                ..cfg.clone()
            };
            solve(a, start, &sub, op_norm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in reports.iter().enumerate() {
        if r.objective > reports[best].objective {
            best = i;
        }
    }
    Ok(MultiRestart {
        best,
        reports,
        op_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{fixture, gen_goe, FixtureName};
    use crate::manifold::objective;

    fn swap2() -> SymMatrix {
        SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn coordinate_two_by_two_aligns_rows() {
        let s = SpherePoint::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let rep = coordinate_ascent(&swap2(), s, &SolverConfig::default(), 1.0).unwrap();
        assert!(rep.converged);
        assert!((rep.objective - 2.0).abs() < 1e-12);
        assert!(rep.sigma.distance(&SpherePoint::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap()) < 1e-12);
    }

    #[test]
    fn coordinate_zero_matrix_is_a_no_op() {
        let mut r = rng::stream(1, Tag::Probe, 0);
        let s = SpherePoint::random(5, 3, &mut r);
        let rep = coordinate_ascent(&SymMatrix::zeros(5), s.clone(), &SolverConfig::default(), 0.0).unwrap();
        assert_eq!(rep.sigma, s);
        assert_eq!(rep.objective, 0.0);
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
    }

    #[test]
    fn triangle_restarts_reach_three() {
        let tri = fixture(FixtureName::Triangle, 3).a;
        let cfg = SolverConfig {
            seed: 17,
            ..SolverConfig::default()
        };
        let m = multi_restart(&tri, 2, 20, &cfg).unwrap();
        for rep in &m.reports {
            assert!((rep.objective - 3.0).abs() < 1e-6, "{}", rep.objective);
        }
    }

    #[test]
    fn rgrad_identity_stops_immediately() {
        let mut r = rng::stream(2, Tag::Probe, 0);
        let s = SpherePoint::random(6, 3, &mut r);
        let rep = riemannian_ascent(&SymMatrix::identity(6), s, &SolverConfig::default(), 1.0).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn rgrad_saddle_is_reported_converged() {
        let s = SpherePoint::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let rep = riemannian_ascent(&swap2(), s, &SolverConfig::default(), 1.0).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.objective, -2.0);
    }

    #[test]
    fn perturbation_escapes_the_saddle() {
        let s = SpherePoint::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let cfg = SolverConfig {
            method: Method::Rgrad,
            perturb_on_stall: true,
            ..SolverConfig::default()
        };
        let rep = solve(&swap2(), s, &cfg, 1.0).unwrap();
        assert!((rep.objective - 2.0).abs() < 1e-8, "{}", rep.objective);
    }

    #[test]
    fn rgrad_goe_converges() {
        let a = gen_goe(100, 1).unwrap();
        let cfg = SolverConfig {
            method: Method::Rgrad,
            max_iters: 5000,
            seed: 3,
            ..SolverConfig::default()
        };
        let m = multi_restart(&a, 20, 1, &cfg).unwrap();
        let rep = m.best_report();
        assert!(rep.converged, "{:?} after {}", rep.stop_reason, rep.iterations);
        let f = objective(&a, &rep.sigma).unwrap();
        assert!((f - rep.objective).abs() < 1e-9);
    }

    #[test]
    fn restarts_validation() {
        assert!(multi_restart(&swap2(), 2, 0, &SolverConfig::default()).is_err());
        let bad = SolverConfig {
            line_search: LineSearch {
                shrink: 1.5,
                ..LineSearch::default()
            },
            ..SolverConfig::default()
        };
        assert!(multi_restart(&swap2(), 2, 1, &bad).is_err());
    }

    #[test]
    fn ones_fixture_best_of_five() {
        let j = fixture(FixtureName::Ones, 4).a;
        let m = multi_restart(&j, 2, 5, &SolverConfig::default()).unwrap();
        assert!((m.best_report().objective - 16.0).abs() < 1e-9);
    }
}
