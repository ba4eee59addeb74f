//! Reference values for `SDP(A)`.
//!
//! [`sdp_reference`] solves the factorized problem at a rank where spurious
//! local maxima are not expected and then certifies the result with the
//! dual bound, escalating the rank while the certificate stays loose.
//! [`brute_force_sdp`] is an independent grid-search oracle for `n <= 5`
//! that shares no code with the solver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{dual_certificate, multipliers, TolProfile};
use crate::error::{Error, Result};
use crate::solver::{multi_restart_with_norm, SolverConfig};
use crate::symmat::{PowerOptions, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMethod {
    HighrankBm,
    Bruteforce,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceValue {
    /// Best objective found (a lower bound on `SDP(A)`).
    pub value: f64,
    /// Certified upper bound on `SDP(A)`.
    pub upper_bound: f64,
    /// `upper_bound - value`.
    pub certified_error: f64,
    pub method: RefMethod,
    pub k_used: usize,
    pub escalations: usize,
    pub dual_eps: f64,
    pub op_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefConfig {
    pub restarts: usize,
    pub solver: SolverConfig,
    pub tol: TolProfile,
    pub max_escalations: usize,
}

impl Default for RefConfig {
    fn default() -> Self {
        RefConfig {
            restarts: 5,
            solver: SolverConfig {
                max_iters: 50_000,
                ..SolverConfig::default()
            },
            tol: TolProfile::default(),
            max_escalations: 3,
        }
    }
}

/// Starting rank `min(n, ceil(sqrt(2n)) + 1)`.
pub fn reference_rank(n: usize) -> usize {
    (((2 * n) as f64).sqrt().ceil() as usize + 1).min(n).max(1)
}

/// Certified high-rank solve. Never fails on numerical grounds: if the dual
/// bound does not close, the returned `certified_error` says by how much.
pub fn sdp_reference(a: &SymMatrix, cfg: &RefConfig) -> Result<ReferenceValue> {
    let n = a.n();
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let norm = a
        .op_norm(&PowerOptions {
            seed: cfg.solver.seed,
            ..PowerOptions::default()
        })
        .value;
    let mut k = reference_rank(n);
    let mut best_value = f64::NEG_INFINITY;
    let mut best_upper = f64::INFINITY;
    let mut eps_final: f64;
    let mut k_used = k;
    let mut escalations = 0;
    loop {
        let run = multi_restart_with_norm(a, k, cfg.restarts, &cfg.solver, norm)?;
        let rep = run.best_report();
        let m = multipliers(a, &rep.sigma)?;
        let dual = dual_certificate(a, &m, &cfg.tol)?;
        if rep.objective > best_value {
            best_value = rep.objective;
            k_used = k;
        }
        if dual.determinate && dual.sdp_upper_bound < best_upper {
            best_upper = dual.sdp_upper_bound;
        }
        eps_final = dual.dual_eps;
        let closed = dual.determinate && dual.dual_eps <= cfg.tol.eig * norm;
        if closed || k == n || escalations >= cfg.max_escalations {
            break;
        }
        k = (2 * k).min(n);
        escalations += 1;
    }
    let upper = best_upper.max(best_value);
    Ok(ReferenceValue {
        value: best_value,
        upper_bound: upper,
        certified_error: upper - best_value,
        method: RefMethod::HighrankBm,
        k_used,
        escalations,
        dual_eps: eps_final,
        op_norm: norm,
    })
}

/// Rank-2 objective at angles `theta`:
/// `sum_i A_ii + 2 sum_{i<j} A_ij cos(theta_i - theta_j)`.
fn angle_objective(a: &[Vec<f64>], theta: &[f64]) -> f64 {
    let n = theta.len();
    let mut f = 0.0;
    for i in 0..n {
        f += a[i][i];
        for j in 0..i {
            f += 2.0 * a[i][j] * (theta[i] - theta[j]).cos();
        }
    }
    f
}

/// Result of the grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub value: f64,
    pub angles: Vec<f64>,
}

const REFINE_CANDIDATES: usize = 4;
const REFINE_ROUNDS: usize = 3;
const REFINE_HALF_WIDTH: i64 = 10;

/// Grid search over rank-2 points `s_i = (cos t_i, sin t_i)` with `t_1 = 0`.
/// `resolution` grid points per angle, then three rounds of local grids 10x
/// finer around the best few coarse points. The result is a lower bound on
/// `SDP(A)`, exact when some optimum has rank <= 2 (always the case for
/// `n <= 5`, up to grid error).
pub fn brute_force_sdp(a: &SymMatrix, resolution: usize) -> Result<BruteForce> {
    let n = a.n();
    if n > 5 {
        return Err(Error::invalid(format!("brute force supports n <= 5, got {n}")));
    }
    if n == 0 || resolution == 0 {
        return Err(Error::invalid("need n >= 1 and resolution >= 1"));
    }
    let dense: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).collect()).collect();
    let free = n - 1;
    if free == 0 {
        return Ok(BruteForce {
            value: dense[0][0],
            angles: vec![0.0],
        });
    }
    let step = std::f64::consts::TAU / resolution as f64;
    let cells = resolution.pow(free as u32);

    let decode = |mut c: usize, base: usize| -> Vec<usize> {
        let mut idx = vec![0; free];
        for d in idx.iter_mut() {
            *d = c % base;
            c /= base;
        }
        idx
    };

    // Coarse pass: per-chunk top candidates, merged by (value desc, cell asc).
    let chunk = resolution.max(1);
    let mut coarse: Vec<(f64, usize)> = (0..cells.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut local: Vec<(f64, usize)> = Vec::with_capacity(REFINE_CANDIDATES + 1);
            let mut theta = vec![0.0; n];
            for cell in c * chunk..((c + 1) * chunk).min(cells) {
                for (t, i) in theta[1..].iter_mut().zip(decode(cell, resolution)) {
                    *t = i as f64 * step;
                }
                let f = angle_objective(&dense, &theta);
                local.push((f, cell));
                if local.len() > REFINE_CANDIDATES {
                    local.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
                    local.truncate(REFINE_CANDIDATES);
                }
            }
            local
        })
        .collect();
    coarse.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    coarse.truncate(REFINE_CANDIDATES);

    let side = (2 * REFINE_HALF_WIDTH + 1) as usize;
    let local_cells = side.pow(free as u32);
    let mut best = BruteForce {
        value: f64::NEG_INFINITY,
        angles: Vec::new(),
    };
    for &(f0, cell) in &coarse {
        let mut center: Vec<f64> = std::iter::once(0.0)
            .chain(decode(cell, resolution).into_iter().map(|i| i as f64 * step))
            .collect();
        let mut value = f0;
        let mut h = step;
        for _ in 0..REFINE_ROUNDS {
            h /= 10.0;
            let mut theta = center.clone();
            let mut round_best = (value, center.clone());
            for lc in 0..local_cells {
                for (d, off) in decode(lc, side).into_iter().enumerate() {
                    theta[d + 1] = center[d + 1] + (off as i64 - REFINE_HALF_WIDTH) as f64 * h;
                }
                let f = angle_objective(&dense, &theta);
                if f > round_best.0 {
                    round_best = (f, theta.clone());
                }
            }
            value = round_best.0;
            center = round_best.1;
        }
        if value > best.value {
            best = BruteForce {
                value,
                angles: center,
            };
        }
    }
    Ok(best)
}
