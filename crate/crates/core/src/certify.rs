//! Optimality checks for a point of `S(n, k)`.
//!
//! At a local maximum `s` the diagonal multipliers `lambda_i = ||g_i||`,
//! `g_i = sum_j A_ij s_j`, satisfy `(Lambda - A) s = 0`,
//! `F_A(s) = Tr(Lambda)`, `(Lambda - A)_{S,S} >= 0` for every index set with
//! `|S| <= k - 1`, `||Lambda||_F^2 <= n ||A||_2^2`, and
//! `xi_min(s^T s) <= n / k`. [`check_lemma2`] evaluates each of these on a
//! numerical point. [`dual_certificate`] turns the multipliers into a weak
//! duality bound `SDP(A) <= Tr(Lambda) + n eps` with
//! `eps = max(0, -lambda_min(Lambda - A))`, and [`theorem_gap_report`]
//! compares a point with the guarantee
//! `F_A(s) >= SDP(A) - (8 / sqrt(k)) n ||A||_2`.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::manifold::{dot, half_grad, norm, SpherePoint};
use crate::rng::{self, Tag};
use crate::symmat::{dense_min_eig, OpNormEstimate, PowerOptions, SymMatrix};

/// Constant of the local-maximum gap guarantee.
pub const GAP_CONSTANT: f64 = 8.0;
/// The sharper constant `5 sqrt(2)` that the argument actually yields.
pub const GAP_CONSTANT_SHARP: f64 = 5.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    pub trace: f64,
}

/// `lambda_i = ||sum_j A_ij s_j||_2`. Defined everywhere; meaningful at
/// stationary points.
pub fn multipliers(a: &SymMatrix, s: &SpherePoint) -> Result<Multipliers> {
    let g = half_grad(a, s)?;
    let lambda: Vec<f64> = g.chunks_exact(s.k()).map(norm).collect();
    let trace = lambda.iter().sum();
    Ok(Multipliers { lambda, trace })
}

/// `||(Lambda - A) s||_F`.
pub fn first_order_residual(a: &SymMatrix, s: &SpherePoint, m: &Multipliers) -> Result<f64> {
    check_dim(a.n(), m.lambda.len())?;
    let g = half_grad(a, s)?;
    let k = s.k();
    let mut r2 = 0.0;
    for ((si, gi), l) in s.rows().zip(g.chunks_exact(k)).zip(&m.lambda) {
        r2 += si.iter().zip(gi).map(|(x, y)| (l * x - y).powi(2)).sum::<f64>();
    }
    Ok(r2.sqrt())
}

/// `Lambda - A` as a symmetric matrix with the storage kind of `a`.
pub fn dual_slack_matrix(a: &SymMatrix, lambda: &[f64]) -> Result<SymMatrix> {
    check_dim(a.n(), lambda.len())?;
    if a.is_dense() {
        Ok(SymMatrix::from_lower_fn(a.n(), |i, j| {
            if i == j {
                lambda[i] - a.get(i, i)
            } else {
                -a.get(i, j)
            }
        }))
    } else {
        let mut trip: Vec<(usize, usize, f64)> = a
            .stored_lower_entries()
            .into_iter()
            .filter(|e| e.0 != e.1)
            .map(|(i, j, v)| (i, j, -v))
            .collect();
        trip.extend((0..a.n()).map(|i| (i, i, lambda[i] - a.get(i, i))));
        SymMatrix::from_triplets_shifted(a.n(), trip, -a.shift())
    }
}

/// Tolerances used by the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TolProfile {
    /// Relative tolerance of the identity and norm checks.
    pub identity: f64,
    /// Eigenvalue checks pass at `>= -eig * ||A||_2`.
    pub eig: f64,
    /// A point counts as stationary when `||(Lambda - A) s||_F <=
    /// stationarity * max(1, ||A||_2) * sqrt(n)`.
    pub stationarity: f64,
    pub submatrix_samples: usize,
    pub seed: u64,
}

impl Default for TolProfile {
    fn default() -> Self {
        TolProfile {
            identity: 1e-8,
            eig: 1e-6,
            stationarity: 1e-6,
            submatrix_samples: 50,
            seed: 0,
        }
    }
}

/// The multiplier-based checks at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma2Checks {
    pub objective: f64,
    pub first_order_residual: f64,
    pub at_stationary_point: bool,
    pub multiplier_trace: f64,
    pub trace_gap: f64,
    pub trace_matches_objective: bool,
    pub min_multiplier: f64,
    pub multipliers_nonnegative: bool,
    pub multiplier_norm_sq: f64,
    pub multiplier_norm_bound: f64,
    pub multiplier_norm_ok: bool,
    pub gram_min_eig: f64,
    pub gram_bound: f64,
    pub gram_ok: bool,
    pub submatrix_size: usize,
    pub submatrix_samples: usize,
    pub submatrix_psd_failures: usize,
    pub submatrix_min_eig: f64,
    /// `||s x||_2` for the bottom eigenvector `x` of `s^T s`.
    pub delta_norm: f64,
    /// `sqrt(n / k)`.
    pub delta_bound: f64,
}

impl Lemma2Checks {
    pub fn all_pass(&self) -> bool {
        self.trace_matches_objective
            && self.multipliers_nonnegative
            && self.multiplier_norm_ok
            && self.gram_ok
            && self.submatrix_psd_failures == 0
    }
}

fn binomial_at_most(n: usize, m: usize, cap: usize) -> Option<usize> {
    // C(n, m) if it does not exceed cap.
    let m = m.min(n - m);
    let mut c: u128 = 1;
    for i in 0..m {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > cap as u128 {
            return None;
        }
    }
    Some(c as usize)
}

fn all_subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        let mut i = m;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - m + i {
                cur[i] += 1;
                for j in i + 1..m {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Index sets of size `min(k - 1, n)` to test: all of them when there are at
/// most `samples`, otherwise `samples` uniform draws.
pub fn sample_subsets(n: usize, k: usize, samples: usize, seed: u64) -> Vec<Vec<usize>> {
    let m = k.saturating_sub(1).min(n);
    if m == 0 || samples == 0 {
        return Vec::new();
    }
    if binomial_at_most(n, m, samples).is_some() {
        return all_subsets(n, m);
    }
    let mut r = rng::stream(seed, Tag::SubsetSample, 0);
    (0..samples)
        .map(|_| {
            let mut v = sample(&mut r, n, m).into_vec();
            v.sort_unstable();
            v
        })
        .collect()
}

/// Smallest eigenvalue of `s^T s` and `||s x||` for its eigenvector `x`.
pub fn gram_diagnostics(s: &SpherePoint) -> (f64, f64) {
    let k = s.k();
    let g = DMatrix::from_row_slice(k, k, &s.gram());
    let eig = g.symmetric_eigen();
    let (idx, &xi) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("k >= 1");
    let x = eig.eigenvectors.column(idx);
    let xs: Vec<f64> = x.iter().copied().collect();
    let delta2: f64 = s.rows().map(|r| dot(r, &xs).powi(2)).sum();
    (xi, delta2.sqrt())
}

/// Evaluates the multiplier identities at `s`.
pub fn check_lemma2(
    a: &SymMatrix,
    s: &SpherePoint,
    m: &Multipliers,
    op_norm: f64,
    tol: &TolProfile,
) -> Result<Lemma2Checks> {
    check_dim(a.n(), s.n())?;
    let n = a.n();
    let k = s.k();
    let nf = n as f64;
    let g = half_grad(a, s)?;
    let objective = dot(s.as_slice(), &g);
    let residual = first_order_residual(a, s, m)?;
    let at_stationary_point = residual <= tol.stationarity * op_norm.max(1.0) * nf.sqrt();

    let trace_gap = (objective - m.trace).abs();
    let min_multiplier = m.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let min_multiplier = if n == 0 { 0.0 } else { min_multiplier };
    let norm_sq: f64 = m.lambda.iter().map(|l| l * l).sum();
    let norm_bound = nf * op_norm * op_norm * (1.0 + tol.identity);

    let (gram_min_eig, delta_norm) = gram_diagnostics(s);
    let gram_bound = nf / k as f64;

    let slack = dual_slack_matrix(a, &m.lambda)?;
    let subsets = sample_subsets(n, k, tol.submatrix_samples, tol.seed);
    let eig_floor = -tol.eig * op_norm;
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for sub in &subsets {
        let e = dense_min_eig(&slack.principal_submatrix(sub));
        worst = worst.min(e);
        if e < eig_floor {
            failures += 1;
        }
    }

    Ok(Lemma2Checks {
        objective,
        first_order_residual: residual,
        at_stationary_point,
        multiplier_trace: m.trace,
        trace_gap,
        trace_matches_objective: trace_gap <= tol.identity * (1.0 + objective.abs()),
        min_multiplier,
        multipliers_nonnegative: min_multiplier >= -1e-10 * op_norm,
        multiplier_norm_sq: norm_sq,
        multiplier_norm_bound: norm_bound,
        multiplier_norm_ok: norm_sq <= norm_bound,
        gram_min_eig,
        gram_bound,
        gram_ok: gram_min_eig <= gram_bound + tol.identity * nf,
        submatrix_size: subsets.first().map_or(0, Vec::len),
        submatrix_samples: subsets.len(),
        submatrix_psd_failures: failures,
        submatrix_min_eig: if subsets.is_empty() { 0.0 } else { worst },
        delta_norm,
        delta_bound: gram_bound.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualCertificate {
    /// `lambda_min(Lambda - A)`.
    pub dual_min_eig: f64,
    /// `max(0, -dual_min_eig)`.
    pub dual_eps: f64,
    /// `Tr(Lambda) + n eps`, an upper bound on `SDP(A)`.
    pub sdp_upper_bound: f64,
    /// False when the eigenvalue estimate did not converge.
    pub determinate: bool,
}

/// Weak-duality bound from the multipliers.
pub fn dual_certificate(a: &SymMatrix, m: &Multipliers, tol: &TolProfile) -> Result<DualCertificate> {
    let slack = dual_slack_matrix(a, &m.lambda)?;
    let est = slack.min_eig(tol.eig);
    let eps = (-est.value).max(0.0);
    Ok(DualCertificate {
        dual_min_eig: est.value,
        dual_eps: eps,
        sdp_upper_bound: m.trace + a.n() as f64 * eps,
        determinate: est.converged,
    })
}

/// Comparison of a point with the local-maximum gap guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremReport {
    #[serde(skip)]
    pub k: usize,
    #[serde(rename = "theorem_applicable")]
    pub applicable: bool,
    pub sdp_reference: f64,
    pub reference_error: f64,
    /// `sdp_reference - F_A(s)`.
    #[serde(rename = "theorem_gap")]
    pub gap: f64,
    /// `8 n ||A||_2 / sqrt(k)`.
    #[serde(rename = "theorem_bound")]
    pub bound: f64,
    /// `5 sqrt(2) n ||A||_2 / sqrt(k)`.
    #[serde(rename = "theorem_bound_sharp")]
    pub bound_sharp: f64,
    #[serde(rename = "theorem_slack")]
    pub slack: f64,
    #[serde(rename = "theorem_holds")]
    pub holds: bool,
    #[serde(rename = "theorem_holds_sharp")]
    pub holds_sharp: bool,
}

/// `8 n ||A||_2 / sqrt(k)`.
pub fn theorem_bound(n: usize, k: usize, op_norm: f64) -> f64 {
    GAP_CONSTANT * n as f64 * op_norm / (k as f64).sqrt()
}

/// Gap of `objective` below `sdp_reference`, against the guarantee. The
/// slack is the reference's certified error plus `1e-6 n ||A||_2` for the
/// norm estimate. `applicable` is false for `k = 1`.
pub fn theorem_gap_report(
    n: usize,
    k: usize,
    objective: f64,
    op_norm: f64,
    sdp_reference: Option<f64>,
    reference_error: f64,
) -> Result<TheoremReport> {
    let sdp_reference = sdp_reference.ok_or_else(|| Error::invalid("an SDP reference value is required"))?;
    if !sdp_reference.is_finite() {
        return Err(Error::invalid("SDP reference must be finite"));
    }
    let nf = n as f64;
    let gap = sdp_reference - objective;
    let bound = theorem_bound(n, k, op_norm);
    let bound_sharp = GAP_CONSTANT_SHARP * nf * op_norm / (k as f64).sqrt();
    let slack = reference_error.max(0.0) + 1e-6 * nf * op_norm;
    let applicable = k >= 2;
    Ok(TheoremReport {
        k,
        applicable,
        sdp_reference,
        reference_error,
        gap,
        bound,
        bound_sharp,
        slack,
        holds: applicable && gap <= bound + slack,
        holds_sharp: applicable && gap <= bound_sharp + slack,
    })
}

/// Everything known about one point, as emitted by `certify`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub n: usize,
    pub k: usize,
    pub op_norm: f64,
    pub op_norm_converged: bool,
    pub riemannian_grad_norm: f64,
    #[serde(flatten)]
    pub lemma2: Lemma2Checks,
    #[serde(flatten)]
    pub dual: DualCertificate,
    pub is_global_certified: bool,
    #[serde(flatten)]
    pub theorem: Option<TheoremReport>,
    /// `"not_at_stationary_point"`, `"dual_indeterminate"`, `"inapplicable_k1"`.
    pub flags: Vec<String>,
}

/// Runs every check at `s`. `reference` is `(value, certified_error)` of an
/// SDP reference, if one is available.
pub fn certify(
    a: &SymMatrix,
    s: &SpherePoint,
    norm: &OpNormEstimate,
    tol: &TolProfile,
    reference: Option<(f64, f64)>,
) -> Result<Certificate> {
    let m = multipliers(a, s)?;
    let lemma2 = check_lemma2(a, s, &m, norm.value, tol)?;
    let dual = dual_certificate(a, &m, tol)?;
    let rgrad = crate::manifold::riemannian_grad(a, s)?.norm();
    let mut flags = Vec::new();
    if !lemma2.at_stationary_point {
        flags.push("not_at_stationary_point".to_string());
    }
    if !dual.determinate {
        flags.push("dual_indeterminate".to_string());
    }
    if s.k() < 2 {
        flags.push("inapplicable_k1".to_string());
    }
    let is_global_certified = dual.determinate
        && dual.dual_eps <= tol.eig * norm.value
        && lemma2.at_stationary_point
        && lemma2.trace_matches_objective;
    let theorem = match reference {
        Some((v, err)) => Some(theorem_gap_report(a.n(), s.k(), lemma2.objective, norm.value, Some(v), err)?),
        None => None,
    };
    Ok(Certificate {
        n: a.n(),
        k: s.k(),
        op_norm: norm.value,
        op_norm_converged: norm.converged,
        riemannian_grad_norm: rgrad,
        lemma2,
        dual,
        is_global_certified,
        theorem,
        flags,
    })
}

/// [`certify`] with the norm estimated here.
pub fn certify_point(
    a: &SymMatrix,
    s: &SpherePoint,
    tol: &TolProfile,
    reference: Option<(f64, f64)>,
) -> Result<Certificate> {
    let norm = a.op_norm(&PowerOptions {
        seed: tol.seed,
        ..PowerOptions::default()
    });
    certify(a, s, &norm, tol, reference)
}
