//! The product of spheres `S(n, k)`: points, tangent vectors, the objective
//! `F_A(s) = sum_ij A_ij <s_i, s_j>` and its derivatives, and the two curves
//! used to move along the manifold.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::symmat::SymMatrix;

/// Rows shorter than this are treated as zero.
pub const ZERO_NORM: f64 = 1e-14;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A point of `S(n, k)`: `n` unit rows in `R^k`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl SpherePoint {
    /// Builds a point from row-major data, normalizing every row.
    /// Fails if a row is (numerically) zero.
    pub fn from_data_normalized(n: usize, k: usize, mut data: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        check_dim(n * k, data.len())?;
        for (i, row) in data.chunks_exact_mut(k).enumerate() {
            let r = norm(row);
            if r < ZERO_NORM {
                return Err(Error::StepRejected { row: i, norm: r });
            }
            row.iter_mut().for_each(|v| *v /= r);
        }
        Ok(SpherePoint { n, k, data })
    }

    /// Builds a point from rows, normalizing each.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(1, Vec::len);
        for r in rows {
            check_dim(k, r.len())?;
        }
        Self::from_data_normalized(rows.len(), k, rows.concat())
    }

    /// Rows drawn uniformly from the unit sphere `S^{k-1}`.
    pub fn random<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Self {
        assert!(k >= 1, "k must be at least 1");
        let mut data = vec![0.0; n * k];
        for row in data.chunks_exact_mut(k) {
            loop {
                row.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
                let r = norm(row);
                if r >= ZERO_NORM {
                    row.iter_mut().for_each(|v| *v /= r);
                    break;
                }
            }
        }
        SpherePoint { n, k, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Overwrites row `i` with `v / ||v||`. Callers guarantee `||v|| >= ZERO_NORM`.
    pub(crate) fn set_row_normalized(&mut self, i: usize, v: &[f64]) {
        let r = norm(v);
        debug_assert!(r >= ZERO_NORM);
        for (d, s) in self.data[i * self.k..(i + 1) * self.k].iter_mut().zip(v) {
            *d = s / r;
        }
    }

    /// Largest `| ||s_i|| - 1 |` over rows.
    pub fn max_row_norm_error(&self) -> f64 {
        self.rows().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// The `k x k` Gram matrix `s^T s`, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let k = self.k;
        let mut g = vec![0.0; k * k];
        for row in self.rows() {
            for a in 0..k {
                for b in 0..k {
                    g[a * k + b] += row[a] * row[b];
                }
            }
        }
        g
    }

    /// Frobenius distance to another point of the same shape.
    pub fn distance(&self, other: &SpherePoint) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// CSV form: a `# n=<n> k=<k>` header, then one row per line.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# n={} k={}\n", self.n, self.k);
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Raw rows read from a sigma CSV, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaCsv {
    pub n: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl SigmaCsv {
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or((1, "empty file".to_string()))?;
        let mut n = None;
        let mut k = None;
        let rest = header
            .strip_prefix('#')
            .ok_or((1, "expected header '# n=<n> k=<k>'".to_string()))?;
        for tok in rest.split_whitespace() {
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| (1, format!("bad header value '{v}': {e}")))
            };
            if let Some(v) = tok.strip_prefix("n=") {
                n = Some(parse(v)?);
            } else if let Some(v) = tok.strip_prefix("k=") {
                k = Some(parse(v)?);
            }
        }
        let (n, k) = match (n, k) {
            (Some(n), Some(k)) if k >= 1 => (n, k),
            _ => return Err((1, "header must define n and k >= 1".to_string())),
        };
        let mut data = Vec::with_capacity(n * k);
        let mut rows = 0;
        for (lno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| (lno, format!("bad value: {e}")))?;
            if vals.len() != k {
                return Err((lno, format!("expected {k} values, found {}", vals.len())));
            }
            data.extend(vals);
            rows += 1;
        }
        if rows != n {
            return Err((1, format!("header says n={n} but found {rows} rows")));
        }
        Ok(SigmaCsv { n, k, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, msg)| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })
    }

    pub fn max_row_norm_error(&self) -> f64 {
        self.data
            .chunks_exact(self.k)
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn into_point(self) -> Result<SpherePoint> {
        SpherePoint::from_data_normalized(self.n, self.k, self.data)
    }
}

/// A tangent vector: rows `u_i` with `<s_i, u_i> = 0` at its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl TangentVector {
    pub fn zeros(n: usize, k: usize) -> Self {
        TangentVector {
            n,
            k,
            data: vec![0.0; n * k],
        }
    }

    /// Projects arbitrary row-major data onto the tangent space at `base`.
    pub fn project(base: &SpherePoint, mut data: Vec<f64>) -> Result<Self> {
        check_dim(base.n * base.k, data.len())?;
        for (u, s) in data.chunks_exact_mut(base.k).zip(base.rows()) {
            let c = dot(u, s);
            u.iter_mut().zip(s).for_each(|(ui, si)| *ui -= c * si);
        }
        Ok(TangentVector {
            n: base.n,
            k: base.k,
            data,
        })
    }

    /// Random Gaussian direction projected onto the tangent space.
    pub fn random<R: Rng + ?Sized>(base: &SpherePoint, rng: &mut R) -> Self {
        let data = (0..base.n * base.k)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self::project(base, data).expect("shape matches base")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn scaled(&self, c: f64) -> Self {
        TangentVector {
            n: self.n,
            k: self.k,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Largest `|<s_i, u_i>|` over rows.
    pub fn max_normal_component(&self, base: &SpherePoint) -> f64 {
        self.rows()
            .zip(base.rows())
            .map(|(u, s)| dot(u, s).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shape(a: &SymMatrix, s: &SpherePoint) -> Result<()> {
    check_dim(a.n(), s.n())
}

/// `G = A s`, i.e. row `i` is `g_i = sum_j A_ij s_j`.
pub fn half_grad(a: &SymMatrix, s: &SpherePoint) -> Result<Vec<f64>> {
    check_shape(a, s)?;
    a.mul_block(s.as_slice(), s.k())
}

/// `F_A(s) = sum_i <s_i, g_i>`.
pub fn objective(a: &SymMatrix, s: &SpherePoint) -> Result<f64> {
    let g = half_grad(a, s)?;
    Ok(dot(s.as_slice(), &g))
}

/// Euclidean gradient `2 A s` (row-major `n x k`).
pub fn euclidean_grad(a: &SymMatrix, s: &SpherePoint) -> Result<Vec<f64>> {
    let mut g = half_grad(a, s)?;
    g.iter_mut().for_each(|v| *v *= 2.0);
    Ok(g)
}

/// Riemannian gradient: row `i` is `2 g_i - 2 <g_i, s_i> s_i`.
pub fn riemannian_grad(a: &SymMatrix, s: &SpherePoint) -> Result<TangentVector> {
    let g = euclidean_grad(a, s)?;
    TangentVector::project(s, g)
}

/// Row-wise normalization retraction `(s_i + t u_i) / ||s_i + t u_i||`.
pub fn retract(s: &SpherePoint, u: &TangentVector, t: f64) -> Result<SpherePoint> {
    check_dim(s.n() * s.k(), u.as_slice().len())?;
    if t == 0.0 {
        return Ok(s.clone());
    }
    let data: Vec<f64> = s
        .as_slice()
        .iter()
        .zip(u.as_slice())
        .map(|(a, b)| a + t * b)
        .collect();
    SpherePoint::from_data_normalized(s.n(), s.k(), data)
}

/// The curve `s_i(t) = s_i cos(||u_i|| t) + u_i/||u_i|| sin(||u_i|| t)`;
/// rows with `u_i = 0` stay fixed.
pub fn geodesic_curve(s: &SpherePoint, u: &TangentVector, t: f64) -> SpherePoint {
    let k = s.k();
    let mut data = s.as_slice().to_vec();
    for (i, row) in data.chunks_exact_mut(k).enumerate() {
        let ui = u.row(i);
        let r = norm(ui);
        if r < ZERO_NORM {
            continue;
        }
        let (sin, cos) = (r * t).sin_cos();
        for (d, uv) in row.iter_mut().zip(ui) {
            *d = *d * cos + uv / r * sin;
        }
    }
    SpherePoint {
        n: s.n(),
        k,
        data,
    }
}

/// `sum_ij (Lambda - A)_ij <u_i, u_j>` for diagonal multipliers `lambda`.
pub fn second_order_form(a: &SymMatrix, lambda: &[f64], u: &TangentVector) -> Result<f64> {
    check_dim(a.n(), u.n())?;
    check_dim(a.n(), lambda.len())?;
    let au = a.mul_block(u.as_slice(), u.k())?;
    let diag: f64 = u
        .rows()
        .zip(lambda)
        .map(|(ui, l)| l * dot(ui, ui))
        .sum();
    Ok(diag - dot(u.as_slice(), &au))
}

/// `sum_ij A_ij <u_i, u_j> - sum_i ||u_i||^2 <s_i, g_i>`: half the second
/// derivative of `F_A` along [`geodesic_curve`] at `t = 0`.
pub fn geodesic_second_coefficient(a: &SymMatrix, s: &SpherePoint, u: &TangentVector) -> Result<f64> {
    let g = half_grad(a, s)?;
    let au = a.mul_block(u.as_slice(), u.k())?;
    let radial: f64 = (0..s.n())
        .map(|i| dot(u.row(i), u.row(i)) * dot(s.row(i), &g[i * s.k()..(i + 1) * s.k()]))
        .sum();
    Ok(dot(u.as_slice(), &au) - radial)
}

/// `F_A(to) - F_A(from)` evaluated as `<to - from, A (to + from)>`, which
/// avoids the cancellation of subtracting two large objective values.
pub fn objective_increase(a: &SymMatrix, from: &SpherePoint, to: &SpherePoint) -> Result<f64> {
    check_shape(a, from)?;
    check_dim(from.as_slice().len(), to.as_slice().len())?;
    let sum: Vec<f64> = from.as_slice().iter().zip(to.as_slice()).map(|(x, y)| x + y).collect();
    let asum = a.mul_block(&sum, from.k())?;
    Ok(from
        .as_slice()
        .iter()
        .zip(to.as_slice())
        .zip(&asum)
        .map(|((x, y), g)| (y - x) * g)
        .sum())
}

/// `2 sum_i <u_i, g_i>`: the first derivative of `F_A` along any curve
/// leaving `s` with velocity `u`.
pub fn directional_derivative(a: &SymMatrix, s: &SpherePoint, u: &TangentVector) -> Result<f64> {
    let g = half_grad(a, s)?;
    Ok(2.0 * dot(u.as_slice(), &g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Tag};
    use std::f64::consts::PI;

    fn swap2() -> SymMatrix {
        SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn triangle() -> SymMatrix {
        SymMatrix::from_lower_fn(3, |i, j| if i == j { 0.0 } else { -1.0 })
    }

    fn angles(th: &[f64]) -> SpherePoint {
        SpherePoint::from_rows(&th.iter().map(|t| vec![t.cos(), t.sin()]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn objective_examples() {
        let mut r = rng::stream(1, Tag::Probe, 0);
        let s = SpherePoint::random(6, 3, &mut r);
        assert!((objective(&SymMatrix::identity(6), &s).unwrap() - 6.0).abs() < 1e-12);
        let e1 = SpherePoint::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(objective(&swap2(), &e1).unwrap(), 2.0);
        let tri = angles(&[0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]);
        assert!((objective(&triangle(), &tri).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_grid_oracle() {
        // Two free angles on a 1e-3 grid; the third is pinned by rotation symmetry.
        let a = triangle();
        let steps = (2.0 * PI / 1e-3) as usize;
        let mut best = f64::NEG_INFINITY;
        // coarse pass then a fine window around the coarse optimum
        let mut arg = (0.0, 0.0);
        for p in 0..360 {
            for q in 0..360 {
                let t = (p as f64 * PI / 180.0, q as f64 * PI / 180.0);
                let f = -2.0 * ((t.0).cos() + (t.1).cos() + (t.0 - t.1).cos());
                if f > best {
                    best = f;
                    arg = t;
                }
            }
        }
        let h = 2.0 * PI / steps as f64;
        for p in -20..=20 {
            for q in -20..=20 {
                let th = [0.0, arg.0 + p as f64 * h, arg.1 + q as f64 * h];
                let f = objective(&a, &angles(&th)).unwrap();
                best = best.max(f);
            }
        }
        assert!((best - 3.0).abs() < 1e-5, "{best}");
    }

    #[test]
    fn gradient_examples() {
        let mut r = rng::stream(2, Tag::Probe, 0);
        let s = SpherePoint::random(4, 3, &mut r);
        let g = euclidean_grad(&SymMatrix::identity(4), &s).unwrap();
        for (gv, sv) in g.iter().zip(s.as_slice()) {
            assert_eq!(*gv, 2.0 * sv);
        }
        assert!(euclidean_grad(&SymMatrix::zeros(4), &s).unwrap().iter().all(|v| *v == 0.0));
        let rg = riemannian_grad(&SymMatrix::identity(4), &s).unwrap();
        assert!(rg.norm() < 1e-14);

        let s = SpherePoint::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = euclidean_grad(&swap2(), &s).unwrap();
        assert_eq!(g, vec![0.0, 2.0, 2.0, 0.0]);
        let rg = riemannian_grad(&swap2(), &s).unwrap();
        assert_eq!(rg.as_slice(), &[0.0, 2.0, 2.0, 0.0]);
        assert!(objective(&SymMatrix::identity(3), &s).is_err());
    }

    #[test]
    fn retract_examples() {
        let mut r = rng::stream(3, Tag::Probe, 0);
        let s = SpherePoint::random(5, 4, &mut r);
        let u = TangentVector::random(&s, &mut r);
        assert_eq!(retract(&s, &u, 0.0).unwrap(), s);
        let out = retract(&s, &u, 3.7).unwrap();
        assert!(out.max_row_norm_error() <= 1e-15);

        let e1 = SpherePoint::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let u = TangentVector::project(&e1, vec![0.0, 1.0]).unwrap();
        let out = retract(&e1, &u, 1.0).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((out.row(0)[0] - h).abs() < 1e-15 && (out.row(0)[1] - h).abs() < 1e-15);
    }

    #[test]
    fn retract_rejects_collapsed_row() {
        // u is not tangent here on purpose: s + t u = 0 for t = 1.
        let s = SpherePoint::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let u = TangentVector {
            n: 1,
            k: 2,
            data: vec![-1.0, 0.0],
        };
        assert!(matches!(retract(&s, &u, 1.0), Err(Error::StepRejected { row: 0, .. })));
    }

    #[test]
    fn geodesic_examples() {
        let mut r = rng::stream(4, Tag::Probe, 0);
        let s = SpherePoint::random(5, 3, &mut r);
        let u = TangentVector::random(&s, &mut r);
        assert_eq!(geodesic_curve(&s, &u, 0.0), s);
        assert!(geodesic_curve(&s, &u, 2.3).max_row_norm_error() < 1e-14);

        let e1 = SpherePoint::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let mut d = vec![0.0; 6];
        d[1] = PI;
        let u = TangentVector::project(&e1, d).unwrap();
        let out = geodesic_curve(&e1, &u, 1.0);
        assert!((out.row(0)[0] + 1.0).abs() < 1e-15);
        // zero tangent row stays fixed
        assert_eq!(out.row(1), e1.row(1));
    }

    #[test]
    fn second_order_form_trivial_cases() {
        let mut r = rng::stream(5, Tag::Probe, 0);
        let s = SpherePoint::random(4, 2, &mut r);
        let u = TangentVector::random(&s, &mut r);
        let a = SymMatrix::from_lower_fn(4, |i, j| (i + 2 * j) as f64);
        assert_eq!(second_order_form(&a, &[1.0; 4], &TangentVector::zeros(4, 2)).unwrap(), 0.0);
        assert_eq!(second_order_form(&SymMatrix::zeros(4), &[0.0; 4], &u).unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut r = rng::stream(6, Tag::Probe, 0);
        let s = SpherePoint::random(7, 3, &mut r);
        let parsed = SigmaCsv::parse(&s.to_csv()).unwrap();
        assert_eq!(parsed.n, 7);
        assert_eq!(parsed.data, s.as_slice());
        assert!(SigmaCsv::parse("# n=2 k=2\n1,0\n").is_err());
        assert!(SigmaCsv::parse("n=1 k=2\n1,0\n").is_err());
    }
}
