//! Instance generators and fixtures.
//!
//! Random draws use the streams of [`crate::rng`]:
//!
//! | stream                         | consumer                            |
//! |--------------------------------|-------------------------------------|
//! | `(seed, Goe, 0)`               | GOE entries, lower triangle row-major |
//! | `(seed, PlantedSign, 0)`       | planted signs `x0`                  |
//! | `(seed, SbmEdges, 0)`          | SBM edges, pairs `j < i` row-major  |
//!
//! `gen_z2sync(n, 0, seed)` therefore contains exactly `gen_goe(n, seed)`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Tag};
use crate::symmat::{read_matrix_market, SymMatrix};

/// How the SBM adjacency matrix is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SbmCentering {
    /// Subtract `(a + b) / (2n)` from every off-diagonal entry.
    #[default]
    Density,
    /// Raw adjacency.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureName {
    Zero,
    Identity,
    Ones,
    TwoByTwo,
    Triangle,
}

/// Instance description, as accepted on the command line.
///
/// ```json
/// {"family":"z2sync","n":400,"lambda":3.0,"seed":42}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Goe {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Z2sync {
        n: usize,
        lambda: f64,
        #[serde(default)]
        seed: u64,
    },
    Sbm {
        n: usize,
        a: f64,
        b: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        sbm_centering: SbmCentering,
    },
    Maxcut {
        n: usize,
        edge_list: PathBuf,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        seed: u64,
    },
    Fixture {
        name: FixtureName,
        #[serde(default = "default_fixture_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_fixture_n() -> usize {
    3
}

impl InstanceSpec {
    pub fn family(&self) -> &'static str {
        match self {
            InstanceSpec::Goe { .. } => "goe",
            InstanceSpec::Z2sync { .. } => "z2sync",
            InstanceSpec::Sbm { .. } => "sbm",
            InstanceSpec::Maxcut { .. } => "maxcut",
            InstanceSpec::File { .. } => "file",
            InstanceSpec::Fixture { .. } => "fixture",
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            InstanceSpec::Goe { seed, .. }
            | InstanceSpec::Z2sync { seed, .. }
            | InstanceSpec::Sbm { seed, .. }
            | InstanceSpec::Maxcut { seed, .. }
            | InstanceSpec::File { seed, .. }
            | InstanceSpec::Fixture { seed, .. } => seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InstanceSpec::Goe { n, .. } | InstanceSpec::Maxcut { n, .. } if n < 1 => {
                Err(Error::invalid("n must be at least 1"))
            }
            InstanceSpec::Z2sync { n, lambda, .. } => {
                if n < 1 {
                    Err(Error::invalid("n must be at least 1"))
                } else if !(lambda >= 0.0) {
                    Err(Error::invalid(format!("z2sync requires lambda >= 0, got {lambda}")))
                } else {
                    Ok(())
                }
            }
            InstanceSpec::Sbm { n, a, b, .. } => check_sbm(n, a, b),
            InstanceSpec::Fixture { name, n, .. } => {
                let fixed = matches!(name, FixtureName::TwoByTwo | FixtureName::Triangle);
                if !fixed && n < 1 {
                    Err(Error::invalid("n must be at least 1"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Builds the instance described by `self`.
    pub fn generate(&self) -> Result<PlantedInstance> {
        self.validate()?;
        match self {
            &InstanceSpec::Goe { n, seed } => Ok(PlantedInstance {
                a: gen_goe(n, seed)?,
                truth: None,
            }),
            &InstanceSpec::Z2sync { n, lambda, seed } => gen_z2sync(n, lambda, seed),
            &InstanceSpec::Sbm {
                n,
                a,
                b,
                seed,
                sbm_centering,
            } => gen_sbm(n, a, b, seed, sbm_centering),
            InstanceSpec::Maxcut { n, edge_list, .. } => Ok(PlantedInstance {
                a: gen_maxcut(*n, &read_edge_list(edge_list)?)?,
                truth: None,
            }),
            InstanceSpec::File { path, .. } => Ok(PlantedInstance {
                a: read_matrix_market(path)?,
                truth: None,
            }),
            &InstanceSpec::Fixture { name, n, .. } => Ok(PlantedInstance {
                a: fixture(name, n).a,
                truth: None,
            }),
        }
    }
}

/// A generated matrix and, for planted models, the hidden signs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub a: SymMatrix,
    pub truth: Option<Vec<i8>>,
}

fn planted_signs(n: usize, seed: u64) -> Vec<i8> {
    let mut r = rng::stream(seed, Tag::PlantedSign, 0);
    (0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect()
}

/// GOE sample: `W_ii ~ N(0, 2/n)`, `W_ij ~ N(0, 1/n)`.
pub fn gen_goe(n: usize, seed: u64) -> Result<SymMatrix> {
    if n < 1 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut r = rng::stream(seed, Tag::Goe, 0);
    let nf = n as f64;
    let off = Normal::new(0.0, (1.0 / nf).sqrt()).expect("finite std");
    let diag = Normal::new(0.0, (2.0 / nf).sqrt()).expect("finite std");
    Ok(SymMatrix::from_lower_fn(n, |i, j| {
        if i == j {
            diag.sample(&mut r)
        } else {
            off.sample(&mut r)
        }
    }))
}

/// `A = (lambda / n) x0 x0^T + W` with `W` from [`gen_goe`].
pub fn gen_z2sync(n: usize, lambda: f64, seed: u64) -> Result<PlantedInstance> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("z2sync requires lambda >= 0, got {lambda}")));
    }
    let w = gen_goe(n, seed)?;
    let x0 = planted_signs(n, seed);
    let c = lambda / n as f64;
    let a = SymMatrix::from_lower_fn(n, |i, j| c * f64::from(x0[i] * x0[j]) + w.get(i, j));
    Ok(PlantedInstance { a, truth: Some(x0) })
}

fn check_sbm(n: usize, a: f64, b: f64) -> Result<()> {
    if n < 1 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(b >= 0.0 && a > b) {
        return Err(Error::invalid(format!("sbm requires a > b >= 0, got a = {a}, b = {b}")));
    }
    if a / n as f64 > 1.0 {
        return Err(Error::invalid(format!("edge probability a/n = {} exceeds 1", a / n as f64)));
    }
    Ok(())
}

/// Two-community sparse SBM. Edges appear with probability `a/n` inside a
/// community and `b/n` across; the diagonal is zero.
pub fn gen_sbm(n: usize, a: f64, b: f64, seed: u64, centering: SbmCentering) -> Result<PlantedInstance> {
    check_sbm(n, a, b)?;
    let x0 = planted_signs(n, seed);
    let mut r = rng::stream(seed, Tag::SbmEdges, 0);
    let nf = n as f64;
    let (p_in, p_out) = (a / nf, b / nf);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            let p = if x0[i] == x0[j] { p_in } else { p_out };
            if r.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let a_mat = match centering {
        SbmCentering::None => SymMatrix::from_triplets(n, edges.into_iter().map(|(i, j)| (i, j, 1.0)))?,
        SbmCentering::Density => {
            let shift = (a + b) / (2.0 * nf);
            SymMatrix::from_triplets_shifted(n, edges.into_iter().map(|(i, j)| (i, j, 1.0)), -shift)?
        }
    };
    Ok(PlantedInstance {
        a: a_mat,
        truth: Some(x0),
    })
}

/// Max-cut encoding `A = -adjacency`: maximizing `<A, X>` favors cut edges.
pub fn gen_maxcut(n: usize, edges: &[(usize, usize)]) -> Result<SymMatrix> {
    if let Some(&(u, _)) = edges.iter().find(|(u, v)| u == v) {
        return Err(Error::invalid(format!("self-loop at vertex {u}")));
    }
    SymMatrix::from_triplets(n, edges.iter().map(|&(u, v)| (u, v, -1.0)))
        .map_err(|e| Error::invalid(format!("bad edge list: {e}")))
}

/// Parses whitespace-separated `u v` pairs (0-based); `#` starts a comment.
pub fn parse_edge_list(text: &str) -> std::result::Result<Vec<(usize, usize)>, (usize, String)> {
    let mut edges = Vec::new();
    for (lno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let [u, v] = t[..] else {
            return Err((lno + 1, format!("expected 'u v', found '{line}'")));
        };
        let p = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| (lno + 1, format!("bad vertex '{s}': {e}")))
        };
        edges.push((p(u)?, p(v)?));
    }
    Ok(edges)
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text).map_err(|(line, msg)| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

/// A matrix with a known SDP value.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub a: SymMatrix,
    pub sdp: f64,
}

/// `SDP(A) = A_11 + A_22 + 2 |A_12|` for a 2x2 matrix.
pub fn two_by_two_sdp(a: &SymMatrix) -> f64 {
    a.get(0, 0) + a.get(1, 1) + 2.0 * a.get(0, 1).abs()
}

pub fn fixture(name: FixtureName, n: usize) -> Fixture {
    match name {
        FixtureName::Zero => Fixture {
            name: "zero",
            a: SymMatrix::zeros(n),
            sdp: 0.0,
        },
        FixtureName::Identity => Fixture {
            name: "identity",
            a: SymMatrix::identity(n),
            sdp: n as f64,
        },
        FixtureName::Ones => Fixture {
            name: "ones",
            a: SymMatrix::from_lower_fn(n, |_, _| 1.0),
            sdp: (n * n) as f64,
        },
        FixtureName::TwoByTwo => {
            let a = SymMatrix::from_rows(&[vec![1.0, -2.0], vec![-2.0, 1.0]]).expect("symmetric");
            let sdp = two_by_two_sdp(&a);
            Fixture {
                name: "two_by_two",
                a,
                sdp,
            }
        }
        FixtureName::Triangle => Fixture {
            name: "triangle",
            a: gen_maxcut(3, &[(0, 1), (1, 2), (0, 2)]).expect("valid triangle"),
            sdp: 3.0,
        },
    }
}

/// The deterministic test set.
pub fn fixtures() -> Vec<Fixture> {
    vec![
        fixture(FixtureName::Zero, 4),
        fixture(FixtureName::Identity, 4),
        fixture(FixtureName::Ones, 4),
        fixture(FixtureName::TwoByTwo, 2),
        fixture(FixtureName::Triangle, 3),
    ]
}
