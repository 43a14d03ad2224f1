//! Space-filling designs and candidate sets on the unit hypercube.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Native box bounds; everything downstream works on `[0,1]^q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl UnitBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidInput(format!(
                "box bounds need equal nonzero length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(j) = (0..lower.len()).find(|&j| !(lower[j] < upper[j])) {
            return Err(Error::InvalidInput(format!(
                "box dimension {j}: lower {} not below upper {}",
                lower[j], upper[j]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(q: usize) -> Self {
        Self { lower: vec![0.0; q], upper: vec![1.0; q] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn to_native(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    pub fn to_unit(&self, native: &[f64]) -> Vec<f64> {
        native
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect()
    }
}

/// `n x q` point set stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    q: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.first().map(Vec::len).unwrap_or(0);
        if q == 0 {
            return Err(Error::InvalidInput("design needs at least one nonempty row".into()));
        }
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidInput("design rows have unequal length".into()));
        }
        Ok(Self { q, data: rows.concat() })
    }

    pub fn from_flat(q: usize, data: Vec<f64>) -> Result<Self> {
        if q == 0 || data.len() % q != 0 {
            return Err(Error::InvalidInput(format!(
                "flat design of length {} does not split into rows of {q}",
                data.len()
            )));
        }
        Ok(Self { q, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.q)
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.q, "point dimension mismatch");
        self.data.extend_from_slice(x);
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    pub fn min_distance(&self) -> f64 {
        min_pairwise_distance(&self.data, self.q)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn min_pairwise_distance(data: &[f64], q: usize) -> f64 {
    let n = data.len() / q;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            best = best.min(sq_dist(&data[i * q..(i + 1) * q], &data[j * q..(j + 1) * q]));
        }
    }
    best.sqrt()
}

pub const DEFAULT_RESTARTS: usize = 10;
pub const SWAPS_PER_RESTART: usize = 1000;

/// One random Latin hypercube: a uniform permutation of strata per column
/// plus a uniform jitter inside each stratum.
pub fn random_lhd<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> Vec<f64> {
    let mut data = vec![0.0; n * q];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..q {
        perm.shuffle(rng);
        for (i, &stratum) in perm.iter().enumerate() {
            data[i * q + j] = (stratum as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    data
}

/// Maximin Latin hypercube of `n` points in `[0,1)^q`.
///
/// Each restart draws a random LHD and then tries `swaps` random exchanges
/// of one coordinate between two rows, keeping an exchange only when the
/// minimum pairwise distance strictly grows. Exchanges keep the Latin
/// property. The best restart wins.
pub fn maximin_lhd_with(n: usize, q: usize, seed: u64, restarts: usize, swaps: usize) -> Design {
    assert!(n >= 1 && q >= 1 && restarts >= 1, "maximin_lhd needs n, q, restarts >= 1");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..restarts {
        let mut rng = rng::stream(seed, "lhd-restart", r as u64);
        let mut data = random_lhd(n, q, &mut rng);
        if n > 2 {
            let mut score = min_pairwise_distance(&data, q);
            for _ in 0..swaps {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                let j = rng.random_range(0..q);
                data.swap(a * q + j, b * q + j);
                let trial = min_pairwise_distance(&data, q);
                if trial > score {
                    score = trial;
                } else {
                    data.swap(a * q + j, b * q + j);
                }
            }
        }
        let score = min_pairwise_distance(&data, q);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, data));
        }
    }
    let (_, data) = best.expect("at least one restart");
    Design { q, data }
}

pub fn maximin_lhd(n: usize, q: usize, seed: u64, restarts: usize) -> Design {
    maximin_lhd_with(n, q, seed, restarts, SWAPS_PER_RESTART)
}

/// `m` i.i.d. uniform points in `[0,1)^q`.
pub fn random_candidates(m: usize, q: usize, seed: u64) -> Design {
    assert!(m >= 1 && q >= 1, "random_candidates needs m, q >= 1");
    let mut rng = rng::stream(seed, "candidates", 0);
    let data = (0..m * q).map(|_| rng.random::<f64>()).collect();
    Design { q, data }
}
