//! The path sampler restricted to a finite position set, where the target and
//! the one-step transition matrix can be written out exactly.
//!
//! Blocks are redrawn from the Gaussian increment weights conditioned on the
//! block's neighbours (forward filtering, backward sampling over the position
//! set) and accepted with the same local energy difference the continuous
//! sampler uses.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::chain::local_delta;
use crate::error::{Error, Result};
use crate::model::energy::gibbs_log_density;
use crate::model::{GibbsModel, PathSample};

/// Largest state space written out densely.
pub const MAX_STATES: usize = 4096;

#[derive(Debug, Clone)]
pub struct DiscreteSurrogate {
    model: GibbsModel,
    positions: Vec<f64>,
    free: Vec<usize>,
    /// Contiguous free blocks `(lo, hi)`, all equally likely.
    blocks: Vec<(usize, usize)>,
    template: PathSample,
}

impl DiscreteSurrogate {
    /// `positions` must contain every pinned value; blocks of up to
    /// `block_len_max` free nodes are used.
    pub fn new(model: &GibbsModel, positions: Vec<f64>, block_len_max: usize) -> Result<Self> {
        if model.dim != 1 {
            return Err(Error::UnsupportedDimension(model.dim));
        }
        if positions.is_empty() || block_len_max == 0 {
            return Err(Error::Precondition("need positions and a positive block length".into()));
        }
        let n = model.grid.n;
        let pinned = model.boundary.pinned_nodes(&model.grid);
        for &k in &pinned {
            let v = model.boundary.pin_value(&model.grid, k).expect("pinned")[0];
            if !positions.contains(&v) {
                return Err(Error::Precondition(format!("pin value {v} is not a surrogate position")));
            }
        }
        let free: Vec<usize> = (0..=n).filter(|k| !pinned.contains(k)).collect();
        let states = (positions.len() as f64).powi(free.len() as i32);
        if states > MAX_STATES as f64 {
            return Err(Error::Budget(format!("{states} surrogate states exceed {MAX_STATES}")));
        }
        let mut blocks = Vec::new();
        for lo in 0..=n {
            for hi in lo..=n.min(lo + block_len_max - 1) {
                if (lo..=hi).all(|k| !pinned.contains(&k)) {
                    blocks.push((lo, hi));
                }
            }
        }
        let template = model.initial_path(&[positions[0]]);
        Ok(Self {
            model: model.clone(),
            positions,
            free,
            blocks,
            template,
        })
    }

    pub fn n_states(&self) -> usize {
        self.positions.len().pow(self.free.len() as u32)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Path encoded by `state` (free nodes in base `|positions|`, first free
    /// node least significant).
    pub fn path(&self, state: usize) -> PathSample {
        let m = self.positions.len();
        let mut p = self.template.clone();
        let mut s = state;
        for &k in &self.free {
            p.at_mut(k)[0] = self.positions[s % m];
            s /= m;
        }
        p
    }

    fn encode(&self, idx: &[usize]) -> usize {
        let m = self.positions.len();
        self.free.iter().rev().fold(0, |acc, &k| acc * m + idx[k])
    }

    /// Exact target probabilities of every state.
    pub fn target(&self) -> Result<Vec<f64>> {
        let logs: Vec<f64> = (0..self.n_states())
            .map(|s| gibbs_log_density(&self.path(s), &self.model).map(|t| t.total()))
            .collect::<Result<_>>()?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / z).collect())
    }

    fn log_edge(&self, a: f64, c: f64) -> f64 {
        -(a - c) * (a - c) / (2.0 * self.model.grid.b())
    }

    /// Backward messages for block `lo..=hi` given the path's neighbours.
    fn messages(&self, path: &PathSample, lo: usize, hi: usize) -> Vec<Vec<f64>> {
        let n = self.model.grid.n;
        let m = self.positions.len();
        let len = hi - lo + 1;
        let mut beta = vec![vec![1.0; m]; len];
        if hi < n {
            let r = path.at(hi + 1)[0];
            for (z, v) in beta[len - 1].iter_mut().enumerate() {
                *v = self.log_edge(self.positions[z], r).exp();
            }
        }
        for k in (0..len - 1).rev() {
            for z in 0..m {
                beta[k][z] = (0..m)
                    .map(|w| self.log_edge(self.positions[z], self.positions[w]).exp() * beta[k + 1][w])
                    .sum();
            }
        }
        beta
    }

    fn first_weights(&self, path: &PathSample, lo: usize, beta0: &[f64]) -> Vec<f64> {
        (0..self.positions.len())
            .map(|z| {
                let left = if lo > 0 {
                    self.log_edge(path.at(lo - 1)[0], self.positions[z]).exp()
                } else {
                    1.0
                };
                left * beta0[z]
            })
            .collect()
    }

    /// Proposal probability of block assignment `zs`.
    fn proposal_prob(&self, path: &PathSample, lo: usize, hi: usize, beta: &[Vec<f64>], zs: &[usize]) -> f64 {
        let first = self.first_weights(path, lo, &beta[0]);
        let norm: f64 = first.iter().sum();
        let mut log = 0.0;
        if lo > 0 {
            log += self.log_edge(path.at(lo - 1)[0], self.positions[zs[0]]);
        }
        for w in zs.windows(2) {
            log += self.log_edge(self.positions[w[0]], self.positions[w[1]]);
        }
        if hi < self.model.grid.n {
            log += self.log_edge(self.positions[zs[zs.len() - 1]], path.at(hi + 1)[0]);
        }
        log.exp() / norm
    }

    fn sample_block(&self, path: &PathSample, lo: usize, hi: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let beta = self.messages(path, lo, hi);
        let pick = |w: &[f64], rng: &mut ChaCha8Rng| {
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (i, &x) in w.iter().enumerate() {
                if u < x {
                    return i;
                }
                u -= x;
            }
            w.len() - 1
        };
        let mut zs = Vec::with_capacity(hi - lo + 1);
        zs.push(pick(&self.first_weights(path, lo, &beta[0]), rng));
        for k in 1..=hi - lo {
            let prev = self.positions[zs[k - 1]];
            let w: Vec<f64> = (0..self.positions.len())
                .map(|z| self.log_edge(prev, self.positions[z]).exp() * beta[k][z])
                .collect();
            zs.push(pick(&w, rng));
        }
        zs
    }

    fn acceptance(&self, path: &PathSample, lo: usize, hi: usize, zs: &[usize]) -> f64 {
        let new: Vec<f64> = zs.iter().map(|&z| self.positions[z]).collect();
        let (rest, _) = local_delta(&self.model, path, lo, hi, &new);
        if rest >= 0.0 {
            1.0
        } else {
            rest.exp()
        }
    }

    fn indices(&self, path: &PathSample) -> Vec<usize> {
        (0..path.len())
            .map(|k| self.positions.iter().position(|&p| p == path.at(k)[0]).unwrap_or(0))
            .collect()
    }

    /// One-step transition matrix, row-major `P[x][y]`.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let ns = self.n_states();
        let m = self.positions.len();
        let pb = 1.0 / self.blocks.len() as f64;
        let mut p = vec![vec![0.0; ns]; ns];
        for x in 0..ns {
            let path = self.path(x);
            let idx = self.indices(&path);
            for &(lo, hi) in &self.blocks {
                let beta = self.messages(&path, lo, hi);
                let len = hi - lo + 1;
                let mut zs = vec![0; len];
                for code in 0..m.pow(len as u32) {
                    let mut c = code;
                    for z in zs.iter_mut() {
                        *z = c % m;
                        c /= m;
                    }
                    let q = self.proposal_prob(&path, lo, hi, &beta, &zs);
                    let a = self.acceptance(&path, lo, hi, &zs);
                    let mut to = idx.clone();
                    to[lo..=hi].copy_from_slice(&zs);
                    let y = self.encode(&to);
                    p[x][y] += pb * q * a;
                    p[x][x] += pb * q * (1.0 - a);
                }
            }
        }
        p
    }

    /// Runs `steps` single-block moves from `start` and returns visit counts.
    pub fn run(&self, start: usize, steps: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_states()];
        let mut path = self.path(start);
        let mut idx = self.indices(&path);
        let mut state = start;
        for _ in 0..steps {
            let (lo, hi) = self.blocks[rng.random_range(0..self.blocks.len())];
            let zs = self.sample_block(&path, lo, hi, rng);
            let a = self.acceptance(&path, lo, hi, &zs);
            if a >= 1.0 || rng.random::<f64>() < a {
                for (k, &z) in (lo..=hi).zip(&zs) {
                    path.at_mut(k)[0] = self.positions[z];
                    idx[k] = z;
                }
                state = self.encode(&idx);
            }
            counts[state] += 1;
        }
        counts
    }
}

/// Largest violation of `π(x)P(x,y) = π(y)P(y,x)`.
pub fn detailed_balance_error(pi: &[f64], p: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for x in 0..pi.len() {
        for y in x + 1..pi.len() {
            worst = worst.max((pi[x] * p[x][y] - pi[y] * p[y][x]).abs());
        }
    }
    worst
}

/// Stationary law of `p` by power iteration from the uniform vector.
pub fn stationary_by_power_iteration(p: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = p.len();
    let mut v = vec![1.0 / n as f64; n];
    for it in 0..max_iter {
        let mut next = vec![0.0; n];
        for (x, row) in p.iter().enumerate() {
            let vx = v[x];
            for (nx, pxy) in next.iter_mut().zip(row) {
                *nx += vx * pxy;
            }
        }
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if diff < tol {
            return Ok(v);
        }
        if it + 1 == max_iter {
            return Err(Error::NumericFailure {
                what: "power iteration".into(),
                iterations: max_iter,
                residual: diff,
            });
        }
    }
    Ok(v)
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundaryCondition, EnergyForm, GroundStateTable, PairKernelSpec, TimeGrid};
    use crate::spectral::PotentialSpec;

    fn stationary_model() -> GibbsModel {
        GibbsModel::new(
            TimeGrid::new(0.5, 2).unwrap(),
            1,
            Some(PotentialSpec::DoubleWell { beta: 0.5 }),
            Some(PairKernelSpec::QuadraticLongrange { alpha: 1.0, gamma: 1.5 }),
            0.8,
            BoundaryCondition::FreeStationary {
                ground_state: GroundStateTable {
                    x_min: -3.0,
                    x_max: 3.0,
                    psi0: (0..61).map(|i| (-0.5 * (-3.0 + 0.1 * i as f64).powi(2)).exp()).collect(),
                },
            },
            EnergyForm::OnsitePair,
        )
        .unwrap()
    }

    #[test]
    fn transition_rows_are_stochastic_and_reversible() {
        let s = DiscreteSurrogate::new(&stationary_model(), vec![-1.0, 0.0, 1.0], 3).unwrap();
        let p = s.transition_matrix();
        for row in &p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let pi = s.target().unwrap();
        assert!(detailed_balance_error(&pi, &p) < 1e-12);
    }

    #[test]
    fn pins_must_be_positions() {
        let m = GibbsModel::new(
            TimeGrid::new(1.0, 4).unwrap(),
            1,
            None,
            None,
            0.0,
            BoundaryCondition::Pinned {
                left: vec![0.5],
                right: vec![0.0],
            },
            EnergyForm::OnsitePair,
        )
        .unwrap();
        assert!(DiscreteSurrogate::new(&m, vec![0.0, 1.0], 2).is_err());
    }
}
