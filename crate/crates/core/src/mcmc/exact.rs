//! Direct samplers and grid oracles that do not need a Markov chain.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::chain::chain_rng;
use crate::error::{Error, Result};
use crate::model::{PathSample, TimeGrid};
use crate::spectral::{Grid1D, PotentialSpec, SpectralData};

/// Largest tolerated weight of the first omitted eigenmode at the time step.
const TRUNCATION_LIMIT: f64 = 1e-10;

/// Samples the stationary P(φ)₁ process on a time grid: `X_{t_0} ~ ν`, then
/// `X_{t_{k+1}} ~ g_b(·|X_{t_k}) ν` by inverse CDF over the numerical support.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    positions: Vec<f64>,
    /// Cumulative stationary weights.
    start_cdf: Vec<f64>,
    /// Row `i`: cumulative transition weights out of `positions[i]`.
    rows: Vec<Vec<f64>>,
    nodes: usize,
}

fn cumulate(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl ExactSampler {
    pub fn new(sd: &SpectralData, grid: &TimeGrid) -> Result<Self> {
        let b = grid.b();
        let trunc = sd.truncation_error(b);
        if trunc > TRUNCATION_LIMIT {
            return Err(Error::Precondition(format!(
                "eigenexpansion truncated at weight {trunc:e} for step {b}; request more eigenpairs"
            )));
        }
        let support = sd.support();
        let positions: Vec<f64> = support.iter().map(|&i| sd.grid.node(i)).collect();
        let start_cdf = cumulate(&support.iter().map(|&i| sd.nu[i]).collect::<Vec<_>>());
        let mut rows = Vec::with_capacity(support.len());
        for &y in &support {
            let g = sd.transition_density(b, y)?;
            let w: Vec<f64> = support.iter().map(|&x| (g[x] * sd.nu[x]).max(0.0)).collect();
            rows.push(cumulate(&w));
        }
        Ok(Self {
            positions,
            start_cdf,
            rows,
            nodes: grid.nodes(),
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Support indices of one path.
    pub fn sample_indices(&self, rng: &mut ChaCha8Rng, out: &mut Vec<usize>) {
        out.clear();
        let mut i = draw(&self.start_cdf, rng);
        out.push(i);
        for _ in 1..self.nodes {
            i = draw(&self.rows[i], rng);
            out.push(i);
        }
    }

    pub fn sample_path(&self, rng: &mut ChaCha8Rng) -> PathSample {
        let mut idx = Vec::with_capacity(self.nodes);
        self.sample_indices(rng, &mut idx);
        PathSample::scalar(idx.into_iter().map(|i| self.positions[i]).collect()).expect("non-empty path")
    }
}

/// `n_paths` independent stationary P(φ)₁ paths; `seed` selects stream 0 of
/// the chain generator.
pub fn sample_pphi1_exact(sd: &SpectralData, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<Vec<PathSample>> {
    let sampler = ExactSampler::new(sd, grid)?;
    let mut rng = chain_rng(seed, 0);
    Ok((0..n_paths).map(|_| sampler.sample_path(&mut rng)).collect())
}

/// Exact sampler entry point with a dimension check.
pub fn sample_pphi1_exact_dim(sd: &SpectralData, grid: &TimeGrid, dim: usize, n_paths: usize, seed: u64) -> Result<Vec<PathSample>> {
    if dim != 1 {
        return Err(Error::UnsupportedDimension(dim));
    }
    sample_pphi1_exact(sd, grid, n_paths, seed)
}

/// Marginal of the pinned-path measure
/// `exp(−Σ|x_{k+1}−x_k|²/(2b) − ∫V)` (trapezoid in time) at node `node`,
/// by transfer matrices on a position grid. Returns the node weights on
/// `xgrid` (summing to 1).
pub fn transfer_marginal(potential: &PotentialSpec, grid: &TimeGrid, left: f64, right: f64, node: usize, xgrid: &Grid1D) -> Result<Vec<f64>> {
    let n = grid.n;
    if node == 0 || node >= n {
        return Err(Error::Precondition(format!("node {node} must be interior")));
    }
    let b = grid.b();
    let xs = xgrid.nodes();
    let half: Vec<f64> = xs.iter().map(|&x| (-0.5 * b * potential.eval(x)).exp()).collect();
    let heat = |x: f64, y: f64| (-(x - y) * (x - y) / (2.0 * b)).exp();
    let m = xs.len();
    let kernel: Vec<f64> = (0..m * m)
        .map(|ij| {
            let (i, j) = (ij / m, ij % m);
            half[i] * heat(xs[i], xs[j]) * half[j]
        })
        .collect();
    let propagate = |pin: f64, steps: usize| -> Vec<f64> {
        let mut v: Vec<f64> = (0..m).map(|j| heat(pin, xs[j]) * half[j]).collect();
        for _ in 1..steps {
            let mut next = vec![0.0; m];
            for (i, &vi) in v.iter().enumerate() {
                if vi == 0.0 {
                    continue;
                }
                let row = &kernel[i * m..(i + 1) * m];
                for (nj, kij) in next.iter_mut().zip(row) {
                    *nj += vi * kij;
                }
            }
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= s);
            v = next;
        }
        v
    };
    let l = propagate(left, node);
    let r = propagate(right, n - node);
    // Both vectors carry the half-weight at the shared node.
    let mut w: Vec<f64> = l.iter().zip(&r).map(|(a, c)| a * c).collect();
    let s: f64 = w.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::NumericFailure {
            what: "transfer-matrix marginal".into(),
            iterations: n,
            residual: s,
        });
    }
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

/// Mean of the pinned-path marginal from [`transfer_marginal`].
pub fn transfer_mean(potential: &PotentialSpec, grid: &TimeGrid, left: f64, right: f64, node: usize, xgrid: &Grid1D) -> Result<f64> {
    let w = transfer_marginal(potential, grid, left, right, node, xgrid)?;
    Ok(xgrid.nodes().iter().zip(&w).map(|(x, p)| x * p).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic_sd() -> SpectralData {
        let grid = Grid1D::symmetric(7.0, 141).unwrap();
        crate::spectral::ground_state(&grid, &PotentialSpec::Harmonic { omega: 1.0 }, 139).unwrap()
    }

    #[test]
    fn truncated_expansion_is_refused() {
        let grid = Grid1D::symmetric(7.0, 141).unwrap();
        let sd = crate::spectral::ground_state(&grid, &PotentialSpec::Harmonic { omega: 1.0 }, 4).unwrap();
        assert!(ExactSampler::new(&sd, &TimeGrid::new(1.0, 16).unwrap()).is_err());
    }

    #[test]
    fn higher_dimension_is_unsupported() {
        let sd = harmonic_sd();
        let err = sample_pphi1_exact_dim(&sd, &TimeGrid::new(1.0, 8).unwrap(), 3, 1, 1).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDimension(3)));
    }

    #[test]
    fn lag_covariance_decays_with_the_gap() {
        let sd = harmonic_sd();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let sampler = ExactSampler::new(&sd, &grid).unwrap();
        let mut rng = chain_rng(5, 0);
        let (mut s0, mut s1, mut s00) = (0.0, 0.0, 0.0);
        let n = 200_000;
        for _ in 0..n {
            let p = sampler.sample_path(&mut rng);
            let (a, c) = (p.at(3)[0], p.at(4)[0]);
            s0 += a * a;
            s00 += a * a * c * c;
            s1 += a * c;
        }
        let var: f64 = sd.grid.nodes().iter().zip(&sd.nu).map(|(x, w)| x * x * w).sum();
        let cov = s1 / n as f64;
        let se = ((s00 / n as f64 - cov * cov) / n as f64).sqrt();
        let expected = (-sd.matrix_gap() * grid.b()).exp() * var;
        assert!((cov - expected).abs() < 3.0 * se, "{cov} vs {expected} ± {se}");
        assert!((s0 / n as f64 - var).abs() < 0.01);
    }

    #[test]
    fn free_transfer_marginal_is_the_bridge() {
        // V = 0: Brownian bridge from 0 to 1 over [−1, 1]; at t = 0 the
        // marginal is N(1/2, 1/2).
        let pot = PotentialSpec::Table {
            x_min: -50.0,
            x_max: 50.0,
            values: vec![0.0, 0.0],
        };
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let xg = Grid1D::symmetric(8.0, 801).unwrap();
        let w = transfer_marginal(&pot, &grid, 0.0, 1.0, 4, &xg).unwrap();
        let mean: f64 = xg.nodes().iter().zip(&w).map(|(x, p)| x * p).sum();
        let var: f64 = xg.nodes().iter().zip(&w).map(|(x, p)| (x - mean).powi(2) * p).sum();
        assert!((mean - 0.5).abs() < 1e-9, "{mean}");
        assert!((var - 0.5).abs() < 1e-6, "{var}");
    }
}
