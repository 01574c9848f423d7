//! Cluster expansion of the partition function on a finite surrogate: a
//! short time division with paths restricted to a handful of positions, so
//! every expectation is a finite sum.

pub mod diagram;
pub mod expansion;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PairKernelSpec, TimeGrid};
use crate::spectral::{ground_state, Grid1D, PotentialSpec};

pub use diagram::{
    brute_force_clusters, enumerate_clusters, visit_clusters, Chain, ClusterDiagram, Contour, PairLayout, RawCluster,
};
pub use expansion::{
    cluster_estimate_check, cluster_size_sums, cluster_weight, cluster_weight_unchecked, loose_end_weights, partition_function_cluster,
    ClusterSum, DecayFit,
};

/// Direct enumeration limits.
pub const MAX_DIRECT_INTERVALS: usize = 8;
pub const MAX_POSITIONS: usize = 6;

/// How the interval length is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Spacing {
    Fixed { b: f64 },
    /// `b = max(b_min, ln(1/|λ|) / (3Λ))`, so that `e^{−Λb} = |λ|^{1/3}`.
    Coupled { b_min: f64 },
}

impl Spacing {
    pub fn resolve(&self, gap: f64, lambda: f64) -> f64 {
        match *self {
            Spacing::Fixed { b } => b,
            Spacing::Coupled { b_min } => {
                if lambda == 0.0 {
                    return b_min;
                }
                b_min.max((1.0 / lambda.abs()).ln() / (3.0 * gap))
            }
        }
    }
}

/// Recipe for a [`Surrogate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub potential: PotentialSpec,
    pub kernel: PairKernelSpec,
    pub n_intervals: usize,
    pub n_positions: usize,
    /// Positions are the interior nodes of a uniform grid on `[−w, w]`.
    pub half_width: f64,
    pub spacing: Spacing,
}

impl SurrogateSpec {
    pub fn build(&self, lambda: f64) -> Result<Surrogate> {
        Surrogate::new(self, lambda)
    }
}

/// Paths on `N` intervals of length `b` visiting `m` positions. The
/// reference law of the node positions is the stationary chain with
/// marginal `ν` and transition `g_b(x|y) ν(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub n_intervals: usize,
    pub b: f64,
    pub positions: Vec<f64>,
    pub nu: Vec<f64>,
    /// `g[y][x] = g_b(x|y)`.
    pub g: Vec<Vec<f64>>,
    /// Spectral gap of the position operator.
    pub gap: f64,
    /// `𝒥_ij(p, q) = b² W(x_p, x_q, t_i − t_j)`, flattened as
    /// `((i·N + j)·m + p)·m + q`.
    j_table: Vec<f64>,
}

impl Surrogate {
    pub fn new(spec: &SurrogateSpec, lambda: f64) -> Result<Self> {
        let n = spec.n_intervals;
        let m = spec.n_positions;
        if !(2..=diagram::MAX_INTERVALS).contains(&n) {
            return Err(Error::Precondition(format!("surrogate needs 2 ≤ N ≤ {}, got {n}", diagram::MAX_INTERVALS)));
        }
        if !(2..=MAX_POSITIONS).contains(&m) {
            return Err(Error::Precondition(format!("surrogate needs 2 ≤ positions ≤ {MAX_POSITIONS}, got {m}")));
        }
        let grid = Grid1D::symmetric(spec.half_width, m + 2)?;
        // Every eigenpair is kept, so g_b is exact for the coarse operator.
        let sd = ground_state(&grid, &spec.potential, m)?;
        let gap = sd.energies[1] - sd.energies[0];
        let b = spec.spacing.resolve(gap, lambda);
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Domain(format!("interval length must be positive, got {b}")));
        }
        let positions: Vec<f64> = (1..=m).map(|i| grid.node(i)).collect();
        let nu: Vec<f64> = sd.nu[1..=m].to_vec();
        let mut g = Vec::with_capacity(m);
        for y in 1..=m {
            let row = sd.transition_density(b, y)?;
            g.push(row[1..=m].to_vec());
        }
        let even = n + n % 2;
        let tgrid = TimeGrid::new(even as f64 * b / 2.0, even)?;
        let kernel = spec.kernel.prepare(&tgrid)?;
        let mut j_table = vec![0.0; n * n * m * m];
        for i in 0..n {
            for j in 0..n {
                let t = (i as f64 - j as f64) * b;
                for p in 0..m {
                    for q in 0..m {
                        let w = kernel.value(&[positions[p]], &[positions[q]], t);
                        if !w.is_finite() {
                            return Err(Error::SingularKernel(format!("W({}, {}, {t}) = {w}", positions[p], positions[q])));
                        }
                        j_table[((i * n + j) * m + p) * m + q] = b * b * w;
                    }
                }
            }
        }
        let s = Self {
            n_intervals: n,
            b,
            positions,
            nu,
            g,
            gap,
            j_table,
        };
        let err = s.normalization_error();
        if err > 1e-10 {
            return Err(Error::NumericFailure {
                what: "surrogate transition normalization".into(),
                iterations: 0,
                residual: err,
            });
        }
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.positions.len()
    }

    /// `max_y |Σ_x g(x|y) ν(x) − 1|` and `|Σ ν − 1|`.
    pub fn normalization_error(&self) -> f64 {
        let total: f64 = self.nu.iter().sum();
        self.g
            .iter()
            .map(|row| (row.iter().zip(&self.nu).map(|(g, n)| g * n).sum::<f64>() - 1.0).abs())
            .fold((total - 1.0).abs(), f64::max)
    }

    /// `𝒥_ij` with interval `i` at position `p` and `j` at `q`.
    #[inline]
    pub fn jij(&self, i: usize, j: usize, p: usize, q: usize) -> f64 {
        let (n, m) = (self.n_intervals, self.m());
        self.j_table[((i * n + j) * m + p) * m + q]
    }

    /// `W_{τ_i,τ_j}` for `i < j`, positions at the left endpoints. Adjacent
    /// pairs carry half of each diagonal term; the first and last interval
    /// pick up their remaining half from the boundary pair.
    pub fn pair_energy(&self, i: usize, j: usize, xi: usize, xj: usize) -> f64 {
        debug_assert!(i < j);
        let n = self.n_intervals;
        let mut w = self.jij(i, j, xi, xj) + self.jij(j, i, xj, xi);
        if j == i + 1 {
            w += 0.5 * (self.jij(i, i, xi, xi) + self.jij(j, j, xj, xj));
            if i == 0 {
                w += 0.5 * self.jij(0, 0, xi, xi);
            }
            if j == n - 1 {
                w += 0.5 * self.jij(j, j, xj, xj);
            }
        }
        w
    }

    /// `Σ_{i<j} W_{τ_i,τ_j}` for positions `x[0..N]` (node `N` unused).
    pub fn total_pair_energy(&self, x: &[usize]) -> f64 {
        let n = self.n_intervals;
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += self.pair_energy(i, j, x[i], x[j]);
            }
        }
        s
    }

    /// Plain double sum `Σ_{i,j} 𝒥_ij`.
    pub fn double_sum(&self, x: &[usize]) -> f64 {
        let n = self.n_intervals;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.jij(i, j, x[i], x[j]);
            }
        }
        s
    }

    /// Largest relative gap between the re-bracketed pair sum and the plain
    /// double sum over every position assignment.
    pub fn diagonal_convention_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for_each_assignment(self.n_intervals, self.m(), |x| {
            let a = self.total_pair_energy(x);
            let b = self.double_sum(x);
            worst = worst.max((a - b).abs() / b.abs().max(1e-300).max(a.abs()));
        });
        worst
    }
}

/// Calls `f` on every assignment of `m` positions to `len` nodes, first node
/// fastest.
pub(crate) fn for_each_assignment(len: usize, m: usize, mut f: impl FnMut(&[usize])) {
    let mut x = vec![0usize; len];
    loop {
        f(&x);
        let mut k = 0;
        loop {
            if k == len {
                return;
            }
            x[k] += 1;
            if x[k] < m {
                break;
            }
            x[k] = 0;
            k += 1;
        }
    }
}

/// `Z = Σ_x Π ν(x_k) Π g_b(x_{k+1}|x_k) exp(−λ Σ_{i<j} W_{τ_i,τ_j})`.
pub fn partition_function_direct(s: &Surrogate, lambda: f64) -> Result<f64> {
    let n = s.n_intervals;
    let m = s.m();
    if n > MAX_DIRECT_INTERVALS || m > MAX_POSITIONS {
        return Err(Error::Budget(format!(
            "direct enumeration limited to N ≤ {MAX_DIRECT_INTERVALS}, positions ≤ {MAX_POSITIONS}; got N={n}, positions={m}"
        )));
    }
    let mut z = 0.0;
    for_each_assignment(n + 1, m, |x| {
        let mut w = s.nu[x[0]];
        for k in 0..n {
            w *= s.g[x[k]][x[k + 1]] * s.nu[x[k + 1]];
        }
        z += w * (-lambda * s.total_pair_energy(x)).exp();
    });
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(n: usize, m: usize) -> SurrogateSpec {
        SurrogateSpec {
            potential: PotentialSpec::DoubleWell { beta: 0.25 },
            kernel: PairKernelSpec::BoundedDecay { r: 1.0, alpha: 2.0 },
            n_intervals: n,
            n_positions: m,
            half_width: 2.0,
            spacing: Spacing::Fixed { b: 0.5 },
        }
    }

    #[test]
    fn surrogate_is_normalized() {
        let s = spec(4, 5).build(0.05).unwrap();
        assert!(s.normalization_error() < 1e-12);
        assert!(s.g.iter().flatten().all(|g| *g > 0.0));
    }

    #[test]
    fn zero_coupling_gives_unit_partition_function() {
        let s = spec(4, 3).build(0.0).unwrap();
        assert!((partition_function_direct(&s, 0.0).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn two_interval_hand_sum() {
        let s = spec(2, 2).build(0.1).unwrap();
        let lambda = 0.1;
        let mut z = 0.0;
        for a in 0..2 {
            for c in 0..2 {
                for d in 0..2 {
                    let j = s.jij(0, 0, a, a) + s.jij(1, 1, c, c) + s.jij(0, 1, a, c) + s.jij(1, 0, c, a);
                    z += s.nu[a] * s.nu[c] * s.nu[d] * s.g[a][c] * s.g[c][d] * (-lambda * j).exp();
                }
            }
        }
        assert!((partition_function_direct(&s, lambda).unwrap() - z).abs() < 1e-14);
    }

    #[test]
    fn first_order_in_coupling() {
        let s = spec(4, 3).build(0.0).unwrap();
        let mut mean = 0.0;
        for_each_assignment(5, 3, |x| {
            let mut w = s.nu[x[0]];
            for k in 0..4 {
                w *= s.g[x[k]][x[k + 1]] * s.nu[x[k + 1]];
            }
            mean += w * s.double_sum(x);
        });
        for lambda in [1e-4, -1e-4] {
            let z = partition_function_direct(&s, lambda).unwrap();
            let lin = 1.0 - lambda * mean;
            assert!((z - lin).abs() < 10.0 * lambda * lambda * mean.abs().max(1.0), "{z} vs {lin}");
        }
    }

    #[test]
    fn diagonal_rebracketing_is_exact() {
        for n in 2..=6 {
            let s = spec(n, 3).build(0.05).unwrap();
            assert!(s.diagonal_convention_error() < 1e-12, "N={n}");
        }
    }

    #[test]
    fn budget_is_enforced() {
        let mut sp = spec(8, 6);
        sp.n_positions = 7;
        assert!(sp.build(0.05).is_err());
    }

    #[test]
    fn coupled_spacing_grows_as_coupling_shrinks() {
        let rule = Spacing::Coupled { b_min: 0.1 };
        let gap = 1.0;
        assert!(rule.resolve(gap, 0.01) > rule.resolve(gap, 0.1));
        assert!(((-gap * rule.resolve(gap, 0.01)).exp() - 0.01_f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(rule.resolve(gap, 0.9), 0.1);
    }
}
