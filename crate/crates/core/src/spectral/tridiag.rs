//! Lowest eigenpairs of a real symmetric tridiagonal matrix.
//!
//! Eigenvalues come from Sturm-sequence bisection, eigenvectors from inverse
//! iteration with a pivoted tridiagonal LU. Vectors belonging to close
//! eigenvalues are re-orthogonalized against each other, so nearly degenerate
//! pairs (deep double wells) still come out orthonormal.

use crate::error::{Error, Result};

/// Bisection stops once the bracket is below this (relative) width.
pub const EIGEN_TOLERANCE: f64 = 1e-12;

const MAX_BISECTION: usize = 400;
const MAX_INVERSE_ITERATIONS: usize = 12;

/// A symmetric tridiagonal matrix stored as its diagonal and first off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::Precondition(format!(
                "tridiagonal shape mismatch: {} diagonal, {} off-diagonal entries",
                diag.len(),
                off.len()
            )));
        }
        Ok(Self { diag, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Infinity norm, which bounds the spectral radius.
    pub fn norm(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }

    /// y = T x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    pub fn count_below(&self, x: f64) -> usize {
        let tiny = f64::MIN_POSITIVE.sqrt() * (1.0 + self.norm());
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.dim() {
            let e = self.off[i - 1];
            q = self.diag[i] - x - e * e / q;
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The k-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        if k >= self.dim() {
            return Err(Error::Precondition(format!(
                "eigenvalue index {k} out of range for dimension {}",
                self.dim()
            )));
        }
        let (mut lo, mut hi) = self.gershgorin();
        let pad = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        lo -= pad;
        hi += pad;
        let floor = 4.0 * f64::EPSILON * self.norm().max(f64::MIN_POSITIVE);
        for _ in 0..MAX_BISECTION {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= (EIGEN_TOLERANCE * mid.abs().max(1.0)).max(floor) {
                return Ok(mid);
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Err(Error::NumericFailure {
            what: format!("bisection for eigenvalue {k}"),
            iterations: MAX_BISECTION,
            residual: hi - lo,
        })
    }

    /// The `m` lowest eigenpairs, ascending, with unit-norm eigenvectors.
    pub fn lowest_eigenpairs(&self, m: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        let n = self.dim();
        let m = m.min(n);
        let norm = self.norm().max(f64::MIN_POSITIVE);
        let cluster_gap = 1e-3 * norm;
        let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(m);
        for k in 0..m {
            let value = self.eigenvalue(k)?;
            let neighbours: Vec<usize> = (0..pairs.len())
                .filter(|&j| (pairs[j].0 - value).abs() <= cluster_gap)
                .collect();
            let vector = self.inverse_iteration(value, k, &pairs, &neighbours, norm)?;
            pairs.push((value, vector));
        }
        Ok(pairs)
    }

    fn inverse_iteration(
        &self,
        value: f64,
        k: usize,
        found: &[(f64, Vec<f64>)],
        neighbours: &[usize],
        norm: f64,
    ) -> Result<Vec<f64>> {
        let n = self.dim();
        if n == 1 {
            return Ok(vec![1.0]);
        }
        // Shift slightly off the eigenvalue so the factorization stays finite.
        let shift = value + 2.0 * f64::EPSILON * norm;
        let lu = PivotedLu::factor(self, shift, norm);
        // Deterministic, non-symmetric start vector.
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * (((i * 7919 + k * 104_729) % 1009) as f64 / 1009.0 - 0.5))
            .collect();
        normalize(&mut v);
        let tol = 1e-10 * norm.max(1.0);
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_INVERSE_ITERATIONS {
            lu.solve(&mut v);
            for &j in neighbours {
                let proj = dot(&v, &found[j].1);
                for (vi, wi) in v.iter_mut().zip(&found[j].1) {
                    *vi -= proj * wi;
                }
            }
            if !normalize(&mut v) {
                return Err(Error::NumericFailure {
                    what: format!("inverse iteration for eigenvector {k} collapsed"),
                    iterations: MAX_INVERSE_ITERATIONS,
                    residual,
                });
            }
            let tv = self.apply(&v);
            residual = tv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - value * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= tol {
                // One extra step polishes the direction.
                lu.solve(&mut v);
                for &j in neighbours {
                    let proj = dot(&v, &found[j].1);
                    for (vi, wi) in v.iter_mut().zip(&found[j].1) {
                        *vi -= proj * wi;
                    }
                }
                normalize(&mut v);
                return Ok(v);
            }
        }
        Err(Error::NumericFailure {
            what: format!("inverse iteration for eigenvector {k}"),
            iterations: MAX_INVERSE_ITERATIONS,
            residual,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> bool {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= scale);
    let len = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= len);
    true
}

/// LU factorization of `T - shift I` with partial pivoting (the
/// LAPACK `gttrf` layout: L has unit diagonal, U has two superdiagonals).
struct PivotedLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl PivotedLu {
    fn factor(t: &SymTridiagonal, shift: f64, norm: f64) -> Self {
        let n = t.dim();
        let mut d: Vec<f64> = t.diag.iter().map(|a| a - shift).collect();
        let mut dl = t.off.clone();
        let mut du = t.off.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let tiny = f64::EPSILON * norm;
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        Self {
            dl,
            d,
            du,
            du2,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n - 1 {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
        // Rescale to keep iterates finite when the shift is almost exact.
        let scale = b.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if scale > 1e100 {
            b.iter_mut().for_each(|x| *x /= scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SymTridiagonal {
        SymTridiagonal::new(vec![2.0; n], vec![-1.0; n - 1]).unwrap()
    }

    #[test]
    fn discrete_laplacian_spectrum_is_exact() {
        let n = 50;
        let t = laplacian(n);
        let pairs = t.lowest_eigenpairs(6).unwrap();
        for (k, (value, vector)) in pairs.iter().enumerate() {
            let theta = (k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64;
            assert!((value - (2.0 - 2.0 * theta.cos())).abs() < 1e-12);
            let tv = t.apply(vector);
            let res: f64 = tv
                .iter()
                .zip(vector)
                .map(|(a, b)| (a - value * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-10);
        }
    }

    #[test]
    fn sturm_count_brackets_every_eigenvalue() {
        let t = SymTridiagonal::new(vec![1.0, -2.0, 3.0, 0.5], vec![0.3, -0.7, 1.1]).unwrap();
        for k in 0..4 {
            let value = t.eigenvalue(k).unwrap();
            assert_eq!(t.count_below(value - 1e-9), k);
            assert_eq!(t.count_below(value + 1e-9), k + 1);
        }
    }

    #[test]
    fn near_degenerate_pair_stays_orthogonal() {
        // Two weakly coupled copies of the same block.
        let mut diag = vec![2.0; 40];
        let mut off = vec![-1.0; 39];
        off[19] = -1e-9;
        diag[0] = 2.0;
        let t = SymTridiagonal::new(diag, off).unwrap();
        let pairs = t.lowest_eigenpairs(4).unwrap();
        let overlap = dot(&pairs[0].1, &pairs[1].1);
        assert!(overlap.abs() < 1e-10, "overlap {overlap}");
        assert!((pairs[1].0 - pairs[0].0).abs() < 1e-8);
    }

    #[test]
    fn one_by_one() {
        let t = SymTridiagonal::new(vec![3.5], vec![]).unwrap();
        let pairs = t.lowest_eigenpairs(2).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!((pairs[0].0 - 3.5).abs() < 1e-11);
    }

    #[test]
    fn shape_is_checked() {
        assert!(SymTridiagonal::new(vec![1.0, 2.0], vec![]).is_err());
    }
}
