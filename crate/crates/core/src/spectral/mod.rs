//! Grid Schrödinger solver for `H = -½Δ + V` in one dimension.
//!
//! The ground state, spectral gap and the ground-state-transformed semigroup
//! `g_t(x|y)` computed here define the P(φ)₁ reference process. Everything in
//! this module is pure; [`SpectralData`] can be shared freely between workers.
//!
//! Transition densities are taken with respect to the stationary weights
//! `ν = ψ₀² h`, so `Σ_x g_t(x|y) ν(x) = 1` and `g_t → 1` as `t → ∞`.

mod tridiag;

pub use tridiag::{SymTridiagonal, EIGEN_TOLERANCE};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default number of eigenpairs kept for the semigroup expansion.
pub const DEFAULT_EIGENPAIRS: usize = 64;

/// Relative ψ₀ level below which a node is treated as outside the
/// numerical support.
pub const SUPPORT_FLOOR: f64 = 1e-8;

/// Default threshold for [`SpectralData::support_diagnostic`]. Arbitrary.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e6;

/// Uniform grid on `[x_min, x_max]` with Dirichlet walls at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 points, got {n_points}")));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::InvalidGrid(format!("bad range [{x_min}, {x_max}]")));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Symmetric grid `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to `x`, if `x` lies inside the grid range.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x <= self.x_max) {
            return None;
        }
        let i = ((x - self.x_min) / self.h()).round() as usize;
        Some(i.min(self.n_points - 1))
    }
}

/// External potential `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `½ ω² x²`
    Harmonic { omega: f64 },
    /// `β (x⁴ − x²)`, β > 0
    DoubleWell { beta: f64 },
    /// `a |x|^{2s}`, a > 0, s > 1
    Confining { a: f64, s: f64 },
    /// Zero inside `|x| ≤ width/2`, infinite outside.
    Box { width: f64 },
    /// Linear interpolation of tabulated values on `[x_min, x_max]`.
    Table {
        x_min: f64,
        x_max: f64,
        values: Vec<f64>,
    },
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Precondition(msg));
        match *self {
            PotentialSpec::Harmonic { omega } if !(omega.is_finite() && omega > 0.0) => {
                bad(format!("harmonic frequency must be positive, got {omega}"))
            }
            PotentialSpec::DoubleWell { beta } if !(beta.is_finite() && beta > 0.0) => {
                bad(format!("double-well strength must be positive, got {beta}"))
            }
            PotentialSpec::Confining { a, s } if !(a > 0.0 && s > 1.0 && a.is_finite() && s.is_finite()) => {
                bad(format!("confining potential needs a > 0 and s > 1, got a={a}, s={s}"))
            }
            PotentialSpec::Box { width } if !(width.is_finite() && width > 0.0) => {
                bad(format!("box width must be positive, got {width}"))
            }
            PotentialSpec::Table {
                x_min,
                x_max,
                ref values,
            } => {
                if values.len() < 2 || !(x_min < x_max) {
                    return bad("table potential needs at least two values on a proper range".into());
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return bad(format!("table potential has non-finite value {v}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `V(x)` for a scalar position.
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PotentialSpec::Harmonic { omega } => 0.5 * omega * omega * x * x,
            PotentialSpec::DoubleWell { beta } => {
                let x2 = x * x;
                beta * (x2 * x2 - x2)
            }
            PotentialSpec::Confining { a, s } => a * x.abs().powf(2.0 * s),
            PotentialSpec::Box { width } => {
                if x.abs() <= 0.5 * width * (1.0 + 1e-12) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PotentialSpec::Table {
                x_min,
                x_max,
                ref values,
            } => {
                if !(x >= x_min && x <= x_max) {
                    return f64::INFINITY;
                }
                let step = (x_max - x_min) / (values.len() - 1) as f64;
                let u = (x - x_min) / step;
                let i = (u.floor() as usize).min(values.len() - 2);
                let w = u - i as f64;
                (1.0 - w) * values[i] + w * values[i + 1]
            }
        }
    }

    /// Separable extension to `d` dimensions: `Σ_a V(x_a)`.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xa| self.eval(xa)).sum()
    }
}

/// `-½ (second difference)/h² + diag(V)` on the interior nodes.
pub fn build_hamiltonian(grid: &Grid1D, potential: &PotentialSpec) -> Result<SymTridiagonal> {
    potential.validate()?;
    let h = grid.h();
    let inv = 1.0 / (h * h);
    let n = grid.n_points - 2;
    let mut diag = Vec::with_capacity(n);
    for i in 1..grid.n_points - 1 {
        let x = grid.node(i);
        let v = potential.eval(x);
        if !v.is_finite() {
            return Err(Error::InvalidPotential { index: i, x, value: v });
        }
        diag.push(inv + v);
    }
    SymTridiagonal::new(diag, vec![-0.5 * inv; n.saturating_sub(1)])
}

/// Eigendata of `H` on a grid.
///
/// `energies`/`vectors` are the exact eigenpairs of the finite-difference
/// matrix and drive the semigroup. `e0` and `gap` carry the leading `O(h²)`
/// discretization correction and estimate the continuum values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub grid: Grid1D,
    pub potential: PotentialSpec,
    /// Matrix eigenvalues, ascending.
    pub energies: Vec<f64>,
    /// Eigenfunctions on every node (zero at the walls), `Σ ψ² h = 1`.
    pub vectors: Vec<Vec<f64>>,
    /// First eigenvalue not kept, when the grid has one.
    pub next_energy: Option<f64>,
    pub e0: f64,
    pub gap: f64,
    pub psi0: Vec<f64>,
    pub nu: Vec<f64>,
    /// Lowest two eigenvalues coincide within tolerance.
    pub degenerate: bool,
    /// ψ₀ at the nodes next to the walls; should be negligible.
    pub edge_amplitude: f64,
}

/// First `m` eigenpairs of `H`; `m ≥ 2`.
pub fn ground_state(grid: &Grid1D, potential: &PotentialSpec, m: usize) -> Result<SpectralData> {
    if m < 2 {
        return Err(Error::Precondition(format!("need at least 2 eigenpairs, got {m}")));
    }
    let hamiltonian = build_hamiltonian(grid, potential)?;
    let n = hamiltonian.dim();
    if n < 2 {
        return Err(Error::InvalidGrid("grid has fewer than 2 interior nodes".into()));
    }
    let wanted = (m + 1).min(n);
    let mut pairs = hamiltonian.lowest_eigenpairs(wanted)?;
    let next_energy = if pairs.len() > m { pairs.pop().map(|p| p.0) } else { None };

    let h = grid.h();
    let scale = 1.0 / h.sqrt();
    let mut energies = Vec::with_capacity(pairs.len());
    let mut vectors = Vec::with_capacity(pairs.len());
    for (value, v) in pairs {
        let mut psi = vec![0.0; grid.n_points];
        psi[1..grid.n_points - 1]
            .iter_mut()
            .zip(&v)
            .for_each(|(p, &vi)| *p = vi * scale);
        let sum: f64 = psi.iter().sum();
        let sign = if sum < 0.0 {
            -1.0
        } else if sum > 0.0 {
            1.0
        } else {
            // Odd states: fix the sign by the first significant entry.
            let lead = psi.iter().copied().find(|p| p.abs() > 1e-8).unwrap_or(1.0);
            lead.signum()
        };
        psi.iter_mut().for_each(|p| *p *= sign);
        energies.push(value);
        vectors.push(psi);
    }

    let mut psi0 = vectors[0].clone();
    for p in psi0[1..grid.n_points - 1].iter_mut() {
        if *p <= 0.0 {
            *p = f64::MIN_POSITIVE;
        }
    }
    vectors[0] = psi0.clone();
    let nu: Vec<f64> = psi0.iter().map(|p| p * p * h).collect();

    let corrected = |k: usize| {
        let e = energies[k];
        let sum: f64 = (1..grid.n_points - 1)
            .map(|i| {
                let dv = potential.eval(grid.node(i)) - e;
                dv * dv * vectors[k][i] * vectors[k][i] * h
            })
            .sum();
        e + h * h / 6.0 * sum
    };
    let e0 = corrected(0);
    let e1 = corrected(1);
    let raw_gap = energies[1] - energies[0];
    let degenerate = raw_gap <= 1e-10 * energies[0].abs().max(1.0);
    let edge_amplitude = psi0[1].abs().max(psi0[grid.n_points - 2].abs());

    Ok(SpectralData {
        grid: *grid,
        potential: potential.clone(),
        energies,
        vectors,
        next_energy,
        e0,
        gap: e1 - e0,
        psi0,
        nu,
        degenerate,
        edge_amplitude,
    })
}

/// Outcome of [`SpectralData::support_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    /// `max_k e^{-Λ|t_k|} / ψ₀(X_{t_k})`
    pub value: f64,
    pub threshold: f64,
    pub within: bool,
    /// `threshold / value`; above 1 when the path passes.
    pub margin: f64,
}

impl SpectralData {
    /// Raw spectral gap of the matrix.
    pub fn matrix_gap(&self) -> f64 {
        self.energies[1] - self.energies[0]
    }

    pub fn pairs(&self) -> usize {
        self.energies.len()
    }

    /// Nodes where ψ₀ is above [`SUPPORT_FLOOR`] relative to its maximum.
    pub fn support(&self) -> Vec<usize> {
        let max = self.psi0.iter().fold(0.0_f64, |m, p| m.max(*p));
        (1..self.grid.n_points - 1)
            .filter(|&i| self.psi0[i] >= SUPPORT_FLOOR * max)
            .collect()
    }

    /// Relative size of the first omitted term in the eigenexpansion of `g_t`.
    pub fn truncation_error(&self, t: f64) -> f64 {
        match self.next_energy {
            Some(e) => (-(e - self.energies[0]) * t).exp(),
            None => 0.0,
        }
    }

    fn check_source(&self, y: usize) -> Result<()> {
        if y >= self.grid.n_points {
            return Err(Error::Precondition(format!("node {y} is off the grid")));
        }
        let max = self.psi0.iter().fold(0.0_f64, |m, p| m.max(*p));
        let x = self.grid.node(y);
        if y == 0 || y + 1 == self.grid.n_points || self.psi0[y] < SUPPORT_FLOOR * max {
            return Err(Error::Support {
                x,
                detail: format!("ψ₀ = {:e} is below the support floor", self.psi0[y]),
            });
        }
        Ok(())
    }

    /// `g_t(·|y)` at every node, as a density with respect to `ν`. The walls
    /// carry zero.
    pub fn transition_density(&self, t: f64, y: usize) -> Result<Vec<f64>> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("transition time must be positive, got {t}")));
        }
        self.check_source(y)?;
        let e0 = self.energies[0];
        let coeffs: Vec<f64> = (0..self.pairs())
            .map(|k| (-(self.energies[k] - e0) * t).exp() * self.vectors[k][y] / self.psi0[y])
            .collect();
        let mut out = vec![0.0; self.grid.n_points];
        for x in 1..self.grid.n_points - 1 {
            let mut s = 0.0;
            for (k, c) in coeffs.iter().enumerate() {
                s += c * self.vectors[k][x];
            }
            let g = s / self.psi0[x];
            out[x] = if g.is_finite() { g } else { 0.0 };
        }
        Ok(out)
    }

    /// `sup_{x,y} g_t(x|y)` over the numerical support. The truncated kernel is
    /// positive semidefinite, so the supremum sits on the diagonal.
    pub fn ultracontractivity_check(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        let e0 = self.energies[0];
        let decay: Vec<f64> = self.energies.iter().map(|e| (-(e - e0) * t).exp()).collect();
        let mut best = 0.0_f64;
        for x in self.support() {
            let p0 = self.psi0[x];
            let diag: f64 = (0..self.pairs())
                .map(|k| decay[k] * (self.vectors[k][x] / p0).powi(2))
                .sum();
            best = best.max(diag);
        }
        Ok(best)
    }

    /// ψ₀ at an arbitrary position by linear interpolation.
    pub fn psi0_at(&self, x: f64) -> Result<f64> {
        let g = &self.grid;
        if !(x >= g.x_min && x <= g.x_max) {
            return Err(Error::Support {
                x,
                detail: format!("outside the grid range [{}, {}]", g.x_min, g.x_max),
            });
        }
        let u = (x - g.x_min) / g.h();
        let i = (u.floor() as usize).min(g.n_points - 2);
        let w = u - i as f64;
        let value = (1.0 - w) * self.psi0[i] + w * self.psi0[i + 1];
        if !(value > 0.0) {
            return Err(Error::Support {
                x,
                detail: "ψ₀ vanishes (grid boundary)".into(),
            });
        }
        Ok(value)
    }

    /// Numerical surrogate for membership of a path in the support set of the
    /// unique Gibbs measure: `max_k e^{-Λ|t_k|}/ψ₀(X_{t_k})` below `threshold`.
    pub fn support_diagnostic(&self, times: &[f64], positions: &[f64], threshold: f64) -> Result<SupportReport> {
        if times.len() != positions.len() {
            return Err(Error::Precondition("times and positions differ in length".into()));
        }
        let mut value = 0.0_f64;
        for (&t, &x) in times.iter().zip(positions) {
            let p = self.psi0_at(x)?;
            value = value.max((-self.gap * t.abs()).exp() / p);
        }
        Ok(SupportReport {
            value,
            threshold,
            within: value < threshold,
            margin: threshold / value,
        })
    }

    /// SHA-256 over the grid, the energies and ψ₀, for run manifests.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.grid.x_min.to_le_bytes());
        hasher.update(self.grid.x_max.to_le_bytes());
        hasher.update((self.grid.n_points as u64).to_le_bytes());
        for e in &self.energies {
            hasher.update(e.to_le_bytes());
        }
        for p in &self.psi0 {
            hasher.update(p.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Compact record for manifests (no eigenvectors).
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": self.grid,
            "potential": self.potential,
            "e0": self.e0,
            "gap": self.gap,
            "matrix_e0": self.energies[0],
            "pairs": self.pairs(),
            "next_energy": self.next_energy,
            "degenerate": self.degenerate,
            "edge_amplitude": self.edge_amplitude,
            "digest": self.digest(),
        })
    }
}
