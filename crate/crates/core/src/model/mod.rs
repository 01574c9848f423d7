//! Discretized finite-window Gibbs measures on path space.
//!
//! A [`GibbsModel`] fixes the time grid, boundary condition, external
//! potential, pair kernel and coupling. Its unnormalized log-density is
//! assembled in [`energy`].

pub mod conditions;
pub mod energy;
pub mod kernel;
pub mod quad;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{PotentialSpec, SpectralData};

pub use conditions::{check_kernel_conditions, ConditionReport, ConditionRow, Verdict};
pub use energy::{
    gibbs_log_density, increment_energy, onsite_energy, pair_energy_boundary, pair_energy_internal, splice,
    splice_energy_change, BoundaryEnergy, LogDensityTerms,
};
pub use kernel::{
    Dispersion, GridKernel, KernelClass, KernelTable, NelsonSpec, PairKernelSpec, PreparedKernel, RhoProfile,
};

/// `N` intervals of length `b = 2T/N` covering `[−T, T]`; `N` is even so the
/// origin is node `N/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Half-window `T`.
    pub t_half: f64,
    /// Interval count `N`.
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t_half: f64, n: usize) -> Result<Self> {
        if !(t_half > 0.0 && t_half.is_finite()) {
            return Err(Error::InvalidGrid(format!("half-window must be positive, got {t_half}")));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("interval count must be even and ≥ 2, got {n}")));
        }
        Ok(Self { t_half, n })
    }

    /// Grid with interval length `b` (rounded to the nearest even count).
    pub fn with_spacing(t_half: f64, b: f64) -> Result<Self> {
        let half = (t_half / b).round() as usize;
        Self::new(t_half, 2 * half.max(1))
    }

    pub fn b(&self) -> f64 {
        2.0 * self.t_half / self.n as f64
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    pub fn origin(&self) -> usize {
        self.n / 2
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n {
            self.t_half
        } else {
            -self.t_half + k as f64 * self.b()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.time(k)).collect()
    }
}

/// Positions at the time-grid nodes, `dim` coordinates per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    dim: usize,
    positions: Vec<f64>,
}

impl PathSample {
    pub fn new(dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(Error::Precondition(format!(
                "{} coordinates do not split into nodes of dimension {dim}",
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate at index {i}")));
        }
        Ok(Self { dim, positions })
    }

    pub fn constant(dim: usize, nodes: usize, x: &[f64]) -> Self {
        assert_eq!(x.len(), dim);
        Self {
            dim,
            positions: x.iter().copied().cycle().take(nodes * dim).collect(),
        }
    }

    /// One-dimensional path from scalar values.
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.positions
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    /// Coordinate `a` at every node.
    pub fn axis(&self, a: usize) -> Vec<f64> {
        self.positions.iter().skip(a).step_by(self.dim).copied().collect()
    }

    pub fn check(&self, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.len() != grid.nodes() || self.dim != dim {
            return Err(Error::PathMismatch {
                expected: grid.nodes(),
                expected_dim: dim,
                got: self.len(),
                got_dim: self.dim,
            });
        }
        Ok(())
    }
}

/// ψ₀ on a position grid, for free stationary endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateTable {
    pub x_min: f64,
    pub x_max: f64,
    pub psi0: Vec<f64>,
}

impl GroundStateTable {
    pub fn from_spectral(sd: &SpectralData) -> Self {
        Self {
            x_min: sd.grid.x_min,
            x_max: sd.grid.x_max,
            psi0: sd.psi0.clone(),
        }
    }

    /// `ln ψ₀(x)` by linear interpolation of ψ₀; `−∞` outside the range.
    pub fn log_psi0(&self, x: f64) -> f64 {
        if !(x >= self.x_min && x <= self.x_max) {
            return f64::NEG_INFINITY;
        }
        let n = self.psi0.len();
        let h = (self.x_max - self.x_min) / (n - 1) as f64;
        let u = (x - self.x_min) / h;
        let i = (u.floor() as usize).min(n - 2);
        let w = u - i as f64;
        ((1.0 - w) * self.psi0[i] + w * self.psi0[i + 1]).ln()
    }

    /// Product ground state across axes.
    pub fn log_psi0_point(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xa| self.log_psi0(xa)).sum()
    }
}

/// Boundary path outside the window, sampled at the grid spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalPath {
    pub dim: usize,
    /// Positions at `−T − k·b`, `k = 0..=K`.
    pub left: Vec<f64>,
    /// Positions at `T + k·b`, `k = 0..=K`.
    pub right: Vec<f64>,
    /// `K·b`.
    pub horizon: f64,
    /// Bound on `|Y|` beyond the horizon, if one is assumed.
    pub bound: Option<f64>,
}

impl ExternalPath {
    pub fn constant(dim: usize, y: &[f64], grid: &TimeGrid, horizon: f64, bound: Option<f64>) -> Self {
        let k = (horizon / grid.b()).round() as usize;
        let side: Vec<f64> = y.iter().copied().cycle().take((k + 1) * dim).collect();
        Self {
            dim,
            left: side.clone(),
            right: side,
            horizon: k as f64 * grid.b(),
            bound,
        }
    }

    pub fn outer_nodes(&self) -> usize {
        self.left.len() / self.dim
    }

    pub fn left_at(&self, k: usize) -> &[f64] {
        &self.left[k * self.dim..(k + 1) * self.dim]
    }

    pub fn right_at(&self, k: usize) -> &[f64] {
        &self.right[k * self.dim..(k + 1) * self.dim]
    }

    fn validate(&self, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.dim != dim || self.left.len() != self.right.len() || self.left.is_empty() || self.left.len() % dim != 0 {
            return Err(Error::Precondition("external path shape does not match the model".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Precondition(format!("horizon must be positive, got {}", self.horizon)));
        }
        let k = self.outer_nodes() - 1;
        if ((k as f64) * grid.b() - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Alignment {
                tau: self.horizon,
                b: grid.b(),
            });
        }
        Ok(())
    }
}

/// How the path is tied down at the edges of the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// `X_{−T} = left`, `X_T = right`.
    Pinned { left: Vec<f64>, right: Vec<f64> },
    /// `X_0 = x0`, free ends; increment models only.
    PinnedOrigin { x0: Vec<f64> },
    /// Free ends weighted by `ψ₀(X_{−T}) ψ₀(X_T)`.
    FreeStationary { ground_state: GroundStateTable },
    /// Ends pinned to an outside path which also interacts with the window.
    ExternalPath(ExternalPath),
}

impl BoundaryCondition {
    /// Nodes whose positions are fixed.
    pub fn pinned_nodes(&self, grid: &TimeGrid) -> Vec<usize> {
        match self {
            BoundaryCondition::Pinned { .. } | BoundaryCondition::ExternalPath(_) => vec![0, grid.n],
            BoundaryCondition::PinnedOrigin { .. } => vec![grid.origin()],
            BoundaryCondition::FreeStationary { .. } => vec![],
        }
    }

    /// Fixed value at a pinned node.
    pub fn pin_value(&self, grid: &TimeGrid, k: usize) -> Option<&[f64]> {
        match self {
            BoundaryCondition::Pinned { left, right } => match k {
                0 => Some(left),
                _ if k == grid.n => Some(right),
                _ => None,
            },
            BoundaryCondition::PinnedOrigin { x0 } => (k == grid.origin()).then_some(x0.as_slice()),
            BoundaryCondition::ExternalPath(ext) => match k {
                0 => Some(ext.left_at(0)),
                _ if k == grid.n => Some(ext.right_at(0)),
                _ => None,
            },
            BoundaryCondition::FreeStationary { .. } => None,
        }
    }
}

/// Which functional the log-density is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyForm {
    /// `∫V + λ∫∫W(X_t, X_s, t−s)`
    OnsitePair,
    /// `λ∫∫W(X_t − X_s, t−s)` with the path pinned at the origin.
    Increment,
    /// Field-induced form: `λ = e²` and the kernel carries `W = −(sign/2)C`,
    /// so the weight is `exp(+sign·(e²/2)∫∫C − ∫V)`.
    Nelson,
}

/// One discretized finite-window Gibbs measure.
#[derive(Debug, Clone, Serialize)]
pub struct GibbsModel {
    pub grid: TimeGrid,
    pub dim: usize,
    pub potential: Option<PotentialSpec>,
    pub kernel: Option<PairKernelSpec>,
    pub lambda: f64,
    pub boundary: BoundaryCondition,
    pub energy_form: EnergyForm,
    #[serde(skip)]
    prepared: Option<Arc<PreparedKernel>>,
    #[serde(skip)]
    grid_kernel: Option<Arc<GridKernel>>,
}

impl GibbsModel {
    pub fn new(
        grid: TimeGrid,
        dim: usize,
        potential: Option<PotentialSpec>,
        kernel: Option<PairKernelSpec>,
        lambda: f64,
        boundary: BoundaryCondition,
        energy_form: EnergyForm,
    ) -> Result<Self> {
        Self::with_kernel_cache(grid, dim, potential, kernel, lambda, boundary, energy_form, None)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_kernel_cache(
        grid: TimeGrid,
        dim: usize,
        potential: Option<PotentialSpec>,
        kernel: Option<PairKernelSpec>,
        lambda: f64,
        boundary: BoundaryCondition,
        energy_form: EnergyForm,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::UnsupportedDimension(0));
        }
        if !lambda.is_finite() {
            return Err(Error::Precondition(format!("coupling must be finite, got {lambda}")));
        }
        if let Some(v) = &potential {
            v.validate()?;
        }
        let class = kernel.as_ref().map(PairKernelSpec::class);
        match energy_form {
            EnergyForm::Increment => {
                if class.is_some_and(|c| c != KernelClass::IncrementOnly) {
                    return Err(Error::Precondition("increment form needs an increment-only kernel".into()));
                }
                if !matches!(boundary, BoundaryCondition::PinnedOrigin { .. }) {
                    return Err(Error::Precondition("increment form needs the pinned-origin boundary".into()));
                }
            }
            EnergyForm::Nelson => {
                if class.is_some_and(|c| c != KernelClass::IncrementOnly) {
                    return Err(Error::Precondition("nelson form needs an increment-only kernel".into()));
                }
            }
            EnergyForm::OnsitePair => {
                if class == Some(KernelClass::IncrementOnly) {
                    return Err(Error::Precondition("increment-only kernels need the increment or nelson form".into()));
                }
                if matches!(boundary, BoundaryCondition::PinnedOrigin { .. }) {
                    return Err(Error::Precondition("pinned-origin boundary is for increment models".into()));
                }
            }
        }
        match &boundary {
            BoundaryCondition::Pinned { left, right } if left.len() != dim || right.len() != dim => {
                return Err(Error::Precondition("pinning values have the wrong dimension".into()));
            }
            BoundaryCondition::PinnedOrigin { x0 } if x0.len() != dim => {
                return Err(Error::Precondition("origin pin has the wrong dimension".into()));
            }
            BoundaryCondition::ExternalPath(ext) => ext.validate(&grid, dim)?,
            _ => {}
        }
        let prepared = match &kernel {
            Some(k) => Some(Arc::new(k.prepare_with_cache(&grid, cache_dir)?)),
            None => None,
        };
        let grid_kernel = prepared.as_ref().map(|p| Arc::new(p.on_grid(&grid)));
        Ok(Self {
            grid,
            dim,
            potential,
            kernel,
            lambda,
            boundary,
            energy_form,
            prepared,
            grid_kernel,
        })
    }

    /// Same model with another coupling (kernel tables are shared).
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    /// Same model with another boundary condition.
    pub fn with_boundary(&self, boundary: BoundaryCondition) -> Result<Self> {
        if let BoundaryCondition::ExternalPath(ext) = &boundary {
            ext.validate(&self.grid, self.dim)?;
        }
        Ok(Self {
            boundary,
            ..self.clone()
        })
    }

    pub fn prepared_kernel(&self) -> Option<&PreparedKernel> {
        self.prepared.as_deref()
    }

    pub fn grid_kernel(&self) -> Option<&GridKernel> {
        self.grid_kernel.as_deref()
    }

    /// Whether the pair term contributes.
    pub fn has_pair(&self) -> bool {
        self.lambda != 0.0 && self.grid_kernel.is_some()
    }

    pub fn free_nodes(&self) -> Vec<usize> {
        let pinned = self.boundary.pinned_nodes(&self.grid);
        (0..=self.grid.n).filter(|k| !pinned.contains(k)).collect()
    }

    /// Digest of the kernel table in use, if any.
    pub fn kernel_digest(&self) -> Option<String> {
        self.prepared.as_ref().and_then(|p| p.table()).map(KernelTable::digest)
    }

    /// A path satisfying the pinning constraints, otherwise at `x`.
    pub fn initial_path(&self, x: &[f64]) -> PathSample {
        let mut path = PathSample::constant(self.dim, self.grid.nodes(), x);
        for k in self.boundary.pinned_nodes(&self.grid) {
            if let Some(v) = self.boundary.pin_value(&self.grid, k) {
                path.at_mut(k).copy_from_slice(v);
            }
        }
        path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grid_basics() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        assert_eq!(g.b(), 0.25);
        assert_eq!(g.time(0), -1.0);
        assert_eq!(g.time(8), 1.0);
        assert_eq!(g.time(g.origin()), 0.0);
        assert!(TimeGrid::new(1.0, 7).is_err());
        assert!(TimeGrid::new(0.0, 8).is_err());
    }

    #[test]
    fn path_shape_checks() {
        assert!(PathSample::new(2, vec![0.0; 5]).is_err());
        assert!(PathSample::new(1, vec![0.0, f64::NAN]).is_err());
        let p = PathSample::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.at(1), &[3.0, 4.0]);
        assert_eq!(p.axis(1), vec![2.0, 4.0]);
        let g = TimeGrid::new(1.0, 2).unwrap();
        assert!(matches!(p.check(&g, 2), Err(Error::PathMismatch { .. })));
    }

    #[test]
    fn model_invariants() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let polaron = PairKernelSpec::Polaron {
            kappa: 1.0,
            omega0: 1.0,
            eps: None,
            sign: 1.0,
        };
        let pinned = BoundaryCondition::Pinned {
            left: vec![0.0],
            right: vec![0.0],
        };
        assert!(GibbsModel::new(g, 1, None, Some(polaron.clone()), 1.0, pinned.clone(), EnergyForm::Increment).is_err());
        assert!(GibbsModel::new(
            g,
            1,
            None,
            Some(polaron.clone()),
            1.0,
            BoundaryCondition::PinnedOrigin { x0: vec![0.0] },
            EnergyForm::Increment
        )
        .is_ok());
        assert!(GibbsModel::new(g, 1, None, Some(polaron), 1.0, pinned.clone(), EnergyForm::OnsitePair).is_err());
        assert!(GibbsModel::new(
            g,
            1,
            None,
            Some(PairKernelSpec::BoundedDecay { r: 1.0, alpha: 3.0 }),
            1.0,
            BoundaryCondition::PinnedOrigin { x0: vec![0.0] },
            EnergyForm::OnsitePair
        )
        .is_err());
        let m = GibbsModel::new(g, 1, None, None, 0.0, pinned, EnergyForm::OnsitePair).unwrap();
        assert_eq!(m.free_nodes(), (1..8).collect::<Vec<_>>());
    }

    #[test]
    fn external_path_alignment() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let mut ext = ExternalPath::constant(1, &[1.0], &g, 2.0, Some(1.0));
        assert_eq!(ext.outer_nodes(), 9);
        ext.horizon = 2.1;
        assert!(matches!(ext.validate(&g, 1), Err(Error::Alignment { .. })));
    }
}
