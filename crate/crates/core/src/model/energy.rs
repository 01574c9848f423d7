//! Energy functionals and the unnormalized log-density.

use serde::Serialize;

use super::kernel::{dist2, GridKernel, KernelClass, PreparedKernel};
use super::{BoundaryCondition, ExternalPath, GibbsModel, PathSample, TimeGrid};
use crate::error::{Error, Result};
use crate::spectral::PotentialSpec;

/// Trapezoid rule for `∫_{−T}^{T} V(X_t) dt`.
pub fn onsite_energy(path: &PathSample, v: &PotentialSpec, grid: &TimeGrid) -> Result<f64> {
    path.check(grid, path.dim())?;
    let b = grid.b();
    let mut sum = 0.0;
    for k in 0..=grid.n {
        let value = v.eval_point(path.at(k));
        if !value.is_finite() {
            return Err(Error::InvalidEnergy { node: k, value });
        }
        let w = if k == 0 || k == grid.n { 0.5 } else { 1.0 };
        sum += w * value;
    }
    Ok(b * sum)
}

/// `b² Σ_{i,j=0}^{N−1} W(x_i, x_j, t_i − t_j)` with a per-lag kernel.
pub(crate) fn pair_sum(path: &PathSample, gk: &GridKernel, grid: &TimeGrid) -> Result<f64> {
    let n = grid.n;
    let b = grid.b();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        let xi = path.at(i);
        diag += gk.value(0, 0.0);
        for j in i + 1..n {
            off += gk.value(j - i, dist2(xi, path.at(j)));
        }
    }
    let total = b * b * (diag + 2.0 * off);
    if !total.is_finite() {
        return Err(Error::SingularKernel(format!("pair energy evaluated to {total}")));
    }
    Ok(total)
}

fn check_singular(kernel: &PreparedKernel) -> Result<()> {
    if let super::PairKernelSpec::Polaron { .. } = kernel.spec() {
        if kernel.eps() == 0.0 {
            return Err(Error::SingularKernel("Coulomb kernel with zero core radius at coincident points".into()));
        }
    }
    Ok(())
}

/// Double rectangle rule over ordered pairs of `[−T, T)` nodes, diagonal
/// included.
pub fn pair_energy_internal(path: &PathSample, kernel: &PreparedKernel, grid: &TimeGrid) -> Result<f64> {
    path.check(grid, path.dim())?;
    check_singular(kernel)?;
    pair_sum(path, &kernel.on_grid(grid), grid)
}

/// Same sum with `W` evaluated on increments; refuses other kernel classes.
pub fn increment_energy(path: &PathSample, kernel: &PreparedKernel, grid: &TimeGrid) -> Result<f64> {
    if kernel.spec().class() != KernelClass::IncrementOnly {
        return Err(Error::Precondition("increment energy needs an increment-only kernel".into()));
    }
    pair_energy_internal(path, kernel, grid)
}

/// Interaction with an outside path, with the truncation remainder bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryEnergy {
    pub value: f64,
    pub tail_bound: f64,
}

/// `∫_0^∞ R·min(1, u^{−a}) du` from `l` on.
fn envelope_tail(r: f64, a: f64, l: f64) -> f64 {
    if l >= 1.0 {
        r * l.powf(1.0 - a) / (a - 1.0)
    } else {
        r * ((1.0 - l) + 1.0 / (a - 1.0))
    }
}

/// `2∫_outer∫_inner [W(Y_t, X_s, t−s) − W(0, X_s, t−s)]` over the horizon,
/// outer trapezoid times inner rectangle.
pub fn pair_energy_boundary(
    path: &PathSample,
    ext: &ExternalPath,
    kernel: &PreparedKernel,
    grid: &TimeGrid,
) -> Result<BoundaryEnergy> {
    path.check(grid, ext.dim)?;
    let class = kernel.spec().class();
    if class == KernelClass::IncrementOnly {
        return Err(Error::Precondition("increment kernels carry no boundary interaction".into()));
    }
    let b = grid.b();
    let k_out = ext.outer_nodes() - 1;
    let zero = vec![0.0; ext.dim];
    let mut sum = 0.0;
    for k in 0..=k_out {
        let w_out = if k == 0 || k == k_out { 0.5 } else { 1.0 };
        let (yl, yr) = (ext.left_at(k), ext.right_at(k));
        let tl = -grid.t_half - k as f64 * b;
        let tr = grid.t_half + k as f64 * b;
        for i in 0..grid.n {
            let x = path.at(i);
            let s = grid.time(i);
            let left = kernel.value(yl, x, tl - s) - kernel.value(&zero, x, tl - s);
            let right = kernel.value(yr, x, tr - s) - kernel.value(&zero, x, tr - s);
            sum += w_out * (left + right);
        }
    }
    let value = 2.0 * b * b * sum;
    if !value.is_finite() {
        return Err(Error::SingularKernel(format!("boundary energy evaluated to {value}")));
    }

    let x_max = path.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tail_bound = match kernel.table() {
        Some(table) if kernel.spec().envelope(1.0).is_none() => {
            let r = table.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if ext.horizon >= table.t_max {
                0.0
            } else {
                8.0 * r * 2.0 * grid.t_half * (table.t_max - ext.horizon)
            }
        }
        _ => {
            let x_bound = match (class, ext.bound) {
                (KernelClass::W1, None) => {
                    return Err(Error::UnboundedTail(
                        "growing kernel with an unbounded external path; give a bound on |Y|".into(),
                    ))
                }
                (_, Some(m)) => m.max(x_max),
                (_, None) => x_max,
            };
            let (r, a) = kernel
                .spec()
                .envelope(x_bound)
                .ok_or_else(|| Error::UnboundedTail("kernel has no decay envelope".into()))?;
            // Two sides, the factor 2, two terms of the calibrated difference.
            8.0 * 2.0 * grid.t_half * envelope_tail(r, a, ext.horizon)
        }
    };
    Ok(BoundaryEnergy { value, tail_bound })
}

/// Components of the log-density.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LogDensityTerms {
    /// `−Σ|x_{k+1} − x_k|²/(2b)`
    pub gaussian: f64,
    /// `∫V`
    pub onsite: f64,
    /// Pair or increment energy (before the coupling).
    pub pair: f64,
    /// Boundary interaction (before the coupling).
    pub boundary: f64,
    /// `ln ψ₀(x_0) + ln ψ₀(x_N)` for stationary ends.
    pub endpoint: f64,
    pub lambda: f64,
}

impl LogDensityTerms {
    pub fn total(&self) -> f64 {
        self.gaussian - self.onsite - self.lambda * self.pair - self.lambda * self.boundary + self.endpoint
    }
}

pub(crate) fn gaussian_term(path: &PathSample, grid: &TimeGrid) -> f64 {
    let b = grid.b();
    let mut s = 0.0;
    for k in 0..grid.n {
        s += dist2(path.at(k), path.at(k + 1));
    }
    -s / (2.0 * b)
}

/// Unnormalized log-density of a path under `model`, split into its terms.
pub fn gibbs_log_density(path: &PathSample, model: &GibbsModel) -> Result<LogDensityTerms> {
    let grid = &model.grid;
    path.check(grid, model.dim)?;
    for k in model.boundary.pinned_nodes(grid) {
        let pin = model.boundary.pin_value(grid, k).expect("pinned node has a value");
        if path.at(k) != pin {
            return Err(Error::Precondition(format!(
                "node {k} is pinned to {pin:?} but the path has {:?}",
                path.at(k)
            )));
        }
    }
    let mut terms = LogDensityTerms {
        gaussian: gaussian_term(path, grid),
        lambda: model.lambda,
        ..Default::default()
    };
    if let Some(v) = &model.potential {
        terms.onsite = onsite_energy(path, v, grid)?;
    }
    if let (Some(kernel), Some(gk)) = (model.prepared_kernel(), model.grid_kernel()) {
        check_singular(kernel)?;
        terms.pair = pair_sum(path, gk, grid)?;
        if let BoundaryCondition::ExternalPath(ext) = &model.boundary {
            terms.boundary = pair_energy_boundary(path, ext, kernel, grid)?.value;
        }
    }
    if let BoundaryCondition::FreeStationary { ground_state } = &model.boundary {
        for k in [0, grid.n] {
            let l = ground_state.log_psi0_point(path.at(k));
            if !l.is_finite() {
                return Err(Error::Support {
                    x: path.at(k)[0],
                    detail: format!("end node {k} outside the ground-state support"),
                });
            }
            terms.endpoint += l;
        }
    }
    Ok(terms)
}

/// Cuts `[−τ, τ)` out of the window and glues the halves: new times `t ≥ 0`
/// carry `X_{t+τ}` and new times `t < 0` carry `X_{t−τ}`.
pub fn splice(path: &PathSample, tau: f64, grid: &TimeGrid) -> Result<(PathSample, TimeGrid)> {
    path.check(grid, path.dim())?;
    let b = grid.b();
    let m_f = tau / b;
    let m = m_f.round();
    if !(tau >= 0.0) || (m_f - m).abs() > 1e-9 * m_f.max(1.0) {
        return Err(Error::Alignment { tau, b });
    }
    let m = m as usize;
    if m == 0 {
        return Ok((path.clone(), *grid));
    }
    if 2 * m >= grid.n {
        return Err(Error::Precondition(format!("splice 2τ = {} must be below 2T = {}", 2.0 * tau, 2.0 * grid.t_half)));
    }
    let cut = grid.origin() - m..grid.origin() + m;
    let kept: Vec<f64> = (0..=grid.n)
        .filter(|k| !cut.contains(k))
        .flat_map(|k| path.at(k).to_vec())
        .collect();
    let new_grid = TimeGrid::new(grid.t_half - m as f64 * b, grid.n - 2 * m)?;
    Ok((PathSample::new(path.dim(), kept)?, new_grid))
}

/// `−W(X) + W(θ_τ X)` for the internal pair energy.
pub fn splice_energy_change(path: &PathSample, tau: f64, kernel: &PreparedKernel, grid: &TimeGrid) -> Result<f64> {
    let (cut, new_grid) = splice(path, tau, grid)?;
    // The shortened grid keeps the spacing, so lags map to the same times.
    let before = pair_energy_internal(path, kernel, grid)?;
    let after = pair_energy_internal(&cut, kernel, &new_grid)?;
    Ok(after - before)
}

#[cfg(test)]
mod tests {
    use super::super::{EnergyForm, GroundStateTable, PairKernelSpec};
    use super::*;

    fn line(grid: &TimeGrid) -> PathSample {
        PathSample::scalar(grid.times()).unwrap()
    }

    #[test]
    fn onsite_trivial_cases() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let p = line(&g);
        let zero = PotentialSpec::Table {
            x_min: -5.0,
            x_max: 5.0,
            values: vec![0.0, 0.0],
        };
        assert_eq!(onsite_energy(&p, &zero, &g).unwrap(), 0.0);
        let c = PotentialSpec::Table {
            x_min: -5.0,
            x_max: 5.0,
            values: vec![3.0, 3.0],
        };
        assert!((onsite_energy(&p, &c, &g).unwrap() - 6.0).abs() < 1e-12);
        let h = PotentialSpec::Harmonic { omega: 1.0 };
        assert!((onsite_energy(&p, &h, &g).unwrap() - 1.0 / 3.0).abs() < g.b() * g.b());
    }

    #[test]
    fn onsite_reports_non_finite_nodes() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = PathSample::scalar(vec![0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        let err = onsite_energy(&p, &PotentialSpec::Box { width: 2.0 }, &g).unwrap_err();
        assert!(matches!(err, Error::InvalidEnergy { node: 2, .. }));
    }

    #[test]
    fn constant_kernel_pair_energy() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let table = super::super::KernelTable::new(2, 2, 1.0, 10.0, vec![2.0; 4]).unwrap();
        let k = PairKernelSpec::Table {
            table,
            class: KernelClass::W2,
        }
        .prepare(&g)
        .unwrap();
        let e = pair_energy_internal(&line(&g), &k, &g).unwrap();
        assert!((e - 2.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_core_polaron_is_singular() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let k = PairKernelSpec::Polaron {
            kappa: 1.0,
            omega0: 1.0,
            eps: Some(0.0),
            sign: 1.0,
        }
        .prepare(&g)
        .unwrap();
        let p = PathSample::scalar(vec![0.0; 5]).unwrap();
        assert!(matches!(increment_energy(&p, &k, &g), Err(Error::SingularKernel(_))));
    }

    #[test]
    fn increment_energy_of_constant_path() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let k = PairKernelSpec::Polaron {
            kappa: 0.3,
            omega0: 2.0,
            eps: Some(0.5),
            sign: 1.0,
        }
        .prepare(&g)
        .unwrap();
        let p = PathSample::scalar(vec![0.7; 9]).unwrap();
        let b = g.b();
        let mut expect = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                expect += k.value_r2(0.0, (i as f64 - j as f64) * b);
            }
        }
        assert!((increment_energy(&p, &k, &g).unwrap() - b * b * expect).abs() < 1e-12);
        let bd = PairKernelSpec::BoundedDecay { r: 1.0, alpha: 3.0 }.prepare(&g).unwrap();
        assert!(increment_energy(&p, &bd, &g).is_err());
    }

    #[test]
    fn boundary_calibration_and_refusals() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let p = PathSample::scalar((0..9).map(|k| (k as f64).sin()).collect()).unwrap();
        let bd = PairKernelSpec::BoundedDecay { r: 1.0, alpha: 3.0 }.prepare(&g).unwrap();
        let zero = ExternalPath::constant(1, &[0.0], &g, 2.0, None);
        let e = pair_energy_boundary(&p, &zero, &bd, &g).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.tail_bound > 0.0 && e.tail_bound.is_finite());

        let ql = PairKernelSpec::QuadraticLongrange { alpha: 1.0, gamma: 2.0 }.prepare(&g).unwrap();
        let one = ExternalPath::constant(1, &[1.0], &g, 2.0, None);
        assert!(matches!(pair_energy_boundary(&p, &one, &ql, &g), Err(Error::UnboundedTail(_))));
        let bounded = ExternalPath::constant(1, &[1.0], &g, 2.0, Some(1.0));
        assert!(pair_energy_boundary(&p, &bounded, &ql, &g).is_ok());
    }

    #[test]
    fn splice_bookkeeping() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let p = PathSample::scalar((0..9).map(|k| k as f64).collect()).unwrap();
        let (same, g0) = splice(&p, 0.0, &g).unwrap();
        assert_eq!(same, p);
        assert_eq!(g0, g);
        let (cut, g1) = splice(&p, g.b(), &g).unwrap();
        assert_eq!(cut.len(), 7);
        assert_eq!(g1.n, 6);
        assert_eq!(cut.as_slice(), &[0.0, 1.0, 2.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(matches!(splice(&p, 0.3, &g), Err(Error::Alignment { .. })));
        assert!(splice(&p, 1.0, &g).is_err());
    }

    #[test]
    fn log_density_decomposes() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let sd = crate::spectral::ground_state(
            &crate::spectral::Grid1D::symmetric(8.0, 401).unwrap(),
            &PotentialSpec::Harmonic { omega: 1.0 },
            4,
        )
        .unwrap();
        let model = GibbsModel::new(
            g,
            1,
            Some(PotentialSpec::Harmonic { omega: 1.0 }),
            Some(PairKernelSpec::BoundedDecay { r: 0.5, alpha: 3.0 }),
            0.3,
            BoundaryCondition::FreeStationary {
                ground_state: GroundStateTable::from_spectral(&sd),
            },
            EnergyForm::OnsitePair,
        )
        .unwrap();
        let p = PathSample::scalar((0..9).map(|k| 0.3 * (k as f64).cos()).collect()).unwrap();
        let terms = gibbs_log_density(&p, &model).unwrap();
        let kernel = model.prepared_kernel().unwrap();
        let expect = gaussian_term(&p, &g) - onsite_energy(&p, model.potential.as_ref().unwrap(), &g).unwrap()
            - 0.3 * pair_energy_internal(&p, kernel, &g).unwrap()
            + sd.psi0_at(p.at(0)[0]).unwrap().ln()
            + sd.psi0_at(p.at(8)[0]).unwrap().ln();
        assert!((terms.total() - expect).abs() < 1e-12);
    }
}
