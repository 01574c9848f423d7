//! With a harmonic potential and the quadratic pair kernel every target is
//! Gaussian, so the sampler's node moments can be checked against a dense
//! precision-matrix solve.

use nalgebra::{DMatrix, DVector};
use pathgibbs::mcmc::stats::ScalarStat;
use pathgibbs::mcmc::{run_chain, EstimatorReport, InitStrategy, Observable, SamplerParams};
use pathgibbs::model::{ExternalPath, GroundStateTable};
use pathgibbs::{BoundaryCondition, EnergyForm, GibbsModel, PairKernelSpec, PotentialSpec, TimeGrid};

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 1.5;

fn c_lag(t: f64) -> f64 {
    0.5 * ALPHA * (1.0 + t.abs()).powf(-GAMMA)
}

struct Gaussian {
    a: DMatrix<f64>,
    h: DVector<f64>,
}

/// Quadratic form `−½xᵀAx + hᵀx` of the log-density over all nodes.
fn quadratic_form(grid: &TimeGrid, omega: f64, lambda: f64, stationary_ends: bool, ext: Option<&ExternalPath>) -> Gaussian {
    let n = grid.n;
    let b = grid.b();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    let mut h = DVector::zeros(n + 1);
    for k in 0..n {
        a[(k, k)] += 1.0 / b;
        a[(k + 1, k + 1)] += 1.0 / b;
        a[(k, k + 1)] -= 1.0 / b;
        a[(k + 1, k)] -= 1.0 / b;
    }
    for k in 0..=n {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        a[(k, k)] += w * b * omega * omega;
    }
    for i in 0..n {
        for j in i + 1..n {
            let c = 4.0 * lambda * b * b * c_lag((j - i) as f64 * b);
            a[(i, i)] += c;
            a[(j, j)] += c;
            a[(i, j)] -= c;
            a[(j, i)] -= c;
        }
    }
    if stationary_ends {
        a[(0, 0)] += 1.0;
        a[(n, n)] += 1.0;
    }
    if let Some(ext) = ext {
        let k_out = ext.outer_nodes() - 1;
        for k in 0..=k_out {
            let w = if k == 0 || k == k_out { 0.5 } else { 1.0 };
            let tl = -grid.t_half - k as f64 * b;
            let tr = grid.t_half + k as f64 * b;
            for i in 0..n {
                let s = grid.time(i);
                h[i] += lambda * 2.0 * b * b * w * 2.0 * (c_lag(tl - s) * ext.left_at(k)[0] + c_lag(tr - s) * ext.right_at(k)[0]);
            }
        }
    }
    Gaussian { a, h }
}

/// Mean and covariance of the free nodes given the pinned ones.
fn condition(g: &Gaussian, pinned: &[(usize, f64)]) -> (Vec<usize>, DVector<f64>, DMatrix<f64>) {
    let n = g.a.nrows();
    let free: Vec<usize> = (0..n).filter(|k| !pinned.iter().any(|p| p.0 == *k)).collect();
    let m = free.len();
    let mut aff = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (r, &i) in free.iter().enumerate() {
        rhs[r] = g.h[i];
        for &(p, v) in pinned {
            rhs[r] -= g.a[(i, p)] * v;
        }
        for (c, &j) in free.iter().enumerate() {
            aff[(r, c)] = g.a[(i, j)];
        }
    }
    let cov = aff.try_inverse().expect("positive definite");
    let mean = &cov * rhs;
    (free, mean, cov)
}

fn moments(report: &EstimatorReport, name: &str) -> (ScalarStat, ScalarStat) {
    let first = report.scalar(name).unwrap();
    let second = report
        .chains
        .iter()
        .map(|c| ScalarStat::from_series(&c.scalars[name].iter().map(|x| x * x).collect::<Vec<_>>()))
        .reduce(|a, b| a.merge(&b))
        .unwrap();
    (first, second)
}

fn node_obs(nodes: &[usize]) -> Vec<Observable> {
    nodes
        .iter()
        .map(|&k| Observable::Node {
            name: format!("x{k}"),
            node: k,
            axis: 0,
        })
        .collect()
}

fn check(report: &EstimatorReport, free: &[usize], mean: &DVector<f64>, cov: &DMatrix<f64>, nodes: &[usize]) {
    for &k in nodes {
        let r = free.iter().position(|&f| f == k).unwrap();
        let (m1, m2) = moments(report, &format!("x{k}"));
        let second = cov[(r, r)] + mean[r] * mean[r];
        assert!(
            (m1.mean() - mean[r]).abs() < 4.0 * m1.stderr,
            "node {k}: mean {} vs {} ± {}",
            m1.mean(),
            mean[r],
            m1.stderr
        );
        assert!(
            (m2.mean() - second).abs() < 4.0 * m2.stderr,
            "node {k}: second moment {} vs {} ± {}",
            m2.mean(),
            second,
            m2.stderr
        );
    }
}

fn params(seed: u64) -> SamplerParams {
    SamplerParams {
        n_sweeps: 30_000,
        burn_in: 1_000,
        block_len_max: 12,
        seed,
        chains: 2,
        init: InitStrategy::Constant(vec![0.0]),
        ..Default::default()
    }
}

#[test]
fn pinned_quadratic_chain_matches_gaussian_oracle() {
    let grid = TimeGrid::new(2.0, 32).unwrap();
    let lambda = 0.5;
    let model = GibbsModel::new(
        grid,
        1,
        Some(PotentialSpec::Harmonic { omega: 1.0 }),
        Some(PairKernelSpec::QuadraticLongrange { alpha: ALPHA, gamma: GAMMA }),
        lambda,
        BoundaryCondition::Pinned {
            left: vec![0.0],
            right: vec![0.8],
        },
        EnergyForm::OnsitePair,
    )
    .unwrap();
    let nodes = [4, 16, 28];
    let report = run_chain(&model, &params(3), &node_obs(&nodes)).unwrap();
    let g = quadratic_form(&grid, 1.0, lambda, false, None);
    let (free, mean, cov) = condition(&g, &[(0, 0.0), (32, 0.8)]);
    check(&report, &free, &mean, &cov, &nodes);
}

#[test]
fn stationary_ends_match_gaussian_oracle() {
    let grid = TimeGrid::new(2.0, 32).unwrap();
    let lambda = 0.3;
    // ψ₀ = e^{−x²/2} exactly, so the end weights are Gaussian too.
    let table = GroundStateTable {
        x_min: -12.0,
        x_max: 12.0,
        psi0: (0..=4800).map(|i| (-0.5 * (-12.0 + 0.005 * i as f64).powi(2)).exp()).collect(),
    };
    let model = GibbsModel::new(
        grid,
        1,
        Some(PotentialSpec::Harmonic { omega: 1.0 }),
        Some(PairKernelSpec::QuadraticLongrange { alpha: ALPHA, gamma: GAMMA }),
        lambda,
        BoundaryCondition::FreeStationary { ground_state: table },
        EnergyForm::OnsitePair,
    )
    .unwrap();
    let nodes = [0, 16, 32];
    let report = run_chain(&model, &params(4), &node_obs(&nodes)).unwrap();
    assert!(report.acceptance().endpoint.proposed > 0);
    let g = quadratic_form(&grid, 1.0, lambda, true, None);
    let (free, mean, cov) = condition(&g, &[]);
    check(&report, &free, &mean, &cov, &nodes);
}

#[test]
fn external_path_shift_matches_gaussian_oracle() {
    let grid = TimeGrid::new(2.0, 32).unwrap();
    let lambda = 0.6;
    let ext = ExternalPath::constant(1, &[1.0], &grid, 2.0, Some(1.0));
    let model = GibbsModel::new(
        grid,
        1,
        Some(PotentialSpec::Harmonic { omega: 1.0 }),
        Some(PairKernelSpec::QuadraticLongrange { alpha: ALPHA, gamma: GAMMA }),
        lambda,
        BoundaryCondition::ExternalPath(ext.clone()),
        EnergyForm::OnsitePair,
    )
    .unwrap();
    let nodes = [3, 16];
    let report = run_chain(&model, &params(5), &node_obs(&nodes)).unwrap();
    let g = quadratic_form(&grid, 1.0, lambda, false, Some(&ext));
    let (free, mean, cov) = condition(&g, &[(0, 1.0), (32, 1.0)]);
    check(&report, &free, &mean, &cov, &nodes);
}

#[test]
fn vector_paths_sample_each_axis() {
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let model = GibbsModel::new(
        grid,
        3,
        Some(PotentialSpec::Harmonic { omega: 1.0 }),
        None,
        0.0,
        BoundaryCondition::Pinned {
            left: vec![0.0; 3],
            right: vec![0.0; 3],
        },
        EnergyForm::OnsitePair,
    )
    .unwrap();
    let obs: Vec<Observable> = (0..3)
        .map(|a| Observable::Node {
            name: format!("x{a}"),
            node: 8,
            axis: a,
        })
        .collect();
    let p = SamplerParams {
        init: InitStrategy::Constant(vec![0.0; 3]),
        ..params(6)
    };
    let report = run_chain(&model, &p, &obs).unwrap();
    let g = quadratic_form(&grid, 1.0, 0.0, false, None);
    let (free, _, cov) = condition(&g, &[(0, 0.0), (16, 0.0)]);
    let var = cov[(free.iter().position(|&f| f == 8).unwrap(), free.iter().position(|&f| f == 8).unwrap())];
    for a in 0..3 {
        let (_, m2) = moments(&report, &format!("x{a}"));
        assert!((m2.mean() - var).abs() < 4.0 * m2.stderr, "axis {a}: {} vs {var}", m2.mean());
    }
}
