//! The tridiagonal solver against a dense symmetric eigensolve, and the
//! harmonic semigroup against the Mehler kernel.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use pathgibbs::spectral::build_hamiltonian;
use pathgibbs::{ground_state, Grid1D, PotentialSpec};
use proptest::prelude::*;

fn dense(grid: &Grid1D, v: &PotentialSpec) -> DMatrix<f64> {
    let h = build_hamiltonian(grid, v).unwrap();
    let n = h.dim();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = h.diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = h.off[i];
            m[(i + 1, i)] = h.off[i];
        }
    }
    m
}

#[test]
fn lowest_eigenpairs_match_a_dense_solve() {
    let grid = Grid1D::symmetric(6.0, 401).unwrap();
    for v in [
        PotentialSpec::DoubleWell { beta: 0.25 },
        PotentialSpec::Confining { a: 0.5, s: 2.0 },
        PotentialSpec::Harmonic { omega: 1.3 },
    ] {
        let sd = ground_state(&grid, &v, 8).unwrap();
        let eig = dense(&grid, &v).symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        for k in 0..8 {
            let e = eig.eigenvalues[order[k]];
            assert_relative_eq!(sd.energies[k], e, max_relative = 1e-10, epsilon = 1e-12);
            // Interior nodes only; the walls carry zeros in `vectors`.
            let col = eig.eigenvectors.column(order[k]);
            let ours = &sd.vectors[k][1..grid.n_points - 1];
            let norm: f64 = ours.iter().map(|x| x * x).sum::<f64>().sqrt();
            let overlap: f64 = ours.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>() / norm;
            assert!((overlap.abs() - 1.0).abs() < 1e-9, "{v:?} pair {k}: overlap {overlap}");
        }
    }
}

/// Ornstein–Uhlenbeck transition density, ω = 1.
fn ou_density(t: f64, x: f64, y: f64) -> f64 {
    let var = 0.5 * (1.0 - (-2.0 * t).exp());
    (-(x - y * (-t).exp()).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

#[test]
fn harmonic_semigroup_is_the_mehler_kernel() {
    let grid = Grid1D::symmetric(8.0, 1601).unwrap();
    let h = grid.h();
    let sd = ground_state(&grid, &PotentialSpec::Harmonic { omega: 1.0 }, 48).unwrap();
    for t in [0.25, 1.0, 3.0] {
        let mut worst = 0.0_f64;
        for y in [-1.5, -0.4, 0.0, 0.9, 2.0] {
            let iy = grid.nearest(y).unwrap();
            let g = sd.transition_density(t, iy).unwrap();
            let exact: Vec<f64> = (0..grid.n_points).map(|i| ou_density(t, grid.node(i), grid.node(iy))).collect();
            let peak = exact.iter().fold(0.0_f64, |m, p| m.max(*p));
            for i in 0..grid.n_points {
                // g is a density against the node weights ν_i = ψ₀(x_i)² h.
                let p = g[i] * sd.nu[i] / h;
                worst = worst.max((p - exact[i]).abs() / peak);
            }
        }
        assert!(worst < 1e-4, "t = {t}: error relative to the peak {worst:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ground_state_invariants(beta in 0.05f64..2.0, a in 0.1f64..2.0, s in 1.1f64..3.0, which in 0usize..2) {
        let v = if which == 0 { PotentialSpec::DoubleWell { beta } } else { PotentialSpec::Confining { a, s } };
        let grid = Grid1D::symmetric(5.0, 201).unwrap();
        let sd = ground_state(&grid, &v, 6).unwrap();
        prop_assert!((sd.nu.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(sd.energies.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(sd.psi0[1..grid.n_points - 1].iter().all(|p| *p > 0.0));
        // Even potential: even ground state.
        for i in 0..grid.n_points {
            prop_assert!((sd.psi0[i] - sd.psi0[grid.n_points - 1 - i]).abs() < 1e-8);
        }
        let vmin = grid.nodes().iter().map(|&x| v.eval(x)).fold(f64::INFINITY, f64::min);
        prop_assert!(sd.energies[0] > vmin);
        prop_assert!(sd.gap > 0.0);
    }
}
