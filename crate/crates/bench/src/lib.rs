//! Fixtures shared by the benchmarks.

use pathgibbs::cluster::{Spacing, Surrogate, SurrogateSpec};
use pathgibbs::model::GroundStateTable;
use pathgibbs::{
    ground_state, BoundaryCondition, EnergyForm, GibbsModel, Grid1D, PairKernelSpec, PotentialSpec, SpectralData, TimeGrid,
};

pub fn double_well_spectrum(points: usize) -> SpectralData {
    let grid = Grid1D::symmetric(7.0, points).expect("grid");
    ground_state(&grid, &PotentialSpec::DoubleWell { beta: 0.25 }, 64).expect("spectrum")
}

/// Stationary double well with a bounded decaying pair kernel.
pub fn coupled_model(n: usize, lambda: f64) -> GibbsModel {
    let sd = double_well_spectrum(241);
    GibbsModel::new(
        TimeGrid::new(0.125 * n as f64, n).expect("time grid"),
        1,
        Some(PotentialSpec::DoubleWell { beta: 0.25 }),
        Some(PairKernelSpec::BoundedDecay { r: 1.0, alpha: 3.0 }),
        lambda,
        BoundaryCondition::FreeStationary {
            ground_state: GroundStateTable::from_spectral(&sd),
        },
        EnergyForm::OnsitePair,
    )
    .expect("model")
}

pub fn surrogate(n: usize, m: usize, lambda: f64) -> Surrogate {
    SurrogateSpec {
        potential: PotentialSpec::DoubleWell { beta: 0.25 },
        kernel: PairKernelSpec::BoundedDecay { r: 1.0, alpha: 2.0 },
        n_intervals: n,
        n_positions: m,
        half_width: 2.0,
        spacing: Spacing::Fixed { b: 0.5 },
    }
    .build(lambda)
    .expect("surrogate")
}
