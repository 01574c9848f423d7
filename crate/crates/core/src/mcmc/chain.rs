//! Metropolis–Hastings path sampler with reference-bridge block proposals.
//!
//! Interior blocks are redrawn from the Brownian bridge between their
//! neighbours and free ends from a Brownian continuation of their anchor, so
//! the Gaussian part of the target cancels and the acceptance ratio only
//! involves the potential, pair, boundary and end-weight terms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::stats::{gelman_rubin, Histogram, ScalarStat, SeriesStat};
use crate::error::{Error, Result};
use crate::model::energy::{gibbs_log_density, pair_sum};
use crate::model::kernel::dist2;
use crate::model::{BoundaryCondition, GibbsModel, PathSample};

/// Name of the generator used by every sampler; recorded in manifests.
pub const RNG_NAME: &str = "ChaCha8Rng";
/// How per-chain generators are derived from the master seed.
pub const STREAM_RULE: &str = "ChaCha8Rng::seed_from_u64(master_seed) then set_stream(chain_index)";

/// Generator for chain `index` under `master_seed`.
pub fn chain_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Probabilities of the two move types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveMix {
    pub bridge: f64,
    pub endpoint: f64,
}

impl Default for MoveMix {
    fn default() -> Self {
        Self {
            bridge: 0.8,
            endpoint: 0.2,
        }
    }
}

/// Starting configuration of each chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Constant path (pins applied).
    Constant(Vec<f64>),
    /// Chain `i` starts at `+a` for even `i`, `−a` for odd `i`.
    Alternating(f64),
    Path(PathSample),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub n_sweeps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub block_len_max: usize,
    pub move_mix: MoveMix,
    pub seed: u64,
    pub chains: usize,
    pub workers: usize,
    /// Sweeps between full recomputations of the cached log-density.
    pub revalidate_every: u64,
    pub init: InitStrategy,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            n_sweeps: 10_000,
            burn_in: 1_000,
            thinning: 1,
            block_len_max: 16,
            move_mix: MoveMix::default(),
            seed: 1,
            chains: 1,
            workers: 1,
            revalidate_every: 1_000,
            init: InitStrategy::Constant(vec![0.0]),
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        let mix = self.move_mix;
        if !(mix.bridge >= 0.0 && mix.endpoint >= 0.0 && ((mix.bridge + mix.endpoint) - 1.0).abs() < 1e-12) {
            return Err(Error::Precondition(format!("move probabilities must sum to 1, got {mix:?}")));
        }
        if self.burn_in >= self.n_sweeps {
            return Err(Error::Precondition(format!(
                "burn-in {} must be below the sweep count {}",
                self.burn_in, self.n_sweeps
            )));
        }
        if self.thinning == 0 || self.block_len_max == 0 || self.chains == 0 || self.workers == 0 {
            return Err(Error::Precondition("thinning, block length, chains and workers must be positive".into()));
        }
        Ok(())
    }
}

/// Accepted and proposed counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub accepted: u64,
    pub proposed: u64,
}

impl Tally {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn add(&mut self, other: &Tally) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AcceptCounts {
    pub bridge: Tally,
    pub endpoint: Tally,
    /// Proposals discarded for non-finite coordinates or energies.
    pub non_finite: u64,
}

/// Full state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub path: PathSample,
    pub cached_log_density: f64,
    pub rng: ChaCha8Rng,
    pub step_count: u64,
    pub accept: AcceptCounts,
}

impl ChainState {
    pub fn new(model: &GibbsModel, path: PathSample, rng: ChaCha8Rng) -> Result<Self> {
        let cached_log_density = gibbs_log_density(&path, model)?.total();
        if !cached_log_density.is_finite() {
            return Err(Error::Precondition(format!("initial path has log-density {cached_log_density}")));
        }
        Ok(Self {
            path,
            cached_log_density,
            rng,
            step_count: 0,
            accept: AcceptCounts::default(),
        })
    }

    /// Recomputes the log-density and fails when the cache drifted.
    pub fn revalidate(&mut self, model: &GibbsModel) -> Result<()> {
        let fresh = gibbs_log_density(&self.path, model)?.total();
        let tol = 1e-9 * fresh.abs().max(1.0);
        if (fresh - self.cached_log_density).abs() > tol {
            return Err(Error::Revalidation {
                step: self.step_count,
                cached: self.cached_log_density,
                fresh,
            });
        }
        self.cached_log_density = fresh;
        Ok(())
    }
}

/// Which nodes a move may touch.
struct Layout {
    n: usize,
    pinned: Vec<bool>,
    free_left: bool,
    free_right: bool,
    /// First pinned node (or `n + 1`).
    first_pin: usize,
    /// Last pinned node, if any.
    last_pin: Option<usize>,
}

impl Layout {
    fn new(model: &GibbsModel) -> Self {
        let n = model.grid.n;
        let mut pinned = vec![false; n + 1];
        for k in model.boundary.pinned_nodes(&model.grid) {
            pinned[k] = true;
        }
        let first_pin = pinned.iter().position(|&p| p).unwrap_or(n + 1);
        let last_pin = pinned.iter().rposition(|&p| p);
        Self {
            n,
            free_left: !pinned[0],
            free_right: !pinned[n],
            pinned,
            first_pin,
            last_pin,
        }
    }

    fn free_count(&self) -> usize {
        self.pinned.iter().filter(|&&p| !p).count()
    }
}

fn log_uniform_len<R: Rng>(rng: &mut R, max: usize) -> usize {
    let u: f64 = rng.random();
    ((u * ((max + 1) as f64).ln()).exp().floor() as usize).clamp(1, max)
}

/// Change of the non-Gaussian log-density terms and of the Gaussian term
/// when nodes `lo..=hi` take the coordinates `new`.
pub(crate) fn local_delta(model: &GibbsModel, path: &PathSample, lo: usize, hi: usize, new: &[f64]) -> (f64, f64) {
    let grid = &model.grid;
    let n = grid.n;
    let b = grid.b();
    let d = model.dim;
    let new_at = |k: usize| &new[(k - lo) * d..(k - lo + 1) * d];
    let mut rest = 0.0;

    if let Some(v) = &model.potential {
        let mut dv = 0.0;
        for k in lo..=hi {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let vn = v.eval_point(new_at(k));
            if !vn.is_finite() {
                return (f64::NEG_INFINITY, 0.0);
            }
            dv += w * (vn - v.eval_point(path.at(k)));
        }
        rest -= b * dv;
    }

    if let BoundaryCondition::FreeStationary { ground_state } = &model.boundary {
        for k in [0, n] {
            if k >= lo && k <= hi {
                let ln_new = ground_state.log_psi0_point(new_at(k));
                if !ln_new.is_finite() {
                    return (f64::NEG_INFINITY, 0.0);
                }
                rest += ln_new - ground_state.log_psi0_point(path.at(k));
            }
        }
    }

    if model.has_pair() {
        let gk = model.grid_kernel().expect("pair kernel");
        let top = hi.min(n - 1);
        let mut dw = 0.0;
        if lo <= top {
            for i in lo..=top {
                let (xn, xo) = (new_at(i), path.at(i));
                for j in 0..n {
                    if j >= lo && j <= top {
                        if j > i {
                            let lag = j - i;
                            dw += 2.0 * (gk.value(lag, dist2(xn, new_at(j))) - gk.value(lag, dist2(xo, path.at(j))));
                        }
                    } else {
                        let xj = path.at(j);
                        let lag = i.abs_diff(j);
                        dw += 2.0 * (gk.value(lag, dist2(xn, xj)) - gk.value(lag, dist2(xo, xj)));
                    }
                }
            }
        }
        let mut db = 0.0;
        if let (BoundaryCondition::ExternalPath(ext), Some(kernel)) = (&model.boundary, model.prepared_kernel()) {
            let k_out = ext.outer_nodes() - 1;
            let zero = vec![0.0; d];
            if lo <= top {
                for k in 0..=k_out {
                    let w_out = if k == 0 || k == k_out { 0.5 } else { 1.0 };
                    let tl = -grid.t_half - k as f64 * b;
                    let tr = grid.t_half + k as f64 * b;
                    for i in lo..=top {
                        let s = grid.time(i);
                        let f = |x: &[f64]| {
                            kernel.value(ext.left_at(k), x, tl - s) - kernel.value(&zero, x, tl - s)
                                + kernel.value(ext.right_at(k), x, tr - s)
                                - kernel.value(&zero, x, tr - s)
                        };
                        db += w_out * (f(new_at(i)) - f(path.at(i)));
                    }
                }
            }
            db *= 2.0;
        }
        rest -= model.lambda * b * b * (dw + db);
    }

    let mut dg = 0.0;
    let from = lo.saturating_sub(1);
    let to = (hi + 1).min(n);
    for k in from..to {
        let a = if k >= lo && k <= hi { new_at(k) } else { path.at(k) };
        let c = if k + 1 >= lo && k < hi { new_at(k + 1) } else { path.at(k + 1) };
        let (ao, co) = (path.at(k), path.at(k + 1));
        dg -= (dist2(a, c) - dist2(ao, co)) / (2.0 * b);
    }
    (rest, dg)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum MoveKind {
    Bridge,
    Endpoint,
}

fn try_move(model: &GibbsModel, layout: &Layout, state: &mut ChainState, kind: MoveKind, lo: usize, hi: usize, new: &[f64]) -> bool {
    let tally = match kind {
        MoveKind::Bridge => &mut state.accept.bridge,
        MoveKind::Endpoint => &mut state.accept.endpoint,
    };
    tally.proposed += 1;
    if new.iter().any(|v| !v.is_finite()) {
        state.accept.non_finite += 1;
        return false;
    }
    let (rest, gauss) = local_delta(model, &state.path, lo, hi, new);
    if rest.is_nan() || rest == f64::NEG_INFINITY {
        state.accept.non_finite += u64::from(rest.is_nan());
        return false;
    }
    debug_assert!((lo..=hi).all(|k| !layout.pinned[k]));
    let accept = rest >= 0.0 || state.rng.random::<f64>() < rest.exp();
    if accept {
        let d = model.dim;
        state.path.as_mut_slice()[lo * d..(hi + 1) * d].copy_from_slice(new);
        state.cached_log_density += rest + gauss;
        tally.accepted += 1;
    }
    accept
}

/// Redraws interior nodes `i..i+len` from the Brownian bridge between nodes
/// `i−1` and `i+len` and applies the Metropolis test.
pub fn bridge_block_move(model: &GibbsModel, state: &mut ChainState, i: usize, len: usize) -> Result<bool> {
    let layout = Layout::new(model);
    let hi = i + len - 1;
    if i == 0 || len == 0 || i + len > layout.n || (i..=hi).any(|k| layout.pinned[k]) {
        return Err(Error::Precondition(format!("block {i}..{} is not a free interior block", i + len)));
    }
    let new = propose_bridge(model, state, i, hi);
    Ok(try_move(model, &layout, state, MoveKind::Bridge, i, hi, &new))
}

fn propose_bridge(model: &GibbsModel, state: &mut ChainState, lo: usize, hi: usize) -> Vec<f64> {
    let d = model.dim;
    let b = model.grid.b();
    let anchor = state.path.at(hi + 1).to_vec();
    let mut prev = state.path.at(lo - 1).to_vec();
    let mut new = Vec::with_capacity((hi - lo + 1) * d);
    for k in lo..=hi {
        let m = (hi + 1 - (k - 1)) as f64;
        let sd = (b * (m - 1.0) / m).sqrt();
        for a in 0..d {
            let z: f64 = state.rng.sample(StandardNormal);
            let x = prev[a] + (anchor[a] - prev[a]) / m + sd * z;
            new.push(x);
            prev[a] = x;
        }
    }
    new
}

fn propose_end(model: &GibbsModel, state: &mut ChainState, lo: usize, hi: usize, left: bool) -> Vec<f64> {
    let d = model.dim;
    let sb = model.grid.b().sqrt();
    let len = hi - lo + 1;
    let mut new = vec![0.0; len * d];
    if left {
        let mut prev = state.path.at(hi + 1).to_vec();
        for k in (lo..=hi).rev() {
            for a in 0..d {
                let z: f64 = state.rng.sample(StandardNormal);
                prev[a] += sb * z;
                new[(k - lo) * d + a] = prev[a];
            }
        }
    } else {
        let mut prev = state.path.at(lo - 1).to_vec();
        for k in lo..=hi {
            for a in 0..d {
                let z: f64 = state.rng.sample(StandardNormal);
                prev[a] += sb * z;
                new[(k - lo) * d + a] = prev[a];
            }
        }
    }
    new
}

/// One sweep: moves until as many nodes were redrawn as there are free nodes.
fn sweep(model: &GibbsModel, layout: &Layout, params: &SamplerParams, state: &mut ChainState) {
    let free = layout.free_count();
    if free == 0 {
        return;
    }
    let n = layout.n;
    let has_ends = layout.free_left || layout.free_right;
    let mut moved = 0;
    let mut attempts = 0;
    while moved < free && attempts < 64 * free {
        attempts += 1;
        let endpoint = has_ends && state.rng.random::<f64>() < params.move_mix.endpoint;
        if endpoint {
            let left = match (layout.free_left, layout.free_right) {
                (true, true) => state.rng.random::<bool>(),
                (l, _) => l,
            };
            let limit = if left {
                layout.first_pin.min(n)
            } else {
                n - layout.last_pin.map_or(0, |p| p)
            };
            let limit = limit.min(params.block_len_max);
            if limit == 0 {
                continue;
            }
            let len = log_uniform_len(&mut state.rng, limit);
            let (lo, hi) = if left { (0, len - 1) } else { (n + 1 - len, n) };
            let new = propose_end(model, state, lo, hi, left);
            try_move(model, layout, state, MoveKind::Endpoint, lo, hi, &new);
            moved += len;
        } else {
            if n < 2 {
                break;
            }
            let len = log_uniform_len(&mut state.rng, params.block_len_max.min(n - 1));
            let lo = state.rng.random_range(1..=n - len);
            let hi = lo + len - 1;
            if (lo..=hi).any(|k| layout.pinned[k]) {
                continue;
            }
            let new = propose_bridge(model, state, lo, hi);
            try_move(model, layout, state, MoveKind::Bridge, lo, hi, &new);
            moved += len;
        }
    }
    state.step_count += 1;
}

/// Quantities recorded once per kept sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    /// Coordinate `axis` at `node`.
    Node { name: String, node: usize, axis: usize },
    /// Histogram of coordinate `axis` pooled over `nodes`.
    NodeHistogram {
        name: String,
        nodes: Vec<usize>,
        axis: usize,
        edges: Vec<f64>,
    },
    /// Vector `[mean F, mean F_s F_{s+ℓ} for ℓ = 0..=max_lag]` over the central
    /// half of the window, with `F` the coordinate clipped to `±clip`.
    LagProducts {
        name: String,
        axis: usize,
        max_lag: usize,
        clip: Option<f64>,
    },
    /// Per axis `a`, `((X_{o+ℓ} − X_o)_a² + (X_{o−ℓ} − X_o)_a²)/2` at index
    /// `ℓ·d + a`, `ℓ = 0..=N/2`, `o` the origin.
    SquaredDisplacement { name: String },
    /// Pair (or increment) energy, before the coupling.
    PairEnergy { name: String },
    /// Block averages `φ_j` over windows of `width` nodes centred at
    /// `origin + j·width`, `j = −count..=count`.
    BlockMeans {
        name: String,
        axis: usize,
        width: usize,
        count: usize,
    },
    /// `max |X|` over nodes `from..=to`.
    WindowMaxAbs { name: String, from: usize, to: usize, axis: usize },
    /// Coordinate `axis` at every node.
    Nodes { name: String, axis: usize },
}

impl Observable {
    pub fn name(&self) -> &str {
        match self {
            Observable::Node { name, .. }
            | Observable::NodeHistogram { name, .. }
            | Observable::LagProducts { name, .. }
            | Observable::SquaredDisplacement { name }
            | Observable::PairEnergy { name }
            | Observable::BlockMeans { name, .. }
            | Observable::WindowMaxAbs { name, .. }
            | Observable::Nodes { name, .. } => name,
        }
    }

    fn validate(&self, model: &GibbsModel) -> Result<()> {
        let n = model.grid.n;
        let axis_ok = |a: usize| a < model.dim;
        let ok = match self {
            Observable::Node { node, axis, .. } => *node <= n && axis_ok(*axis),
            Observable::NodeHistogram { nodes, axis, edges, .. } => {
                nodes.iter().all(|&k| k <= n) && axis_ok(*axis) && edges.len() >= 2 && edges.windows(2).all(|w| w[0] < w[1])
            }
            Observable::LagProducts { axis, max_lag, .. } => axis_ok(*axis) && *max_lag <= n / 4,
            Observable::SquaredDisplacement { .. } => true,
            Observable::PairEnergy { .. } => model.grid_kernel().is_some(),
            Observable::BlockMeans { axis, width, count, .. } => {
                axis_ok(*axis) && *width >= 1 && (2 * count + 1) * width <= n + 1
            }
            Observable::WindowMaxAbs { from, to, axis, .. } => from <= to && *to <= n && axis_ok(*axis),
            Observable::Nodes { axis, .. } => axis_ok(*axis),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("observable `{}` does not fit the model", self.name())))
        }
    }
}

/// Everything one chain recorded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainRecord {
    pub index: usize,
    pub scalars: BTreeMap<String, Vec<f64>>,
    pub vectors: BTreeMap<String, Vec<Vec<f64>>>,
    pub histograms: BTreeMap<String, Histogram>,
    pub accept: AcceptCounts,
    pub sweeps: u64,
    pub final_log_density: f64,
}

fn record(model: &GibbsModel, observables: &[Observable], path: &PathSample, rec: &mut ChainRecord) -> Result<()> {
    let n = model.grid.n;
    let o = model.grid.origin();
    for obs in observables {
        match obs {
            Observable::Node { name, node, axis } => {
                rec.scalars.entry(name.clone()).or_default().push(path.at(*node)[*axis]);
            }
            Observable::NodeHistogram { name, nodes, axis, edges } => {
                let h = rec.histograms.entry(name.clone()).or_insert_with(|| Histogram::new(edges.clone()));
                for &k in nodes {
                    h.push(path.at(k)[*axis]);
                }
            }
            Observable::LagProducts { name, axis, max_lag, clip } => {
                let f = |k: usize| {
                    let x = path.at(k)[*axis];
                    clip.map_or(x, |c| x.clamp(-c, c))
                };
                let (from, to) = (n / 4, 3 * n / 4 - max_lag);
                let count = (to - from + 1) as f64;
                let mut v = vec![0.0; max_lag + 2];
                for s in from..=to {
                    let fs = f(s);
                    v[0] += fs;
                    for l in 0..=*max_lag {
                        v[l + 1] += fs * f(s + l);
                    }
                }
                v.iter_mut().for_each(|x| *x /= count);
                rec.vectors.entry(name.clone()).or_default().push(v);
            }
            Observable::SquaredDisplacement { name } => {
                let x0 = path.at(o);
                let mut v = Vec::with_capacity((o + 1) * model.dim);
                for l in 0..=o {
                    let (r, lft) = (path.at(o + l), path.at(o - l));
                    for a in 0..model.dim {
                        v.push(0.5 * ((r[a] - x0[a]).powi(2) + (lft[a] - x0[a]).powi(2)));
                    }
                }
                rec.vectors.entry(name.clone()).or_default().push(v);
            }
            Observable::PairEnergy { name } => {
                let gk = model.grid_kernel().expect("validated");
                rec.scalars.entry(name.clone()).or_default().push(pair_sum(path, gk, &model.grid)?);
            }
            Observable::BlockMeans { name, axis, width, count } => {
                let half = (*width as isize - 1) / 2;
                let v = (-(*count as isize)..=*count as isize)
                    .map(|j| {
                        let centre = o as isize + j * *width as isize;
                        let start = (centre - half).clamp(0, (n + 1 - width) as isize) as usize;
                        (start..start + width).map(|k| path.at(k)[*axis]).sum::<f64>() / *width as f64
                    })
                    .collect();
                rec.vectors.entry(name.clone()).or_default().push(v);
            }
            Observable::WindowMaxAbs { name, from, to, axis } => {
                let m = (*from..=*to).map(|k| path.at(k)[*axis].abs()).fold(0.0, f64::max);
                rec.scalars.entry(name.clone()).or_default().push(m);
            }
            Observable::Nodes { name, axis } => {
                rec.vectors.entry(name.clone()).or_default().push(path.axis(*axis));
            }
        }
    }
    Ok(())
}

/// Merged output of one or more chains, kept per chain so that standard
/// errors and `R̂` can be formed afterwards.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub chains: Vec<ChainRecord>,
}

impl EstimatorReport {
    /// Associative combination: chains are kept in index order.
    pub fn merge(&self, other: &Self) -> Self {
        let mut chains: Vec<ChainRecord> = self.chains.iter().chain(&other.chains).cloned().collect();
        chains.sort_by_key(|c| c.index);
        Self { chains }
    }

    pub fn scalar(&self, name: &str) -> Option<ScalarStat> {
        self.chains
            .iter()
            .filter_map(|c| c.scalars.get(name))
            .map(|s| ScalarStat::from_series(s))
            .reduce(|a, b| a.merge(&b))
    }

    /// All recorded values of a scalar, chains concatenated.
    pub fn scalar_samples(&self, name: &str) -> Vec<f64> {
        self.chains.iter().filter_map(|c| c.scalars.get(name)).flatten().copied().collect()
    }

    pub fn vector(&self, name: &str, batches: usize) -> Option<SeriesStat> {
        self.chains
            .iter()
            .filter_map(|c| c.vectors.get(name))
            .map(|s| SeriesStat::from_samples(s, batches))
            .reduce(|a, b| a.merge(&b))
    }

    pub fn vector_samples(&self, name: &str) -> Vec<&Vec<f64>> {
        self.chains.iter().filter_map(|c| c.vectors.get(name)).flatten().collect()
    }

    pub fn histogram(&self, name: &str) -> Option<Histogram> {
        self.chains
            .iter()
            .filter_map(|c| c.histograms.get(name))
            .cloned()
            .reduce(|a, b| a.merge(&b))
    }

    pub fn acceptance(&self) -> AcceptCounts {
        let mut out = AcceptCounts::default();
        for c in &self.chains {
            out.bridge.add(&c.accept.bridge);
            out.endpoint.add(&c.accept.endpoint);
            out.non_finite += c.accept.non_finite;
        }
        out
    }

    /// Potential scale reduction of a scalar across chains.
    pub fn rhat(&self, name: &str) -> f64 {
        let stats: Vec<ScalarStat> = self
            .chains
            .iter()
            .filter_map(|c| c.scalars.get(name))
            .map(|s| ScalarStat::from_series(s))
            .collect();
        let n = stats.iter().map(ScalarStat::n).min().unwrap_or(0);
        let means: Vec<f64> = stats.iter().map(ScalarStat::mean).collect();
        let vars: Vec<f64> = stats.iter().map(ScalarStat::variance).collect();
        gelman_rubin(&means, &vars, n)
    }
}

fn initial_path(model: &GibbsModel, init: &InitStrategy, index: usize) -> Result<PathSample> {
    match init {
        InitStrategy::Constant(x) => {
            if x.len() == model.dim {
                Ok(model.initial_path(x))
            } else {
                Ok(model.initial_path(&vec![x.first().copied().unwrap_or(0.0); model.dim]))
            }
        }
        InitStrategy::Alternating(a) => {
            let v = if index % 2 == 0 { *a } else { -*a };
            Ok(model.initial_path(&vec![v; model.dim]))
        }
        InitStrategy::Path(p) => {
            p.check(&model.grid, model.dim)?;
            Ok(p.clone())
        }
    }
}

/// Runs chain `index` to completion.
pub fn run_single_chain(model: &GibbsModel, params: &SamplerParams, observables: &[Observable], index: usize) -> Result<ChainRecord> {
    let layout = Layout::new(model);
    let path = initial_path(model, &params.init, index)?;
    let mut state = ChainState::new(model, path, chain_rng(params.seed, index as u64))?;
    let mut rec = ChainRecord {
        index,
        ..Default::default()
    };
    for s in 0..params.n_sweeps {
        sweep(model, &layout, params, &mut state);
        if params.revalidate_every > 0 && (s + 1) % params.revalidate_every == 0 {
            state.revalidate(model)?;
        }
        if s >= params.burn_in && (s - params.burn_in) % params.thinning == 0 {
            record(model, observables, &state.path, &mut rec)?;
        }
    }
    state.revalidate(model)?;
    rec.accept = state.accept;
    rec.sweeps = state.step_count;
    rec.final_log_density = state.cached_log_density;
    Ok(rec)
}

/// Runs `params.chains` chains on up to `params.workers` threads. Chain `i`
/// uses [`chain_rng`]`(seed, i)`, and results are merged in chain order, so
/// the report does not depend on the worker count.
pub fn run_chain(model: &GibbsModel, params: &SamplerParams, observables: &[Observable]) -> Result<EstimatorReport> {
    params.validate()?;
    for o in observables {
        o.validate(model)?;
    }
    let workers = params.workers.min(params.chains);
    let mut slots: Vec<Option<Result<ChainRecord>>> = (0..params.chains).map(|_| None).collect();
    if workers <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_single_chain(model, params, observables, i));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        (w..params.chains)
                            .step_by(workers)
                            .map(|i| (i, run_single_chain(model, params, observables, i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("chain worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
    }
    let chains = slots
        .into_iter()
        .map(|s| s.expect("every chain ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatorReport { chains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EnergyForm, GroundStateTable, PairKernelSpec, TimeGrid};
    use crate::spectral::{ground_state, Grid1D, PotentialSpec};

    fn free_model(lambda: f64) -> GibbsModel {
        GibbsModel::new(
            TimeGrid::new(1.0, 16).unwrap(),
            1,
            None,
            Some(PairKernelSpec::BoundedDecay { r: 1.0, alpha: 3.0 }),
            lambda,
            BoundaryCondition::Pinned {
                left: vec![0.0],
                right: vec![0.5],
            },
            EnergyForm::OnsitePair,
        )
        .unwrap()
    }

    #[test]
    fn free_bridge_moves_always_accept() {
        let model = free_model(0.0);
        let mut state = ChainState::new(&model, model.initial_path(&[0.0]), chain_rng(1, 0)).unwrap();
        for i in 0..200 {
            let len = 1 + i % 7;
            let start = 1 + (i * 5) % (16 - len);
            assert!(bridge_block_move(&model, &mut state, start, len).unwrap());
        }
        state.revalidate(&model).unwrap();
    }

    #[test]
    fn constant_potential_moves_always_accept() {
        let model = GibbsModel::new(
            TimeGrid::new(1.0, 16).unwrap(),
            1,
            Some(PotentialSpec::Table {
                x_min: -100.0,
                x_max: 100.0,
                values: vec![2.0, 2.0],
            }),
            None,
            0.0,
            BoundaryCondition::Pinned {
                left: vec![0.0],
                right: vec![0.0],
            },
            EnergyForm::OnsitePair,
        )
        .unwrap();
        let mut state = ChainState::new(&model, model.initial_path(&[0.0]), chain_rng(2, 0)).unwrap();
        for i in 0..100 {
            assert!(bridge_block_move(&model, &mut state, 1 + i % 10, 5).unwrap());
        }
    }

    #[test]
    fn blocks_on_pins_are_refused() {
        let model = free_model(0.1);
        let mut state = ChainState::new(&model, model.initial_path(&[0.0]), chain_rng(1, 0)).unwrap();
        assert!(bridge_block_move(&model, &mut state, 0, 2).is_err());
        assert!(bridge_block_move(&model, &mut state, 15, 2).is_err());
    }

    #[test]
    fn cached_density_tracks_full_recomputation() {
        let sd = ground_state(&Grid1D::symmetric(8.0, 401).unwrap(), &PotentialSpec::Harmonic { omega: 1.0 }, 4).unwrap();
        let model = GibbsModel::new(
            TimeGrid::new(1.0, 16).unwrap(),
            1,
            Some(PotentialSpec::Harmonic { omega: 1.0 }),
            Some(PairKernelSpec::BoundedDecay { r: 1.0, alpha: 3.0 }),
            0.4,
            BoundaryCondition::FreeStationary {
                ground_state: GroundStateTable::from_spectral(&sd),
            },
            EnergyForm::OnsitePair,
        )
        .unwrap();
        let params = SamplerParams {
            n_sweeps: 2_000,
            burn_in: 100,
            revalidate_every: 1,
            block_len_max: 8,
            ..Default::default()
        };
        let rep = run_chain(&model, &params, &[]).unwrap();
        let acc = rep.acceptance();
        assert!(acc.bridge.rate() > 0.2 && acc.endpoint.rate() > 0.1);
    }

    #[test]
    fn pinned_origin_and_external_path_keep_their_cache() {
        let grid = TimeGrid::new(2.0, 16).unwrap();
        let inc = GibbsModel::new(
            grid,
            3,
            None,
            Some(PairKernelSpec::Polaron {
                kappa: 1.0,
                omega0: 1.0,
                eps: None,
                sign: 1.0,
            }),
            0.5,
            BoundaryCondition::PinnedOrigin { x0: vec![0.0; 3] },
            EnergyForm::Increment,
        )
        .unwrap();
        let params = SamplerParams {
            n_sweeps: 500,
            burn_in: 10,
            revalidate_every: 1,
            init: InitStrategy::Constant(vec![0.0; 3]),
            ..Default::default()
        };
        run_chain(&inc, &params, &[Observable::SquaredDisplacement { name: "msd".into() }]).unwrap();

        let ext = crate::model::ExternalPath::constant(1, &[0.7], &grid, 2.0, Some(1.0));
        let bd = GibbsModel::new(
            grid,
            1,
            Some(PotentialSpec::DoubleWell { beta: 1.0 }),
            Some(PairKernelSpec::QuadraticLongrange { alpha: 1.0, gamma: 1.5 }),
            0.7,
            BoundaryCondition::ExternalPath(ext),
            EnergyForm::OnsitePair,
        )
        .unwrap();
        let params = SamplerParams {
            init: InitStrategy::Constant(vec![0.0]),
            ..params
        };
        run_chain(&bd, &params, &[]).unwrap();
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let model = free_model(0.3);
        let obs = vec![
            Observable::Node {
                name: "x0".into(),
                node: 8,
                axis: 0,
            },
            Observable::NodeHistogram {
                name: "h".into(),
                nodes: vec![4, 8, 12],
                axis: 0,
                edges: (0..=20).map(|i| -2.0 + 0.2 * i as f64).collect(),
            },
        ];
        let params = SamplerParams {
            n_sweeps: 400,
            burn_in: 50,
            chains: 3,
            workers: 1,
            seed: 42,
            ..Default::default()
        };
        let a = run_chain(&model, &params, &obs).unwrap();
        let b = run_chain(&model, &SamplerParams { workers: 3, ..params.clone() }, &obs).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&model, &params, &obs).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn params_are_validated() {
        let p = SamplerParams {
            burn_in: 10,
            n_sweeps: 10,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = SamplerParams {
            move_mix: MoveMix {
                bridge: 0.5,
                endpoint: 0.6,
            },
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
