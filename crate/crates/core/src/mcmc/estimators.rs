//! Estimators computed from sampler output, each with an uncertainty and the
//! refusal rules that go with it.

use serde::Serialize;

use super::chain::{run_chain, EstimatorReport, Observable, SamplerParams};
use super::stats::{integrated_autocorrelation_time, linear_fit, weighted_linear_fit, Histogram, ScalarStat, Welford};
use crate::error::{Error, Result};
use crate::model::{GibbsModel, TimeGrid};
use crate::spectral::SpectralData;

/// Below this effective sample size estimators refuse to report.
pub const MIN_ESS: f64 = 100.0;

/// CDF of `ν`. With `spread`, each node's mass is spread uniformly over its
/// cell `[x_i − h/2, x_i + h/2]`; otherwise `ν` is a step function on nodes.
pub fn nu_cdf(sd: &SpectralData, x: f64, spread: bool) -> f64 {
    let g = &sd.grid;
    let h = g.h();
    let mut acc = 0.0;
    for i in 0..g.n_points {
        let xi = g.node(i);
        if spread {
            let lo = xi - 0.5 * h;
            if x >= xi + 0.5 * h {
                acc += sd.nu[i];
            } else if x > lo {
                acc += sd.nu[i] * (x - lo) / h;
                break;
            } else {
                break;
            }
        } else if xi <= x {
            acc += sd.nu[i];
        } else {
            break;
        }
    }
    acc.min(1.0)
}

/// Sup-distance between the empirical CDF of `samples` and `ν`. With
/// `spread`, each node's mass is uniform over its cell (continuous samples);
/// otherwise it is an atom at the node (lattice samples).
pub fn marginal_sup_distance(samples: &mut [f64], sd: &SpectralData, spread: bool) -> f64 {
    samples.sort_by(f64::total_cmp);
    let cum: Vec<f64> = sd
        .nu
        .iter()
        .scan(0.0, |a, w| {
            *a += w;
            Some(*a)
        })
        .collect();
    let g = sd.grid;
    let h = g.h();
    if spread {
        let cdf = |x: f64| -> f64 {
            let c = (x - g.x_min) / h + 0.5;
            if c <= 0.0 {
                return 0.0;
            }
            let i = c.floor() as usize;
            if i >= g.n_points {
                return cum[g.n_points - 1].min(1.0);
            }
            let before = if i == 0 { 0.0 } else { cum[i - 1] };
            (before + sd.nu[i] * (c - i as f64)).min(1.0)
        };
        return super::stats::ks_distance(samples, cdf);
    }
    // Atoms at the nodes: F jumps by ν_i at node i.
    let limits = |x: f64| -> (f64, f64) {
        let u = (x - g.x_min) / h;
        if u < -1e-9 {
            return (0.0, 0.0);
        }
        let i = ((u + 1e-9).floor() as usize).min(g.n_points - 1);
        let f = cum[i].min(1.0);
        let on_node = (u - i as f64).abs() < 1e-9;
        let left = if on_node { if i == 0 { 0.0 } else { cum[i - 1].min(1.0) } } else { f };
        (left, f)
    };
    super::stats::ks_distance_atoms(samples, limits)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioBin {
    pub x_lo: f64,
    pub x_hi: f64,
    pub count: u64,
    pub nu_mass: f64,
    pub nu_density: f64,
    pub empirical_density: f64,
    pub ratio: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRatio {
    pub bins: Vec<RatioBin>,
    /// Indices of bins left out (empty, or no `ν` mass).
    pub excluded: Vec<usize>,
    pub n_eff: f64,
}

/// Wilson score interval for a proportion.
fn wilson(p: f64, n: f64, z: f64) -> (f64, f64) {
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Empirical density over `ν` density per histogram bin, with Wilson bands
/// at `z` standard deviations. `inflation` (≥ 1) divides the sample count to
/// account for correlation. Bin edges must fall half-way between grid nodes.
pub fn estimate_marginal_ratio(hist: &Histogram, sd: &SpectralData, inflation: f64, z: f64) -> Result<MarginalRatio> {
    let g = sd.grid;
    let h = g.h();
    for &e in &hist.edges {
        let u = (e - g.x_min) / h - 0.5;
        if (u - u.round()).abs() > 1e-6 {
            return Err(Error::Precondition(format!("bin edge {e} is not aligned to the position grid")));
        }
    }
    let total = hist.total() as f64;
    if total == 0.0 {
        return Err(Error::Estimation("empty histogram".into()));
    }
    let n_eff = total / inflation.max(1.0);
    let mut bins = Vec::new();
    let mut excluded = Vec::new();
    for (k, w) in hist.edges.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let nu_mass: f64 = (0..g.n_points)
            .filter(|&i| g.node(i) > lo && g.node(i) < hi)
            .map(|i| sd.nu[i])
            .sum();
        let count = hist.counts[k];
        if count == 0 || nu_mass <= 1e-300 {
            excluded.push(k);
            continue;
        }
        let p = count as f64 / total;
        let (plo, phi) = wilson(p, n_eff, z);
        let width = hi - lo;
        bins.push(RatioBin {
            x_lo: lo,
            x_hi: hi,
            count,
            nu_mass,
            nu_density: nu_mass / width,
            empirical_density: p / width,
            ratio: p / nu_mass,
            ci_lo: plo / nu_mass,
            ci_hi: phi / nu_mass,
        });
    }
    Ok(MarginalRatio { bins, excluded, n_eff })
}

/// Histogram edges half-way between nodes, `per_bin` nodes per bin, covering
/// `[lo, hi]`.
pub fn aligned_edges(sd: &SpectralData, lo: f64, hi: f64, per_bin: usize) -> Vec<f64> {
    let g = sd.grid;
    let h = g.h();
    let first = (((lo - g.x_min) / h).floor() as i64).max(0);
    let last = (((hi - g.x_min) / h).ceil() as i64).min(g.n_points as i64 - 1);
    let mut edges = Vec::new();
    let mut i = first;
    while i <= last + 1 {
        edges.push(g.x_min + (i as f64 - 0.5) * h);
        i += per_bin.max(1) as i64;
    }
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceDecay {
    pub lags: Vec<f64>,
    pub cov: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Fitted `β̂` and its standard error in `|cov| ≤ c/(1+t^β)`.
    pub beta: Option<(f64, f64)>,
    pub ess: f64,
    pub flag: Option<String>,
}

/// Lag covariance from a [`Observable::LagProducts`] series, with batch-means
/// errors and a power-law decay fit over the significant lags.
pub fn estimate_covariance_decay(report: &EstimatorReport, name: &str, b: f64, batches: usize) -> Result<CovarianceDecay> {
    let chains: Vec<&Vec<Vec<f64>>> = report.chains.iter().filter_map(|c| c.vectors.get(name)).collect();
    if chains.is_empty() {
        return Err(Error::Estimation(format!("no series `{name}` in the report")));
    }
    let len = chains[0].first().map_or(0, Vec::len);
    if len < 2 {
        return Err(Error::Estimation(format!("series `{name}` is empty")));
    }
    let lags = len - 1;
    let mut ess = 0.0;
    let mut all: Vec<&Vec<f64>> = Vec::new();
    for c in &chains {
        let a0: Vec<f64> = c.iter().map(|v| v[1]).collect();
        ess += a0.len() as f64 / integrated_autocorrelation_time(&a0);
        all.extend(c.iter());
    }
    let cov_of = |rows: &[&Vec<f64>]| -> Vec<f64> {
        let n = rows.len() as f64;
        let mut m = vec![0.0; len];
        for r in rows {
            for (a, v) in m.iter_mut().zip(r.iter()) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        (0..lags).map(|l| m[l + 1] - m[0] * m[0]).collect()
    };
    let cov = cov_of(&all);
    let nb = batches.max(2).min(all.len());
    let size = all.len() / nb;
    let mut acc = vec![Welford::default(); lags];
    for k in 0..nb {
        let c = cov_of(&all[k * size..(k + 1) * size]);
        for (w, v) in acc.iter_mut().zip(c) {
            w.push(v);
        }
    }
    let stderr: Vec<f64> = acc.iter().map(|w| (w.variance() / nb as f64).sqrt()).collect();
    let lag_t: Vec<f64> = (0..lags).map(|l| l as f64 * b).collect();

    let mut out = CovarianceDecay {
        lags: lag_t.clone(),
        cov: cov.clone(),
        stderr: stderr.clone(),
        beta: None,
        ess,
        flag: None,
    };
    if ess < MIN_ESS {
        out.flag = Some(format!("effective sample size {ess:.0} below {MIN_ESS}; fit refused"));
        return Ok(out);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (1..lags)
        .filter(|&l| cov[l].abs() > 2.0 * stderr[l])
        .map(|l| ((1.0 + lag_t[l]).ln(), cov[l].abs().ln()))
        .unzip();
    if xs.len() < 3 {
        out.flag = Some(format!("only {} significant lags; no decay fit", xs.len()));
        return Ok(out);
    }
    let (_, slope, _, se) = linear_fit(&xs, &ys);
    out.beta = Some((-slope, se));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Magnetization {
    pub mean: f64,
    pub stderr: f64,
    pub rhat: f64,
    pub ess: f64,
    /// `R̂` above the threshold: chains disagree.
    pub flagged: bool,
}

/// Mean of a node observable across chains, with `R̂`.
pub fn estimate_magnetization(report: &EstimatorReport, name: &str, rhat_max: f64) -> Result<Magnetization> {
    let stat = report
        .scalar(name)
        .ok_or_else(|| Error::Estimation(format!("no scalar `{name}` in the report")))?;
    let ess = stat.ess();
    if ess < MIN_ESS {
        return Err(Error::Estimation(format!("effective sample size {ess:.0} below {MIN_ESS}")));
    }
    let rhat = if report.chains.len() > 1 { report.rhat(name) } else { 1.0 };
    Ok(Magnetization {
        mean: stat.mean(),
        stderr: stat.stderr,
        rhat,
        ess,
        flagged: !(rhat <= rhat_max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionEstimate {
    /// `(D̂_a, SE)` per axis.
    pub per_axis: Vec<(f64, f64)>,
    pub d: f64,
    pub stderr: f64,
    /// All axes agree with the mean within 3 SE.
    pub isotropic: bool,
    /// Root-mean-square relative deviation of `msd(t)/t` from `D̂`.
    pub misfit: f64,
    pub window: (f64, f64),
    pub flag: Option<String>,
}

/// Least-squares slope through the origin of `msd(t)` over `times`.
pub fn diffusion_slope(times: &[f64], msd: &[f64]) -> f64 {
    let num: f64 = times.iter().zip(msd).map(|(t, m)| t * m).sum();
    let den: f64 = times.iter().map(|t| t * t).sum();
    num / den
}

/// Node lags `ℓ` with `ℓ·b` in `[lo, hi]`.
pub fn window_lags(grid: &TimeGrid, lo: f64, hi: f64) -> Vec<usize> {
    let b = grid.b();
    (1..=grid.origin())
        .filter(|&l| {
            let t = l as f64 * b;
            t >= lo - 1e-12 && t <= hi + 1e-12
        })
        .collect()
}

/// Effective diffusion per axis from a [`Observable::SquaredDisplacement`]
/// series over `t ∈ [T/8, T/2]`, errors by batch means.
pub fn estimate_diffusion(report: &EstimatorReport, name: &str, grid: &TimeGrid, dim: usize, batches: usize) -> Result<DiffusionEstimate> {
    let samples = report.vector_samples(name);
    if samples.is_empty() {
        return Err(Error::Estimation(format!("no series `{name}` in the report")));
    }
    let window = (grid.t_half / 8.0, grid.t_half / 2.0);
    let lags = window_lags(grid, window.0, window.1);
    if lags.is_empty() {
        return Err(Error::Precondition("diffusion window holds no grid lags".into()));
    }
    let times: Vec<f64> = lags.iter().map(|&l| l as f64 * grid.b()).collect();
    let slope_of = |rows: &[&Vec<f64>], a: usize| {
        let n = rows.len() as f64;
        let msd: Vec<f64> = lags
            .iter()
            .map(|&l| rows.iter().map(|r| r[l * dim + a]).sum::<f64>() / n)
            .collect();
        (diffusion_slope(&times, &msd), msd)
    };
    let nb = batches.max(2).min(samples.len());
    let size = samples.len() / nb;
    let mut per_axis = Vec::with_capacity(dim);
    let mut misfit = 0.0_f64;
    for a in 0..dim {
        let (d, msd) = slope_of(&samples, a);
        let mut acc = Welford::default();
        for k in 0..nb {
            acc.push(slope_of(&samples[k * size..(k + 1) * size], a).0);
        }
        per_axis.push((d, (acc.variance() / nb as f64).sqrt()));
        let rms = (times.iter().zip(&msd).map(|(t, m)| (m / t / d - 1.0).powi(2)).sum::<f64>() / times.len() as f64).sqrt();
        misfit = misfit.max(rms);
    }
    let d = per_axis.iter().map(|p| p.0).sum::<f64>() / dim as f64;
    let stderr = per_axis.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / dim as f64;
    let isotropic = per_axis.iter().all(|&(da, se)| (da - d).abs() <= 3.0 * (se * se + stderr * stderr).sqrt());
    let flag = (misfit > 0.1).then(|| format!("MSD/t deviates from linear by {misfit:.3} over the window"));
    Ok(DiffusionEstimate {
        per_axis,
        d,
        stderr,
        isotropic,
        misfit,
        window,
        flag,
    })
}

/// `E[x⁴]/E[x²]²` with a batch-means standard error.
pub fn fourth_moment_ratio(samples: &[f64], batches: usize) -> (f64, f64) {
    let ratio = |xs: &[f64]| {
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / xs.len() as f64;
        m4 / (m2 * m2)
    };
    let nb = batches.max(2).min(samples.len());
    let size = samples.len() / nb;
    let mut acc = Welford::default();
    for k in 0..nb {
        acc.push(ratio(&samples[k * size..(k + 1) * size]));
    }
    (ratio(samples), (acc.variance() / nb as f64).sqrt())
}

/// `log Z(λ_i) − log Z(λ_0)` by the trapezoid rule on
/// `∂_λ log Z = −⟨pair⟩_λ`, with independent-rung error propagation.
pub fn thermodynamic_integration(couplings: &[f64], mean_energy: &[f64], stderr: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut logz = vec![0.0; couplings.len()];
    let mut var = vec![0.0; couplings.len()];
    let mut weights = vec![0.0; couplings.len()];
    for i in 1..couplings.len() {
        let d = couplings[i] - couplings[i - 1];
        logz[i] = logz[i - 1] - 0.5 * d * (mean_energy[i - 1] + mean_energy[i]);
        weights[i - 1] += 0.5 * d;
        weights[i] = 0.5 * d;
        var[i] = weights[..=i].iter().zip(stderr).map(|(w, s)| (w * s).powi(2)).sum();
    }
    (logz, var.into_iter().map(f64::sqrt).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogPartition {
    pub couplings: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub energy_stderr: Vec<f64>,
    pub ess: Vec<f64>,
    pub logz: Vec<f64>,
    pub logz_stderr: Vec<f64>,
}

/// Runs one chain per rung of `ladder` (which must start at 0) and integrates
/// the mean pair energy.
pub fn estimate_log_partition(model: &GibbsModel, ladder: &[f64], params: &SamplerParams) -> Result<LogPartition> {
    if ladder.first() != Some(&0.0) || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("coupling ladder must start at 0 and increase".into()));
    }
    if ladder.len() == 1 {
        return Ok(LogPartition {
            couplings: vec![0.0],
            mean_energy: vec![f64::NAN],
            energy_stderr: vec![f64::NAN],
            ess: vec![f64::NAN],
            logz: vec![0.0],
            logz_stderr: vec![0.0],
        });
    }
    let obs = [Observable::PairEnergy { name: "pair".into() }];
    let mut stats: Vec<ScalarStat> = Vec::with_capacity(ladder.len());
    for &lambda in ladder {
        let rep = run_chain(&model.with_lambda(lambda), params, &obs)?;
        let s = rep.scalar("pair").expect("pair energy recorded");
        if s.ess() < MIN_ESS {
            return Err(Error::Estimation(format!(
                "effective sample size {:.0} below {MIN_ESS} at coupling {lambda}",
                s.ess()
            )));
        }
        stats.push(s);
    }
    check_overlap(ladder, &stats)?;
    let mean: Vec<f64> = stats.iter().map(ScalarStat::mean).collect();
    let se: Vec<f64> = stats.iter().map(|s| s.stderr).collect();
    let (logz, logz_stderr) = thermodynamic_integration(ladder, &mean, &se);
    Ok(LogPartition {
        couplings: ladder.to_vec(),
        mean_energy: mean,
        energy_stderr: se,
        ess: stats.iter().map(ScalarStat::ess).collect(),
        logz,
        logz_stderr,
    })
}

/// Refuses ladders where the integrand changes too much between rungs.
fn check_overlap(ladder: &[f64], stats: &[ScalarStat]) -> Result<()> {
    for i in 1..ladder.len() {
        let d = ladder[i] - ladder[i - 1];
        let (a, c) = (&stats[i - 1], &stats[i]);
        let sd = a.variance().sqrt().max(c.variance().sqrt());
        let ratio = (a.variance().max(1e-300) / c.variance().max(1e-300)).ln().abs();
        // Mean shift of more than two standard deviations per rung, or a
        // variance change by more than a factor 10, means poor overlap.
        if (c.mean() - a.mean()).abs() > 2.0 * sd || ratio > 10f64.ln() {
            return Err(Error::Estimation(format!(
                "poor overlap between couplings {} and {} (step {d}); refine the ladder",
                ladder[i - 1], ladder[i]
            )));
        }
    }
    Ok(())
}

/// `E_g = lim −log Z(T)/(2T)` by a weighted linear fit in `1/T`; returns the
/// intercept and its standard error.
pub fn ground_energy_extrapolation(t_half: &[f64], logz: &[f64], stderr: &[f64]) -> Result<(f64, f64)> {
    if t_half.len() < 2 || t_half.len() != logz.len() || logz.len() != stderr.len() {
        return Err(Error::Precondition("need matching ladders of at least two windows".into()));
    }
    let x: Vec<f64> = t_half.iter().map(|t| 1.0 / t).collect();
    let y: Vec<f64> = logz.iter().zip(t_half).map(|(z, t)| -z / (2.0 * t)).collect();
    if y.iter().all(|&v| v == 0.0) {
        return Ok((0.0, 0.0));
    }
    let s: Vec<f64> = stderr.iter().zip(t_half).map(|(e, t)| e / (2.0 * t)).collect();
    let (a, se_a) = if s.iter().all(|&v| v > 0.0) {
        let (a, _, se, _) = weighted_linear_fit(&x, &y, &s);
        (a, se)
    } else {
        let (a, _, se, _) = linear_fit(&x, &y);
        (a, se)
    };
    Ok((a, se_a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    /// Fitted `p` in `log P(M ≥ a) ≈ c₀ + c₁ log a − θ a^p`.
    pub exponent: f64,
    /// `θ̂` at the fitted exponent.
    pub theta: f64,
    /// `θ̂′` from the plain fit of `log P` against `a^{s+1}`.
    pub theta_prime: f64,
    pub points: usize,
    /// Residual standard deviation of the profile fit.
    pub residual: f64,
}

fn least_squares3(rows: &[[f64; 3]], y: &[f64]) -> Option<([f64; 3], f64)> {
    let mut a = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..3 {
            r[i] += row[i] * yi;
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting.
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = r[i];
    }
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        m.swap(c, p);
        if m[c][c].abs() < 1e-300 {
            return None;
        }
        for i in c + 1..3 {
            let f = m[i][c] / m[c][c];
            for j in c..4 {
                m[i][j] -= f * m[c][j];
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        x[i] = (m[i][3] - (i + 1..3).map(|j| m[i][j] * x[j]).sum::<f64>()) / m[i][i];
    }
    let rss = rows
        .iter()
        .zip(y)
        .map(|(row, yi)| (yi - row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    Some((x, rss))
}

/// Tail exponent of `samples` (e.g. `max |X|` over a unit window) from the
/// empirical survival function between `P = 0.1` and `min_count/n`.
pub fn tail_exponent_check(samples: &[f64], s: f64, min_count: usize) -> Result<TailFit> {
    let n = samples.len();
    let mut sorted: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let p_min = min_count as f64 / n as f64;
    if p_min >= 0.01 {
        return Err(Error::Estimation(format!("{n} samples leave too little tail mass")));
    }
    let points = 24;
    let (mut a_vals, mut log_s) = (Vec::new(), Vec::new());
    for j in 0..points {
        let p = 0.1 * (p_min / 0.1).powf(j as f64 / (points - 1) as f64);
        let k = ((1.0 - p) * n as f64).floor() as usize;
        let a = sorted[k.min(n - 1)];
        let surv = (n - sorted.partition_point(|&v| v < a)) as f64 / n as f64;
        if a > 0.0 && a_vals.last().is_none_or(|&last| a > last) {
            a_vals.push(a);
            log_s.push(surv.ln());
        }
    }
    if a_vals.len() < 6 {
        return Err(Error::Estimation("too few distinct tail thresholds".into()));
    }
    let mut best: Option<(f64, [f64; 3], f64)> = None;
    let mut p = 1.0;
    while p <= 6.0 + 1e-9 {
        let rows: Vec<[f64; 3]> = a_vals.iter().map(|&a| [1.0, a.ln(), -a.powf(p)]).collect();
        if let Some((coef, rss)) = least_squares3(&rows, &log_s) {
            if coef[2] > 0.0 && best.is_none_or(|b| rss < b.2) {
                best = Some((p, coef, rss));
            }
        }
        p += 0.01;
    }
    let (exponent, coef, rss) = best.ok_or_else(|| Error::Estimation("tail profile fit failed".into()))?;
    let xs: Vec<f64> = a_vals.iter().map(|a| a.powf(s + 1.0)).collect();
    let (_, slope, _, _) = linear_fit(&xs, &log_s);
    Ok(TailFit {
        exponent,
        theta: coef[2],
        theta_prime: -slope,
        points: a_vals.len(),
        residual: (rss / (a_vals.len() as f64 - 3.0)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::chain_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn trapezoid_integration_of_a_line() {
        let (z, se) = thermodynamic_integration(&[0.0, 0.5, 1.0], &[1.0, 2.0, 3.0], &[0.1, 0.1, 0.1]);
        assert_eq!(z[0], 0.0);
        assert!((z[2] + 2.0).abs() < 1e-14);
        let expected = ((0.25f64 * 0.1).powi(2) * 2.0 + (0.5f64 * 0.1).powi(2)).sqrt();
        assert!((se[2] - expected).abs() < 1e-14);
    }

    #[test]
    fn extrapolation_recovers_the_intercept() {
        let ts = [2.0, 4.0, 8.0];
        let logz: Vec<f64> = ts.iter().map(|t| -2.0 * t * (-0.3 + 0.5 / t)).collect();
        let (eg, _) = ground_energy_extrapolation(&ts, &logz, &[0.01, 0.01, 0.01]).unwrap();
        assert!((eg + 0.3).abs() < 1e-12);
        assert_eq!(ground_energy_extrapolation(&ts, &[0.0; 3], &[0.0; 3]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn gaussian_tail_exponent_is_two() {
        let mut rng = chain_rng(11, 0);
        let xs: Vec<f64> = (0..400_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = tail_exponent_check(&xs, 1.0, 50).unwrap();
        assert!((fit.exponent - 2.0).abs() < 0.3, "{fit:?}");
    }

    #[test]
    fn fourth_moment_of_gaussian() {
        let mut rng = chain_rng(12, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (r, se) = fourth_moment_ratio(&xs, 20);
        assert!((r - 3.0).abs() < 4.0 * se && se < 0.05, "{r} ± {se}");
        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>() - 0.5).collect();
        assert!((fourth_moment_ratio(&u, 20).0 - 1.8).abs() < 0.05);
    }

    #[test]
    fn wilson_interval_contains_the_estimate() {
        let (lo, hi) = wilson(0.2, 1000.0, 3.0);
        assert!(lo < 0.2 && hi > 0.2 && hi - lo < 0.1);
    }
}
