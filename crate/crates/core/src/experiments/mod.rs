//! End-to-end studies: configuration in, CSV tables, assertions and a run
//! manifest out.

mod clt;
mod cluster_identity;
pub mod csv;
mod phase;
mod polaron;
mod pphi1;
mod tightness;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::mcmc::{InitStrategy, SamplerParams, RNG_NAME, STREAM_RULE};
use crate::spectral::{ground_state, SpectralData};

pub use csv::Table;

/// How sub-run seeds are derived from the master seed.
pub const SUBRUN_RULE: &str = "sub-run k uses master_seed XOR (k+1)*0x9E3779B97F4A7C15";

/// Master seed of sub-run `k`.
pub fn subrun_seed(master: u64, k: u64) -> u64 {
    master ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Pphi1Validation,
    Tightness,
    PhaseTransition,
    CltDiffusion,
    PolaronEnergy,
    ClusterIdentity,
}

impl Study {
    pub const ALL: [Study; 6] = [
        Study::Pphi1Validation,
        Study::Tightness,
        Study::PhaseTransition,
        Study::CltDiffusion,
        Study::PolaronEnergy,
        Study::ClusterIdentity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Pphi1Validation => "pphi1_validation",
            Study::Tightness => "tightness",
            Study::PhaseTransition => "phase_transition",
            Study::CltDiffusion => "clt_diffusion",
            Study::PolaronEnergy => "polaron_energy",
            Study::ClusterIdentity => "cluster_identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("study.variant", format!("unknown study `{s}`")))
    }

    /// Assertions every report of this study carries, in order.
    pub fn assertions(self) -> &'static [&'static str] {
        match self {
            Study::Pphi1Validation => &[
                "spectral_anchor",
                "exact_marginal",
                "mcmc_marginal",
                "detailed_balance",
                "reversibility",
                "covariance_gap_decay",
                "dlr_consistency",
            ],
            Study::Tightness => &["zero_coupling_tail", "no_upward_trend", "splice_bound"],
            Study::PhaseTransition => &["antisymmetry", "monotone_in_t", "transfer_oracle", "chains_agree"],
            Study::CltDiffusion => &["condition_report", "free_anchor", "upper_bound", "positivity", "fourth_moment"],
            Study::PolaronEnergy => &["zero_coupling", "monotone", "perturbative_slope"],
            Study::ClusterIdentity => &["identity", "loose_ends", "zero_coupling", "eta_decreasing"],
        }
    }
}

/// A validated study description.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub study: Study,
    pub config: Config,
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::config(key, msg)
}

impl StudySpec {
    pub fn new(config: Config) -> Result<Self> {
        let study = Study::parse(&config.study.variant)?;
        let c = &config;
        c.potential()?;
        c.spectral_grid()?;
        if c.spectral.eigenpairs == 1 {
            return Err(bad("spectral.eigenpairs", "need at least 2"));
        }
        if !(c.model.t_half > 0.0) {
            return Err(bad("model.t_half", "must be positive"));
        }
        if c.sampler.burn_in >= c.sampler.sweeps {
            return Err(bad("sampler.burn_in", "must be below sampler.sweeps"));
        }
        if c.sampler.chains == 0 || c.sampler.thinning == 0 || c.sampler.block_len_max == 0 {
            return Err(bad("sampler.chains", "chains, thinning and block length must be positive"));
        }
        if !(0.0..=1.0).contains(&c.sampler.bridge_fraction) {
            return Err(bad("sampler.bridge_fraction", "must lie in [0, 1]"));
        }
        if c.study.batches < 2 {
            return Err(bad("study.batches", "need at least 2 batches"));
        }
        let positive = |key: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0)) {
                return Err(bad(key, "needs positive entries"));
            }
            Ok(())
        };
        let increasing = |key: &str, v: &[f64]| -> Result<()> {
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad(key, "must be increasing"));
            }
            Ok(())
        };
        match study {
            Study::Pphi1Validation => {
                if c.model.lambda != 0.0 || c.model.kernel != "none" {
                    return Err(bad("model.lambda", "this study needs the free model (lambda 0, kernel none)"));
                }
                if c.model.dim != 1 {
                    return Err(bad("model.dim", "must be 1"));
                }
                positive("study.t_ladder", &c.study.t_ladder)?;
                if c.study.t_ladder.len() != 2 {
                    return Err(bad("study.t_ladder", "needs exactly two windows"));
                }
                if c.study.samples < 1000 {
                    return Err(bad("study.samples", "need at least 1000"));
                }
                if !(c.study.window > 0.0 && c.study.window < c.study.t_ladder[0]) {
                    return Err(bad("study.window", "must lie inside the smaller window"));
                }
            }
            Study::Tightness => {
                positive("study.t_ladder", &c.study.t_ladder)?;
                increasing("study.t_ladder", &c.study.t_ladder)?;
                if c.study.coupling_ladder.first() != Some(&0.0) {
                    return Err(bad("study.coupling_ladder", "must start at 0"));
                }
                match c.kernel()? {
                    Some(k) if k.envelope(1.0).is_some_and(|(_, a)| a > 2.0) => {}
                    _ => return Err(bad("model.kernel", "needs a kernel with a decay envelope exponent above 2")),
                }
                if !(c.study.splice_tau > 0.0) {
                    return Err(bad("study.splice_tau", "must be positive"));
                }
            }
            Study::PhaseTransition => {
                if c.model.dim != 1 {
                    return Err(bad("model.dim", "must be 1"));
                }
                if !(c.model.gamma > 1.0 && c.model.gamma <= 2.0) {
                    return Err(bad("model.gamma", "must lie in (1, 2]"));
                }
                if c.model.kernel != "quadratic_longrange" {
                    return Err(bad("model.kernel", "must be quadratic_longrange"));
                }
                positive("study.t_ladder", &c.study.t_ladder)?;
                increasing("study.t_ladder", &c.study.t_ladder)?;
                positive("study.beta_grid", &c.study.beta_grid)?;
                if c.study.alpha_grid.iter().any(|a| *a < 0.0) || !c.study.alpha_grid.contains(&0.0) {
                    return Err(bad("study.alpha_grid", "needs non-negative entries including 0"));
                }
                if c.sampler.chains < 2 {
                    return Err(bad("sampler.chains", "need at least 2 chains for R-hat"));
                }
            }
            Study::CltDiffusion => {
                if c.model.kernel != "nelson" {
                    return Err(bad("model.kernel", "must be nelson"));
                }
                if c.study.coupling_ladder.first() != Some(&0.0) {
                    return Err(bad("study.coupling_ladder", "must start at 0"));
                }
                increasing("study.coupling_ladder", &c.study.coupling_ladder)?;
            }
            Study::PolaronEnergy => {
                if c.model.kernel != "polaron" {
                    return Err(bad("model.kernel", "must be polaron"));
                }
                if c.model.dim != 3 {
                    return Err(bad("model.dim", "must be 3"));
                }
                positive("study.t_ladder", &c.study.t_ladder)?;
                increasing("study.t_ladder", &c.study.t_ladder)?;
                if c.study.t_ladder.len() < 2 {
                    return Err(bad("study.t_ladder", "needs at least two windows"));
                }
                if c.study.coupling_ladder.first() != Some(&0.0) {
                    return Err(bad("study.coupling_ladder", "must start at 0"));
                }
                increasing("study.coupling_ladder", &c.study.coupling_ladder)?;
                if c.study.coupling_ladder.iter().filter(|&&k| k > 0.0 && k <= c.study.slope_max).count() < 3 {
                    return Err(bad("study.slope_max", "needs at least three couplings at or below it"));
                }
            }
            Study::ClusterIdentity => {
                let n = &c.study.cluster_intervals;
                if n.is_empty() || n.iter().any(|&k| !(2..=crate::cluster::MAX_DIRECT_INTERVALS).contains(&k)) {
                    return Err(bad("study.cluster_intervals", "entries must lie in 2..=8"));
                }
                let m = &c.study.cluster_positions;
                if m.is_empty() || m.iter().any(|&k| !(2..=crate::cluster::MAX_POSITIONS).contains(&k)) {
                    return Err(bad("study.cluster_positions", "entries must lie in 2..=6"));
                }
                if c.study.eta_lambdas.contains(&0.0) {
                    return Err(bad("study.eta_lambdas", "must be nonzero"));
                }
                c.kernel()?.ok_or_else(|| bad("model.kernel", "needs a pair kernel"))?;
            }
        }
        Ok(Self { study, config })
    }
}

/// Settings that come from the command line rather than the config.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    pub seed: u64,
    pub workers: usize,
    /// One worker, fixed reduction order, no timestamps.
    pub deterministic: bool,
    /// Where tabulated kernels are cached.
    pub cache_dir: Option<PathBuf>,
}

impl RunContext {
    pub fn new(seed: u64, workers: usize, deterministic: bool) -> Self {
        Self {
            seed,
            workers: if deterministic { 1 } else { workers.max(1) },
            deterministic,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Evidence too weak either way; not a failure.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl Assertion {
    pub fn check(name: &str, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    pub fn with_status(name: &str, status: Status, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status,
            detail: detail.into(),
        }
    }

    /// One line for terminal summaries.
    pub fn summary_line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

/// What a study produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyReport {
    pub assertions: Vec<Assertion>,
    pub tables: Vec<Table>,
    pub spectral_digest: Option<String>,
    pub kernel_digest: Option<String>,
    /// Free-form numbers for the manifest.
    pub summary: serde_json::Map<String, serde_json::Value>,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.status != Status::Fail)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub study: String,
    /// The fully resolved configuration, in config-file syntax.
    pub config: String,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    pub deterministic: bool,
    pub rng: String,
    pub stream_rule: String,
    pub subrun_rule: String,
    pub spectral_digest: Option<String>,
    pub kernel_digest: Option<String>,
    /// Unix seconds; left out of deterministic runs.
    pub started: Option<u64>,
    pub finished: Option<u64>,
    pub assertions: Vec<Assertion>,
    pub outputs: Vec<OutputFile>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn resolved_config(&self) -> Result<Config> {
        Config::parse(&self.config)
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.status != Status::Fail)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub(crate) fn spectral_data(config: &Config) -> Result<SpectralData> {
    let grid = config.spectral_grid()?;
    ground_state(&grid, &config.potential()?, config.eigenpairs())
}

pub(crate) fn sampler_params(config: &Config, ctx: &RunContext, subrun: u64, init: InitStrategy) -> SamplerParams {
    let s = &config.sampler;
    SamplerParams {
        n_sweeps: s.sweeps as u64,
        burn_in: s.burn_in as u64,
        thinning: s.thinning as u64,
        block_len_max: s.block_len_max,
        move_mix: crate::mcmc::MoveMix {
            bridge: s.bridge_fraction,
            endpoint: 1.0 - s.bridge_fraction,
        },
        seed: subrun_seed(ctx.seed, subrun),
        chains: s.chains,
        workers: ctx.workers,
        revalidate_every: s.revalidate_every as u64,
        init,
    }
}

/// `|a − b| ≤ k·sqrt(sa² + sb²)`.
pub(crate) fn within(a: f64, b: f64, sa: f64, sb: f64, k: f64) -> bool {
    (a - b).abs() <= k * (sa * sa + sb * sb).sqrt()
}

/// Runs the study and returns its report without touching the disk.
pub fn run_study(spec: &StudySpec, ctx: &RunContext) -> Result<StudyReport> {
    let mut report = match spec.study {
        Study::Pphi1Validation => pphi1::run(&spec.config, ctx)?,
        Study::Tightness => tightness::run(&spec.config, ctx)?,
        Study::PhaseTransition => phase::run(&spec.config, ctx)?,
        Study::CltDiffusion => clt::run(&spec.config, ctx)?,
        Study::PolaronEnergy => polaron::run(&spec.config, ctx)?,
        Study::ClusterIdentity => cluster_identity::run(&spec.config, ctx)?,
    };
    for name in spec.study.assertions() {
        if report.assertion(name).is_none() {
            report
                .assertions
                .push(Assertion::check(name, false, "assertion was not evaluated"));
        }
    }
    Ok(report)
}

/// Runs the study and writes `<out>/<id>/manifest.json` plus its tables.
pub fn run_and_write(spec: &StudySpec, ctx: &RunContext, out_root: &Path) -> Result<RunManifest> {
    let started = (!ctx.deterministic).then(unix_now);
    let report = run_study(spec, ctx)?;
    write_run(spec.study.name(), &spec.config, ctx, &report, started, out_root)
}

/// Eigenvalues and ground state of the configured Hamiltonian, with the
/// closed-form check where one exists.
pub fn spectral_report(config: &Config) -> Result<StudyReport> {
    let sd = spectral_data(config)?;
    let mut report = StudyReport {
        spectral_digest: Some(sd.digest()),
        ..StudyReport::default()
    };
    report.assertions.push(pphi1::anchor(&sd));
    let mut levels = Table::new("eigenvalues.csv", &["n", "energy"]);
    for (n, e) in sd.energies.iter().enumerate() {
        levels.push(vec![n.to_string(), csv::float(*e)]);
    }
    let mut psi = Table::new("ground_state.csv", &["x", "psi0", "nu"]);
    for (i, x) in sd.grid.nodes().into_iter().enumerate() {
        psi.push_floats(&[x, sd.psi0[i], sd.nu[i]]);
    }
    report.tables.push(levels);
    report.tables.push(psi);
    report.note("e0", sd.e0);
    report.note("gap", sd.gap);
    report.note("matrix_gap", sd.matrix_gap());
    report.note("edge_amplitude", sd.edge_amplitude);
    report.note("degenerate", sd.degenerate);
    Ok(report)
}

/// Writes the spectral tables and manifest under `<out>/<id>/`, with
/// `spectral` as the default id.
pub fn run_spectral(config: &Config, ctx: &RunContext, out_root: &Path) -> Result<RunManifest> {
    let started = (!ctx.deterministic).then(unix_now);
    let report = spectral_report(config)?;
    let mut config = config.clone();
    if config.out.id.is_empty() {
        config.out.id = "spectral".into();
    }
    write_run("spectral", &config, ctx, &report, started, out_root)
}

fn write_run(
    study: &str,
    config: &Config,
    ctx: &RunContext,
    report: &StudyReport,
    started: Option<u64>,
    out_root: &Path,
) -> Result<RunManifest> {
    let id = config.experiment_id();
    let dir = out_root.join(&id);
    fs::create_dir_all(&dir)?;
    let mut outputs = Vec::with_capacity(report.tables.len());
    for t in &report.tables {
        let text = t.to_csv();
        fs::write(dir.join(&t.file), &text)?;
        outputs.push(OutputFile {
            file: t.file.clone(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        });
    }
    let manifest = RunManifest {
        id,
        study: study.to_string(),
        config: config.to_text(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: ctx.seed,
        workers: ctx.workers,
        deterministic: ctx.deterministic,
        rng: RNG_NAME.to_string(),
        stream_rule: STREAM_RULE.to_string(),
        subrun_rule: SUBRUN_RULE.to_string(),
        spectral_digest: report.spectral_digest.clone(),
        kernel_digest: report.kernel_digest.clone(),
        started,
        finished: (!ctx.deterministic).then(unix_now),
        assertions: report.assertions.clone(),
        outputs,
        summary: report.summary.clone(),
        notes: report.notes.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subrun_seeds_differ() {
        let s: Vec<u64> = (0..4).map(|k| subrun_seed(1, k)).collect();
        assert!(s.windows(2).all(|w| w[0] != w[1]));
        assert_ne!(subrun_seed(1, 0), 1);
    }

    #[test]
    fn every_variant_default_validates() {
        for s in Study::ALL {
            let c = Config::for_variant(s.name()).unwrap();
            let spec = StudySpec::new(c).unwrap();
            assert_eq!(spec.study, s);
        }
    }

    #[test]
    fn variant_ranges_are_checked() {
        let mut c = Config::for_variant("phase_transition").unwrap();
        c.model.gamma = 2.5;
        let err = StudySpec::new(c).unwrap_err();
        assert!(err.to_string().contains("model.gamma"), "{err}");
        let mut c = Config::for_variant("pphi1_validation").unwrap();
        c.model.lambda = 0.1;
        assert!(StudySpec::new(c).is_err());
    }
}
