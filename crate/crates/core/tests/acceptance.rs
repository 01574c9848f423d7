//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use pathgibbs::config::Config;
use pathgibbs::experiments::{run_and_write, RunContext, RunManifest, Status, StudySpec};
use pathgibbs::mcmc::chain_rng;
use pathgibbs::mcmc::surrogate::{total_variation, DiscreteSurrogate};
use pathgibbs::model::{check_kernel_conditions, Dispersion, GroundStateTable, NelsonSpec, RhoProfile, Verdict};
use pathgibbs::{ground_state, BoundaryCondition, EnergyForm, GibbsModel, Grid1D, PairKernelSpec, PotentialSpec, TimeGrid};

const SEED: u64 = 20_240_611;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

/// A finished deterministic run and where it was written.
struct Run {
    manifest: RunManifest,
    root: tempfile::TempDir,
}

impl Run {
    fn status(&self, name: &str) -> Status {
        self.manifest
            .assertions
            .iter()
            .find(|a| a.name == name)
            .map_or(Status::Fail, |a| a.status)
    }

    fn passed(&self, names: &[&str]) -> bool {
        names.iter().all(|n| self.status(n) == Status::Pass)
    }

    fn details(&self, names: &[&str]) -> String {
        self.manifest
            .assertions
            .iter()
            .filter(|a| names.contains(&a.name.as_str()))
            .map(|a| a.summary_line())
            .collect::<Vec<_>>()
            .join(" | ")
    }

    fn dir(&self) -> std::path::PathBuf {
        self.root.path().join(&self.manifest.id)
    }
}

fn run(config: Config) -> Run {
    let spec = StudySpec::new(config).expect("valid config");
    let root = tempfile::tempdir().expect("temp dir");
    let manifest = run_and_write(&spec, &RunContext::new(SEED, 1, true), root.path()).expect("study runs");
    Run { manifest, root }
}

fn variant(name: &str, edits: impl FnOnce(&mut Config)) -> Config {
    let mut c = Config::for_variant(name).unwrap();
    edits(&mut c);
    c
}

fn timed(budget: Duration, elapsed: Duration, o: Outcome) -> Outcome {
    let within = elapsed <= budget;
    outcome(
        o.ok && within,
        format!("{} [{:.1}s, budget {}s]", o.detail, elapsed.as_secs_f64(), budget.as_secs()),
    )
}

fn spectral_anchors() -> Outcome {
    let start = Instant::now();
    let grid = Grid1D::symmetric(10.0, 2001).unwrap();
    let h = ground_state(&grid, &PotentialSpec::Harmonic { omega: 1.0 }, 4).unwrap();
    let harmonic_time = start.elapsed();
    let b = ground_state(&grid, &PotentialSpec::Box { width: 20.0 }, 4).unwrap();
    let box_e0 = PI * PI / 800.0;
    let ok = (h.e0 - 0.5).abs() <= 1e-6
        && (h.gap - 1.0).abs() <= 1e-4
        && (b.e0 - box_e0).abs() <= 1e-7
        && harmonic_time < Duration::from_secs(5);
    outcome(
        ok,
        format!(
            "harmonic E0 {:.9} gap {:.7} in {:.2}s; box E0 {:.10} vs {box_e0:.10}",
            h.e0,
            h.gap,
            harmonic_time.as_secs_f64(),
            b.e0
        ),
    )
}

/// Free-process runs for a harmonic and a double-well potential.
fn pphi1_runs() -> (Vec<Run>, Duration) {
    let start = Instant::now();
    let harmonic = run(variant("pphi1_validation", |c| c.out.id = "pphi1_harmonic".into()));
    let double_well = run(variant("pphi1_validation", |c| {
        c.spectral.potential = "double_well".into();
        c.spectral.beta = 0.25;
        c.spectral.half_width = 7.0;
        c.spectral.points = 281;
        c.out.id = "pphi1_double_well".into();
    }));
    (vec![harmonic, double_well], start.elapsed())
}

fn pphi1_correctness(runs: &[Run], elapsed: Duration) -> Outcome {
    let names = ["exact_marginal", "mcmc_marginal", "detailed_balance"];
    let ok = runs.iter().all(|r| r.passed(&names));
    let detail = runs.iter().map(|r| r.details(&names)).collect::<Vec<_>>().join(" || ");
    timed(Duration::from_secs(120), elapsed, outcome(ok, detail))
}

fn dlr_shadow(runs: &[Run], elapsed: Duration) -> Outcome {
    let ok = runs.iter().all(|r| r.passed(&["dlr_consistency"]));
    let detail = runs.iter().map(|r| r.details(&["dlr_consistency"])).collect::<Vec<_>>().join(" || ");
    timed(Duration::from_secs(600), elapsed, outcome(ok, format!("T = 4, 8: {detail}")))
}

fn study(name: &str, budget_secs: u64, assertions: &[&str]) -> (Run, Outcome) {
    let start = Instant::now();
    let r = run(Config::for_variant(name).unwrap());
    let o = outcome(r.passed(assertions), r.details(assertions));
    let o = timed(Duration::from_secs(budget_secs), start.elapsed(), o);
    (r, o)
}

fn surrogate_exactness() -> Outcome {
    let start = Instant::now();
    let sd = ground_state(&Grid1D::symmetric(6.0, 241).unwrap(), &PotentialSpec::DoubleWell { beta: 0.25 }, 8).unwrap();
    let model = GibbsModel::new(
        TimeGrid::new(0.5, 2).unwrap(),
        1,
        Some(PotentialSpec::DoubleWell { beta: 0.25 }),
        Some(PairKernelSpec::BoundedDecay { r: 1.0, alpha: 2.0 }),
        0.3,
        BoundaryCondition::FreeStationary {
            ground_state: GroundStateTable::from_spectral(&sd),
        },
        EnergyForm::OnsitePair,
    )
    .unwrap();
    let s = DiscreteSurrogate::new(&model, vec![-1.0, 0.0, 1.0], 3).unwrap();
    let target = s.target().unwrap();
    let steps = 10_000_000u64;
    let counts = s.run(0, steps, &mut chain_rng(SEED, 0));
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
    let tv = total_variation(&empirical, &target);
    timed(
        Duration::from_secs(300),
        start.elapsed(),
        outcome(tv <= 1e-3, format!("TV {tv:.2e} over {} states after {steps} steps", target.len())),
    )
}

fn condition_checker() -> Outcome {
    let start = Instant::now();
    let spec = |rho| NelsonSpec {
        dim: 3,
        rho_hat: rho,
        omega: Dispersion::Linear { c: 1.0 },
        sign: 1.0,
        r_max: 8.0,
        nr: 65,
        quad_tol: 1e-9,
    };
    let compact = check_kernel_conditions(
        &spec(RhoProfile::Annulus {
            amp: 1.0,
            k_min: 0.5,
            k_max: 2.0,
        }),
        0.1,
    )
    .unwrap();
    let infrared = check_kernel_conditions(
        &spec(RhoProfile::Annulus {
            amp: 1.0,
            k_min: 0.0,
            k_max: 2.0,
        }),
        0.1,
    )
    .unwrap();
    let cubic = infrared.row("cond2:omega^-3").map(|r| r.verdict);
    let ok = compact.verdict("cond2") == Verdict::Finite && cubic == Some(Verdict::Divergent);
    timed(
        Duration::from_secs(60),
        start.elapsed(),
        outcome(
            ok,
            format!("compact support away from 0: cond2 {:?}; rho(0) != 0 without cutoff: omega^-3 integral {:?}", compact.verdict("cond2"), cubic),
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

/// Reruns every study from its manifest alone and compares the bytes.
fn determinism(runs: &[&Run]) -> Outcome {
    let mut bad = Vec::new();
    for r in runs {
        let path = r.dir().join("manifest.json");
        let m = RunManifest::read(&path).unwrap();
        let spec = StudySpec::new(m.resolved_config().unwrap()).unwrap();
        let root = tempfile::tempdir().unwrap();
        run_and_write(&spec, &RunContext::new(m.seed, 1, true), root.path()).unwrap();
        if snapshot(&r.dir()) != snapshot(&root.path().join(&m.id)) {
            bad.push(m.id.clone());
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} studies reproduced byte for byte from their manifests", runs.len())
        } else {
            format!("differences in {}", bad.join(", "))
        },
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    report("spectral_anchors", spectral_anchors());
    let (pphi1, pphi1_time) = pphi1_runs();
    report("pphi1_correctness", pphi1_correctness(&pphi1, pphi1_time));
    report("dlr_shadow", dlr_shadow(&pphi1, pphi1_time));
    let (cluster, o) = study("cluster_identity", 600, &["identity", "loose_ends", "zero_coupling", "eta_decreasing"]);
    report("cluster_identity", o);
    report("surrogate_mcmc_exactness", surrogate_exactness());
    let (phase, o) = study("phase_transition", 3600, &["antisymmetry", "monotone_in_t", "transfer_oracle"]);
    report("phase_transition_structure", o);
    let (clt, o) = study("clt_diffusion", 3600, &["free_anchor", "upper_bound", "positivity", "fourth_moment"]);
    report("diffusion_constant", o);
    let (polaron, o) = study("polaron_energy", 3600, &["zero_coupling", "monotone", "perturbative_slope"]);
    report("polaron_energy", o);
    report("condition_checker", condition_checker());
    let (tightness, _) = study("tightness", 3600, &["zero_coupling_tail", "no_upward_trend", "splice_bound"]);
    let all: Vec<&Run> = pphi1.iter().chain([&cluster, &phase, &clt, &polaron, &tightness]).collect();
    report("determinism", determinism(&all));

    let failed = results.iter().filter(|(_, o)| !o.ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
