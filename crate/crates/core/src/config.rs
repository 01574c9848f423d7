//! Flat `section.key = value` run configuration.
//!
//! Sections are `spectral`, `model`, `sampler`, `study` and `out`. Lines
//! starting with `#` are comments. Lists are comma separated. Keys not
//! listed in [`Config::describe`] are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Dispersion, NelsonSpec, PairKernelSpec, RhoProfile, TimeGrid};
use crate::spectral::{Grid1D, PotentialSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    /// `harmonic`, `double_well`, `confining` or `box`.
    pub potential: String,
    pub omega: f64,
    pub beta: f64,
    pub a: f64,
    pub s: f64,
    pub width: f64,
    pub half_width: f64,
    pub points: usize,
    /// Eigenpairs kept; 0 keeps the full spectrum.
    pub eigenpairs: usize,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            potential: "harmonic".into(),
            omega: 1.0,
            beta: 0.25,
            a: 1.0,
            s: 2.0,
            width: 1.0,
            half_width: 6.0,
            points: 241,
            eigenpairs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub t_half: f64,
    pub intervals: usize,
    pub dim: usize,
    pub lambda: f64,
    /// `none`, `quadratic_longrange`, `bounded_decay`, `nelson` or `polaron`.
    pub kernel: String,
    pub alpha: f64,
    pub gamma: f64,
    pub r: f64,
    pub kappa: f64,
    pub omega0: f64,
    /// Polaron core radius; 0 means `√b`.
    pub eps: f64,
    pub sign: f64,
    /// `zero`, `gaussian`, `annulus` or `inverse_k`.
    pub rho: String,
    pub rho_amp: f64,
    pub rho_sigma: f64,
    pub k_min: f64,
    pub k_max: f64,
    /// `linear`, `constant` or `massive`.
    pub dispersion: String,
    pub dispersion_c: f64,
    pub dispersion_omega0: f64,
    pub mass: f64,
    pub nelson_r_max: f64,
    pub nelson_nr: usize,
    pub nelson_tol: f64,
    /// Endpoint value for pinned boundaries.
    pub pin: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            t_half: 4.0,
            intervals: 32,
            dim: 1,
            lambda: 0.0,
            kernel: "none".into(),
            alpha: 1.0,
            gamma: 2.0,
            r: 1.0,
            kappa: 1.0,
            omega0: 1.0,
            eps: 0.0,
            sign: 1.0,
            rho: "gaussian".into(),
            rho_amp: 1.0,
            rho_sigma: 1.0,
            k_min: 0.0,
            k_max: 6.0,
            dispersion: "linear".into(),
            dispersion_c: 1.0,
            dispersion_omega0: 1.0,
            mass: 1.0,
            nelson_r_max: 12.0,
            nelson_nr: 241,
            nelson_tol: 1e-8,
            pin: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub block_len_max: usize,
    pub bridge_fraction: f64,
    pub chains: usize,
    pub workers: usize,
    pub revalidate_every: usize,
    pub seed: Option<u64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            sweeps: 20_000,
            burn_in: 1_000,
            thinning: 1,
            block_len_max: 16,
            bridge_fraction: 0.8,
            chains: 2,
            workers: 1,
            revalidate_every: 1_000,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// `pphi1_validation`, `tightness`, `phase_transition`, `clt_diffusion`,
    /// `polaron_energy` or `cluster_identity`.
    pub variant: String,
    /// Exact-sampler path count.
    pub samples: usize,
    pub t_ladder: Vec<f64>,
    pub coupling_ladder: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    /// Half-width of the middle window for conditional statistics.
    pub window: f64,
    pub max_lag: usize,
    pub batches: usize,
    pub rhat_max: f64,
    pub splice_tau: f64,
    /// Assert `D̂ > 0` (needs the positivity condition).
    pub cond3: bool,
    pub delta: f64,
    /// Largest coupling used for the perturbative slope fit.
    pub slope_max: f64,
    pub oracle_paths: usize,
    pub cluster_intervals: Vec<usize>,
    pub cluster_positions: Vec<usize>,
    pub cluster_lambdas: Vec<f64>,
    pub eta_lambdas: Vec<f64>,
    pub eta_intervals: usize,
    pub eta_positions: usize,
    pub cluster_half_width: f64,
    pub cluster_b_min: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            variant: "pphi1_validation".into(),
            samples: 1_000_000,
            t_ladder: vec![4.0, 8.0],
            coupling_ladder: vec![0.0],
            alpha_grid: vec![0.0, 1.0],
            beta_grid: vec![0.25],
            window: 1.0,
            max_lag: 8,
            batches: 20,
            rhat_max: 1.1,
            splice_tau: 0.5,
            cond3: false,
            delta: 0.5,
            slope_max: 0.2,
            oracle_paths: 20_000,
            cluster_intervals: vec![2, 3, 4, 5, 6],
            cluster_positions: vec![2, 3, 5],
            cluster_lambdas: vec![-0.1, -0.05, -0.01, 0.01, 0.05, 0.1],
            eta_lambdas: vec![0.1, 0.05, 0.02, 0.01, 0.005, 0.001],
            eta_intervals: 6,
            eta_positions: 3,
            cluster_half_width: 2.0,
            cluster_b_min: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutSection {
    pub dir: String,
    /// Experiment id; empty means the study variant.
    pub id: String,
}

impl Default for OutSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            id: String::new(),
        }
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub spectral: SpectralSection,
    pub model: ModelSection,
    pub sampler: SamplerSection,
    pub study: StudySection,
    pub out: OutSection,
}

const SECTIONS: [&str; 5] = ["spectral", "model", "sampler", "study", "out"];

/// Reads `value` with the JSON shape of `default`.
fn parse_value(key: &str, raw: &str, default: &Value) -> Result<Value> {
    let number = |s: &str| -> Result<Value> {
        let s = s.trim();
        if let Ok(u) = s.parse::<u64>() {
            return Ok(Value::from(u));
        }
        if let Ok(i) = s.parse::<i64>() {
            return Ok(Value::from(i));
        }
        match s.parse::<f64>() {
            Ok(f) if f.is_finite() => Ok(Value::from(f)),
            _ => Err(Error::config(key, format!("expected a number, got `{s}`"))),
        }
    };
    match default {
        Value::Bool(_) => match raw {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(Error::config(key, format!("expected true or false, got `{raw}`"))),
        },
        Value::Number(_) => number(raw),
        Value::Array(_) => {
            if raw.trim().is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            raw.split(',').map(number).collect::<Result<Vec<_>>>().map(Value::Array)
        }
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Null => number(raw),
        Value::Object(_) => Err(Error::config(key, "nested values are not supported")),
    }
}

fn render_value(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::Array(items) => Some(items.iter().filter_map(render_value).collect::<Vec<_>>().join(", ")),
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn section<T: Serialize + DeserializeOwned>(name: &str, base: &T, entries: &BTreeMap<String, (String, usize)>) -> Result<T> {
    let mut obj = match serde_json::to_value(base)? {
        Value::Object(m) => m,
        _ => unreachable!("sections serialize to objects"),
    };
    for (key, (raw, line)) in entries {
        let Some(field) = key.strip_prefix(name).and_then(|k| k.strip_prefix('.')) else {
            continue;
        };
        let Some(default) = obj.get(field) else {
            return Err(Error::config(key.clone(), format!("unknown key (line {line})")));
        };
        let v = parse_value(key, raw, default)?;
        obj.insert(field.to_string(), v);
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::config(name, e.to_string()))
}

impl Config {
    /// Defaults for one study variant.
    pub fn for_variant(variant: &str) -> Result<Self> {
        let mut c = Config::default();
        c.study.variant = variant.to_string();
        match variant {
            "pphi1_validation" => {}
            "tightness" => {
                c.spectral.potential = "double_well".into();
                c.spectral.beta = 0.25;
                c.spectral.half_width = 7.0;
                c.model.kernel = "bounded_decay".into();
                c.model.alpha = 3.0;
                c.model.r = 1.0;
                c.model.lambda = 0.05;
                c.model.t_half = 2.0;
                c.model.intervals = 16;
                c.study.t_ladder = vec![2.0, 4.0, 8.0];
                c.study.coupling_ladder = vec![0.0, 0.05];
                c.sampler.sweeps = 10_000;
            }
            "phase_transition" => {
                c.spectral.potential = "double_well".into();
                c.spectral.beta = 1.0;
                c.spectral.half_width = 5.0;
                c.model.kernel = "quadratic_longrange".into();
                c.model.gamma = 2.0;
                c.model.lambda = 1.0;
                c.model.pin = 1.0;
                c.model.intervals = 0;
                c.model.t_half = 2.0;
                c.study.t_ladder = vec![2.0, 4.0, 8.0];
                c.study.alpha_grid = vec![0.0, 0.5];
                c.study.beta_grid = vec![1.0];
                c.study.window = 0.25;
                c.sampler.sweeps = 12_000;
            }
            "clt_diffusion" => {
                c.model.kernel = "nelson".into();
                c.model.dim = 3;
                c.model.t_half = 8.0;
                c.model.intervals = 64;
                c.model.rho = "gaussian".into();
                c.model.rho_amp = 1.0;
                c.model.rho_sigma = 1.0;
                c.model.dispersion = "constant".into();
                c.model.dispersion_omega0 = 1.0;
                c.study.coupling_ladder = vec![0.0, 0.5, 1.0];
                c.study.cond3 = true;
                c.sampler.sweeps = 40_000;
            }
            "polaron_energy" => {
                c.model.kernel = "polaron".into();
                c.model.dim = 3;
                c.model.kappa = 1.0;
                c.model.omega0 = 1.0;
                c.model.eps = 0.25;
                c.model.intervals = 0;
                c.model.t_half = 2.0;
                c.study.t_ladder = vec![2.0, 4.0, 8.0];
                c.study.coupling_ladder = vec![0.0, 0.05, 0.1, 0.2, 0.4];
                c.study.slope_max = 0.2;
                c.sampler.sweeps = 6_000;
                c.sampler.block_len_max = 8;
            }
            "cluster_identity" => {
                c.spectral.potential = "double_well".into();
                c.spectral.beta = 0.25;
                c.model.kernel = "bounded_decay".into();
                c.model.alpha = 2.0;
            }
            other => return Err(Error::config("study.variant", format!("unknown study `{other}`"))),
        }
        Ok(c)
    }

    /// Parses configuration text on top of the defaults of its
    /// `study.variant` (or `pphi1_validation`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(line, format!("line {} is not `key = value`", i + 1)));
            };
            let key = key.trim().to_string();
            let prefix = key.split('.').next().unwrap_or("");
            if !SECTIONS.contains(&prefix) || !key.contains('.') {
                return Err(Error::config(key, format!("unknown key (line {})", i + 1)));
            }
            if entries.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(Error::config(key, "given twice"));
            }
        }
        let variant = entries
            .get("study.variant")
            .map(|v| v.0.clone())
            .unwrap_or_else(|| "pphi1_validation".into());
        let base = Config::for_variant(&variant)?;
        Ok(Config {
            spectral: section("spectral", &base.spectral, &entries)?,
            model: section("model", &base.model, &entries)?,
            sampler: section("sampler", &base.sampler, &entries)?,
            study: section("study", &base.study, &entries)?,
            out: section("out", &base.out, &entries)?,
        })
    }

    /// Every key with its resolved value, one per line; parses back to an
    /// identical configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sections: [(&str, Value); 5] = [
            ("spectral", serde_json::to_value(&self.spectral).expect("serializable")),
            ("model", serde_json::to_value(&self.model).expect("serializable")),
            ("sampler", serde_json::to_value(&self.sampler).expect("serializable")),
            ("study", serde_json::to_value(&self.study).expect("serializable")),
            ("out", serde_json::to_value(&self.out).expect("serializable")),
        ];
        for (name, v) in sections {
            if let Value::Object(map) = v {
                for (k, v) in map {
                    if let Some(s) = render_value(&v) {
                        out.push_str(&format!("{name}.{k} = {s}\n"));
                    }
                }
            }
        }
        out
    }

    /// Key names with their default values, for documentation and error
    /// messages.
    pub fn describe() -> Vec<(String, String)> {
        Config::default()
            .to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .chain(std::iter::once(("sampler.seed".to_string(), "(none)".to_string())))
            .collect()
    }

    pub fn experiment_id(&self) -> String {
        if self.out.id.is_empty() {
            self.study.variant.clone()
        } else {
            self.out.id.clone()
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out.dir)
    }

    pub fn potential(&self) -> Result<PotentialSpec> {
        let s = &self.spectral;
        let p = match s.potential.as_str() {
            "harmonic" => PotentialSpec::Harmonic { omega: s.omega },
            "double_well" => PotentialSpec::DoubleWell { beta: s.beta },
            "confining" => PotentialSpec::Confining { a: s.a, s: s.s },
            "box" => PotentialSpec::Box { width: s.width },
            other => return Err(Error::config("spectral.potential", format!("unknown potential `{other}`"))),
        };
        p.validate().map_err(|e| Error::config("spectral.potential", e.to_string()))?;
        Ok(p)
    }

    pub fn spectral_grid(&self) -> Result<Grid1D> {
        Grid1D::symmetric(self.spectral.half_width, self.spectral.points)
            .map_err(|e| Error::config("spectral.points", e.to_string()))
    }

    /// Eigenpairs to request for the given grid.
    pub fn eigenpairs(&self) -> usize {
        let interior = self.spectral.points.saturating_sub(2);
        match self.spectral.eigenpairs {
            0 => interior,
            k => k.min(interior),
        }
    }

    pub fn time_grid(&self, t_half: f64) -> Result<TimeGrid> {
        let m = &self.model;
        if m.intervals == 0 {
            // Spacing fixed by the base window.
            let b = 2.0 * m.t_half / 16.0;
            return TimeGrid::with_spacing(t_half, b).map_err(|e| Error::config("model.t_half", e.to_string()));
        }
        let n = ((m.intervals as f64) * t_half / m.t_half).round() as usize;
        TimeGrid::new(t_half, n + n % 2).map_err(|e| Error::config("model.intervals", e.to_string()))
    }

    pub fn nelson(&self) -> Result<NelsonSpec> {
        let m = &self.model;
        let rho_hat = match m.rho.as_str() {
            "zero" => RhoProfile::Zero,
            "gaussian" => RhoProfile::Gaussian {
                amp: m.rho_amp,
                sigma: m.rho_sigma,
            },
            "annulus" => RhoProfile::Annulus {
                amp: m.rho_amp,
                k_min: m.k_min,
                k_max: m.k_max,
            },
            "inverse_k" => RhoProfile::InverseK {
                amp: m.rho_amp,
                k_min: m.k_min,
                k_max: m.k_max,
            },
            other => return Err(Error::config("model.rho", format!("unknown profile `{other}`"))),
        };
        let omega = match m.dispersion.as_str() {
            "linear" => Dispersion::Linear { c: m.dispersion_c },
            "constant" => Dispersion::Constant {
                omega0: m.dispersion_omega0,
            },
            "massive" => Dispersion::Massive { mass: m.mass },
            other => return Err(Error::config("model.dispersion", format!("unknown dispersion `{other}`"))),
        };
        let spec = NelsonSpec {
            dim: m.dim,
            rho_hat,
            omega,
            sign: m.sign,
            r_max: m.nelson_r_max,
            nr: m.nelson_nr,
            quad_tol: m.nelson_tol,
        };
        spec.validate().map_err(|e| Error::config("model.kernel", e.to_string()))?;
        Ok(spec)
    }

    /// Pair kernel with the model's shape parameters; `alpha` overrides the
    /// amplitude where a study sweeps it.
    pub fn kernel(&self) -> Result<Option<PairKernelSpec>> {
        let m = &self.model;
        let k = match m.kernel.as_str() {
            "none" => return Ok(None),
            "quadratic_longrange" => PairKernelSpec::QuadraticLongrange {
                alpha: m.alpha,
                gamma: m.gamma,
            },
            "bounded_decay" => PairKernelSpec::BoundedDecay { r: m.r, alpha: m.alpha },
            "nelson" => PairKernelSpec::Nelson(self.nelson()?),
            "polaron" => PairKernelSpec::Polaron {
                kappa: m.kappa,
                omega0: m.omega0,
                eps: (m.eps > 0.0).then_some(m.eps),
                sign: m.sign,
            },
            other => return Err(Error::config("model.kernel", format!("unknown kernel `{other}`"))),
        };
        k.validate().map_err(|e| Error::config("model.kernel", e.to_string()))?;
        Ok(Some(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        for v in ["pphi1_validation", "tightness", "phase_transition", "clt_diffusion", "polaron_energy", "cluster_identity"] {
            let mut c = Config::for_variant(v).unwrap();
            c.sampler.seed = Some(7);
            c.model.nelson_tol = 1e-9;
            let back = Config::parse(&c.to_text()).unwrap();
            assert_eq!(back, c, "{v}");
        }
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let err = Config::parse("sampler.sweeps = 10\nmodel.lambd = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("model.lambd"), "{err}");
        let err = Config::parse("colour.red = 1").unwrap_err();
        assert!(err.to_string().contains("colour.red"));
    }

    #[test]
    fn values_are_typed() {
        let c = Config::parse("# comment\nstudy.variant = polaron_energy\nstudy.t_ladder = 1, 2.5\nsampler.seed = 3\nstudy.cond3 = true\n").unwrap();
        assert_eq!(c.study.t_ladder, vec![1.0, 2.5]);
        assert_eq!(c.sampler.seed, Some(3));
        assert!(c.study.cond3);
        assert_eq!(c.model.kernel, "polaron");
        assert!(Config::parse("sampler.sweeps = many").is_err());
        assert!(Config::parse("sampler.sweeps = 1.5").is_err());
        assert!(Config::parse("study.cond3 = yes").is_err());
        assert!(Config::parse("study.variant = unknown").is_err());
    }

    #[test]
    fn domain_objects_resolve() {
        let c = Config::for_variant("clt_diffusion").unwrap();
        assert!(matches!(c.kernel().unwrap(), Some(PairKernelSpec::Nelson(_))));
        assert_eq!(c.time_grid(8.0).unwrap().n, 64);
        let p = Config::for_variant("polaron_energy").unwrap();
        assert_eq!(p.time_grid(4.0).unwrap().b(), 0.25);
        assert!(Config::parse("spectral.potential = quartic").unwrap().potential().is_err());
    }
}
