//! Finiteness checks for the radial integrals that gate the Nelson-type
//! kernels.
//!
//! Each integral `S_d ∫ k^{d−1} |ρ̂(k)|² f(k) dk` is split into decades
//! towards `k = 0`. A run of decade increments that stops shrinking means
//! an infrared divergence; geometric shrinking means a finite value, with
//! the remaining tail summed as a geometric series.

use serde::Serialize;

use super::kernel::{sphere_area, Dispersion, NelsonSpec, RhoProfile};
use super::quad;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Finite,
    Divergent,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Finite => "finite",
            Verdict::Divergent => "divergent",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRow {
    /// Condition label and integrand, e.g. `cond2:omega^-3`.
    pub integral: String,
    pub value: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub rows: Vec<ConditionRow>,
    pub delta: f64,
}

impl ConditionReport {
    /// Combined verdict of every row whose label starts with `condition`.
    pub fn verdict(&self, condition: &str) -> Verdict {
        let prefix = format!("{condition}:");
        let mut out = Verdict::Finite;
        for row in self.rows.iter().filter(|r| r.integral.starts_with(&prefix)) {
            match row.verdict {
                Verdict::Divergent => return Verdict::Divergent,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Finite => {}
            }
        }
        out
    }

    pub fn row(&self, integral: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.integral == integral)
    }
}

const MAX_DECADES: usize = 40;
const DIVERGENT_RATIO: f64 = 0.999;
const FINITE_RATIO: f64 = 0.99;

/// `S_d ∫ k^{d−1} |ρ̂|² f(k) dk` with a divergence verdict.
fn radial_integral<F: Fn(f64) -> f64>(dim: usize, rho: &RhoProfile, f: F) -> Result<(f64, Verdict)> {
    let area = sphere_area(dim)?;
    let Some((k_lo, k_hi)) = rho.k_range() else {
        return Ok((0.0, Verdict::Finite));
    };
    if rho.is_zero() {
        return Ok((0.0, Verdict::Finite));
    }
    let g = |k: f64| {
        let r = rho.value(k);
        area * k.powi(dim as i32 - 1) * r * r * f(k)
    };
    // Substituting k = e^u resolves power laws evenly across decades.
    let piece = |a: f64, b: f64| quad::integrate(|u: f64| g(u.exp()) * u.exp(), a.ln(), b.ln(), 1e-300, 1e-10, 2000);

    if k_lo > 0.0 {
        return Ok(match piece(k_lo, k_hi) {
            Ok(q) if q.value.is_finite() => (q.value, Verdict::Finite),
            _ => (f64::NAN, Verdict::Inconclusive),
        });
    }

    let mut increments: Vec<f64> = Vec::new();
    let mut upper = k_hi;
    for _ in 0..MAX_DECADES {
        let lower = upper / 10.0;
        match piece(lower, upper) {
            Ok(q) if q.value.is_finite() => increments.push(q.value.abs()),
            _ => return Ok((f64::NAN, Verdict::Inconclusive)),
        }
        upper = lower;
        let n = increments.len();
        if n >= 4 {
            let last = &increments[n - 4..];
            if last.iter().all(|&v| v == 0.0) {
                break;
            }
            let ratios: Vec<f64> = last.windows(2).map(|w| w[1] / w[0]).collect();
            if ratios.iter().all(|&r| r >= DIVERGENT_RATIO) {
                let total: f64 = increments.iter().sum();
                return Ok((total, Verdict::Divergent));
            }
            if ratios.iter().all(|&r| r <= FINITE_RATIO) && increments[n - 1] <= 1e-14 * increments.iter().sum::<f64>() {
                break;
            }
        }
    }
    let n = increments.len();
    let sum: f64 = increments.iter().sum();
    let r = increments[n - 1] / increments[n - 2];
    if !(r <= FINITE_RATIO) && increments[n - 1] > 0.0 {
        return Ok((sum, Verdict::Inconclusive));
    }
    let tail = if increments[n - 1] > 0.0 { increments[n - 1] * r / (1.0 - r) } else { 0.0 };
    Ok((sum + tail, Verdict::Finite))
}

/// Evaluates the integrals behind the decay, positivity, existence and
/// cluster-expansion conditions on `(ρ̂, ω)`.
pub fn check_kernel_conditions(spec: &NelsonSpec, delta: f64) -> Result<ConditionReport> {
    let omega: Dispersion = spec.omega;
    let w = move |k: f64| omega.value(k);
    type Integrand = Box<dyn Fn(f64) -> f64>;
    let entries: Vec<(&str, Integrand)> = vec![
        ("cond2:omega^-1", Box::new(move |k| w(k).powi(-1))),
        ("cond2:omega^-2", Box::new(move |k| w(k).powi(-2))),
        ("cond2:omega^-3", Box::new(move |k| w(k).powi(-3))),
        ("cond3:k^2 omega^-2", Box::new(move |k| k * k * w(k).powi(-2))),
        ("cond3:k^2 omega^-4", Box::new(move |k| k * k * w(k).powi(-4))),
        ("existence:omega^-3", Box::new(move |k| w(k).powi(-3))),
        ("existence:omega^-1", Box::new(move |k| w(k).powi(-1))),
        ("cluster:omega^-1", Box::new(move |k| w(k).powi(-1))),
        ("cluster:omega^-2-delta", Box::new(move |k| w(k).powf(-2.0 - delta))),
    ];
    let mut rows = Vec::with_capacity(entries.len());
    for (name, f) in entries {
        let (value, verdict) = radial_integral(spec.dim, &spec.rho_hat, f)?;
        rows.push(ConditionRow {
            integral: name.to_string(),
            value,
            verdict,
        });
    }
    Ok(ConditionReport { rows, delta })
}
