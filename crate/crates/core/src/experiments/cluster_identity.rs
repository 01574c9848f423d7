//! Cluster expansion against direct enumeration on the finite surrogate,
//! and the decay of cluster size sums as the coupling shrinks.

use super::csv::{float, Table};
use super::{Assertion, RunContext, StudyReport};
use crate::cluster::{
    cluster_estimate_check, loose_end_weights, partition_function_cluster, partition_function_direct, Spacing, SurrogateSpec,
};
use crate::config::Config;
use crate::error::Result;

/// Relative tolerance of the identity check.
const IDENTITY_TOL: f64 = 1e-9;
/// Largest loose-end weight accepted.
const LOOSE_TOL: f64 = 1e-14;
/// Rounding allowed in the directly enumerated `Z = 1` at zero coupling.
const ZERO_DIRECT_TOL: f64 = 1e-12;

fn surrogate_spec(config: &Config, n: usize, m: usize) -> Result<SurrogateSpec> {
    Ok(SurrogateSpec {
        potential: config.potential()?,
        kernel: config.kernel()?.expect("validated kernel"),
        n_intervals: n,
        n_positions: m,
        half_width: config.study.cluster_half_width,
        spacing: Spacing::Coupled {
            b_min: config.study.cluster_b_min,
        },
    })
}

pub(super) fn run(config: &Config, ctx: &RunContext) -> Result<StudyReport> {
    let mut report = StudyReport::default();
    let st = &config.study;
    let mut table = Table::new("cluster.csv", &["order", "partial_sum", "direct_value", "lambda", "N", "n_positions"]);
    let mut worst_rel = 0.0_f64;
    let mut truncated = Vec::new();
    let mut zero_cluster = 0.0_f64;
    let mut zero_direct = 0.0_f64;
    let mut loose_count = 0usize;
    let mut loose_worst = 0.0_f64;
    let mut lambdas = st.cluster_lambdas.clone();
    if !lambdas.contains(&0.0) {
        lambdas.insert(0, 0.0);
    }
    for &n in &st.cluster_intervals {
        for &m in &st.cluster_positions {
            let spec = surrogate_spec(config, n, m)?;
            for &lambda in &lambdas {
                let s = spec.build(lambda)?;
                let direct = partition_function_direct(&s, lambda)?;
                let sum = partition_function_cluster(&s, lambda, n, ctx.workers)?;
                for (o, p) in sum.partial_sums.iter().enumerate() {
                    table.push(vec![
                        o.to_string(),
                        float(*p),
                        float(direct),
                        float(lambda),
                        n.to_string(),
                        m.to_string(),
                    ]);
                }
                if sum.order < n {
                    truncated.push(format!("N={n} m={m} lambda={lambda}: order {}", sum.order));
                    continue;
                }
                let rel = (sum.z - direct).abs() / direct.abs();
                if lambda == 0.0 {
                    let tail = sum.partial_sums.iter().map(|p| (p - 1.0).abs()).fold(0.0, f64::max);
                    zero_cluster = zero_cluster.max(tail);
                    zero_direct = zero_direct.max((direct - 1.0).abs());
                } else {
                    worst_rel = worst_rel.max(rel);
                    let (count, worst) = loose_end_weights(&s, lambda);
                    loose_count += count;
                    loose_worst = loose_worst.max(worst);
                }
            }
        }
    }
    report.assertions.push(Assertion::check(
        "identity",
        worst_rel <= IDENTITY_TOL && truncated.is_empty(),
        if truncated.is_empty() {
            format!("largest relative error {worst_rel:.2e}")
        } else {
            format!("largest relative error {worst_rel:.2e}; truncated: {}", truncated.join(", "))
        },
    ));
    report.assertions.push(Assertion::check(
        "loose_ends",
        loose_count > 0 && loose_worst <= LOOSE_TOL,
        format!("{loose_count} loose-end configurations, largest |weight| {loose_worst:.2e}"),
    ));
    report.assertions.push(Assertion::check(
        "zero_coupling",
        zero_cluster == 0.0 && zero_direct <= ZERO_DIRECT_TOL,
        format!("at zero coupling: cluster sums off 1 by {zero_cluster:.2e}, direct sums by {zero_direct:.2e}"),
    ));

    let spec = surrogate_spec(config, st.eta_intervals, st.eta_positions)?;
    let mut eta_table = Table::new("eta.csv", &["lambda", "b", "eta", "c", "ratio_test", "vacuous"]);
    let mut etas = Vec::with_capacity(st.eta_lambdas.len());
    for &lambda in &st.eta_lambdas {
        let s = spec.build(lambda)?;
        let fit = cluster_estimate_check(&s, lambda, st.eta_intervals)?;
        eta_table.push(vec![
            float(lambda),
            float(fit.b),
            float(fit.eta),
            float(fit.c),
            fit.ratio_test.to_string(),
            fit.vacuous.to_string(),
        ]);
        etas.push((lambda.abs(), fit.eta));
    }
    etas.sort_by(|a, b| b.0.total_cmp(&a.0));
    let decreasing = etas.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9));
    let shrinks = etas.len() < 2 || etas[etas.len() - 1].1 < etas[0].1;
    report.assertions.push(Assertion::check(
        "eta_decreasing",
        decreasing && shrinks,
        etas.iter().map(|(l, e)| format!("|lambda| {l}: eta {e:.3e}")).collect::<Vec<_>>().join(", "),
    ));
    report.tables.push(table);
    report.tables.push(eta_table);
    Ok(report)
}
