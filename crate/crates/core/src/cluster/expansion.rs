//! Cluster weights `K_Γ`, the cluster sum for `Z` and the decay check.
//!
//! Weights are expectations under the product measure `Π ν` on the node
//! positions. Pair factors depend on left endpoints only, so everything is
//! a function of `x_0..x_{N−1}` once `x_N` is integrated out; a chain
//! through the last interval then integrates to zero.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::diagram::{time_mask, ChainCache, ClusterDiagram, PairLayout};
use super::{for_each_assignment, Surrogate};
use crate::error::{Error, Result};
use crate::mcmc::stats::linear_fit;

/// Largest number of stored doubles for the per-configuration tables.
const TABLE_BUDGET: usize = 20_000_000;
/// Largest number of multiply-adds spent on one cluster sum.
const WORK_BUDGET: f64 = 4e10;
/// Largest number of doubles kept in the chain-sum cache per worker.
const CACHE_BUDGET: usize = 8_000_000;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Per-configuration tables over `x_0..x_{N−1}`.
struct Engine {
    n: usize,
    size: usize,
    layout: PairLayout,
    /// `e^{−λW} − 1` per pair.
    pair: Vec<Vec<f64>>,
    /// `Π ν · Π_{k∈S}(g − 1)` per chain set; `None` when it vanishes.
    chain: Vec<Option<Vec<f64>>>,
}

impl Engine {
    fn new(s: &Surrogate, lambda: f64) -> Result<Self> {
        let n = s.n_intervals;
        let m = s.m();
        let size = m.pow(n as u32);
        let layout = PairLayout::new(n);
        let stored = size * (layout.count() + (1 << n));
        if stored > TABLE_BUDGET {
            return Err(Error::Budget(format!("cluster tables need {stored} values (limit {TABLE_BUDGET})")));
        }
        let mut digits = vec![0usize; size * n];
        let mut idx = 0;
        for_each_assignment(n, m, |x| {
            digits[idx * n..(idx + 1) * n].copy_from_slice(x);
            idx += 1;
        });
        let at = |c: usize, k: usize| digits[c * n + k];
        let nu_prod: Vec<f64> = (0..size).map(|c| (0..n).map(|k| s.nu[at(c, k)]).product()).collect();
        let pair = layout
            .pairs
            .iter()
            .map(|&(i, j)| (0..size).map(|c| (-lambda * s.pair_energy(i, j, at(c, i), at(c, j))).exp_m1()).collect())
            .collect();
        let link: Vec<Vec<f64>> = (0..n - 1)
            .map(|k| (0..size).map(|c| s.g[at(c, k)][at(c, k + 1)] - 1.0).collect())
            .collect();
        let chain = (0..1usize << n)
            .map(|set| {
                if set >> (n - 1) & 1 == 1 {
                    return None;
                }
                let mut v = nu_prod.clone();
                for (k, l) in link.iter().enumerate() {
                    if set >> k & 1 == 1 {
                        v.iter_mut().zip(l).for_each(|(a, b)| *a *= b);
                    }
                }
                Some(v)
            })
            .collect();
        Ok(Self {
            n,
            size,
            layout,
            pair,
            chain,
        })
    }

    /// Depth-first walk over pair sets with lowest pair `lowest`, handing
    /// each set with its factor product `Π_{p∈R}(e^{−λW_p} − 1)`.
    fn walk(&self, max_size: usize, lowest: usize, f: &mut impl FnMut(u32, u16, &[f64])) {
        let count = self.layout.count();
        let mut stack: Vec<Vec<f64>> = vec![vec![0.0; self.size]; count + 1];
        stack[0].copy_from_slice(&self.pair[lowest]);
        // Depth d holds the product over pairs chosen among 0..=lowest+d.
        fn rec(
            e: &Engine,
            max_size: usize,
            p: usize,
            depth: usize,
            r: u32,
            rbar: u16,
            stack: &mut [Vec<f64>],
            f: &mut impl FnMut(u32, u16, &[f64]),
        ) {
            if p == e.layout.count() {
                f(r, rbar, &stack[depth]);
                return;
            }
            rec(e, max_size, p + 1, depth, r, rbar, stack, f);
            let (i, j) = e.layout.pairs[p];
            let nb = rbar | 1 << i | 1 << j;
            if nb.count_ones() as usize <= max_size {
                let (lo, hi) = stack.split_at_mut(depth + 1);
                hi[0].iter_mut().zip(&lo[depth]).zip(&e.pair[p]).for_each(|((o, a), b)| *o = a * b);
                rec(e, max_size, p + 1, depth + 1, r | 1 << p, nb, stack, f);
            }
        }
        let (i, j) = self.layout.pairs[lowest];
        let rbar = 1u16 << i | 1 << j;
        if rbar.count_ones() as usize <= max_size {
            rec(self, max_size, lowest + 1, 0, 1 << lowest, rbar, &mut stack, f);
        }
    }

    fn contour_times(&self, r: u32) -> Vec<u16> {
        self.layout.contours(r).into_iter().map(|(_, i)| time_mask(i)).collect()
    }
}

/// Per-task accumulation `Φ[A][n] = Σ_{Γ* = A, |Γ̄| = n} K_Γ`.
struct TaskSum {
    phi: Vec<f64>,
    clusters: u64,
}

type Groups = Vec<(u16, usize, Vec<f64>)>;

fn run_task(e: &Engine, max_size: usize, lowest: usize, cache: &mut HashMap<(Vec<u16>, u16), Groups>, chains: &mut ChainCache, stored: &mut usize) -> TaskSum {
    let n = e.n;
    let width = n + 1;
    let mut phi = vec![0.0; (1usize << (n + 1)) * width];
    let mut clusters = 0u64;
    e.walk(max_size, lowest, &mut |r, rbar, fr| {
        let times = e.contour_times(r);
        let covered = times.iter().fold(0u16, |a, &c| a | c);
        let key = (times, rbar);
        let valid = chains.get(n, &key.0, rbar, max_size);
        clusters += valid.len() as u64;
        let build = |valid: &[u16]| {
            let mut groups: Groups = Vec::new();
            for &set in valid {
                let Some(w) = &e.chain[set as usize] else { continue };
                let a = covered | time_mask(set);
                let sz = (rbar | set).count_ones() as usize;
                match groups.iter_mut().find(|g| g.0 == a && g.1 == sz) {
                    Some(g) => g.2.iter_mut().zip(w).for_each(|(x, y)| *x += y),
                    None => groups.push((a, sz, w.clone())),
                }
            }
            groups
        };
        let mut add = |groups: &Groups| {
            for (a, sz, b) in groups {
                phi[*a as usize * width + sz] += dot(fr, b);
            }
        };
        if let Some(g) = cache.get(&key) {
            add(g);
        } else {
            let groups = build(valid);
            let cost: usize = groups.iter().map(|g| g.2.len()).sum();
            add(&groups);
            if *stored + cost <= CACHE_BUDGET {
                *stored += cost;
                cache.insert(key, groups);
            }
        }
    });
    TaskSum { phi, clusters }
}

/// Outcome of [`partition_function_cluster`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSum {
    pub requested_order: usize,
    /// Largest total size actually summed.
    pub order: usize,
    /// `partial_sums[o]`: contribution of cluster sets with total size ≤ `o`.
    pub partial_sums: Vec<f64>,
    pub z: f64,
    pub clusters: u64,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Pair sets on `j` labelled intervals touching all of them.
fn covering_pair_sets(j: usize) -> f64 {
    (0..=j)
        .map(|i| {
            let sign = if (j - i) % 2 == 0 { 1.0 } else { -1.0 };
            sign * binom(j, i) * 2f64.powi((i * i.saturating_sub(1) / 2) as i32)
        })
        .sum()
}

fn work_estimate(n: usize, order: usize, size: usize) -> f64 {
    (2..=order).map(|j| binom(n, j) * covering_pair_sets(j)).sum::<f64>() * size as f64
}

/// `1 + Σ Π K_Γ` over sets of clusters with pairwise disjoint time-point
/// sets and total size at most `order`. Orders beyond the work budget are
/// cut back; the order used is reported.
pub fn partition_function_cluster(s: &Surrogate, lambda: f64, order: usize, workers: usize) -> Result<ClusterSum> {
    let n = s.n_intervals;
    let requested = order;
    let mut order = order.min(n);
    let e = Engine::new(s, lambda)?;
    while order > 0 && work_estimate(n, order, e.size) > WORK_BUDGET {
        order -= 1;
    }
    let width = n + 1;
    let tasks = e.layout.count();
    let workers = workers.max(1).min(tasks);
    let mut sums: Vec<Option<TaskSum>> = (0..tasks).map(|_| None).collect();
    if order >= 2 {
        let results: Vec<Vec<(usize, TaskSum)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let e = &e;
                    scope.spawn(move || {
                        let mut cache = HashMap::new();
                        let mut chains = ChainCache::default();
                        let mut stored = 0;
                        (w..tasks)
                            .step_by(workers)
                            .map(|t| (t, run_task(e, order, t, &mut cache, &mut chains, &mut stored)))
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("cluster worker panicked")).collect()
        });
        for (t, sum) in results.into_iter().flatten() {
            sums[t] = Some(sum);
        }
    }
    let mut phi = vec![0.0; (1usize << (n + 1)) * width];
    let mut clusters = 0;
    for t in sums.into_iter().flatten() {
        phi.iter_mut().zip(&t.phi).for_each(|(a, b)| *a += b);
        clusters += t.clusters;
    }
    // G[U][k]: sets of disjoint clusters inside U with total size k.
    let full = (1usize << (n + 1)) - 1;
    let mut g = vec![0.0; (full + 1) * width];
    g[0] = 1.0;
    for u in 1..=full {
        let low = u & u.wrapping_neg();
        let rest = u ^ low;
        for k in 0..width {
            g[u * width + k] = g[rest * width + k];
        }
        // Subsets of `rest`, each joined with the lowest element.
        let mut sub = rest;
        loop {
            let a = sub | low;
            let base = a * width;
            if phi[base..base + width].iter().any(|v| *v != 0.0) {
                let other = u ^ a;
                for ka in 1..width {
                    let pa = phi[base + ka];
                    if pa == 0.0 {
                        continue;
                    }
                    for kb in 0..width - ka {
                        g[u * width + ka + kb] += pa * g[other * width + kb];
                    }
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    let mut partial_sums = Vec::with_capacity(order + 1);
    let mut acc = 0.0;
    for k in 0..=order {
        acc += g[full * width + k];
        partial_sums.push(acc);
    }
    Ok(ClusterSum {
        requested_order: requested,
        order,
        z: acc,
        partial_sums,
        clusters,
    })
}

/// `K_Γ` by contraction over the positions at `Γ*` only. Errors on an
/// invalid diagram.
pub fn cluster_weight(s: &Surrogate, d: &ClusterDiagram, lambda: f64) -> Result<f64> {
    if d.n_intervals != s.n_intervals || !d.is_valid() {
        return Err(Error::Precondition("diagram is not a cluster of this surrogate".into()));
    }
    Ok(cluster_weight_unchecked(s, d, lambda))
}

/// [`cluster_weight`] without the validity check, for diagrams that break
/// the loose-end rule.
pub fn cluster_weight_unchecked(s: &Surrogate, d: &ClusterDiagram, lambda: f64) -> f64 {
    let points = d.time_points();
    let slot = |t: usize| points.binary_search(&t).expect("time point of the diagram");
    let pairs: Vec<(usize, usize, usize, usize)> = d
        .contours
        .iter()
        .flat_map(|c| c.pairs.iter())
        .map(|&(i, j)| (i, j, slot(i), slot(j)))
        .collect();
    let links: Vec<(usize, usize)> = d
        .chains
        .iter()
        .flat_map(|ch| ch.start..=ch.end)
        .map(|k| (slot(k), slot(k + 1)))
        .collect();
    let mut total = 0.0;
    for_each_assignment(points.len(), s.m(), |x| {
        let mut w: f64 = x.iter().map(|&p| s.nu[p]).product();
        for &(i, j, si, sj) in &pairs {
            w *= (-lambda * s.pair_energy(i, j, x[si], x[sj])).exp_m1();
        }
        for &(a, c) in &links {
            w *= s.g[x[a]][x[c]] - 1.0;
        }
        total += w;
    });
    total
}

/// Diagrams with one or two pairs whose chain runs all touch the contour
/// time points but leave at least one end dangling. Returns how many there
/// are and the largest `|K|` among them.
pub fn loose_end_weights(s: &Surrogate, lambda: f64) -> (usize, f64) {
    let n = s.n_intervals;
    let layout = PairLayout::new(n);
    let np = layout.count();
    let mut count = 0;
    let mut worst = 0.0_f64;
    for p in 0..np {
        for q in p..np {
            let r = (1u32 << p) | (1u32 << q);
            let contours = layout.contours(r);
            let times: Vec<u16> = contours.iter().map(|&(_, i)| time_mask(i)).collect();
            let covered = times.iter().fold(0u16, |a, &t| a | t);
            let free = !layout.interval_mask(r) & ((1u16 << n) - 1);
            let mut sub = free;
            while sub != 0 {
                let dangling = super::diagram::runs(sub).into_iter().all(|(a, c)| {
                    let t = time_mask((((1u32 << (c - a + 1)) - 1) << a) as u16);
                    t & covered != 0
                });
                if dangling && !super::diagram::chain_set_is_valid(sub, &times) {
                    let d = ClusterDiagram::from_raw(n, super::diagram::RawCluster { pairs: r, chains: sub });
                    worst = worst.max(cluster_weight_unchecked(s, &d, lambda).abs());
                    count += 1;
                }
                sub = (sub - 1) & free;
            }
        }
    }
    (count, worst)
}

/// `Σ_{Γ* ∋ t_o, |Γ̄| = n} |K_Γ|` for `n = 0..=n_max`, with `t_o` the middle
/// time point.
pub fn cluster_size_sums(s: &Surrogate, lambda: f64, n_max: usize) -> Result<Vec<f64>> {
    let n = s.n_intervals;
    let n_max = n_max.min(n);
    let e = Engine::new(s, lambda)?;
    if work_estimate(n, n_max, e.size) > WORK_BUDGET {
        return Err(Error::Budget(format!("size sums up to {n_max} exceed the work budget")));
    }
    let origin = 1u16 << (n / 2);
    let mut sums = vec![0.0; n_max + 1];
    let mut chains = ChainCache::default();
    for lowest in 0..e.layout.count() {
        e.walk(n_max, lowest, &mut |r, rbar, fr| {
            let times = e.contour_times(r);
            let covered = times.iter().fold(0u16, |a, &c| a | c);
            for &set in chains.get(n, &times, rbar, n_max) {
                if (covered | time_mask(set)) & origin == 0 {
                    continue;
                }
                if let Some(w) = &e.chain[set as usize] {
                    sums[(rbar | set).count_ones() as usize] += dot(fr, w).abs();
                }
            }
        });
    }
    Ok(sums)
}

/// Geometric fit `c·ηⁿ` to the size sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub lambda: f64,
    pub b: f64,
    pub sums: Vec<f64>,
    pub c: f64,
    pub eta: f64,
    /// Each sum is below the previous one from size 2 on.
    pub ratio_test: bool,
    /// Sums vanish to machine precision; nothing to fit.
    pub vacuous: bool,
}

pub fn cluster_estimate_check(s: &Surrogate, lambda: f64, n_max: usize) -> Result<DecayFit> {
    let sums = cluster_size_sums(s, lambda, n_max)?;
    let pts: Vec<(f64, f64)> = sums
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, v)| **v > 1e-300)
        .map(|(k, v)| (k as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(DecayFit {
            lambda,
            b: s.b,
            sums,
            c: 0.0,
            eta: 0.0,
            ratio_test: true,
            vacuous: true,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (a, slope, _, _) = linear_fit(&xs, &ys);
    let ratio_test = sums[2..].windows(2).all(|w| w[1] < w[0]);
    Ok(DecayFit {
        lambda,
        b: s.b,
        sums,
        c: a.exp(),
        eta: slope.exp(),
        ratio_test,
        vacuous: false,
    })
}

#[cfg(test)]
mod tests {
    use super::super::diagram::{visit_clusters, Chain, Contour, RawCluster};
    use super::super::tests::spec;
    use super::super::{partition_function_direct, Spacing};
    use super::*;

    #[test]
    fn zero_coupling_sums_to_one() {
        let s = spec(4, 3).build(0.0).unwrap();
        let c = partition_function_cluster(&s, 0.0, 4, 1).unwrap();
        assert_eq!(c.z, 1.0);
        for d in super::super::enumerate_clusters(3, 3).iter().take(10) {
            let s3 = spec(3, 3).build(0.0).unwrap();
            assert_eq!(cluster_weight(&s3, d, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_on_small_matrix() {
        for n in 2..=4 {
            for m in [2, 3] {
                for lambda in [0.05, -0.1] {
                    let s = spec(n, m).build(lambda).unwrap();
                    let direct = partition_function_direct(&s, lambda).unwrap();
                    let c = partition_function_cluster(&s, lambda, n, 1).unwrap();
                    assert_eq!(c.order, n);
                    assert!((c.z - direct).abs() < 1e-12 * direct.abs(), "N={n} m={m} λ={lambda}: {} vs {direct}", c.z);
                }
            }
        }
    }

    #[test]
    fn engine_matches_per_diagram_contraction() {
        let s = spec(4, 3).build(0.08).unwrap();
        let e = Engine::new(&s, 0.08).unwrap();
        let mut count = 0;
        visit_clusters(4, 4, |raw: RawCluster| {
            let d = ClusterDiagram::from_raw(4, raw);
            let direct = cluster_weight(&s, &d, 0.08).unwrap();
            let mut fr = vec![1.0; e.size];
            for p in 0..e.layout.count() {
                if raw.pairs >> p & 1 == 1 {
                    fr.iter_mut().zip(&e.pair[p]).for_each(|(a, b)| *a *= b);
                }
            }
            let fast = e.chain[raw.chains as usize].as_ref().map_or(0.0, |w| dot(&fr, w));
            assert!((fast - direct).abs() < 1e-15 + 1e-12 * direct.abs(), "{d:?}: {fast} vs {direct}");
            count += 1;
        });
        assert_eq!(count, 884);
    }

    #[test]
    fn single_contour_matches_full_sum() {
        let s = spec(3, 3).build(0.1).unwrap();
        let d = ClusterDiagram {
            n_intervals: 3,
            contours: vec![Contour { pairs: vec![(0, 1), (1, 2)] }],
            chains: vec![],
        };
        let mut full = 0.0;
        for_each_assignment(4, 3, |x| {
            let w: f64 = x.iter().map(|&p| s.nu[p]).product();
            full += w * (-0.1 * s.pair_energy(0, 1, x[0], x[1])).exp_m1() * (-0.1 * s.pair_energy(1, 2, x[1], x[2])).exp_m1();
        });
        let k = cluster_weight(&s, &d, 0.1).unwrap();
        assert!((k - full).abs() < 1e-15, "{k} vs {full}");
        assert!(k != 0.0);
    }

    #[test]
    fn loose_ends_weigh_nothing() {
        let s = spec(5, 3).build(0.1).unwrap();
        let d = ClusterDiagram {
            n_intervals: 5,
            contours: vec![Contour { pairs: vec![(0, 2)] }],
            chains: vec![Chain { start: 1, end: 1 }, Chain { start: 3, end: 3 }],
        };
        assert!(!d.is_valid());
        assert!(cluster_weight(&s, &d, 0.1).is_err());
        assert!(cluster_weight_unchecked(&s, &d, 0.1).abs() < 1e-14);
        let (count, worst) = loose_end_weights(&s, 0.1);
        assert!(count > 100 && worst < 1e-14, "{count} {worst}");
    }

    #[test]
    fn partial_sums_reach_the_direct_value() {
        let s = spec(4, 3).build(0.05).unwrap();
        let c = partition_function_cluster(&s, 0.05, 4, 2).unwrap();
        let direct = partition_function_direct(&s, 0.05).unwrap();
        assert_eq!(c.partial_sums.len(), 5);
        assert_eq!(c.partial_sums[0], 1.0);
        assert!((c.partial_sums[4] - direct).abs() < 1e-12);
        let inc: Vec<f64> = c.partial_sums.windows(2).skip(1).map(|w| (w[1] - w[0]).abs()).collect();
        assert!(inc.windows(2).all(|w| w[1] < w[0]), "{inc:?}");
    }

    #[test]
    fn worker_count_does_not_change_the_sum() {
        let s = spec(5, 2).build(-0.05).unwrap();
        let a = partition_function_cluster(&s, -0.05, 5, 1).unwrap();
        let b = partition_function_cluster(&s, -0.05, 5, 3).unwrap();
        assert_eq!(a.z.to_bits(), b.z.to_bits());
        assert_eq!(a.clusters, 30480);
    }

    #[test]
    fn lower_order_truncates() {
        let s = spec(5, 2).build(0.05).unwrap();
        let full = partition_function_cluster(&s, 0.05, 5, 1).unwrap();
        let part = partition_function_cluster(&s, 0.05, 3, 1).unwrap();
        assert_eq!(part.order, 3);
        assert!((part.z - full.partial_sums[3]).abs() < 1e-14);
    }

    #[test]
    fn decay_rate_grows_with_coupling() {
        let mut sp = spec(6, 2);
        sp.spacing = Spacing::Coupled { b_min: 0.1 };
        let etas: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&l| {
                let s = sp.build(l).unwrap();
                cluster_estimate_check(&s, l, 6).unwrap().eta
            })
            .collect();
        assert!(etas.windows(2).all(|w| w[0] < w[1]), "{etas:?}");
        let zero = cluster_estimate_check(&sp.build(0.0).unwrap(), 0.0, 6).unwrap();
        assert!(zero.vacuous && zero.sums.iter().all(|v| *v == 0.0));
    }
}
