//! Contours, chains and clusters over a division into `N` intervals, and
//! their enumeration.
//!
//! Internally a diagram is a pair of bit masks: one bit per interval pair
//! `(i, j)`, `i < j`, in lexicographic order, and one bit per chain interval.
//! Time-point sets use bit `k` for `t_k`, `k = 0..=N`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Largest supported interval count.
pub const MAX_INTERVALS: usize = 8;

/// A maximal connected set of interval pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Contour {
    pub pairs: Vec<(usize, usize)>,
}

impl Contour {
    pub fn intervals(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn time_points(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.intervals().into_iter().flat_map(|i| [i, i + 1]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// The consecutive intervals `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chain {
    pub start: usize,
    pub end: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Compact form of a diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawCluster {
    pub pairs: u32,
    pub chains: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterDiagram {
    pub n_intervals: usize,
    pub contours: Vec<Contour>,
    pub chains: Vec<Chain>,
}

/// Pair ↔ bit bookkeeping for one interval count.
#[derive(Debug, Clone)]
pub struct PairLayout {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl PairLayout {
    pub fn new(n: usize) -> Self {
        assert!((1..=MAX_INTERVALS).contains(&n), "interval count {n} out of range");
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self { n, pairs }
    }

    pub fn count(&self) -> usize {
        self.pairs.len()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.pairs.iter().position(|&p| p == (i, j)).expect("pair in range")
    }

    /// Intervals touched by the pair set.
    pub fn interval_mask(&self, r: u32) -> u16 {
        let mut mask = 0u16;
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            if r >> p & 1 == 1 {
                mask |= 1 << i | 1 << j;
            }
        }
        mask
    }

    /// Splits a pair set into contours: `(pair mask, interval mask)` each,
    /// ordered by lowest interval.
    pub fn contours(&self, r: u32) -> Vec<(u32, u16)> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            if r >> p & 1 == 1 {
                let (a, c) = (find(&mut parent, i), find(&mut parent, j));
                if a != c {
                    parent[a.max(c)] = a.min(c);
                }
            }
        }
        let mut out: Vec<(usize, u32, u16)> = Vec::new();
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            if r >> p & 1 == 1 {
                let root = find(&mut parent, i);
                match out.iter_mut().find(|c| c.0 == root) {
                    Some(c) => {
                        c.1 |= 1 << p;
                        c.2 |= 1 << i | 1 << j;
                    }
                    None => out.push((root, 1 << p, 1 << i | 1 << j)),
                }
            }
        }
        out.sort_by_key(|c| c.2.trailing_zeros());
        out.into_iter().map(|(_, p, i)| (p, i)).collect()
    }
}

/// Time points of an interval set.
#[inline]
pub fn time_mask(intervals: u16) -> u16 {
    intervals | intervals << 1
}

/// Maximal runs of consecutive set bits, as `(first, last)`.
pub fn runs(mask: u16) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut rest = mask;
    while rest != 0 {
        let start = rest.trailing_zeros() as usize;
        let len = (!(rest >> start)).trailing_zeros() as usize;
        out.push((start, start + len - 1));
        rest &= !(((1u32 << len) - 1) << start) as u16;
    }
    out
}

/// Chain sets compatible with a fixed contour collection: every run's end
/// time-points lie in the contours' time points and the contours together
/// with the runs form a connected collection.
pub fn chain_set_is_valid(s: u16, contour_times: &[u16]) -> bool {
    let covered = contour_times.iter().fold(0u16, |a, &c| a | c);
    let chain_sets: Vec<u16> = runs(s)
        .into_iter()
        .map(|(a, c)| time_mask((((1u32 << (c - a + 1)) - 1) << a) as u16))
        .collect();
    for &ch in &chain_sets {
        let lo = ch.trailing_zeros();
        let hi = 15 - ch.leading_zeros();
        if covered >> lo & 1 == 0 || covered >> hi & 1 == 0 {
            return false;
        }
    }
    let mut sets: Vec<u16> = contour_times.iter().copied().chain(chain_sets).collect();
    let mut reach = sets.swap_remove(0);
    loop {
        let before = sets.len();
        sets.retain(|&m| {
            if m & reach != 0 {
                reach |= m;
                false
            } else {
                true
            }
        });
        if sets.is_empty() {
            return true;
        }
        if sets.len() == before {
            return false;
        }
    }
}

/// Valid chain sets for each contour structure, memoized.
#[derive(Debug, Default)]
pub(crate) struct ChainCache {
    map: HashMap<(Vec<u16>, u16), Vec<u16>>,
}

impl ChainCache {
    /// Chain sets `S` valid for the contour time sets, with
    /// `|R̄ ∪ S| ≤ max_size`.
    pub fn get(&mut self, n: usize, contour_times: &[u16], rbar: u16, max_size: usize) -> &[u16] {
        self.map.entry((contour_times.to_vec(), rbar)).or_insert_with(|| {
            (0..1u16 << n)
                .filter(|&s| ((rbar | s).count_ones() as usize) <= max_size && chain_set_is_valid(s, contour_times))
                .collect()
        })
    }
}

/// Visits every nonempty pair set with at most `max_size` intervals, in a
/// fixed depth-first order. `start` restricts the lowest included pair.
fn visit_pair_sets(layout: &PairLayout, max_size: usize, lowest: usize, f: &mut impl FnMut(u32, u16)) {
    fn rec(layout: &PairLayout, max_size: usize, p: usize, r: u32, rbar: u16, f: &mut impl FnMut(u32, u16)) {
        if p == layout.count() {
            f(r, rbar);
            return;
        }
        rec(layout, max_size, p + 1, r, rbar, f);
        let (i, j) = layout.pairs[p];
        let nb = rbar | 1 << i | 1 << j;
        if nb.count_ones() as usize <= max_size {
            rec(layout, max_size, p + 1, r | 1 << p, nb, f);
        }
    }
    let (i, j) = layout.pairs[lowest];
    let rbar = 1u16 << i | 1 << j;
    if rbar.count_ones() as usize <= max_size {
        rec(layout, max_size, lowest + 1, 1 << lowest, rbar, f);
    }
}

/// Calls `f` once for every cluster with `|Γ̄| ≤ max_size`.
pub fn visit_clusters(n: usize, max_size: usize, mut f: impl FnMut(RawCluster)) {
    if n < 2 || max_size < 2 {
        return;
    }
    let layout = PairLayout::new(n);
    let mut cache = ChainCache::default();
    for lowest in 0..layout.count() {
        visit_pair_sets(&layout, max_size, lowest, &mut |r, rbar| {
            let times: Vec<u16> = layout.contours(r).into_iter().map(|(_, i)| time_mask(i)).collect();
            for &s in cache.get(n, &times, rbar, max_size) {
                f(RawCluster { pairs: r, chains: s });
            }
        });
    }
}

/// All clusters with `|Γ̄| ≤ max_size`.
pub fn enumerate_clusters(n: usize, max_size: usize) -> Vec<ClusterDiagram> {
    let mut out = Vec::new();
    visit_clusters(n, max_size, |raw| out.push(ClusterDiagram::from_raw(n, raw)));
    out
}

impl ClusterDiagram {
    pub fn from_raw(n: usize, raw: RawCluster) -> Self {
        let layout = PairLayout::new(n);
        let contours = layout
            .contours(raw.pairs)
            .into_iter()
            .map(|(pm, _)| Contour {
                pairs: (0..layout.count()).filter(|p| pm >> p & 1 == 1).map(|p| layout.pairs[p]).collect(),
            })
            .collect();
        let chains = runs(raw.chains).into_iter().map(|(start, end)| Chain { start, end }).collect();
        Self {
            n_intervals: n,
            contours,
            chains,
        }
    }

    pub fn to_raw(&self) -> RawCluster {
        let layout = PairLayout::new(self.n_intervals);
        let mut pairs = 0u32;
        for c in &self.contours {
            for &(i, j) in &c.pairs {
                pairs |= 1 << layout.index(i, j);
            }
        }
        let mut chains = 0u16;
        for ch in &self.chains {
            for k in ch.start..=ch.end {
                chains |= 1 << k;
            }
        }
        RawCluster { pairs, chains }
    }

    /// `Γ*`.
    pub fn time_points(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .contours
            .iter()
            .flat_map(|c| c.time_points())
            .chain(self.chains.iter().flat_map(|ch| ch.start..=ch.end + 1))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `Γ̄`.
    pub fn intervals(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .contours
            .iter()
            .flat_map(|c| c.intervals())
            .chain(self.chains.iter().flat_map(|ch| ch.start..=ch.end))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn size(&self) -> usize {
        self.intervals().len()
    }

    /// Checks every structural invariant of a cluster.
    pub fn is_valid(&self) -> bool {
        let n = self.n_intervals;
        if self.contours.is_empty() || !(2..=MAX_INTERVALS).contains(&n) {
            return false;
        }
        for c in &self.contours {
            if c.pairs.is_empty() || c.pairs.iter().any(|&(i, j)| !(i < j && j < n)) {
                return false;
            }
        }
        for ch in &self.chains {
            if ch.start > ch.end || ch.end >= n {
                return false;
            }
        }
        let raw = self.to_raw();
        let layout = PairLayout::new(n);
        let mut split: Vec<Vec<(usize, usize)>> = layout
            .contours(raw.pairs)
            .into_iter()
            .map(|(pm, _)| (0..layout.count()).filter(|p| pm >> p & 1 == 1).map(|p| layout.pairs[p]).collect())
            .collect();
        let mut given: Vec<Vec<(usize, usize)>> = self
            .contours
            .iter()
            .map(|c| {
                let mut p = c.pairs.clone();
                p.sort_unstable();
                p
            })
            .collect();
        split.sort();
        given.sort();
        if split != given {
            return false;
        }
        let mut chains = self.chains.clone();
        chains.sort_by_key(|c| c.start);
        if chains.windows(2).any(|w| w[0].end + 1 >= w[1].start) {
            return false;
        }
        let times: Vec<u16> = layout.contours(raw.pairs).into_iter().map(|(_, i)| time_mask(i)).collect();
        chain_set_is_valid(raw.chains, &times)
    }
}

/// Reference filter over every `(R, S)` subset pair, written directly from
/// the definitions: pair-graph contours, scanned chains, set-overlap
/// connectivity. Exponential; intended for `N ≤ 5`.
pub fn brute_force_clusters(n: usize) -> Vec<RawCluster> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let np = pairs.len();
    let mut out = Vec::new();
    for r in 1u32..1 << np {
        let chosen: Vec<(usize, usize)> = (0..np).filter(|p| r >> p & 1 == 1).map(|p| pairs[p]).collect();
        // Contours: components of the "shares an interval" graph on pairs.
        let mut label = vec![usize::MAX; chosen.len()];
        let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
        for start in 0..chosen.len() {
            if label[start] != usize::MAX {
                continue;
            }
            let id = groups.len();
            let mut stack = vec![start];
            label[start] = id;
            let mut members = Vec::new();
            while let Some(a) = stack.pop() {
                members.push(chosen[a]);
                for b in 0..chosen.len() {
                    let (x, y) = (chosen[a], chosen[b]);
                    let linked = x.0 == y.0 || x.0 == y.1 || x.1 == y.0 || x.1 == y.1;
                    if label[b] == usize::MAX && linked {
                        label[b] = id;
                        stack.push(b);
                    }
                }
            }
            groups.push(members);
        }
        let contour_sets: Vec<Vec<usize>> = groups
            .iter()
            .map(|g| {
                let mut t: Vec<usize> = g.iter().flat_map(|&(i, j)| [i, i + 1, j, j + 1]).collect();
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        for s in 0u32..1 << n {
            let mut chains: Vec<Vec<usize>> = Vec::new();
            let mut k = 0;
            while k < n {
                if s >> k & 1 == 1 {
                    let a = k;
                    while k < n && s >> k & 1 == 1 {
                        k += 1;
                    }
                    chains.push((a..=k).collect());
                } else {
                    k += 1;
                }
            }
            let in_contour = |t: usize| contour_sets.iter().any(|c| c.contains(&t));
            if !chains.iter().all(|c| in_contour(c[0]) && in_contour(*c.last().unwrap())) {
                continue;
            }
            let sets: Vec<&Vec<usize>> = contour_sets.iter().chain(chains.iter()).collect();
            let mut seen = vec![false; sets.len()];
            seen[0] = true;
            let mut stack = vec![0];
            while let Some(a) = stack.pop() {
                for b in 0..sets.len() {
                    if !seen[b] && sets[a].iter().any(|t| sets[b].contains(t)) {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            if seen.iter().all(|&x| x) {
                out.push(RawCluster { pairs: r, chains: s as u16 });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<RawCluster>) -> Vec<RawCluster> {
        v.sort_unstable();
        v
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for (n, count) in [(2, 4), (3, 48), (4, 884), (5, 30480)] {
            let mut fast = Vec::new();
            visit_clusters(n, n, |c| fast.push(c));
            let brute = brute_force_clusters(n);
            assert_eq!(fast.len(), count, "N={n}");
            assert_eq!(sorted(fast), sorted(brute), "N={n}");
        }
    }

    #[test]
    fn two_intervals_have_one_pair() {
        let all = enumerate_clusters(2, 2);
        assert_eq!(all.len(), 4);
        for d in &all {
            assert_eq!(d.contours, vec![Contour { pairs: vec![(0, 1)] }]);
        }
    }

    #[test]
    fn size_limit_filters() {
        assert!(enumerate_clusters(4, 0).is_empty());
        let mut full = Vec::new();
        visit_clusters(5, 5, |c| full.push(c));
        let layout = PairLayout::new(5);
        let expect = full
            .iter()
            .filter(|c| (layout.interval_mask(c.pairs) | c.chains).count_ones() <= 3)
            .count();
        let mut small = 0;
        visit_clusters(5, 3, |_| small += 1);
        assert_eq!(small, expect);
    }

    #[test]
    fn loose_end_is_rejected() {
        // Contour on τ₀,τ₁ covers t₀..t₂; a chain over τ₂,τ₃ ends at t₄.
        let d = ClusterDiagram {
            n_intervals: 4,
            contours: vec![Contour { pairs: vec![(0, 1)] }],
            chains: vec![Chain { start: 2, end: 3 }],
        };
        assert!(!d.is_valid());
        let closed = ClusterDiagram {
            n_intervals: 4,
            contours: vec![Contour { pairs: vec![(0, 3)] }],
            chains: vec![Chain { start: 1, end: 2 }],
        };
        assert!(closed.is_valid());
        let all = enumerate_clusters(4, 4);
        assert!(all.contains(&closed));
        assert!(!all.iter().any(|c| c.to_raw() == d.to_raw()));
    }

    #[test]
    fn raw_round_trip() {
        for d in enumerate_clusters(4, 4) {
            assert!(d.is_valid());
            assert_eq!(ClusterDiagram::from_raw(4, d.to_raw()), d);
        }
    }

    #[test]
    fn runs_split_masks() {
        assert_eq!(runs(0b1011_0110), vec![(1, 2), (4, 5), (7, 7)]);
        assert!(runs(0).is_empty());
    }
}
