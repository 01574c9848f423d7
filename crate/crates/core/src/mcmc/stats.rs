//! Streaming and batch statistics for correlated samples.

use serde::{Deserialize, Serialize};

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        Self { n, mean, m2 }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Integrated autocorrelation time `τ = 1 + 2Σρ_k` with Sokal's automatic
/// window `M ≥ c·τ(M)`, `c = 5`.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for m in 1..n / 2 {
        let ck = centered[..n - m].iter().zip(&centered[m..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        tau += 2.0 * ck / c0;
        if m as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Summary of one scalar observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarStat {
    pub acc: Welford,
    pub iat: f64,
    /// IAT-corrected standard error of the mean.
    pub stderr: f64,
}

impl ScalarStat {
    pub fn from_series(series: &[f64]) -> Self {
        let mut acc = Welford::default();
        series.iter().for_each(|&x| acc.push(x));
        let iat = integrated_autocorrelation_time(series);
        let stderr = if acc.n > 0 {
            (acc.variance() * iat / acc.n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { acc, iat, stderr }
    }

    pub fn mean(&self) -> f64 {
        self.acc.mean
    }

    pub fn variance(&self) -> f64 {
        self.acc.variance()
    }

    pub fn n(&self) -> u64 {
        self.acc.n
    }

    /// Effective sample size `n/τ`.
    pub fn ess(&self) -> f64 {
        self.acc.n as f64 / self.iat
    }

    /// Combines statistics of independent runs.
    pub fn merge(&self, other: &Self) -> Self {
        let acc = self.acc.merge(&other.acc);
        let (na, nb) = (self.acc.n as f64, other.acc.n as f64);
        let n = na + nb;
        if n == 0.0 {
            return *self;
        }
        let part = |s: &Self, w: f64| if w > 0.0 { (w * s.stderr).powi(2) } else { 0.0 };
        Self {
            acc,
            iat: (na * self.iat + nb * other.iat) / n,
            stderr: (part(self, na) + part(other, nb)).sqrt() / n,
        }
    }
}

/// Fixed-edge histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Self {
        assert!(edges.len() >= 2 && edges.windows(2).all(|w| w[0] < w[1]), "edges must increase");
        let bins = edges.len() - 1;
        Self {
            edges,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        }
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        Self::new((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
    }

    pub fn push(&mut self, x: f64) {
        if x < self.edges[0] {
            self.below += 1;
            return;
        }
        let last = *self.edges.last().expect("edges");
        if x >= last {
            self.above += 1;
            return;
        }
        let i = self.edges.partition_point(|&e| e <= x) - 1;
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    pub fn merge(&self, other: &Self) -> Self {
        assert_eq!(self.edges, other.edges, "histogram edges differ");
        Self {
            edges: self.edges.clone(),
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            below: self.below + other.below,
            above: self.above + other.above,
        }
    }
}

/// Mean of each coordinate of a vector-valued series with batch-means
/// standard errors (`batches` equal batches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStat {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: u64,
}

impl SeriesStat {
    pub fn from_samples(samples: &[Vec<f64>], batches: usize) -> Self {
        let n = samples.len();
        let len = samples.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; len];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let batches = batches.min(n).max(1);
        let size = n / batches;
        let mut stderr = vec![f64::NAN; len];
        if batches >= 2 && size >= 1 {
            let mut acc = vec![Welford::default(); len];
            for b in 0..batches {
                let chunk = &samples[b * size..(b + 1) * size];
                for c in 0..len {
                    let m = chunk.iter().map(|s| s[c]).sum::<f64>() / size as f64;
                    acc[c].push(m);
                }
            }
            for c in 0..len {
                stderr[c] = (acc[c].variance() / batches as f64).sqrt();
            }
        }
        Self {
            mean,
            stderr,
            n: n as u64,
        }
    }

    /// Combines independent runs (weights by sample count).
    pub fn merge(&self, other: &Self) -> Self {
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        if n == 0.0 {
            return self.clone();
        }
        let mean = self.mean.iter().zip(&other.mean).map(|(a, b)| (na * a + nb * b) / n).collect();
        let stderr = self
            .stderr
            .iter()
            .zip(&other.stderr)
            .map(|(a, b)| ((na * a).powi(2) + (nb * b).powi(2)).sqrt() / n)
            .collect();
        Self {
            mean,
            stderr,
            n: self.n + other.n,
        }
    }
}

/// Potential scale reduction `R̂` from per-chain means, variances and a
/// common length.
pub fn gelman_rubin(means: &[f64], variances: &[f64], n: u64) -> f64 {
    let m = means.len();
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let nf = n as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let between = nf / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = variances.iter().sum::<f64>() / m as f64;
    if within <= 0.0 {
        return if between <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    (var_plus / within).sqrt()
}

/// `sup_x |F_n(x) − F(x)|` for sorted samples against a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    ks_distance_atoms(sorted, |x| {
        let f = cdf(x);
        (f, f)
    })
}

/// As [`ks_distance`] for laws with atoms: `limits(x) = (F(x−), F(x))`.
pub fn ks_distance_atoms<F: Fn(f64) -> (f64, f64)>(sorted: &[f64], limits: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let (left, f) = limits(x);
        d = d.max((left - i as f64 / n).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    d
}

/// Least squares `y ≈ a + c·x`; returns `(a, c, se_a, se_c)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let c = sxy / sxx;
    let a = my - c * mx;
    let rss: f64 = x.iter().zip(y).map(|(a0, b0)| (b0 - a - c * a0).powi(2)).sum();
    let s2 = if n > 2.0 { rss / (n - 2.0) } else { 0.0 };
    let se_c = (s2 / sxx).sqrt();
    let se_a = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    (a, c, se_a, se_c)
}

/// Weighted least squares `y ≈ a + c·x` with standard errors `sigma` on `y`;
/// returns `(a, c, se_a, se_c)`.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> (f64, f64, f64, f64) {
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let a = (sxx * sy - sx * sxy) / det;
    let c = (sw * sxy - sx * sy) / det;
    (a, c, (sxx / det).sqrt(), (sw / det).sqrt())
}
