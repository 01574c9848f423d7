//! Pair kernels `W(x, y, t)`.
//!
//! Every kernel here is a function of `r = |x − y|` and `|t|` only, so the
//! symmetries `W(x,y,t) = W(y,x,t) = W(x,y,−t)` hold exactly. Increment
//! kernels `W(x, t)` are evaluated with `x = X_t − X_s`, which is the same
//! thing.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::quad;
use super::TimeGrid;
use crate::error::{Error, Result};

/// Which regularity class a kernel is meant to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelClass {
    /// Bounded time decay `α > 2`, growth in space allowed.
    W1,
    /// Uniformly bounded, time decay `α > 1`.
    W2,
    /// Only meaningful on path increments.
    IncrementOnly,
}

/// Radial form factor `ρ̂(|k|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum RhoProfile {
    Zero,
    /// `amp · exp(−k²σ²/2)`
    Gaussian { amp: f64, sigma: f64 },
    /// `amp` on `k_min ≤ |k| ≤ k_max`, zero elsewhere.
    Annulus { amp: f64, k_min: f64, k_max: f64 },
    /// `amp/|k|` on `k_min ≤ |k| ≤ k_max`.
    InverseK { amp: f64, k_min: f64, k_max: f64 },
}

impl RhoProfile {
    pub fn value(&self, k: f64) -> f64 {
        match *self {
            RhoProfile::Zero => 0.0,
            RhoProfile::Gaussian { amp, sigma } => amp * (-0.5 * k * k * sigma * sigma).exp(),
            RhoProfile::Annulus { amp, k_min, k_max } => {
                if k >= k_min && k <= k_max {
                    amp
                } else {
                    0.0
                }
            }
            RhoProfile::InverseK { amp, k_min, k_max } => {
                if k >= k_min && k <= k_max {
                    amp / k
                } else {
                    0.0
                }
            }
        }
    }

    /// Radial range outside which `|ρ̂|²` is zero or below `1e-30` relative.
    pub fn k_range(&self) -> Option<(f64, f64)> {
        match *self {
            RhoProfile::Zero => None,
            RhoProfile::Gaussian { sigma, .. } => Some((0.0, 12.0 / sigma.abs())),
            RhoProfile::Annulus { k_min, k_max, .. } | RhoProfile::InverseK { k_min, k_max, .. } => {
                Some((k_min, k_max))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            RhoProfile::Zero => true,
            RhoProfile::Gaussian { amp, .. } | RhoProfile::Annulus { amp, .. } | RhoProfile::InverseK { amp, .. } => {
                amp == 0.0
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RhoProfile::Zero => true,
            RhoProfile::Gaussian { amp, sigma } => amp.is_finite() && sigma.is_finite() && sigma > 0.0,
            RhoProfile::Annulus { amp, k_min, k_max } => amp.is_finite() && k_min >= 0.0 && k_max > k_min && k_max.is_finite(),
            RhoProfile::InverseK { amp, k_min, k_max } => amp.is_finite() && k_min > 0.0 && k_max > k_min && k_max.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid form factor {self:?}")))
        }
    }
}

/// Dispersion relation `ω(|k|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dispersion", rename_all = "snake_case")]
pub enum Dispersion {
    /// `c|k|`
    Linear { c: f64 },
    /// `ω₀`
    Constant { omega0: f64 },
    /// `sqrt(k² + m²)`
    Massive { mass: f64 },
}

impl Dispersion {
    pub fn value(&self, k: f64) -> f64 {
        match *self {
            Dispersion::Linear { c } => c * k,
            Dispersion::Constant { omega0 } => omega0,
            Dispersion::Massive { mass } => (k * k + mass * mass).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Dispersion::Linear { c } => c > 0.0 && c.is_finite(),
            Dispersion::Constant { omega0 } => omega0 > 0.0 && omega0.is_finite(),
            Dispersion::Massive { mass } => mass > 0.0 && mass.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid dispersion {self:?}")))
        }
    }
}

/// Surface area of the unit sphere in `d` dimensions, for radial integrals.
pub fn sphere_area(dim: usize) -> Result<f64> {
    match dim {
        1 => Ok(2.0),
        2 => Ok(2.0 * PI),
        3 => Ok(4.0 * PI),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// Field covariance kernel built from `ρ̂` and `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelsonSpec {
    pub dim: usize,
    pub rho_hat: RhoProfile,
    pub omega: Dispersion,
    /// `+1` gives the attractive form `W = −½C`; `−1` flips it.
    pub sign: f64,
    pub r_max: f64,
    pub nr: usize,
    pub quad_tol: f64,
}

impl NelsonSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 3 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        self.rho_hat.validate()?;
        self.omega.validate()?;
        if self.sign.abs() != 1.0 {
            return Err(Error::Precondition(format!("sign must be ±1, got {}", self.sign)));
        }
        if !(self.r_max > 0.0 && self.nr >= 2 && self.quad_tol > 0.0) {
            return Err(Error::Precondition("nelson table needs r_max > 0, nr ≥ 2, quad_tol > 0".into()));
        }
        Ok(())
    }

    /// Covariance `C(r, t) = ∫ |ρ̂|² e^{ik·x} e^{−ω|t|} / (2ω) dk` with `|x| = r`.
    pub fn covariance(&self, r: f64, t: f64) -> Result<f64> {
        let Some((k_lo, k_hi)) = self.rho_hat.k_range() else {
            return Ok(0.0);
        };
        if self.rho_hat.is_zero() {
            return Ok(0.0);
        }
        let t = t.abs();
        let dim = self.dim;
        let integrand = |k: f64| {
            let rho = self.rho_hat.value(k);
            let w = self.omega.value(k);
            let common = rho * rho * (-w * t).exp() / (2.0 * w);
            match dim {
                1 => 2.0 * common * (k * r).cos(),
                _ => {
                    let kr = k * r;
                    let sinc = if kr.abs() < 1e-8 { 1.0 - kr * kr / 6.0 } else { kr.sin() / kr };
                    4.0 * PI * k * k * common * sinc
                }
            }
        };
        // Oscillation and decay scales set how finely to pre-split.
        let pieces = (((k_hi - k_lo) * r / PI).ceil() as usize).clamp(1, 4096);
        let mut total = 0.0;
        // Absolute tolerance relative to the non-oscillating magnitude.
        let magnitude = |k: f64| {
            let rho = self.rho_hat.value(k);
            let w = self.omega.value(k);
            let radial = if dim == 1 { 2.0 } else { 4.0 * PI * k * k };
            radial * rho * rho * (-w * t).exp() / (2.0 * w)
        };
        let scale = quad::integrate(magnitude, k_lo, k_hi, 0.0, 1e-3, 200)
            .map(|q| q.value.abs())
            .unwrap_or(1.0)
            .max(f64::MIN_POSITIVE);
        for p in 0..pieces {
            let a = k_lo + (k_hi - k_lo) * p as f64 / pieces as f64;
            let b = k_lo + (k_hi - k_lo) * (p + 1) as f64 / pieces as f64;
            let q = quad::integrate(integrand, a, b, self.quad_tol * scale / pieces as f64, self.quad_tol, 400)?;
            total += q.value;
        }
        Ok(total)
    }
}

/// Values on a uniform `(r, |t|)` grid, row-major with one row per `r` node.
///
/// Lookups interpolate bilinearly, clamp `r` beyond `r_max` and return zero
/// beyond `t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub nr: usize,
    pub nt: usize,
    pub r_max: f64,
    pub t_max: f64,
    pub values: Vec<f64>,
}

const TABLE_MAGIC: &[u8; 4] = b"PGKT";
const TABLE_VERSION: u32 = 1;

impl KernelTable {
    pub fn new(nr: usize, nt: usize, r_max: f64, t_max: f64, values: Vec<f64>) -> Result<Self> {
        if nr < 2 || nt < 2 || !(r_max > 0.0) || !(t_max > 0.0) || values.len() != nr * nt {
            return Err(Error::KernelTable(format!(
                "bad shape nr={nr} nt={nt} r_max={r_max} t_max={t_max} len={}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::KernelTable("non-finite entry".into()));
        }
        Ok(Self {
            nr,
            nt,
            r_max,
            t_max,
            values,
        })
    }

    pub fn dr(&self) -> f64 {
        self.r_max / (self.nr - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.nt - 1) as f64
    }

    fn locate(u: f64, n: usize) -> (usize, f64) {
        let i = (u.floor() as usize).min(n - 2);
        (i, u - i as f64)
    }

    /// `t`-interpolated column over all `r` nodes.
    pub fn column(&self, t: f64) -> Vec<f64> {
        let t = t.abs();
        if t > self.t_max * (1.0 + 1e-12) {
            return vec![0.0; self.nr];
        }
        let (j, w) = Self::locate((t / self.dt()).min((self.nt - 1) as f64), self.nt);
        (0..self.nr)
            .map(|i| {
                let row = &self.values[i * self.nt..(i + 1) * self.nt];
                if w == 0.0 {
                    row[j]
                } else {
                    (1.0 - w) * row[j] + w * row[j + 1]
                }
            })
            .collect()
    }

    pub fn value(&self, r: f64, t: f64) -> f64 {
        let col = self.column(t);
        interp_column(&col, self.dr(), r)
    }

    /// Binary cache format: magic, version, 32-byte key, `nr`, `nt`,
    /// `r_max`, `t_max`, then the values, all little endian.
    pub fn write_cache(&self, path: &Path, key: &[u8; 32]) -> Result<()> {
        let mut buf = Vec::with_capacity(4 + 4 + 32 + 32 + 8 * self.values.len());
        buf.extend_from_slice(TABLE_MAGIC);
        buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        buf.extend_from_slice(key);
        buf.extend_from_slice(&(self.nr as u64).to_le_bytes());
        buf.extend_from_slice(&(self.nt as u64).to_le_bytes());
        buf.extend_from_slice(&self.r_max.to_le_bytes());
        buf.extend_from_slice(&self.t_max.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Reads a cache file; `Ok(None)` when it belongs to a different key.
    pub fn read_cache(path: &Path, key: &[u8; 32]) -> Result<Option<Self>> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 72 || &buf[0..4] != TABLE_MAGIC {
            return Err(Error::KernelTable(format!("{} is not a kernel table", path.display())));
        }
        let word = |at: usize| -> [u8; 8] { buf[at..at + 8].try_into().expect("8 bytes") };
        let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
        if version != TABLE_VERSION {
            return Err(Error::KernelTable(format!("unsupported version {version}")));
        }
        if &buf[8..40] != key {
            return Ok(None);
        }
        let nr = u64::from_le_bytes(word(40)) as usize;
        let nt = u64::from_le_bytes(word(48)) as usize;
        let r_max = f64::from_le_bytes(word(56));
        let t_max = f64::from_le_bytes(word(64));
        let expected = 72 + 8 * nr.saturating_mul(nt);
        if buf.len() != expected {
            return Err(Error::KernelTable(format!("truncated table: {} of {expected} bytes", buf.len())));
        }
        let values = buf[72..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Self::new(nr, nt, r_max, t_max, values).map(Some)
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.nr as u64).to_le_bytes());
        h.update((self.nt as u64).to_le_bytes());
        h.update(self.r_max.to_le_bytes());
        h.update(self.t_max.to_le_bytes());
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn interp_column(col: &[f64], dr: f64, r: f64) -> f64 {
    let n = col.len();
    let u = r / dr;
    if u >= (n - 1) as f64 {
        return col[n - 1];
    }
    let i = u as usize;
    let w = u - i as f64;
    (1.0 - w) * col[i] + w * col[i + 1]
}

/// Tabulates a Nelson covariance on `[0, r_max] × [0, t_max]`.
pub fn nelson_table(spec: &NelsonSpec, t_max: f64, nt: usize) -> Result<KernelTable> {
    spec.validate()?;
    let dr = spec.r_max / (spec.nr - 1) as f64;
    let dt = t_max / (nt - 1) as f64;
    let mut values = Vec::with_capacity(spec.nr * nt);
    for i in 0..spec.nr {
        for j in 0..nt {
            values.push(spec.covariance(i as f64 * dr, j as f64 * dt)?);
        }
    }
    KernelTable::new(spec.nr, nt, spec.r_max, t_max, values)
}

/// Cache key of a Nelson table: hash of the spec and the time axis.
pub fn nelson_cache_key(spec: &NelsonSpec, t_max: f64, nt: usize) -> Result<[u8; 32]> {
    let text = serde_json::to_string(&(spec, t_max, nt))?;
    Ok(Sha256::digest(text.as_bytes()).into())
}

/// Loads a Nelson table from `dir` when a matching cache file is present,
/// otherwise computes it and stores it there.
pub fn nelson_table_cached(spec: &NelsonSpec, t_max: f64, nt: usize, dir: &Path) -> Result<KernelTable> {
    let key = nelson_cache_key(spec, t_max, nt)?;
    let path = dir.join(format!("{}.pgkt", hex::encode(&key[..8])));
    if path.exists() {
        if let Some(table) = KernelTable::read_cache(&path, &key)? {
            return Ok(table);
        }
    }
    let table = nelson_table(spec, t_max, nt)?;
    table.write_cache(&path, &key)?;
    Ok(table)
}

/// A pair interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PairKernelSpec {
    /// `α (1+|t|)^{−γ} · ½|x−y|²`
    QuadraticLongrange { alpha: f64, gamma: f64 },
    /// `R · exp(−|x−y|²/2) / (1 + |t|^α)`
    BoundedDecay { r: f64, alpha: f64 },
    /// `−(sign/2) · C(|x|, |t|)`
    Nelson(NelsonSpec),
    /// `−sign · κ e^{−ω₀|t|} / max(|x|, eps)`; `eps = None` means `√b`.
    Polaron {
        kappa: f64,
        omega0: f64,
        eps: Option<f64>,
        sign: f64,
    },
    /// Tabulated `W(r, |t|)`.
    Table { table: KernelTable, class: KernelClass },
}

impl PairKernelSpec {
    pub fn class(&self) -> KernelClass {
        match self {
            PairKernelSpec::QuadraticLongrange { .. } => KernelClass::W1,
            PairKernelSpec::BoundedDecay { .. } => KernelClass::W2,
            PairKernelSpec::Nelson(_) | PairKernelSpec::Polaron { .. } => KernelClass::IncrementOnly,
            PairKernelSpec::Table { class, .. } => *class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(m));
        match self {
            PairKernelSpec::QuadraticLongrange { alpha, gamma } => {
                if !(*alpha >= 0.0 && alpha.is_finite() && *gamma > 1.0 && *gamma <= 2.0) {
                    return bad(format!("quadratic long-range kernel needs α ≥ 0, 1 < γ ≤ 2; got α={alpha}, γ={gamma}"));
                }
            }
            PairKernelSpec::BoundedDecay { r, alpha } => {
                if !(r.is_finite() && *alpha > 1.0 && alpha.is_finite()) {
                    return bad(format!("bounded-decay kernel needs finite R and α > 1; got R={r}, α={alpha}"));
                }
            }
            PairKernelSpec::Nelson(spec) => spec.validate()?,
            PairKernelSpec::Polaron {
                kappa,
                omega0,
                eps,
                sign,
            } => {
                if !(*kappa >= 0.0 && kappa.is_finite() && *omega0 > 0.0 && omega0.is_finite()) {
                    return bad(format!("polaron kernel needs κ ≥ 0 and ω₀ > 0; got κ={kappa}, ω₀={omega0}"));
                }
                if let Some(e) = eps {
                    if !(*e >= 0.0 && e.is_finite()) {
                        return bad(format!("polaron core radius must be ≥ 0, got {e}"));
                    }
                }
                if sign.abs() != 1.0 {
                    return bad(format!("sign must be ±1, got {sign}"));
                }
            }
            PairKernelSpec::Table { table, .. } => {
                KernelTable::new(table.nr, table.nt, table.r_max, table.t_max, table.values.clone())?;
            }
        }
        Ok(())
    }

    /// Builds the evaluable kernel for a time grid (tabulates Nelson
    /// covariances at the grid lags, fixes the polaron core radius).
    pub fn prepare(&self, grid: &TimeGrid) -> Result<PreparedKernel> {
        self.prepare_with_cache(grid, None)
    }

    pub fn prepare_with_cache(&self, grid: &TimeGrid, cache_dir: Option<&Path>) -> Result<PreparedKernel> {
        self.validate()?;
        let table = match self {
            PairKernelSpec::Nelson(spec) => {
                let t_max = 2.0 * grid.t_half;
                let nt = grid.n + 1;
                let table = match cache_dir {
                    Some(dir) => nelson_table_cached(spec, t_max, nt, dir)?,
                    None => nelson_table(spec, t_max, nt)?,
                };
                Some(Arc::new(table))
            }
            PairKernelSpec::Table { table, .. } => Some(Arc::new(table.clone())),
            _ => None,
        };
        let eps = match self {
            PairKernelSpec::Polaron { eps, .. } => eps.unwrap_or_else(|| grid.b().sqrt()),
            _ => 0.0,
        };
        Ok(PreparedKernel {
            spec: self.clone(),
            table,
            eps,
        })
    }

    /// Uniform envelope `|W(x,y,t)| ≤ R·min(1, |t|^{−a})` for `|x|,|y| ≤ x_bound`,
    /// returned as `(R, a)`; `None` when no such bound is available.
    pub fn envelope(&self, x_bound: f64) -> Option<(f64, f64)> {
        match *self {
            PairKernelSpec::QuadraticLongrange { alpha, gamma } => Some((alpha * 2.0 * x_bound * x_bound, gamma)),
            PairKernelSpec::BoundedDecay { r, alpha } => Some((r.abs(), alpha)),
            _ => None,
        }
    }
}

/// A kernel ready for evaluation.
#[derive(Debug, Clone)]
pub struct PreparedKernel {
    spec: PairKernelSpec,
    table: Option<Arc<KernelTable>>,
    eps: f64,
}

impl PreparedKernel {
    pub fn spec(&self) -> &PairKernelSpec {
        &self.spec
    }

    pub fn table(&self) -> Option<&KernelTable> {
        self.table.as_deref()
    }

    /// Core radius in use (polaron only).
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `W` at squared distance `r2` and time difference `t`.
    pub fn value_r2(&self, r2: f64, t: f64) -> f64 {
        let t = t.abs();
        match self.spec {
            PairKernelSpec::QuadraticLongrange { alpha, gamma } => alpha * (1.0 + t).powf(-gamma) * 0.5 * r2,
            PairKernelSpec::BoundedDecay { r, alpha } => r * (-0.5 * r2).exp() / (1.0 + t.powf(alpha)),
            PairKernelSpec::Nelson(ref spec) => {
                let table = self.table.as_ref().expect("prepared nelson kernel has a table");
                -0.5 * spec.sign * table.value(r2.sqrt(), t)
            }
            PairKernelSpec::Polaron { kappa, omega0, sign, .. } => {
                -sign * kappa * (-omega0 * t).exp() / r2.sqrt().max(self.eps)
            }
            PairKernelSpec::Table { .. } => {
                let table = self.table.as_ref().expect("table kernel");
                table.value(r2.sqrt(), t)
            }
        }
    }

    pub fn value(&self, x: &[f64], y: &[f64], t: f64) -> f64 {
        self.value_r2(dist2(x, y), t)
    }

    /// Per-lag precomputation on a time grid.
    pub fn on_grid(&self, grid: &TimeGrid) -> GridKernel {
        let b = grid.b();
        let lags = (0..=grid.n)
            .map(|l| {
                let t = l as f64 * b;
                match self.spec {
                    PairKernelSpec::QuadraticLongrange { alpha, gamma } => LagFactor::Scalar(alpha * (1.0 + t).powf(-gamma) * 0.5),
                    PairKernelSpec::BoundedDecay { r, alpha } => LagFactor::Scalar(r / (1.0 + t.powf(alpha))),
                    PairKernelSpec::Polaron { kappa, omega0, sign, .. } => LagFactor::Scalar(-sign * kappa * (-omega0 * t).exp()),
                    PairKernelSpec::Nelson(ref spec) => {
                        let col = self.table.as_ref().expect("table").column(t);
                        LagFactor::Column(col.into_iter().map(|c| -0.5 * spec.sign * c).collect())
                    }
                    PairKernelSpec::Table { .. } => LagFactor::Column(self.table.as_ref().expect("table").column(t)),
                }
            })
            .collect();
        let shape = match self.spec {
            PairKernelSpec::QuadraticLongrange { .. } => Shape::Quadratic,
            PairKernelSpec::BoundedDecay { .. } => Shape::Gaussian,
            PairKernelSpec::Polaron { .. } => Shape::Coulomb,
            PairKernelSpec::Nelson(_) | PairKernelSpec::Table { .. } => Shape::Tabulated,
        };
        GridKernel {
            shape,
            lags,
            eps: self.eps,
            dr: self.table.as_ref().map_or(1.0, |t| t.dr()),
        }
    }
}

pub(crate) fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone)]
enum LagFactor {
    Scalar(f64),
    Column(Vec<f64>),
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Quadratic,
    Gaussian,
    Coulomb,
    Tabulated,
}

/// Kernel restricted to the lags `0..=N` of one time grid.
#[derive(Debug, Clone)]
pub struct GridKernel {
    shape: Shape,
    lags: Vec<LagFactor>,
    eps: f64,
    dr: f64,
}

impl GridKernel {
    #[inline]
    pub fn value(&self, lag: usize, r2: f64) -> f64 {
        match (&self.lags[lag], self.shape) {
            (LagFactor::Scalar(f), Shape::Quadratic) => f * r2,
            (LagFactor::Scalar(f), Shape::Gaussian) => f * (-0.5 * r2).exp(),
            (LagFactor::Scalar(f), Shape::Coulomb) => f / r2.sqrt().max(self.eps),
            (LagFactor::Column(col), _) => interp_column(col, self.dr, r2.sqrt()),
            (LagFactor::Scalar(_), Shape::Tabulated) => unreachable!("tabulated kernels carry columns"),
        }
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(2.0, 16).unwrap()
    }

    fn nelson() -> NelsonSpec {
        NelsonSpec {
            dim: 3,
            rho_hat: RhoProfile::Gaussian { amp: 1.0, sigma: 1.0 },
            omega: Dispersion::Massive { mass: 1.0 },
            sign: 1.0,
            r_max: 8.0,
            nr: 65,
            quad_tol: 1e-10,
        }
    }

    #[test]
    fn gaussian_profile_zero_time_matches_closed_form() {
        // With ω ≡ 1 the covariance is ½ · (2π)^{3/2} σ^{-3} e^{-r²/(4σ²)} / 2^{3/2}.
        let spec = NelsonSpec {
            omega: Dispersion::Constant { omega0: 1.0 },
            ..nelson()
        };
        for r in [0.0, 0.5, 1.3, 3.0] {
            let c = spec.covariance(r, 0.0).unwrap();
            let exact = 0.5 * PI.powf(1.5) * (-r * r / 4.0).exp();
            assert!((c - exact).abs() < 1e-8 * exact.max(1e-3), "r={r}: {c} vs {exact}");
            let c2 = spec.covariance(r, 0.7).unwrap();
            assert!((c2 - exact * (-0.7f64).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn one_dimensional_annulus_closed_form() {
        let spec = NelsonSpec {
            dim: 1,
            rho_hat: RhoProfile::Annulus { amp: 1.0, k_min: 0.0, k_max: 2.0 },
            omega: Dispersion::Constant { omega0: 2.0 },
            ..nelson()
        };
        let r: f64 = 1.7;
        let exact = 2.0 * (2.0 * r).sin() / r / 4.0;
        assert!((spec.covariance(r, 0.0).unwrap() - exact).abs() < 1e-9);
    }

    #[test]
    fn zero_profile_gives_zero() {
        let spec = NelsonSpec {
            rho_hat: RhoProfile::Zero,
            ..nelson()
        };
        assert_eq!(spec.covariance(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn grid_kernel_agrees_with_pointwise_evaluation() {
        let g = grid();
        let kernels = vec![
            PairKernelSpec::QuadraticLongrange { alpha: 1.0, gamma: 2.0 },
            PairKernelSpec::BoundedDecay { r: 1.0, alpha: 3.0 },
            PairKernelSpec::Polaron {
                kappa: 0.5,
                omega0: 1.0,
                eps: None,
                sign: 1.0,
            },
            PairKernelSpec::Nelson(nelson()),
        ];
        for k in kernels {
            let p = k.prepare(&g).unwrap();
            let gk = p.on_grid(&g);
            for lag in [0, 1, 5, 16] {
                for r2 in [0.0, 0.01, 0.7, 4.0, 100.0] {
                    let a = gk.value(lag, r2);
                    let b = p.value_r2(r2, lag as f64 * g.b());
                    assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0), "{k:?} lag {lag} r2 {r2}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn polaron_core_radius_defaults_to_sqrt_b() {
        let g = grid();
        let p = PairKernelSpec::Polaron {
            kappa: 1.0,
            omega0: 1.0,
            eps: None,
            sign: 1.0,
        }
        .prepare(&g)
        .unwrap();
        assert_eq!(p.eps(), g.b().sqrt());
        assert_eq!(p.value_r2(0.0, 0.0), -1.0 / g.b().sqrt());
    }

    #[test]
    fn cache_round_trip_and_key_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NelsonSpec { nr: 9, ..nelson() };
        let a = nelson_table_cached(&spec, 4.0, 5, dir.path()).unwrap();
        let b = nelson_table_cached(&spec, 4.0, 5, dir.path()).unwrap();
        assert_eq!(a, b);
        let key = nelson_cache_key(&spec, 4.0, 5).unwrap();
        let file = dir.path().join(format!("{}.pgkt", hex::encode(&key[..8])));
        let other = [7u8; 32];
        assert!(KernelTable::read_cache(&file, &other).unwrap().is_none());
        std::fs::write(&file, b"junk").unwrap();
        assert!(KernelTable::read_cache(&file, &key).is_err());
    }

    #[test]
    fn validation() {
        assert!(PairKernelSpec::QuadraticLongrange { alpha: 1.0, gamma: 2.5 }.validate().is_err());
        assert!(PairKernelSpec::BoundedDecay { r: 1.0, alpha: 1.0 }.validate().is_err());
        assert!(PairKernelSpec::Nelson(NelsonSpec { dim: 2, ..nelson() }).validate().is_err());
    }
}
