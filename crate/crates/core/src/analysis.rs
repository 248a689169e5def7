//! Free energies, interface tensions and empirical record statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::central_start;
use crate::record::TrajectoryRecord;

/// Default number of edge sites excluded from empirical statistics.
pub const DEFAULT_MARGIN: usize = 5;
/// Default number of initial steps discarded before stationary statistics.
pub const DEFAULT_BURN_IN: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ExactMpo,
    Dense,
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyRow {
    pub ell: usize,
    pub tau: usize,
    pub log_p: f64,
    pub f: f64,
    pub stderr: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeEnergyTable {
    pub provenance: Provenance,
    rows: BTreeMap<(usize, usize), FreeEnergyRow>,
}

/// `F = −log p` for every `(ℓ, τ, p)`.
pub fn free_energy(
    points: &[(usize, usize, f64)],
    provenance: Provenance,
) -> Result<FreeEnergyTable> {
    let mut t = FreeEnergyTable::new(provenance);
    for &(ell, tau, p) in points {
        if !(p > 0.0 && p <= 1.0 + 1e-12) {
            return Err(Error::Analysis(format!(
                "probability {p} at ({ell}, {tau}) outside (0, 1]"
            )));
        }
        t.insert(FreeEnergyRow {
            ell,
            tau,
            log_p: p.ln(),
            f: -p.ln(),
            stderr: None,
            samples: None,
        });
    }
    Ok(t)
}

impl FreeEnergyTable {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            rows: BTreeMap::new(),
        }
    }

    /// Table from accumulated `log p` values (avoids the round trip through `p`).
    pub fn from_log_p(points: &[(usize, usize, f64)], provenance: Provenance) -> Result<Self> {
        let mut t = Self::new(provenance);
        for &(ell, tau, log_p) in points {
            if !(log_p <= 1e-12) || log_p.is_nan() {
                return Err(Error::Analysis(format!(
                    "log p = {log_p} at ({ell}, {tau}) is positive"
                )));
            }
            t.insert(FreeEnergyRow {
                ell,
                tau,
                log_p,
                f: -log_p,
                stderr: None,
                samples: None,
            });
        }
        Ok(t)
    }

    pub fn insert(&mut self, row: FreeEnergyRow) {
        self.rows.insert((row.ell, row.tau), row);
    }

    pub fn get(&self, ell: usize, tau: usize) -> Option<f64> {
        self.rows.get(&(ell, tau)).map(|r| r.f)
    }

    pub fn rows(&self) -> impl Iterator<Item = &FreeEnergyRow> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `ℓτ F_{1×1}` for every geometry in the table: the free energy if all
    /// outcomes were independent.
    pub fn uncorrelated_reference(&self) -> Result<Vec<(usize, usize, f64)>> {
        let f11 = self
            .get(1, 1)
            .ok_or_else(|| Error::Analysis("uncorrelated reference needs the 1x1 entry".into()))?;
        Ok(self
            .rows
            .keys()
            .map(|&(l, t)| (l, t, (l * t) as f64 * f11))
            .collect())
    }
}

/// `Δ_τF_{ℓ×τ} = F_{ℓ×(τ+1)} − F_{ℓ×τ}` as a series in `τ`.
pub fn temporal_increment(table: &FreeEnergyTable, ell: usize) -> Vec<(usize, f64)> {
    increments(
        table.rows.keys().filter(|k| k.0 == ell).map(|k| k.1),
        |t| table.get(ell, t),
        "tau",
    )
}

/// `Δ_ℓF_{ℓ×τ} = F_{(ℓ+1)×τ} − F_{ℓ×τ}` as a series in `ℓ`.
pub fn spatial_increment(table: &FreeEnergyTable, tau: usize) -> Vec<(usize, f64)> {
    increments(
        table.rows.keys().filter(|k| k.1 == tau).map(|k| k.0),
        |l| table.get(l, tau),
        "ell",
    )
}

/// `Δ_τF_{ℓ×τ}` at fixed `τ` as a function of `ℓ` (the temporal tension profile).
pub fn temporal_increment_profile(table: &FreeEnergyTable, tau: usize) -> Vec<(usize, f64)> {
    let ells: Vec<usize> = table
        .rows
        .keys()
        .filter(|k| k.1 == tau)
        .map(|k| k.0)
        .collect();
    ells.into_iter()
        .filter_map(|l| Some((l, table.get(l, tau + 1)? - table.get(l, tau)?)))
        .collect()
}

/// `Δ_ℓF_{ℓ×τ}` at fixed `ℓ` as a function of `τ` (the spatial tension profile).
pub fn spatial_increment_profile(table: &FreeEnergyTable, ell: usize) -> Vec<(usize, f64)> {
    let taus: Vec<usize> = table
        .rows
        .keys()
        .filter(|k| k.0 == ell)
        .map(|k| k.1)
        .collect();
    taus.into_iter()
        .filter_map(|t| Some((t, table.get(ell + 1, t)? - table.get(ell, t)?)))
        .collect()
}

fn increments(
    keys: impl Iterator<Item = usize>,
    f: impl Fn(usize) -> Option<f64>,
    name: &str,
) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for x in keys {
        match (f(x), f(x + 1)) {
            (Some(a), Some(b)) => out.push((x, b - a)),
            (Some(_), None) => {
                log::info!("no entry at {name} = {}; increment at {x} skipped", x + 1)
            }
            _ => {}
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitAxis {
    /// `Δ_τF = α_τ ℓ + β_τ` at fixed `τ`.
    Temporal,
    /// `Δ_ℓF = α_ℓ τ + β_ℓ` at fixed `ℓ`.
    Spatial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensionFit {
    pub axis: FitAxis,
    pub fixed: usize,
    pub samples: Vec<(f64, f64)>,
    pub range: (f64, f64),
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub residual_rms: f64,
    pub points: usize,
}

/// Least-squares line through the samples with `x` inside `range` (inclusive).
pub fn fit_tension(
    samples: &[(f64, f64)],
    range: (f64, f64),
    axis: FitAxis,
    fixed: usize,
) -> Result<TensionFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(x, _)| *x >= range.0 && *x <= range.1)
        .collect();
    let (alpha, beta, r_squared, residual_rms) = linear_fit(&pts)?;
    Ok(TensionFit {
        axis,
        fixed,
        samples: samples.to_vec(),
        range,
        alpha,
        beta,
        r_squared,
        residual_rms,
        points: pts.len(),
    })
}

/// `(slope, intercept, R², rms residual)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> Result<(f64, f64, f64, f64)> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return Err(Error::Analysis(format!(
            "fit needs at least 2 points, got {}",
            pts.len()
        )));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Analysis("degenerate fit range: all x equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok((slope, intercept, r2, (ss_res / n).sqrt()))
}

impl TensionFit {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let (name, var) = match self.axis {
            FitAxis::Temporal => ("temporal", ("tau", "ell")),
            FitAxis::Spatial => ("spatial", ("ell", "tau")),
        };
        let _ = writeln!(s, "axis: {name}");
        let _ = writeln!(s, "{} = {}", var.0, self.fixed);
        let _ = writeln!(
            s,
            "fit range: {} in [{}, {}] ({} points)",
            var.1, self.range.0, self.range.1, self.points
        );
        let _ = writeln!(s, "alpha = {:.10e}", self.alpha);
        let _ = writeln!(s, "beta = {:.10e}", self.beta);
        let _ = writeln!(s, "r_squared = {:.10}", self.r_squared);
        let _ = writeln!(s, "residual_rms = {:.3e}", self.residual_rms);
        let _ = writeln!(s, "samples ({}, increment):", var.1);
        for (x, y) in &self.samples {
            let _ = writeln!(s, "  {x} {y:.12e}");
        }
        s
    }
}

/// Breakpoint of the best two-segment linear fit of `series` (each segment
/// at least two points, sharing the breakpoint).
pub fn knee(series: &[(f64, f64)]) -> Result<f64> {
    if series.len() < 3 {
        return Err(Error::Analysis(
            "knee detection needs at least 3 points".into(),
        ));
    }
    let sse = |pts: &[(f64, f64)]| -> f64 {
        match linear_fit(pts) {
            Ok((a, b, _, _)) => pts.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    (1..series.len() - 1)
        .map(|k| (series[k].0, sse(&series[..=k]) + sse(&series[k..])))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| x)
        .ok_or_else(|| Error::Analysis("no knee found".into()))
}

/// Mean across records with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub records: usize,
    /// Anchors (or site-time pairs) per record.
    pub samples: usize,
}

impl Estimate {
    fn from_values(values: &[f64], samples: usize) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64)
                .sqrt()
        } else {
            log::warn!("single record: standard error set to 0");
            0.0
        };
        Self {
            value: mean,
            stderr,
            records: n,
            samples,
        }
    }

    /// The conventional error bar, twice the standard error.
    pub fn error_bar(&self) -> f64 {
        2.0 * self.stderr
    }
}

fn check_records(records: &[TrajectoryRecord]) -> Result<(usize, usize)> {
    let first = records
        .first()
        .ok_or_else(|| Error::Analysis("no records".into()))?;
    if records
        .iter()
        .any(|r| r.sites != first.sites || r.steps != first.steps)
    {
        return Err(Error::Analysis("records differ in shape".into()));
    }
    Ok((first.sites, first.steps))
}

/// Fraction of overlapping `ℓ x τ` windows that are all zero, anchored at
/// least `margin` sites from either edge and after `burn_in` steps; averaged
/// per record, then across records.
pub fn empirical_cluster_prob(
    records: &[TrajectoryRecord],
    ell: usize,
    tau: usize,
    margin: usize,
    burn_in: usize,
) -> Result<Estimate> {
    let (l, t) = check_records(records)?;
    if ell == 0 || tau == 0 || l < 2 * margin + ell || t < burn_in + tau {
        return Err(Error::Analysis(format!(
            "no admissible anchors for {ell}x{tau} with margin {margin}, burn-in {burn_in} in a {t}x{l} record"
        )));
    }
    let (i_hi, t_hi) = (l - margin - ell, t - tau);
    let anchors = (i_hi - margin + 1) * (t_hi - burn_in + 1);
    let values: Vec<f64> = records
        .iter()
        .map(|r| {
            // 2-D prefix sums of the ones
            let w = l + 1;
            let mut pre = vec![0u32; (t + 1) * w];
            for ti in 0..t {
                let row = r.row(ti);
                let mut acc = 0u32;
                for i in 0..l {
                    acc += row[i] as u32;
                    pre[(ti + 1) * w + i + 1] = pre[ti * w + i + 1] + acc;
                }
            }
            let mut hits = 0usize;
            for t0 in burn_in..=t_hi {
                for i0 in margin..=i_hi {
                    let (t1, i1) = (t0 + tau, i0 + ell);
                    let s =
                        pre[t1 * w + i1] + pre[t0 * w + i0] - pre[t0 * w + i1] - pre[t1 * w + i0];
                    hits += usize::from(s == 0);
                }
            }
            hits as f64 / anchors as f64
        })
        .collect();
    Ok(Estimate::from_values(&values, anchors))
}

/// Sites entering the empirical autocorrelation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteSet {
    /// Every site at least `margin` from the edges.
    Bulk,
    /// The given number of central sites.
    Central(usize),
}

impl SiteSet {
    pub fn sites(&self, l: usize, margin: usize) -> Result<std::ops::Range<usize>> {
        let r = match *self {
            SiteSet::Bulk => margin..l.saturating_sub(margin),
            SiteSet::Central(w) if w <= l => {
                let s = central_start(l, w);
                s..s + w
            }
            SiteSet::Central(w) => {
                return Err(Error::Analysis(format!(
                    "{w} central sites in a chain of {l}"
                )))
            }
        };
        if r.is_empty() {
            return Err(Error::Analysis("empty site set".into()));
        }
        Ok(r)
    }
}

/// Time-averaged `⟨k(t)k(t−δ)⟩ − ⟨k(t)⟩⟨k(t−δ)⟩` per site, averaged over the
/// site set, then across records.
pub fn empirical_autocorrelation(
    records: &[TrajectoryRecord],
    delta_t: usize,
    margin: usize,
    burn_in: usize,
    site_set: SiteSet,
) -> Result<Estimate> {
    let (l, t) = check_records(records)?;
    let sites = site_set.sites(l, margin)?;
    if delta_t == 0 || t <= burn_in + delta_t {
        return Err(Error::Analysis(format!(
            "lag {delta_t} leaves no samples after burn-in {burn_in} in {t} steps"
        )));
    }
    let n = (t - burn_in - delta_t) as f64;
    let values: Vec<f64> = records
        .iter()
        .map(|r| {
            let per_site: f64 = sites
                .clone()
                .map(|i| {
                    let (mut sx, mut sy, mut sxy) = (0u64, 0u64, 0u64);
                    for ti in burn_in + delta_t..t {
                        let x = r.outcome(ti, i) as u64;
                        let y = r.outcome(ti - delta_t, i) as u64;
                        sx += x;
                        sy += y;
                        sxy += x * y;
                    }
                    sxy as f64 / n - (sx as f64 / n) * (sy as f64 / n)
                })
                .sum();
            per_site / sites.len() as f64
        })
        .collect();
    Ok(Estimate::from_values(
        &values,
        (t - burn_in - delta_t) * sites.len(),
    ))
}
