//! Quenched coupling disorder and classical readout errors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, SiteCouplings};
use crate::record::TrajectoryRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Half-width of the uniform disorder on `V` and `γ`.
    pub disorder_amplitude: f64,
    /// Independent flip probability of each recorded outcome.
    pub p_err: f64,
    pub disorder_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            disorder_amplitude: 0.0,
            p_err: 0.0,
            disorder_seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.disorder_amplitude >= 0.0 && self.disorder_amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "disorder amplitude {} must be non-negative",
                self.disorder_amplitude
            )));
        }
        if !(0.0..=1.0).contains(&self.p_err) {
            return Err(Error::InvalidParameter(format!(
                "p_err {} outside [0, 1]",
                self.p_err
            )));
        }
        Ok(())
    }
}

/// One quenched coupling set: `V_b ~ U[V−a, V+a]` per bond, then
/// `γ_i ~ U[γ−a, γ+a]` per site. `Ω` is never disordered.
pub fn sample_disorder<R: Rng + ?Sized>(
    params: &ModelParams,
    model: &NoiseModel,
    rng: &mut R,
) -> Result<SiteCouplings> {
    model.validate()?;
    params.validate()?;
    let a = model.disorder_amplitude;
    if a == 0.0 {
        return Ok(SiteCouplings::uniform(params));
    }
    if a > params.gamma || a > params.v {
        return Err(Error::InvalidParameter(format!(
            "disorder amplitude {a} exceeds min(V, gamma) = {}; couplings could turn negative",
            params.v.min(params.gamma)
        )));
    }
    let v_bond = (0..params.sites.saturating_sub(1))
        .map(|_| rng.random_range(params.v - a..=params.v + a))
        .collect();
    let gamma_site = (0..params.sites)
        .map(|_| rng.random_range(params.gamma - a..=params.gamma + a))
        .collect();
    let c = SiteCouplings { v_bond, gamma_site };
    c.validate(params)?;
    Ok(c)
}

/// Coupling set for disorder realisation `index`, independent of any
/// trajectory seed.
pub fn disorder_set(params: &ModelParams, model: &NoiseModel, index: u64) -> Result<SiteCouplings> {
    let mut rng = crate::rng_from_seed(crate::derived_seed(model.disorder_seed, index));
    sample_disorder(params, model, &mut rng)
}

/// Bit-flip pattern, one variate per entry in row-major order.
pub fn flip_mask<R: Rng + ?Sized>(steps: usize, sites: usize, p_err: f64, rng: &mut R) -> Vec<u8> {
    (0..steps * sites)
        .map(|_| u8::from(rng.random::<f64>() < p_err))
        .collect()
}

/// Copy of `record` with every outcome flipped independently with
/// probability `p_err`.
pub fn apply_readout_errors<R: Rng + ?Sized>(
    record: &TrajectoryRecord,
    p_err: f64,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    if !(0.0..=1.0).contains(&p_err) {
        return Err(Error::InvalidParameter(format!(
            "p_err {p_err} outside [0, 1]"
        )));
    }
    let flips = flip_mask(record.steps, record.sites, p_err, rng);
    let mut out = record.clone();
    for (k, f) in out.outcomes_mut().iter_mut().zip(flips) {
        *k ^= f;
    }
    // two independent flip stages compose to one
    let q = record.meta.readout_error.unwrap_or(0.0);
    out.meta.readout_error = Some(q * (1.0 - p_err) + p_err * (1.0 - q));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RecordMeta;

    fn record(rows: usize, sites: usize) -> TrajectoryRecord {
        let bits = (0..rows * sites)
            .map(|i| ((i * 7) % 3 == 0) as u8)
            .collect();
        TrajectoryRecord::from_outcomes(sites, bits, RecordMeta::default()).unwrap()
    }

    #[test]
    fn zero_amplitude_is_uniform() {
        let p = ModelParams::reference(6);
        let c = disorder_set(&p, &NoiseModel::default(), 3).unwrap();
        assert_eq!(c, SiteCouplings::uniform(&p));
    }

    #[test]
    fn disorder_is_bounded_and_reproducible() {
        let p = ModelParams::reference(8);
        let m = NoiseModel {
            disorder_amplitude: 1.0,
            p_err: 0.0,
            disorder_seed: 11,
        };
        let a = disorder_set(&p, &m, 0).unwrap();
        assert_eq!(a, disorder_set(&p, &m, 0).unwrap());
        assert_ne!(a, disorder_set(&p, &m, 1).unwrap());
        assert!(a.v_bond.iter().all(|v| (4.875..=6.875).contains(v)));
        assert!(a.gamma_site.iter().all(|g| (2.0..=4.0).contains(g)));
    }

    #[test]
    fn excessive_amplitude_is_rejected() {
        let p = ModelParams::reference(4);
        let m = NoiseModel {
            disorder_amplitude: 3.5,
            ..Default::default()
        };
        assert!(disorder_set(&p, &m, 0).is_err());
        assert!(NoiseModel {
            p_err: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn disorder_moments() {
        let p = ModelParams::new(2, 1.0, 2.0, 3.0, 1.0, 1).unwrap();
        let m = NoiseModel {
            disorder_amplitude: 1.0,
            ..Default::default()
        };
        let mut rng = crate::rng_from_seed(5);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_disorder(&p, &m, &mut rng).unwrap().gamma_site[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // U[2, 4]: mean 3, variance 1/3
        let se_mean = (1.0 / 3.0 / n as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se_mean);
        // variance of the sample variance for a uniform: (μ4 − σ⁴)/n with μ4 = 1/5
        let se_var = ((0.2 - 1.0 / 9.0) / n as f64).sqrt();
        assert!((var - 1.0 / 3.0).abs() < 3.0 * se_var);
    }

    #[test]
    fn extreme_flip_probabilities() {
        let r = record(20, 5);
        let mut rng = crate::rng_from_seed(1);
        let same = apply_readout_errors(&r, 0.0, &mut rng).unwrap();
        assert_eq!(same.outcomes(), r.outcomes());
        let inv = apply_readout_errors(&r, 1.0, &mut rng).unwrap();
        assert!(inv
            .outcomes()
            .iter()
            .zip(r.outcomes())
            .all(|(a, b)| a ^ b == 1));
        assert_eq!(inv.meta.readout_error, Some(1.0));
    }

    #[test]
    fn flip_fraction_is_binomial() {
        let r = record(1000, 20);
        let mut rng = crate::rng_from_seed(2);
        let f = apply_readout_errors(&r, 0.02, &mut rng).unwrap();
        let n = (r.steps * r.sites) as f64;
        let flips = f
            .outcomes()
            .iter()
            .zip(r.outcomes())
            .filter(|(a, b)| a != b)
            .count() as f64;
        let sd = (n * 0.02 * 0.98).sqrt();
        assert!((flips - 0.02 * n).abs() < 3.0 * sd);
    }

    #[test]
    fn flipping_commutes_with_windowing() {
        let r = record(30, 6);
        let p = 0.3;
        let a = apply_readout_errors(&r, p, &mut crate::rng_from_seed(4))
            .unwrap()
            .window(5, 25, 1, 6)
            .unwrap();
        // same variates, consumed in the same row-major order, applied after slicing
        let flips = flip_mask(30, 6, p, &mut crate::rng_from_seed(4));
        let w = r.window(5, 25, 1, 6).unwrap();
        for t in 0..20 {
            for i in 0..5 {
                assert_eq!(
                    a.outcome(t, i),
                    w.outcome(t, i) ^ flips[(t + 5) * 6 + i + 1]
                );
            }
        }
    }
}
