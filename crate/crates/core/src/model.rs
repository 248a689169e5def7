//! Physical parameters of the monitored chain and its collision-model
//! Hamiltonian.
//!
//! The joint chain is interleaved as `[s1, a1, s2, a2, ...]`: system atom `i`
//! sits at position `2i` and its ancilla at `2i + 1`, so every system–ancilla
//! coupling is nearest-neighbour.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest chain for which dense joint operators (`4^L x 4^L`) are built.
pub const DENSE_MAX_SITES: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of system atoms `L`.
    pub sites: usize,
    /// Rabi frequency.
    pub omega: f64,
    /// Nearest-neighbour interaction.
    pub v: f64,
    /// Dissipation rate.
    pub gamma: f64,
    /// Interaction time per collision.
    pub dt: f64,
    /// Trotter substeps per collision.
    pub substeps: usize,
}

impl ModelParams {
    pub fn new(
        sites: usize,
        omega: f64,
        v: f64,
        gamma: f64,
        dt: f64,
        substeps: usize,
    ) -> Result<Self> {
        let p = Self {
            sites,
            omega,
            v,
            gamma,
            dt,
            substeps,
        };
        p.validate()?;
        Ok(p)
    }

    /// `ΩΔt = 1.25`, `V = 5.875Ω`, `γ = 3Ω`, `M = 10`, with `Ω = 1`.
    pub fn reference(sites: usize) -> Self {
        Self {
            sites,
            omega: 1.0,
            v: 5.875,
            gamma: 3.0,
            dt: 1.25,
            substeps: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::InvalidParameter("L must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter(
                "M (Trotter substeps) must be at least 1".into(),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if !self.omega.is_finite() || !self.v.is_finite() {
            return Err(Error::InvalidParameter("omega and V must be finite".into()));
        }
        Ok(())
    }

    /// Ancilla drive frequency `γ0 = sqrt(γ/Δt)`.
    pub fn gamma0(&self) -> f64 {
        (self.gamma / self.dt).sqrt()
    }

    pub fn with_v(&self, v: f64) -> Self {
        Self { v, ..self.clone() }
    }

    pub fn with_substeps(&self, substeps: usize) -> Self {
        Self {
            substeps,
            ..self.clone()
        }
    }
}

/// Per-bond interactions and per-site dissipation rates; the uniform model
/// has every entry equal to the corresponding [`ModelParams`] value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteCouplings {
    pub v_bond: Vec<f64>,
    pub gamma_site: Vec<f64>,
}

impl SiteCouplings {
    pub fn uniform(params: &ModelParams) -> Self {
        Self {
            v_bond: vec![params.v; params.sites.saturating_sub(1)],
            gamma_site: vec![params.gamma; params.sites],
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.v_bond.len() != params.sites.saturating_sub(1)
            || self.gamma_site.len() != params.sites
        {
            return Err(Error::InvalidParameter(format!(
                "coupling lengths ({}, {}) do not match L = {}",
                self.v_bond.len(),
                self.gamma_site.len(),
                params.sites
            )));
        }
        if self
            .v_bond
            .iter()
            .chain(&self.gamma_site)
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidParameter("couplings must be finite".into()));
        }
        if let Some(g) = self.gamma_site.iter().find(|g| **g < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "negative site dissipation rate {g}"
            )));
        }
        Ok(())
    }

    /// Ancilla drive frequency of site `i`.
    pub fn gamma0(&self, i: usize, dt: f64) -> f64 {
        (self.gamma_site[i] / dt).sqrt()
    }
}

/// Interleaved chain position of system atom `i`.
pub fn system_pos(i: usize) -> usize {
    2 * i
}

/// Interleaved chain position of the ancilla attached to atom `i`.
pub fn ancilla_pos(i: usize) -> usize {
    2 * i + 1
}

pub(crate) fn check_dense(sites: usize) -> Result<()> {
    if sites > DENSE_MAX_SITES {
        return Err(Error::DenseSizeLimit {
            sites,
            max: DENSE_MAX_SITES,
        });
    }
    Ok(())
}

/// The three pieces of the collision Hamiltonian on the full joint space:
/// interaction, drive, and system–ancilla coupling.
pub(crate) fn hamiltonian_parts(
    params: &ModelParams,
    couplings: &SiteCouplings,
) -> Result<[Array2<C64>; 3]> {
    params.validate()?;
    couplings.validate(params)?;
    check_dense(params.sites)?;
    let l = params.sites;
    let window: Vec<usize> = (0..2 * l).collect();
    let dim = 1usize << (2 * l);
    let nn = linalg::kron(&linalg::number(), &linalg::number());
    let pa = linalg::kron(&linalg::ground_projector(), &linalg::sigma_x());
    let x = linalg::sigma_x();

    let mut interaction = Array2::zeros((dim, dim));
    for (b, v) in couplings.v_bond.iter().enumerate() {
        interaction = interaction
            + linalg::embed(&nn, &[system_pos(b), system_pos(b + 1)], &window) * C64::from(*v);
    }
    let mut drive = Array2::zeros((dim, dim));
    let mut dissipative = Array2::zeros((dim, dim));
    for i in 0..l {
        drive = drive + linalg::embed(&x, &[system_pos(i)], &window) * C64::from(params.omega);
        let g0 = couplings.gamma0(i, params.dt);
        dissipative = dissipative
            + linalg::embed(&pa, &[system_pos(i), ancilla_pos(i)], &window) * C64::from(g0);
    }
    Ok([interaction, drive, dissipative])
}

/// Collision-model Hamiltonian on the `4^L`-dimensional joint space.
pub fn build_hamiltonian(params: &ModelParams, couplings: &SiteCouplings) -> Result<Array2<C64>> {
    let [a, b, c] = hamiltonian_parts(params, couplings)?;
    Ok(a + b + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_linalg::{Eigh, UPLO};

    #[test]
    fn gamma0_consistency() {
        let p = ModelParams::reference(4);
        let g0 = p.gamma0();
        assert!((g0 * g0 * p.dt - p.gamma).abs() <= 1e-12 * p.gamma);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(ModelParams::new(0, 1.0, 1.0, 1.0, 1.0, 1).is_err());
        assert!(ModelParams::new(2, 1.0, 1.0, 1.0, 0.0, 1).is_err());
        assert!(ModelParams::new(2, 1.0, 1.0, -1.0, 1.0, 1).is_err());
        assert!(ModelParams::new(2, 1.0, 1.0, 1.0, 1.0, 0).is_err());
        let p = ModelParams::reference(3);
        let mut c = SiteCouplings::uniform(&p);
        assert_eq!(c.v_bond.len(), 2);
        c.v_bond.push(1.0);
        assert!(c.validate(&p).is_err());
    }

    #[test]
    fn single_site_spectrum() {
        // Ω = 0: only γ0 P⊗σx survives, eigenvalues {0, 0, ±γ0}
        let p = ModelParams::new(1, 0.0, 3.0, 2.0, 0.5, 1).unwrap();
        let h = build_hamiltonian(&p, &SiteCouplings::uniform(&p)).unwrap();
        let (mut e, _) = h.eigh(UPLO::Lower).unwrap();
        e.as_slice_mut()
            .unwrap()
            .sort_by(|a, b| a.partial_cmp(b).unwrap());
        let g0 = p.gamma0();
        let expect = [-g0, 0.0, 0.0, g0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_couplings_off_gives_zero() {
        let p = ModelParams::new(2, 0.0, 0.0, 0.0, 1.0, 1).unwrap();
        let h = build_hamiltonian(&p, &SiteCouplings::uniform(&p)).unwrap();
        assert_eq!(h.dim(), (16, 16));
        assert!(h.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn size_limit_is_explicit() {
        let p = ModelParams::reference(DENSE_MAX_SITES + 1);
        match build_hamiltonian(&p, &SiteCouplings::uniform(&p)) {
            Err(Error::DenseSizeLimit { sites, .. }) => assert_eq!(sites, DENSE_MAX_SITES + 1),
            other => panic!("expected size-limit error, got {other:?}"),
        }
    }

    #[test]
    fn uniform_couplings_match_params_exactly() {
        let p = ModelParams::reference(3);
        let a = build_hamiltonian(&p, &SiteCouplings::uniform(&p)).unwrap();
        let explicit = SiteCouplings {
            v_bond: vec![5.875; 2],
            gamma_site: vec![3.0; 3],
        };
        let b = build_hamiltonian(&p, &explicit).unwrap();
        assert_eq!(a, b);
    }
}
