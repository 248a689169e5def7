//! Matrix-product states with a moving orthogonality centre.
//!
//! [`Mps`] is generic over the scalar field so the same engine drives pure
//! states (complex, local dimension 2) and vectorised density operators in
//! the real Pauli basis (local dimension 4, see [`crate::mpo`]).

mod engine;
pub mod pure;
pub mod schedule;

pub use engine::{Field, Mps, BOND_BUDGET};
pub use pure::{
    direct_sample_and_reset, half_chain_entropy, local_density, run_trajectory, tebd_step,
    Diagnostics, PureState,
};
pub use schedule::{compile_step, Block};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular-value truncation applied at every bond update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationPolicy {
    /// Smallest retained Schmidt coefficient `ε`, relative to the norm of the
    /// decomposed block.
    pub svd_cutoff: f64,
    /// Bond-dimension cap `χ`; `None` is unlimited (up to [`BOND_BUDGET`]).
    pub max_bond: Option<usize>,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            svd_cutoff: 1e-10,
            max_bond: None,
        }
    }
}

impl TruncationPolicy {
    pub fn cutoff(eps: f64) -> Self {
        Self {
            svd_cutoff: eps,
            max_bond: None,
        }
    }

    /// Bond-capped policy; still drops numerically zero Schmidt values.
    pub fn bond(chi: usize) -> Self {
        Self {
            svd_cutoff: 1e-14,
            max_bond: Some(chi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.svd_cutoff >= 0.0 && self.svd_cutoff < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "svd cutoff {} outside [0, 1)",
                self.svd_cutoff
            )));
        }
        if self.max_bond == Some(0) {
            return Err(Error::InvalidParameter(
                "max bond dimension must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of singular values to keep (descending input) and the
    /// discarded weight `Σ_{dropped} s² / Σ s²`.
    pub fn keep(&self, s: &[f64]) -> (usize, f64) {
        let total: f64 = s.iter().map(|x| x * x).sum();
        if total == 0.0 || s.is_empty() {
            return (1, 0.0);
        }
        let norm = total.sqrt();
        let mut keep = s
            .iter()
            .take_while(|x| **x / norm >= self.svd_cutoff && **x > 0.0)
            .count();
        if let Some(chi) = self.max_bond {
            keep = keep.min(chi);
        }
        keep = keep.max(1);
        let dropped: f64 = s[keep..].iter().map(|x| x * x).sum();
        (keep, dropped / total)
    }
}
