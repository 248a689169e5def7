//! Per-ancilla conditioning applied at the end of a collision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AncillaOp {
    /// Marginalise over the outcome.
    Trace,
    /// Keep only the branch with this outcome (0 or 1).
    Project(u8),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask(pub Vec<AncillaOp>);

/// Start of the `ell`-site central window of an `L`-site chain (ties go left).
pub fn central_start(sites: usize, width: usize) -> usize {
    (sites - width) / 2
}

impl Mask {
    pub fn trace_all(sites: usize) -> Self {
        Self(vec![AncillaOp::Trace; sites])
    }

    /// Require `0` on the `ell` central ancillas.
    pub fn central_zeros(sites: usize, ell: usize) -> Result<Self> {
        if ell == 0 || ell > sites {
            return Err(Error::InvalidParameter(format!(
                "cluster width {ell} outside 1..={sites}"
            )));
        }
        let start = central_start(sites, ell);
        let mut m = Self::trace_all(sites);
        m.0[start..start + ell].fill(AncillaOp::Project(0));
        Ok(m)
    }

    /// Two `ell`-site blocks of `0` separated by `gap` traced sites, placed
    /// symmetrically about the centre (left-biased when the slack is odd).
    pub fn two_blocks(sites: usize, ell: usize, gap: usize) -> Result<Self> {
        if ell == 0 || 2 * ell + gap > sites {
            return Err(Error::InvalidParameter(format!(
                "two blocks of width {ell} with gap {gap} do not fit in {sites} sites"
            )));
        }
        let start = central_start(sites, 2 * ell + gap);
        let mut m = Self::trace_all(sites);
        m.0[start..start + ell].fill(AncillaOp::Project(0));
        m.0[start + ell + gap..start + 2 * ell + gap].fill(AncillaOp::Project(0));
        Ok(m)
    }

    /// Require `outcome` on ancilla `site`, trace the rest.
    pub fn single(sites: usize, site: usize, outcome: u8) -> Result<Self> {
        if site >= sites || outcome > 1 {
            return Err(Error::InvalidParameter(format!(
                "site {site} / outcome {outcome} out of range"
            )));
        }
        let mut m = Self::trace_all(sites);
        m.0[site] = AncillaOp::Project(outcome);
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether the outcome bit-vector `k` (site 0 most significant) is
    /// compatible with the mask.
    pub fn admits(&self, k: usize) -> bool {
        let l = self.0.len();
        self.0.iter().enumerate().all(|(i, op)| match op {
            AncillaOp::Trace => true,
            AncillaOp::Project(b) => (k >> (l - 1 - i) & 1) as u8 == *b,
        })
    }
}
