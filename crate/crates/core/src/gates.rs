//! First-order Trotterisation of one collision.
//!
//! Each substep applies, to a ket, the system–ancilla couplings first, then
//! the drive, then the nearest-neighbour interactions; a collision repeats
//! the substep `M` times.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, ONE, ZERO};
use crate::model::{ancilla_pos, system_pos, ModelParams, SiteCouplings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateKind {
    Interaction,
    Drive,
    SystemAncilla,
}

#[derive(Clone, Debug)]
pub struct Gate {
    pub kind: GateKind,
    /// Interleaved chain positions, in the qubit order of `matrix`.
    pub sites: Vec<usize>,
    pub matrix: Array2<C64>,
}

#[derive(Clone, Debug)]
pub struct GateSequence {
    /// Number of system atoms.
    pub sites: usize,
    /// Gates of one substep, in application order.
    pub substep: Vec<Gate>,
    /// Number of substeps per collision (`M`).
    pub repeats: usize,
}

/// `exp(-i φ n⊗n)`.
pub fn interaction_gate(phi: f64) -> Array2<C64> {
    let mut g = linalg::identity(4);
    g[[3, 3]] = C64::from_polar(1.0, -phi);
    g
}

/// `exp(-i φ σx)`.
pub fn drive_gate(phi: f64) -> Array2<C64> {
    let (s, c) = phi.sin_cos();
    Array2::from_shape_vec(
        (2, 2),
        vec![
            C64::from(c),
            C64::new(0.0, -s),
            C64::new(0.0, -s),
            C64::from(c),
        ],
    )
    .unwrap()
}

/// `exp(-i φ P⊗σx)` on (system, ancilla): rotates the ancilla only when the
/// atom is in |0⟩.
pub fn system_ancilla_gate(phi: f64) -> Array2<C64> {
    let (s, c) = phi.sin_cos();
    let mut g = Array2::from_elem((4, 4), ZERO);
    g[[0, 0]] = C64::from(c);
    g[[1, 1]] = C64::from(c);
    g[[0, 1]] = C64::new(0.0, -s);
    g[[1, 0]] = C64::new(0.0, -s);
    g[[2, 2]] = ONE;
    g[[3, 3]] = ONE;
    g
}

pub fn build_gate_sequence(
    params: &ModelParams,
    couplings: &SiteCouplings,
    substeps: usize,
) -> Result<GateSequence> {
    params.validate()?;
    couplings.validate(params)?;
    if substeps == 0 {
        return Err(Error::InvalidParameter(
            "M (Trotter substeps) must be at least 1".into(),
        ));
    }
    let tau = params.dt / substeps as f64;
    let l = params.sites;
    let mut substep = Vec::with_capacity(3 * l);
    for i in 0..l {
        substep.push(Gate {
            kind: GateKind::SystemAncilla,
            sites: vec![system_pos(i), ancilla_pos(i)],
            matrix: system_ancilla_gate(couplings.gamma0(i, params.dt) * tau),
        });
    }
    for i in 0..l {
        substep.push(Gate {
            kind: GateKind::Drive,
            sites: vec![system_pos(i)],
            matrix: drive_gate(params.omega * tau),
        });
    }
    for (b, v) in couplings.v_bond.iter().enumerate() {
        substep.push(Gate {
            kind: GateKind::Interaction,
            sites: vec![system_pos(b), system_pos(b + 1)],
            matrix: interaction_gate(v * tau),
        });
    }
    Ok(GateSequence {
        sites: l,
        substep,
        repeats: substeps,
    })
}

impl GateSequence {
    pub fn from_params(params: &ModelParams, couplings: &SiteCouplings) -> Result<Self> {
        build_gate_sequence(params, couplings, params.substeps)
    }

    /// Every gate of one collision in application order.
    pub fn iter_step(&self) -> impl Iterator<Item = &Gate> {
        (0..self.repeats).flat_map(move |_| self.substep.iter())
    }

    /// Substep gates regrouped into the given kind order (application order).
    /// Used for fault injection; the physical ordering is
    /// `[SystemAncilla, Drive, Interaction]`.
    pub fn reordered(&self, order: [GateKind; 3]) -> Self {
        let substep = order
            .iter()
            .flat_map(|k| self.substep.iter().filter(move |g| g.kind == *k).cloned())
            .collect();
        Self {
            sites: self.sites,
            substep,
            repeats: self.repeats,
        }
    }

    /// Largest `‖G†G − 1‖` (entrywise max) over the substep gates.
    pub fn unitarity_error(&self) -> f64 {
        self.substep
            .iter()
            .map(|g| {
                let d = g.matrix.nrows();
                linalg::max_abs_diff(
                    &linalg::dagger(&g.matrix).dot(&g.matrix),
                    &linalg::identity(d),
                )
            })
            .fold(0.0, f64::max)
    }
}
