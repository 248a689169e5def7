//! Small dense helpers shared by the backends.
//!
//! Qubit ordering convention everywhere: in a multi-qubit basis index the
//! first listed qubit is the most significant bit (Kronecker order).

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::error::Result;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn identity(dim: usize) -> Array2<C64> {
    Array2::from_diag_elem(dim, ONE)
}

pub fn sigma_x() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ONE, ZERO]).unwrap()
}

pub fn sigma_y() -> Array2<C64> {
    let i = C64::new(0.0, 1.0);
    Array2::from_shape_vec((2, 2), vec![ZERO, -i, i, ZERO]).unwrap()
}

pub fn sigma_z() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ONE, ZERO, ZERO, -ONE]).unwrap()
}

/// Projector onto |1⟩ (excitation number).
pub fn number() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ZERO, ZERO, ZERO, ONE]).unwrap()
}

/// Projector onto |0⟩.
pub fn ground_projector() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ONE, ZERO, ZERO, ZERO]).unwrap()
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Lift `op`, acting on the qubits `op_sites`, to an operator on the qubits
/// `window` (which must contain every entry of `op_sites`).
pub fn embed(op: &Array2<C64>, op_sites: &[usize], window: &[usize]) -> Array2<C64> {
    let n = window.len();
    let k = op_sites.len();
    assert_eq!(
        op.nrows(),
        1 << k,
        "operator dimension does not match its support"
    );
    let pos: Vec<usize> = op_sites
        .iter()
        .map(|s| {
            window
                .iter()
                .position(|w| w == s)
                .expect("operator support outside window")
        })
        .collect();
    // bit shift (from the least significant end) of each op qubit inside the window index
    let shifts: Vec<usize> = pos.iter().map(|&p| n - 1 - p).collect();
    let op_mask: usize = shifts.iter().map(|s| 1usize << s).sum();
    let dim = 1usize << n;
    let sub = |idx: usize| -> usize {
        let mut v = 0;
        for (j, s) in shifts.iter().enumerate() {
            if idx >> s & 1 == 1 {
                v |= 1 << (k - 1 - j);
            }
        }
        v
    };
    let mut out = Array2::zeros((dim, dim));
    for col in 0..dim {
        let rest = col & !op_mask;
        let c = sub(col);
        for r in 0..(1usize << k) {
            let amp = op[[r, c]];
            if amp == ZERO {
                continue;
            }
            let mut row = rest;
            for (j, s) in shifts.iter().enumerate() {
                if r >> (k - 1 - j) & 1 == 1 {
                    row |= 1 << s;
                }
            }
            out[[row, col]] += amp;
        }
    }
    out
}

/// Apply a `k`-qubit gate to a state vector over `nqubits` qubits in place.
pub fn apply_to_vector(state: &mut [C64], nqubits: usize, gate: &Array2<C64>, sites: &[usize]) {
    let k = sites.len();
    let gdim = 1usize << k;
    debug_assert_eq!(gate.nrows(), gdim);
    let shifts: Vec<usize> = sites.iter().map(|&s| nqubits - 1 - s).collect();
    let mask: usize = shifts.iter().map(|s| 1usize << s).sum();
    let offsets: Vec<usize> = (0..gdim)
        .map(|g| {
            let mut off = 0;
            for (j, s) in shifts.iter().enumerate() {
                if g >> (k - 1 - j) & 1 == 1 {
                    off |= 1 << s;
                }
            }
            off
        })
        .collect();
    let mut buf = vec![ZERO; gdim];
    for base in 0..state.len() {
        if base & mask != 0 {
            continue;
        }
        for (g, off) in offsets.iter().enumerate() {
            buf[g] = state[base | off];
        }
        for (r, off) in offsets.iter().enumerate() {
            let mut acc = ZERO;
            for (c, b) in buf.iter().enumerate() {
                acc += gate[[r, c]] * b;
            }
            state[base | off] = acc;
        }
    }
}

/// `exp(-i h t)` for Hermitian `h`.
pub fn hermitian_expm(h: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    let (evals, evecs) = h.eigh(UPLO::Lower)?;
    let phases: Array1<C64> = evals.mapv(|e| C64::from_polar(1.0, -e * t));
    let scaled = &evecs * &phases.insert_axis(ndarray::Axis(0));
    Ok(scaled.dot(&dagger(&evecs)))
}

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Spectral norm, via the largest singular value.
pub fn operator_norm(a: &Array2<C64>) -> Result<f64> {
    use ndarray_linalg::{JobSvd, SVDDC};
    let (_, s, _) = a.svddc(JobSvd::None)?;
    Ok(s.iter().cloned().fold(0.0, f64::max))
}

/// Normalised single-qubit Pauli basis I, X, Y, Z.
fn paulis() -> [Array2<C64>; 4] {
    [identity(2), sigma_x(), sigma_y(), sigma_z()]
}

/// Pauli string for `index` over `k` qubits (first qubit most significant, base 4).
pub fn pauli_string(index: usize, k: usize) -> Array2<C64> {
    let basis = paulis();
    let mut out = identity(1);
    for j in 0..k {
        let a = index / 4usize.pow((k - 1 - j) as u32) % 4;
        out = kron(&out, &basis[a]);
    }
    out
}

/// Real matrix of the channel `X -> G X G†` in the normalised Pauli basis,
/// `S[a, b] = Tr(P_a G P_b G†) / 2^k`.
pub fn pauli_superoperator(g: &Array2<C64>) -> Array2<f64> {
    let dim = g.nrows();
    let k = dim.trailing_zeros() as usize;
    let n = 1usize << (2 * k);
    let strings: Vec<Array2<C64>> = (0..n).map(|a| pauli_string(a, k)).collect();
    let gd = dagger(g);
    let mut out = Array2::zeros((n, n));
    for b in 0..n {
        let conj = g.dot(&strings[b]).dot(&gd);
        for a in 0..n {
            let tr: C64 = (0..dim)
                .map(|i| {
                    (0..dim)
                        .map(|j| strings[a][[i, j]] * conj[[j, i]])
                        .sum::<C64>()
                })
                .sum();
            out[[a, b]] = tr.re / dim as f64;
        }
    }
    out
}
