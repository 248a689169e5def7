//! Brute-force backend for short chains: joint unitaries, Kraus operators,
//! Born-rule sampling and conditioned density-matrix evolution.
//!
//! System operators act on `2^L` amplitudes with atom 0 as the most
//! significant bit; outcome vectors `k` use the same convention.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, JobSvd, SVDDC, UPLO};
use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gates::GateSequence;
use crate::linalg::{self, ZERO};
use crate::mask::{AncillaOp, Mask};
use crate::model::{
    ancilla_pos, check_dense, hamiltonian_parts, system_pos, ModelParams, SiteCouplings,
};
use crate::record::{RecordMeta, TrajectoryRecord};

/// Below this the conditioned weight is treated as lost.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Joint index of system configuration `s` and ancilla configuration `k`.
pub fn joint_index(s: usize, k: usize, sites: usize) -> usize {
    let n = 2 * sites;
    let mut idx = 0;
    for i in 0..sites {
        let bit = sites - 1 - i;
        idx |= (s >> bit & 1) << (n - 1 - system_pos(i));
        idx |= (k >> bit & 1) << (n - 1 - ancilla_pos(i));
    }
    idx
}

/// `exp(-i H Δt)` on the joint space, by eigendecomposition.
pub fn exact_unitary(params: &ModelParams, couplings: &SiteCouplings) -> Result<Array2<C64>> {
    let h = crate::model::build_hamiltonian(params, couplings)?;
    linalg::hermitian_expm(&h, params.dt)
}

/// Columns of `exp(-i H Δt)` with every ancilla in `|0⟩`.
pub fn exact_isometry(params: &ModelParams, couplings: &SiteCouplings) -> Result<Array2<C64>> {
    let h = crate::model::build_hamiltonian(params, couplings)?;
    let e = Spectral::new(&h)?;
    Ok(e.apply(params.dt, &ground_columns(params.sites)))
}

/// Eigendecomposition of a Hermitian generator, for repeated `exp(-iht) X`.
struct Spectral {
    evals: Array1<f64>,
    evecs: Array2<C64>,
}

impl Spectral {
    fn new(h: &Array2<C64>) -> Result<Self> {
        let (evals, evecs) = h.eigh(UPLO::Lower)?;
        Ok(Self { evals, evecs })
    }

    fn apply(&self, t: f64, x: &Array2<C64>) -> Array2<C64> {
        let mut y = linalg::dagger(&self.evecs).dot(x);
        for (mut row, e) in y.rows_mut().into_iter().zip(self.evals.iter()) {
            let ph = C64::from_polar(1.0, -e * t);
            row.mapv_inplace(|z| z * ph);
        }
        self.evecs.dot(&y)
    }
}

fn ground_columns(sites: usize) -> Array2<C64> {
    let dim = 1usize << (2 * sites);
    let mut x = Array2::from_elem((dim, 1usize << sites), ZERO);
    for s in 0..1usize << sites {
        x[[joint_index(s, 0, sites), s]] = C64::from(1.0);
    }
    x
}

/// `(e^{-iH_V τ} e^{-iH_Ω τ} e^{-iH_γ τ})^M` with `τ = Δt/M`, built from the
/// three Hamiltonian pieces rather than from the gate list.
pub struct TrotterReference {
    sites: usize,
    dt: f64,
    pieces: [Spectral; 3],
}

impl TrotterReference {
    pub fn new(params: &ModelParams, couplings: &SiteCouplings) -> Result<Self> {
        let [hv, hd, hg] = hamiltonian_parts(params, couplings)?;
        Ok(Self {
            sites: params.sites,
            dt: params.dt,
            pieces: [
                Spectral::new(&hv)?,
                Spectral::new(&hd)?,
                Spectral::new(&hg)?,
            ],
        })
    }

    pub fn apply(&self, substeps: usize, x: &Array2<C64>) -> Array2<C64> {
        let tau = self.dt / substeps as f64;
        let mut y = x.clone();
        for _ in 0..substeps {
            for p in self.pieces.iter().rev() {
                y = p.apply(tau, &y);
            }
        }
        y
    }

    /// Columns with every ancilla in `|0⟩`.
    pub fn isometry(&self, substeps: usize) -> Array2<C64> {
        self.apply(substeps, &ground_columns(self.sites))
    }

    pub fn unitary(&self, substeps: usize) -> Array2<C64> {
        self.apply(substeps, &linalg::identity(1usize << (2 * self.sites)))
    }
}

/// Full reference Trotter product.
pub fn trotter_reference(
    params: &ModelParams,
    couplings: &SiteCouplings,
    substeps: usize,
) -> Result<Array2<C64>> {
    Ok(TrotterReference::new(params, couplings)?.unitary(substeps))
}

/// Gate product applied to the given joint basis columns.
fn gate_product_columns(seq: &GateSequence, columns: &[usize]) -> Result<Array2<C64>> {
    check_dense(seq.sites)?;
    let n = 2 * seq.sites;
    let dim = 1usize << n;
    let mut out = Array2::from_elem((dim, columns.len()), ZERO);
    let mut v = vec![ZERO; dim];
    for (c, &col) in columns.iter().enumerate() {
        v.fill(ZERO);
        v[col] = C64::from(1.0);
        for g in seq.iter_step() {
            linalg::apply_to_vector(&mut v, n, &g.matrix, &g.sites);
        }
        out.column_mut(c).assign(&Array1::from(v.clone()));
    }
    Ok(out)
}

/// Full joint matrix of one collision's gate product.
pub fn gate_product_unitary(seq: &GateSequence) -> Result<Array2<C64>> {
    let dim = 1usize << (2 * seq.sites);
    gate_product_columns(seq, &(0..dim).collect::<Vec<_>>())
}

/// Columns of the gate product with every ancilla in `|0⟩` (a `4^L x 2^L`
/// isometry).
pub fn gate_product_isometry(seq: &GateSequence) -> Result<Array2<C64>> {
    let cols: Vec<usize> = (0..1usize << seq.sites)
        .map(|s| joint_index(s, 0, seq.sites))
        .collect();
    gate_product_columns(seq, &cols)
}

/// Kraus operators `K_k = ⟨k_A|U|0_A⟩`, indexed by the outcome bit-vector.
#[derive(Clone, Debug)]
pub struct KrausSet {
    pub sites: usize,
    pub ops: Vec<Array2<C64>>,
}

impl KrausSet {
    /// From the `4^L x 2^L` isometry `U (· ⊗ |0_A⟩)`.
    pub fn from_isometry(w: &Array2<C64>, sites: usize) -> Self {
        let d = 1usize << sites;
        let ops = (0..d)
            .map(|k| Array2::from_shape_fn((d, d), |(s, c)| w[[joint_index(s, k, sites), c]]))
            .collect();
        Self { sites, ops }
    }

    pub fn from_unitary(u: &Array2<C64>, sites: usize) -> Self {
        let cols: Vec<usize> = (0..1usize << sites)
            .map(|s| joint_index(s, 0, sites))
            .collect();
        let w = Array2::from_shape_fn((u.nrows(), cols.len()), |(r, c)| u[[r, cols[c]]]);
        Self::from_isometry(&w, sites)
    }

    /// From the exact joint unitary.
    pub fn exact(params: &ModelParams, couplings: &SiteCouplings) -> Result<Self> {
        Ok(Self::from_isometry(
            &exact_isometry(params, couplings)?,
            params.sites,
        ))
    }

    /// From the Trotterised gate product used by the MPS and MPO engines.
    pub fn trotter(seq: &GateSequence) -> Result<Self> {
        Ok(Self::from_isometry(&gate_product_isometry(seq)?, seq.sites))
    }

    pub fn dim(&self) -> usize {
        1 << self.sites
    }

    /// `‖Σ K†K − 1‖` in operator norm.
    pub fn completeness_error(&self) -> Result<f64> {
        let mut acc = -linalg::identity(self.dim());
        for k in &self.ops {
            acc = acc + linalg::dagger(k).dot(k);
        }
        linalg::operator_norm(&acc)
    }

    /// `‖Σ K K† − 1‖`; zero when the fully mixed state is stationary.
    pub fn unitality_error(&self) -> Result<f64> {
        let mut acc = -linalg::identity(self.dim());
        for k in &self.ops {
            acc = acc + k.dot(&linalg::dagger(k));
        }
        linalg::operator_norm(&acc)
    }

    /// Born probabilities `‖K_k ψ‖²`.
    pub fn probabilities(&self, psi: &[C64]) -> Vec<f64> {
        let v = Array1::from(psi.to_vec());
        self.ops
            .iter()
            .map(|k| k.dot(&v).iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }
}

/// Exact Kraus set.
pub fn kraus_set(params: &ModelParams, couplings: &SiteCouplings) -> Result<KrausSet> {
    KrausSet::exact(params, couplings)
}

/// One Born-rule step. Ancillas are drawn left to right from their
/// conditional marginals with one uniform variate each, the same rule as the
/// MPS sampler, so both backends consume the stream identically.
pub fn sample_step<R: Rng + ?Sized>(
    kraus: &KrausSet,
    psi: &[C64],
    rng: &mut R,
) -> Result<(Vec<u8>, Vec<C64>)> {
    let l = kraus.sites;
    let v = Array1::from(psi.to_vec());
    let branches: Vec<Array1<C64>> = kraus.ops.iter().map(|k| k.dot(&v)).collect();
    let weights: Vec<f64> = branches
        .iter()
        .map(|b| b.iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let mut prefix = 0usize;
    let mut bits = Vec::with_capacity(l);
    for i in 0..l {
        let shift = l - 1 - i;
        let mut p = [0.0; 2];
        for (k, w) in weights.iter().enumerate() {
            if k >> (shift + 1) == prefix {
                p[k >> shift & 1] += w;
            }
        }
        let total = p[0] + p[1];
        if !(total > 0.0) {
            return Err(Error::VanishingBranch);
        }
        let u: f64 = rng.random();
        let b = usize::from(u >= p[0] / total);
        if p[b] == 0.0 {
            log::warn!("selected a zero-probability branch at ancilla {i}; taking the other one");
        }
        let b = if p[b] == 0.0 { 1 - b } else { b };
        prefix = prefix << 1 | b;
        bits.push(b as u8);
    }
    let w = weights[prefix];
    if !(w > 0.0) {
        return Err(Error::VanishingBranch);
    }
    let next = branches[prefix].mapv(|z| z / w.sqrt()).to_vec();
    Ok((bits, next))
}

/// `Σ_k K_k ρ K_k†`.
pub fn average_map(kraus: &KrausSet, rho: &Array2<C64>) -> Array2<C64> {
    let mut out = Array2::from_elem(rho.raw_dim(), ZERO);
    for k in &kraus.ops {
        out = out + k.dot(rho).dot(&linalg::dagger(k));
    }
    out
}

/// Sum over the outcomes admitted by `mask`. Returns the state normalised to
/// unit trace and the trace it had (the step's weight).
pub fn conditioned_step_dense(
    kraus: &KrausSet,
    rho: &Array2<C64>,
    mask: &Mask,
) -> Result<(Array2<C64>, f64)> {
    if mask.len() != kraus.sites {
        return Err(Error::InvalidParameter(format!(
            "mask of length {} for L = {}",
            mask.len(),
            kraus.sites
        )));
    }
    let mut out = Array2::from_elem(rho.raw_dim(), ZERO);
    for (idx, k) in kraus.ops.iter().enumerate() {
        if mask.admits(idx) {
            out = out + k.dot(rho).dot(&linalg::dagger(k));
        }
    }
    let w: f64 = out.diag().iter().map(|z| z.re).sum();
    if !(w > WEIGHT_FLOOR) {
        return Err(Error::WeightUnderflow(w));
    }
    out.mapv_inplace(|z| z / w);
    Ok((out, w))
}

/// `1 / 2^L`.
pub fn stationary_state(sites: usize) -> Array2<C64> {
    let d = 1usize << sites;
    linalg::identity(d) / C64::from(d as f64)
}

/// `log Tr(T_n ∘ … ∘ T_1 [ρ_ss])` for the given sequence of masks.
pub fn conditioned_log_weight<'a>(
    kraus: &KrausSet,
    masks: impl IntoIterator<Item = &'a Mask>,
) -> Result<f64> {
    let mut rho = stationary_state(kraus.sites);
    let mut log_w = 0.0;
    for m in masks {
        let (next, w) = conditioned_step_dense(kraus, &rho, m)?;
        rho = next;
        log_w += w.ln();
    }
    Ok(log_w)
}

/// `log p` of an `ℓ x τ` inactive cluster on the central window.
pub fn log_p_cluster(kraus: &KrausSet, ell: usize, tau: usize) -> Result<f64> {
    let m = Mask::central_zeros(kraus.sites, ell)?;
    conditioned_log_weight(kraus, std::iter::repeat_n(&m, tau))
}

/// `log p` of two `ℓ x τ` clusters separated by `δ_t` unconditioned steps.
pub fn log_p_two_temporal(kraus: &KrausSet, ell: usize, tau: usize, delta_t: usize) -> Result<f64> {
    let m = Mask::central_zeros(kraus.sites, ell)?;
    let free = Mask::trace_all(kraus.sites);
    let seq: Vec<&Mask> = std::iter::repeat_n(&m, tau)
        .chain(std::iter::repeat_n(&free, delta_t))
        .chain(std::iter::repeat_n(&m, tau))
        .collect();
    conditioned_log_weight(kraus, seq)
}

/// `log p` of two `ℓ`-wide blocks `δ_i` sites apart held for `τ` steps.
pub fn log_p_two_spatial(kraus: &KrausSet, ell: usize, tau: usize, delta_i: usize) -> Result<f64> {
    let m = Mask::two_blocks(kraus.sites, ell, delta_i)?;
    conditioned_log_weight(kraus, std::iter::repeat_n(&m, tau))
}

/// Stationary `(⟨k_i⟩, ⟨k_i(t) k_i(t−δ)⟩, c)`.
pub fn autocorrelation_dense(
    kraus: &KrausSet,
    site: usize,
    delta_t: usize,
) -> Result<(f64, f64, f64)> {
    if delta_t == 0 {
        return Err(Error::InvalidParameter(
            "autocorrelation lag must be at least 1".into(),
        ));
    }
    let one = Mask::single(kraus.sites, site, 1)?;
    let free = Mask::trace_all(kraus.sites);
    let single = conditioned_log_weight(kraus, [&one])?.exp();
    let seq: Vec<&Mask> = std::iter::once(&one)
        .chain(std::iter::repeat_n(&free, delta_t - 1))
        .chain(std::iter::once(&one))
        .collect();
    let joint = conditioned_log_weight(kraus, seq)?.exp();
    Ok((single, joint, joint - single * single))
}

/// Dense trajectory from `|0_S⟩^L`, stream-compatible with the MPS sampler.
pub fn run_dense_trajectory(kraus: &KrausSet, steps: usize, seed: u64) -> Result<TrajectoryRecord> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "trajectory length T must be at least 1".into(),
        ));
    }
    let mut rng = crate::rng_from_seed(seed);
    let mut psi = vec![ZERO; kraus.dim()];
    psi[0] = C64::from(1.0);
    let meta = RecordMeta {
        seed,
        ..Default::default()
    };
    let mut record = TrajectoryRecord::with_capacity(kraus.sites, steps, meta);
    for _ in 0..steps {
        let (k, next) = sample_step(kraus, &psi, &mut rng)?;
        record.push_row(&k);
        psi = next;
    }
    Ok(record)
}

/// `⟨n_i⟩` of a normalised system vector.
pub fn densities(psi: &[C64], sites: usize) -> Vec<f64> {
    (0..sites)
        .map(|i| {
            psi.iter()
                .enumerate()
                .filter(|(s, _)| s >> (sites - 1 - i) & 1 == 1)
                .map(|(_, z)| z.norm_sqr())
                .sum()
        })
        .collect()
}

/// Entropy of the first `cut` atoms, via the eigenvalues of the reduced
/// density matrix.
pub fn entanglement_entropy(psi: &[C64], sites: usize, cut: usize) -> Result<f64> {
    let (dl, dr) = (1usize << cut, 1usize << (sites - cut));
    let m = Array2::from_shape_vec((dl, dr), psi.to_vec()).expect("state length");
    let rho = m.dot(&linalg::dagger(&m));
    let (evals, _) = rho.eigh(UPLO::Lower)?;
    Ok(evals
        .iter()
        .filter(|w| **w > 1e-300)
        .map(|w| -w * w.ln())
        .sum())
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(rho: &Array2<C64>) -> Result<Vec<f64>> {
    Ok(rho.eigh(UPLO::Lower)?.0.to_vec())
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm(a: &Array2<C64>) -> Result<f64> {
    let (_, s, _) = a.svddc(JobSvd::None)?;
    Ok(s.sum())
}

/// Enumerate every outcome history of `masks.len()` steps from `ρ_ss`,
/// summing the probability of those admitted step by step. Independent of
/// the sequential conditioning above; feasible only for `2^{LT}` small.
pub fn enumerate_history_probability(kraus: &KrausSet, masks: &[Mask]) -> f64 {
    fn rec(kraus: &KrausSet, rho: &Array2<C64>, masks: &[Mask]) -> f64 {
        match masks.split_first() {
            None => rho.diag().iter().map(|z| z.re).sum(),
            Some((m, rest)) => kraus
                .ops
                .iter()
                .enumerate()
                .filter(|(k, _)| {
                    m.0.iter().enumerate().all(|(i, op)| match op {
                        AncillaOp::Trace => true,
                        AncillaOp::Project(b) => (k >> (kraus.sites - 1 - i) & 1) as u8 == *b,
                    })
                })
                .map(|(_, k)| rec(kraus, &k.dot(rho).dot(&linalg::dagger(k)), rest))
                .sum(),
        }
    }
    rec(kraus, &stationary_state(kraus.sites), masks)
}
