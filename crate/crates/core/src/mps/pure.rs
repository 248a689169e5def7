//! Pure-state trajectories of the interleaved chain.

use log::{debug, warn};
use ndarray::{Array2, Axis};
use ndarray_linalg::{JobSvd, SVDDC};
use num_complex::Complex64 as C64;
use rand::Rng;

use super::schedule::{compile_step, Block};
use super::{Mps, TruncationPolicy};
use crate::error::{Error, Result};
use crate::gates::GateSequence;
use crate::model::{ancilla_pos, system_pos, ModelParams, SiteCouplings};
use crate::record::{params_hash, RecordMeta, TrajectoryRecord};

const NORM_WARN: f64 = 1e-6;

/// Which per-step diagnostics to store in the record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub densities: bool,
    pub entropy: bool,
}

/// System plus ancillas as a complex MPS over `2L` qubits.
#[derive(Clone, Debug)]
pub struct PureState {
    pub mps: Mps<C64>,
    pub sites: usize,
    pub policy: TruncationPolicy,
    /// Largest discarded weight of the last step.
    pub last_discarded: f64,
}

impl PureState {
    /// `|0_S 0_A⟩` on every pair.
    pub fn ground(sites: usize, policy: TruncationPolicy) -> Self {
        let zero = vec![C64::from(1.0), C64::from(0.0)];
        Self {
            mps: Mps::product(&vec![zero; 2 * sites]),
            sites,
            policy,
            last_discarded: 0.0,
        }
    }

    /// Product of system qubit vectors with ancillas in `|0⟩`.
    pub fn product(system: &[[C64; 2]], policy: TruncationPolicy) -> Self {
        let mut v = Vec::with_capacity(2 * system.len());
        for s in system {
            v.push(s.to_vec());
            v.push(vec![C64::from(1.0), C64::from(0.0)]);
        }
        Self {
            mps: Mps::product(&v),
            sites: system.len(),
            policy,
            last_discarded: 0.0,
        }
    }

    /// Amplitudes over the `2L` interleaved qubits.
    pub fn joint_vector(&self) -> Vec<C64> {
        self.mps.to_dense()
    }

    /// Amplitudes of the system, assuming every ancilla is in `|0⟩`.
    pub fn system_vector(&self) -> Vec<C64> {
        let joint = self.joint_vector();
        (0..1usize << self.sites)
            .map(|s| {
                let mut idx = 0;
                for i in 0..self.sites {
                    if s >> (self.sites - 1 - i) & 1 == 1 {
                        idx |= 1 << (2 * self.sites - 1 - system_pos(i));
                    }
                }
                joint[idx]
            })
            .collect()
    }
}

/// One collision: apply the fused blocks sweep by sweep. Returns the largest
/// discarded weight.
pub fn tebd_step(state: &mut PureState, blocks: &[Block]) -> Result<f64> {
    for b in blocks {
        state.mps.apply_block(b.lo, &b.matrix, &state.policy)?;
    }
    let w = state.mps.take_discarded();
    log::trace!(
        "tebd step: max bond {}, discarded {w:e}",
        state.mps.max_bond()
    );
    state.last_discarded = w;
    Ok(w)
}

fn env_update(env: &Array2<C64>, a: &ndarray::Array3<C64>, x: usize) -> Array2<C64> {
    let ax = a.index_axis(Axis(1), x);
    ax.t().mapv(|z| z.conj()).dot(env).dot(&ax)
}

fn trace(m: &Array2<C64>) -> f64 {
    m.diag().iter().map(|z| z.re).sum()
}

/// Perfect sampling of all ancillas, left to right, one uniform variate per
/// ancilla; outcome 1 is chosen when `u >= p(0 | earlier outcomes)`. The
/// measured ancillas are reset to `|0⟩` and the state is renormalised.
pub fn direct_sample_and_reset<R: Rng + ?Sized>(
    state: &mut PureState,
    rng: &mut R,
) -> Result<Vec<u8>> {
    let mps = &mut state.mps;
    mps.move_center(0)?;
    let norm = mps.center_norm_sq();
    if (norm - 1.0).abs() > NORM_WARN {
        // expected when the last step truncated
        if state.last_discarded > 0.0 {
            debug!("state norm {norm} before sampling after truncation");
        } else {
            warn!("state norm {norm} before sampling deviates from 1");
        }
    }
    let mut env = Array2::<C64>::eye(1) / C64::from(norm);
    let mut outcomes = Vec::with_capacity(state.sites);
    for i in 0..state.sites {
        let a = mps.tensor(system_pos(i));
        let mut next = env_update(&env, a, 0);
        next += &env_update(&env, a, 1);
        env = next;
        let a = mps.tensor(ancilla_pos(i));
        let m0 = env_update(&env, a, 0);
        let m1 = env_update(&env, a, 1);
        let (p0, p1) = (trace(&m0).max(0.0), trace(&m1).max(0.0));
        let total = p0 + p1;
        if !(total > 0.0) {
            return Err(Error::VanishingBranch);
        }
        if (total - 1.0).abs() > NORM_WARN {
            warn!("conditional probabilities at ancilla {i} sum to {total}");
        }
        let u: f64 = rng.random();
        let k = u8::from(u >= p0 / total);
        let (m, p) = if k == 1 { (m1, p1) } else { (m0, p0) };
        env = m / C64::from(p);
        outcomes.push(k);
    }
    let zero = C64::from(0.0);
    let one = C64::from(1.0);
    for (i, k) in outcomes.iter().enumerate() {
        // |0⟩⟨k|: collapse and reset in one map
        let mut map = Array2::from_elem((2, 2), zero);
        map[[0, *k as usize]] = one;
        mps.apply_site_map(ancilla_pos(i), &map);
    }
    mps.recompress(&state.policy)?;
    state.last_discarded = state.last_discarded.max(mps.take_discarded());
    let n = mps.center_norm_sq();
    if !(n > 0.0) {
        return Err(Error::VanishingBranch);
    }
    mps.scale(C64::from(1.0 / n.sqrt()));
    Ok(outcomes)
}

/// `⟨n_i⟩` for every system atom.
pub fn local_density(state: &mut PureState) -> Result<Vec<f64>> {
    let mps = &mut state.mps;
    mps.move_center(0)?;
    let norm = mps.center_norm_sq();
    let mut env = Array2::<C64>::eye(1);
    let mut out = Vec::with_capacity(state.sites);
    for p in 0..mps.len() {
        let a = mps.tensor(p);
        let e1 = env_update(&env, a, 1);
        if p % 2 == 0 {
            out.push((trace(&e1) / norm).clamp(0.0, 1.0));
        }
        env = env_update(&env, a, 0) + e1;
    }
    Ok(out)
}

/// Von Neumann entropy (natural log) of the left `floor(L/2)` pairs.
pub fn half_chain_entropy(state: &mut PureState) -> Result<f64> {
    let half = state.sites / 2;
    if half == 0 {
        return Ok(0.0);
    }
    let p = ancilla_pos(half - 1);
    let mps = &mut state.mps;
    mps.move_center(p)?;
    let a = mps.tensor(p);
    let (l, d, r) = a.dim();
    let m = a
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((l * d, r))
        .unwrap();
    let (_, s, _) = m.svddc(JobSvd::None)?;
    let total: f64 = s.iter().map(|x| x * x).sum();
    Ok(s.iter()
        .map(|x| x * x / total)
        .filter(|w| *w > 0.0)
        .map(|w| -w * w.ln())
        .sum::<f64>()
        .max(0.0))
}

/// Sequential trajectory from `|0_S⟩^L`, writing rows into `record` as they
/// are produced so a failed run still leaves the completed prefix behind.
pub fn run_trajectory_into(
    gates: &GateSequence,
    policy: &TruncationPolicy,
    steps: usize,
    seed: u64,
    diagnostics: Diagnostics,
    record: &mut TrajectoryRecord,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "trajectory length T must be at least 1".into(),
        ));
    }
    policy.validate()?;
    let blocks = compile_step(gates);
    let mut state = PureState::ground(gates.sites, policy.clone());
    let mut rng = crate::rng_from_seed(seed);
    if diagnostics.densities {
        record.densities = Some(Vec::with_capacity(steps * gates.sites));
    }
    if diagnostics.entropy {
        record.entropy = Some(Vec::with_capacity(steps));
    }
    for t in 0..steps {
        tebd_step(&mut state, &blocks)?;
        let k = direct_sample_and_reset(&mut state, &mut rng)?;
        record.push_row(&k);
        if let Some(d) = record.densities.as_mut() {
            d.extend(local_density(&mut state)?);
        }
        if let Some(e) = record.entropy.as_mut() {
            e.push(half_chain_entropy(&mut state)?);
        }
        if t % 1000 == 999 {
            log::debug!("step {}: max bond {}", t + 1, state.mps.max_bond());
        }
    }
    Ok(())
}

/// Record of `steps` collisions from `|0_S⟩^L`, reproducible from `seed`.
pub fn run_trajectory(
    params: &ModelParams,
    couplings: &SiteCouplings,
    policy: &TruncationPolicy,
    steps: usize,
    seed: u64,
    diagnostics: Diagnostics,
) -> Result<TrajectoryRecord> {
    let gates = GateSequence::from_params(params, couplings)?;
    let meta = RecordMeta {
        params: Some(params.clone()),
        couplings: Some(couplings.clone()),
        policy: Some(policy.clone()),
        seed,
        params_hash: params_hash(params, couplings, Some(policy)),
        ..Default::default()
    };
    let mut record = TrajectoryRecord::with_capacity(params.sites, steps, meta);
    match run_trajectory_into(&gates, policy, steps, seed, diagnostics, &mut record) {
        Ok(()) => Ok(record),
        Err(e) => {
            record.meta.truncated = true;
            Err(e)
        }
    }
}
