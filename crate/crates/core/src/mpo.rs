//! Conditioned ensemble evolution of the density operator.
//!
//! Operators are vectorised in the normalised Pauli basis
//! `{I, X, Y, Z}/√2` on every chain site, which keeps them real and turns
//! each fused gate block into a real `4^w x 4^w` superoperator. The
//! resulting MPS over local dimension 4 is evolved with the same engine as
//! the pure states.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateSequence;
use crate::linalg;
use crate::mask::{central_start, AncillaOp, Mask};
use crate::model::ancilla_pos;
use crate::mps::{compile_step, Mps, TruncationPolicy};

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// `|0⟩⟨0|` in the Pauli basis.
const RESET: [f64; 4] = [S, 0.0, 0.0, S];
/// `1/2` in the Pauli basis.
const MIXED: [f64; 4] = [S, 0.0, 0.0, 0.0];
const TRACE: [f64; 4] = [std::f64::consts::SQRT_2, 0.0, 0.0, 0.0];

fn readout(op: AncillaOp) -> [f64; 4] {
    match op {
        AncillaOp::Trace => TRACE,
        AncillaOp::Project(0) => [S, 0.0, 0.0, S],
        AncillaOp::Project(_) => [S, 0.0, 0.0, -S],
    }
}

/// One collision as a list of real superoperator blocks.
#[derive(Clone, Debug)]
pub struct FoldedPropagator {
    pub sites: usize,
    blocks: Vec<(usize, Array2<f64>)>,
}

impl FoldedPropagator {
    pub fn new(gates: &GateSequence) -> Self {
        let blocks = compile_step(gates)
            .into_iter()
            .map(|b| (b.lo, linalg::pauli_superoperator(&b.matrix)))
            .collect();
        Self {
            sites: gates.sites,
            blocks,
        }
    }
}

/// Unnormalised density operator of system and ancillas, stored at unit
/// trace with the logarithm of the true trace carried separately.
#[derive(Clone, Debug)]
pub struct FoldedState {
    pub mps: Mps<f64>,
    pub sites: usize,
    pub log_weight: f64,
    pub policy: TruncationPolicy,
    /// Largest discarded weight since construction.
    pub discarded_max: f64,
}

impl FoldedState {
    /// Fully mixed system with every ancilla in `|0⟩`.
    pub fn stationary(sites: usize, policy: TruncationPolicy) -> Self {
        let mut v = Vec::with_capacity(2 * sites);
        for _ in 0..sites {
            v.push(MIXED.to_vec());
            v.push(RESET.to_vec());
        }
        Self {
            mps: Mps::product(&v),
            sites,
            log_weight: 0.0,
            policy,
            discarded_max: 0.0,
        }
    }

    pub fn trace(&self) -> f64 {
        let covectors: Vec<&[f64]> = vec![&TRACE[..]; 2 * self.sites];
        self.mps.contract_with(&covectors)
    }

    pub fn max_bond(&self) -> usize {
        self.mps.max_bond()
    }

    /// Reduced system density operator (trace-one scale, ancillas traced);
    /// small chains only.
    pub fn system_density_matrix(&self) -> Array2<C64> {
        let coeffs = self.mps.to_dense();
        let l = self.sites;
        let d = 1usize << l;
        let mut out = Array2::from_elem((d, d), linalg::ZERO);
        let strings: Vec<Array2<C64>> = (0..4).map(|a| linalg::pauli_string(a, 1)).collect();
        for (idx, c) in coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            // ancilla digits must be the identity component, traced to √2
            let mut op = linalg::identity(1);
            let mut scale = *c;
            let mut keep = true;
            for p in 0..2 * l {
                let a = idx / 4usize.pow((2 * l - 1 - p) as u32) % 4;
                if p % 2 == 1 {
                    if a != 0 {
                        keep = false;
                        break;
                    }
                    scale *= std::f64::consts::SQRT_2;
                } else {
                    op = linalg::kron(&op, &strings[a]);
                    scale *= S;
                }
            }
            if keep {
                out = out + op * C64::from(scale);
            }
        }
        out
    }
}

fn site_map(w: &[f64; 4]) -> Array2<f64> {
    Array2::from_shape_fn((4, 4), |(a, b)| RESET[a] * w[b])
}

/// Advance by one collision, reading out ancillas according to `mask`, and
/// renormalise to unit trace. Returns the log of the trace ratio.
///
/// The gate blocks preserve the trace exactly, so any trace change across a
/// truncation is an artefact. It is undone by rescaling after the gates and
/// after the final recompression; only the readout maps contribute weight.
pub fn transfer_step(state: &mut FoldedState, prop: &FoldedPropagator, mask: &Mask) -> Result<f64> {
    check_shapes(state, prop, mask)?;
    let t0 = state.trace();
    if !(t0 > 0.0) {
        return Err(Error::WeightUnderflow(t0));
    }
    apply_gates(state, prop)?;
    rescale_to(state, t0)?;
    apply_readout(state, mask);
    let t1 = state.trace();
    state.mps.recompress(&state.policy)?;
    rescale_to(state, t1)?;
    state.discarded_max = state.discarded_max.max(state.mps.take_discarded());
    let factor = t1 / t0;
    if !(factor > crate::dense::WEIGHT_FLOOR) {
        return Err(Error::WeightUnderflow(factor));
    }
    state.mps.scale(1.0 / t1);
    let inc = factor.ln();
    state.log_weight += inc;
    Ok(inc)
}

fn rescale_to(state: &mut FoldedState, target: f64) -> Result<()> {
    let t = state.trace();
    if !(t > 0.0) {
        return Err(Error::WeightUnderflow(t));
    }
    state.mps.scale(target / t);
    Ok(())
}

fn check_shapes(state: &FoldedState, prop: &FoldedPropagator, mask: &Mask) -> Result<()> {
    if mask.len() != state.sites || prop.sites != state.sites {
        return Err(Error::InvalidParameter(format!(
            "mask of length {} for L = {}",
            mask.len(),
            state.sites
        )));
    }
    Ok(())
}

fn apply_gates(state: &mut FoldedState, prop: &FoldedPropagator) -> Result<()> {
    for (lo, s) in &prop.blocks {
        state.mps.apply_block(*lo, s, &state.policy)?;
    }
    Ok(())
}

fn apply_readout(state: &mut FoldedState, mask: &Mask) {
    for (i, op) in mask.0.iter().enumerate() {
        state
            .mps
            .apply_site_map(ancilla_pos(i), &site_map(&readout(*op)));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub ell: usize,
    pub tau: usize,
    pub delta_i: Option<usize>,
    pub delta_t: Option<usize>,
}

impl ClusterSpec {
    pub fn new(ell: usize, tau: usize) -> Self {
        Self {
            ell,
            tau,
            delta_i: None,
            delta_t: None,
        }
    }

    pub fn validate(&self, sites: usize) -> Result<()> {
        let width = 2 * self.ell * usize::from(self.delta_i.is_some()) + self.delta_i.unwrap_or(0);
        if self.ell == 0 || self.ell > sites || self.tau == 0 || width > sites {
            return Err(Error::InvalidParameter(format!(
                "cluster geometry {self:?} invalid for L = {sites}"
            )));
        }
        if self.delta_i.is_some() && self.delta_t.is_some() {
            return Err(Error::InvalidParameter(
                "a cluster pair is separated in space or in time, not both".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterProb {
    pub spec: ClusterSpec,
    pub log_p: f64,
    pub p: f64,
    pub discarded_max: f64,
}

impl ClusterProb {
    fn new(spec: ClusterSpec, log_p: f64, discarded_max: f64) -> Self {
        Self {
            spec,
            log_p,
            p: log_p.exp(),
            discarded_max,
        }
    }
}

/// `p_{ℓ×τ}` for every `τ` in `1..=tau_max`, from a single evolution.
pub fn tau_sweep(
    prop: &FoldedPropagator,
    ell: usize,
    tau_max: usize,
    policy: &TruncationPolicy,
) -> Result<Vec<ClusterProb>> {
    ClusterSpec::new(ell, tau_max.max(1)).validate(prop.sites)?;
    let mask = Mask::central_zeros(prop.sites, ell)?;
    let mut state = FoldedState::stationary(prop.sites, policy.clone());
    let mut out = Vec::with_capacity(tau_max);
    for tau in 1..=tau_max {
        transfer_step(&mut state, prop, &mask)?;
        out.push(ClusterProb::new(
            ClusterSpec::new(ell, tau),
            state.log_weight,
            state.discarded_max,
        ));
    }
    Ok(out)
}

/// `p_{ℓ×τ} = Tr{T_ℓ^τ [ρ_ss]}`.
pub fn p_cluster(
    prop: &FoldedPropagator,
    spec: ClusterSpec,
    policy: &TruncationPolicy,
) -> Result<ClusterProb> {
    spec.validate(prop.sites)?;
    let r = tau_sweep(prop, spec.ell, spec.tau, policy)?;
    Ok(*r.last().unwrap())
}

/// Two `ℓ x τ` clusters on the same sites, the second starting `δ_t` steps
/// after the first ends.
pub fn p_two_clusters_temporal(
    prop: &FoldedPropagator,
    ell: usize,
    tau: usize,
    delta_t: usize,
    policy: &TruncationPolicy,
) -> Result<ClusterProb> {
    let spec = ClusterSpec {
        ell,
        tau,
        delta_i: None,
        delta_t: Some(delta_t),
    };
    spec.validate(prop.sites)?;
    let mask = Mask::central_zeros(prop.sites, ell)?;
    let free = Mask::trace_all(prop.sites);
    let mut state = FoldedState::stationary(prop.sites, policy.clone());
    for _ in 0..tau {
        transfer_step(&mut state, prop, &mask)?;
    }
    for _ in 0..delta_t {
        transfer_step(&mut state, prop, &free)?;
    }
    for _ in 0..tau {
        transfer_step(&mut state, prop, &mask)?;
    }
    Ok(ClusterProb::new(
        spec,
        state.log_weight,
        state.discarded_max,
    ))
}

/// Temporal pairs for each gap in `gaps` (any order, duplicates ignored),
/// sharing the first cluster and the unconditioned gap evolution.
pub fn temporal_gap_sweep(
    prop: &FoldedPropagator,
    ell: usize,
    tau: usize,
    gaps: &[usize],
    policy: &TruncationPolicy,
) -> Result<Vec<ClusterProb>> {
    ClusterSpec::new(ell, tau).validate(prop.sites)?;
    let mut gaps = gaps.to_vec();
    gaps.sort_unstable();
    gaps.dedup();
    let mask = Mask::central_zeros(prop.sites, ell)?;
    let free = Mask::trace_all(prop.sites);
    let mut state = FoldedState::stationary(prop.sites, policy.clone());
    for _ in 0..tau {
        transfer_step(&mut state, prop, &mask)?;
    }
    let mut out = Vec::with_capacity(gaps.len());
    let mut elapsed = 0;
    for delta in gaps {
        while elapsed < delta {
            transfer_step(&mut state, prop, &free)?;
            elapsed += 1;
        }
        let mut branch = state.clone();
        for _ in 0..tau {
            transfer_step(&mut branch, prop, &mask)?;
        }
        let spec = ClusterSpec {
            ell,
            tau,
            delta_i: None,
            delta_t: Some(delta),
        };
        out.push(ClusterProb::new(
            spec,
            branch.log_weight,
            branch.discarded_max,
        ));
    }
    Ok(out)
}

/// Two `ℓ`-wide clusters `δ_i` sites apart, both held for `τ` steps.
pub fn p_two_clusters_spatial(
    prop: &FoldedPropagator,
    ell: usize,
    tau: usize,
    delta_i: usize,
    policy: &TruncationPolicy,
) -> Result<ClusterProb> {
    let spec = ClusterSpec {
        ell,
        tau,
        delta_i: Some(delta_i),
        delta_t: None,
    };
    spec.validate(prop.sites)?;
    let mask = Mask::two_blocks(prop.sites, ell, delta_i)?;
    let mut state = FoldedState::stationary(prop.sites, policy.clone());
    for _ in 0..tau {
        transfer_step(&mut state, prop, &mask)?;
    }
    Ok(ClusterProb::new(
        spec,
        state.log_weight,
        state.discarded_max,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Autocorrelation {
    pub site: usize,
    pub delta_t: usize,
    /// Stationary `⟨k_i⟩`.
    pub single: f64,
    /// `⟨k_i(t) k_i(t−δ_t)⟩`.
    pub joint: f64,
    pub c: f64,
    pub discarded_max: f64,
}

/// Connected autocorrelation for every lag in `1..=delta_max`.
///
/// After the first click the normalised state is `ρ_ss + Δ` with `Δ`
/// traceless. The unital channel fixes `ρ_ss`, so `c = ⟨k⟩ · Tr{P_1[E^{δ−1}(Δ)]}`
/// and only `Δ` needs evolving. Its scale is tracked separately, so small
/// correlations keep their relative accuracy under truncation.
pub fn autocorrelation_sweep(
    prop: &FoldedPropagator,
    site: usize,
    delta_max: usize,
    policy: &TruncationPolicy,
) -> Result<Vec<Autocorrelation>> {
    let l = prop.sites;
    if delta_max == 0 {
        return Err(Error::InvalidParameter(
            "autocorrelation lag must be at least 1".into(),
        ));
    }
    let one = Mask::single(l, site, 1)?;
    let free = Mask::trace_all(l);
    let mut clicked = FoldedState::stationary(l, policy.clone());
    transfer_step(&mut clicked, prop, &one)?;
    let single = clicked.log_weight.exp();

    let reference = FoldedState::stationary(l, policy.clone());
    let mut dev = FoldedState {
        mps: clicked.mps.sum(&reference.mps, -1.0),
        sites: l,
        log_weight: 0.0,
        policy: policy.clone(),
        discarded_max: clicked.discarded_max,
    };
    dev.mps.recompress(policy)?;
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(delta_max);
    for delta in 1..=delta_max {
        let norm = dev.mps.center_norm_sq().sqrt();
        if !(norm > 0.0) {
            // Δ vanished: no correlation beyond this lag
            for d in delta..=delta_max {
                out.push(Autocorrelation {
                    site,
                    delta_t: d,
                    single,
                    joint: single * single,
                    c: 0.0,
                    discarded_max: dev.discarded_max,
                });
            }
            break;
        }
        dev.mps.scale(1.0 / norm);
        log_scale += norm.ln();
        apply_gates(&mut dev, prop)?;
        dev.discarded_max = dev.discarded_max.max(dev.mps.take_discarded());
        remove_trace(&mut dev, &reference)?;
        let mut probe = dev.clone();
        apply_readout(&mut probe, &one);
        let c = single * probe.trace() * log_scale.exp();
        out.push(Autocorrelation {
            site,
            delta_t: delta,
            single,
            joint: single * single + c,
            c,
            discarded_max: dev.discarded_max,
        });
        if delta < delta_max {
            apply_readout(&mut dev, &free);
            dev.mps.recompress(policy)?;
            dev.discarded_max = dev.discarded_max.max(dev.mps.take_discarded());
        }
    }
    Ok(out)
}

/// Project out the component along `ρ_ss` that truncation leaks into a
/// traceless operator.
fn remove_trace(dev: &mut FoldedState, reference: &FoldedState) -> Result<()> {
    let t = dev.trace();
    if t != 0.0 {
        dev.mps = dev.mps.sum(&reference.mps, -t);
        dev.mps.recompress(&dev.policy)?;
        dev.discarded_max = dev.discarded_max.max(dev.mps.take_discarded());
    }
    Ok(())
}

pub fn autocorrelation_exact(
    prop: &FoldedPropagator,
    site: usize,
    delta_t: usize,
    policy: &TruncationPolicy,
) -> Result<Autocorrelation> {
    Ok(*autocorrelation_sweep(prop, site, delta_t, policy)?
        .last()
        .unwrap())
}

/// Central atom used for single-site observables.
pub fn central_site(sites: usize) -> usize {
    central_start(sites, 1)
}

/// One CSV row of a cluster computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub ell: usize,
    pub tau: usize,
    pub delta_i: Option<usize>,
    pub delta_t: Option<usize>,
    pub log_p: f64,
    pub p: f64,
    /// Free energy `−ln p`.
    pub f: f64,
    pub chi: Option<usize>,
    pub discarded_weight_max: f64,
    pub eps: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl ClusterRow {
    pub fn new(r: &ClusterProb, policy: &TruncationPolicy, seed: u64, config_hash: &str) -> Self {
        Self {
            ell: r.spec.ell,
            tau: r.spec.tau,
            delta_i: r.spec.delta_i,
            delta_t: r.spec.delta_t,
            log_p: r.log_p,
            p: r.p,
            f: -r.log_p,
            chi: policy.max_bond,
            discarded_weight_max: r.discarded_max,
            eps: policy.svd_cutoff,
            seed,
            config_hash: config_hash.to_string(),
        }
    }
}
