//! Cross-checks of every backend against the dense oracle on small chains.

use std::fmt;

use ndarray::Array1;
use num_complex::Complex64 as C64;

use crate::dense::{self, KrausSet, TrotterReference};
use crate::error::{Error, Result};
use crate::gates::{GateKind, GateSequence};
use crate::linalg;
use crate::mask::Mask;
use crate::model::{ModelParams, SiteCouplings};
use crate::mpo::{self, FoldedPropagator};
use crate::mps::{self, PureState, TruncationPolicy};
use crate::record::{RecordMeta, TrajectoryRecord};

/// Largest chain the validation suite accepts.
pub const VALIDATE_MAX_SITES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, deviation: f64, tolerance: f64) -> Self {
        // NaN never passes
        Self {
            name: name.into(),
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{tag} {:<34} deviation {:.3e}  tolerance {:.1e}",
            self.name, self.deviation, self.tolerance
        )
    }
}

#[derive(Clone, Debug)]
pub struct ValidateOptions {
    pub policy: TruncationPolicy,
    pub steps: usize,
    pub seed: u64,
    /// Hand the engines drive, system–ancilla, interaction instead of the
    /// reference order.
    pub corrupt_gate_order: bool,
}

pub fn all_passed(checks: &[CheckResult]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Runs every suite. Errors only for unusable input; numerical failures are
/// reported as failed checks.
pub fn run_validation(
    params: &ModelParams,
    couplings: &SiteCouplings,
    opts: &ValidateOptions,
) -> Result<Vec<CheckResult>> {
    params.validate()?;
    couplings.validate(params)?;
    let l = params.sites;
    if l > VALIDATE_MAX_SITES {
        return Err(Error::InvalidParameter(format!(
            "validation needs L <= {VALIDATE_MAX_SITES}, got {l}"
        )));
    }
    let mut gates = GateSequence::from_params(params, couplings)?;
    if opts.corrupt_gate_order {
        gates = gates.reordered([
            GateKind::Drive,
            GateKind::SystemAncilla,
            GateKind::Interaction,
        ]);
    }
    let reference = TrotterReference::new(params, couplings)?;
    let w_ref = reference.isometry(params.substeps);
    let oracle = KrausSet::from_isometry(&w_ref, l);

    let mut out = Vec::new();
    out.push(CheckResult::new(
        "kraus completeness",
        oracle.completeness_error()?,
        1e-10,
    ));

    let mixed = dense::stationary_state(l);
    let drift = dense::trace_norm(&(dense::average_map(&oracle, &mixed) - &mixed))?;
    out.push(CheckResult::new(
        "stationarity of the mixed state",
        drift,
        1e-10,
    ));

    let w_gates = dense::gate_product_isometry(&gates)?;
    out.push(CheckResult::new(
        "trotter consistency",
        linalg::max_abs_diff(&w_gates, &w_ref),
        1e-10,
    ));

    out.push(mps_single_step(&gates, &w_ref, l, &opts.policy)?);
    out.push(lockstep_records(&gates, &oracle, opts)?);
    out.extend(mpo_checks(&gates, &oracle, &opts.policy)?);
    Ok(out)
}

fn mps_single_step(
    gates: &GateSequence,
    w_ref: &ndarray::Array2<C64>,
    l: usize,
    policy: &TruncationPolicy,
) -> Result<CheckResult> {
    // generic product state, so every gate acts nontrivially
    let system: Vec<[C64; 2]> = (0..l)
        .map(|i| {
            let a = 0.3 + 0.25 * i as f64;
            [C64::from(a.cos()), C64::from_polar(a.sin(), 0.7 * i as f64)]
        })
        .collect();
    let mut state = PureState::product(&system, policy.clone());
    let psi0 = Array1::from(state.system_vector());
    mps::tebd_step(&mut state, &mps::compile_step(gates))?;
    let expect = w_ref.dot(&psi0);
    let got = state.joint_vector();
    let overlap: C64 = expect.iter().zip(&got).map(|(a, b)| a.conj() * b).sum();
    let norms = expect.iter().map(|z| z.norm_sqr()).sum::<f64>()
        * got.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let fidelity = overlap.norm_sqr() / norms;
    Ok(CheckResult::new(
        "mps single-step infidelity",
        1.0 - fidelity,
        1e-8,
    ))
}

fn lockstep_records(
    gates: &GateSequence,
    oracle: &KrausSet,
    opts: &ValidateOptions,
) -> Result<CheckResult> {
    let l = gates.sites;
    let mut rec = TrajectoryRecord::with_capacity(l, opts.steps, RecordMeta::default());
    let name = format!("lockstep records ({} steps)", opts.steps);
    if let Err(e) = mps::pure::run_trajectory_into(
        gates,
        &opts.policy,
        opts.steps,
        opts.seed,
        Default::default(),
        &mut rec,
    ) {
        log::warn!("mps trajectory failed: {e}");
        return Ok(CheckResult::new(name, f64::INFINITY, 0.0));
    }
    let reference = dense::run_dense_trajectory(oracle, opts.steps, opts.seed)?;
    let differing = rec
        .outcomes()
        .iter()
        .zip(reference.outcomes())
        .filter(|(a, b)| a != b)
        .count();
    Ok(CheckResult::new(name, differing as f64, 0.0))
}

fn mpo_checks(
    gates: &GateSequence,
    oracle: &KrausSet,
    policy: &TruncationPolicy,
) -> Result<Vec<CheckResult>> {
    let l = gates.sites;
    let prop = FoldedPropagator::new(gates);
    let mut out = Vec::new();
    let ell = l.min(3);
    let tau_max = 5;

    let sweep = mpo::tau_sweep(&prop, ell, tau_max, policy)?;
    let mut dev: f64 = 0.0;
    for r in &sweep {
        dev = dev.max((r.log_p - dense::log_p_cluster(oracle, ell, r.spec.tau)?).abs());
    }
    out.push(CheckResult::new(
        format!("mpo cluster log p ({ell}x1..{tau_max})"),
        dev,
        1e-6,
    ));

    let site = mpo::central_site(l);
    let mut dev: f64 = 0.0;
    for a in mpo::autocorrelation_sweep(&prop, site, 5, policy)? {
        let (_, _, c) = dense::autocorrelation_dense(oracle, site, a.delta_t)?;
        dev = dev.max((a.c - c).abs());
    }
    out.push(CheckResult::new(
        "mpo autocorrelation (lags 1..5)",
        dev,
        1e-6,
    ));

    let (ell2, tau2) = (1, 2);
    let mut dev: f64 = 0.0;
    for r in mpo::temporal_gap_sweep(&prop, ell2, tau2, &[0, 1, 2, 3], policy)? {
        let d = dense::log_p_two_temporal(oracle, ell2, tau2, r.spec.delta_t.unwrap())?;
        dev = dev.max((r.log_p - d).abs());
    }
    for delta in 0..=l.saturating_sub(2 * ell2) {
        let r = mpo::p_two_clusters_spatial(&prop, ell2, tau2, delta, policy)?;
        dev = dev.max((r.log_p - dense::log_p_two_spatial(oracle, ell2, tau2, delta)?).abs());
    }
    out.push(CheckResult::new("mpo two-cluster log p", dev, 1e-6));

    // gaps of zero reproduce the merged cluster
    let merged_t = mpo::p_cluster(&prop, mpo::ClusterSpec::new(ell2, 2 * tau2), policy)?;
    let pair_t = mpo::p_two_clusters_temporal(&prop, ell2, tau2, 0, policy)?;
    let merged_s = mpo::p_cluster(&prop, mpo::ClusterSpec::new(2 * ell2, tau2), policy)?;
    let pair_s = mpo::p_two_clusters_spatial(&prop, ell2, tau2, 0, policy)?;
    let dev = (merged_t.log_p - pair_t.log_p)
        .abs()
        .max((merged_s.log_p - pair_s.log_p).abs());
    out.push(CheckResult::new("zero-gap identities", dev, 1e-10));

    let m = Mask::trace_all(l);
    let mut state = mpo::FoldedState::stationary(l, policy.clone());
    mpo::transfer_step(&mut state, &prop, &m)?;
    let rho = state.system_density_matrix();
    let dev = dense::trace_norm(&(rho - dense::stationary_state(l)))?;
    // accumulated round-off of a few hundred superoperator blocks
    out.push(CheckResult::new("mpo stationarity", dev, 1e-8));
    Ok(out)
}
