//! The `trajstat` command line.
//!
//! Every subcommand reads one TOML config (see [`crate::config`]) and writes
//! into the output directory. Grid commands are resumable: with `--resume`,
//! rows already present in the CSV with the same config hash are kept and
//! not recomputed. Work is spread over a rayon pool and merged by index, so
//! outputs do not depend on `--threads`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, FitAxis, FreeEnergyTable, Provenance};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gates::GateSequence;
use crate::model::{ModelParams, SiteCouplings};
use crate::mpo::{self, ClusterRow, FoldedPropagator};
use crate::mps::{Diagnostics, TruncationPolicy};
use crate::noise;
use crate::record::{params_hash, RecordMeta, TrajectoryRecord};
use crate::validate::{self, ValidateOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_COMPUTE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "trajstat",
    version,
    about = "Monitored spin-chain trajectories and cluster statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML). Required.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` of the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Base seed, overriding `run.seed` and `validate.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Keep completed outputs and only compute what is missing.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Sample outcome records with the MPS engine.
    Trajectory,
    /// Exact cluster probabilities over the (ell, tau) grid.
    Cluster,
    /// Probabilities of two clusters separated in space or time.
    TwoCluster,
    /// Exact connected autocorrelation of one atom.
    Autocorr,
    /// Interface-tension fits of a cluster table.
    Fit,
    /// Cluster probabilities and autocorrelations estimated from records.
    Empirical,
    /// Cross-check every backend against the dense oracle (L <= 5).
    Validate,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRAJSTAT_LOG", "warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    let Some(config_path) = cli.config.clone() else {
        eprintln!("error: --config PATH is required");
        return EXIT_VALIDATION;
    };
    let mut cfg = match ExperimentConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
        cfg.validate.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_COMPUTE;
        }
    };
    let ctx = Context {
        hash: cfg.hash(),
        cfg,
        out,
        resume: cli.resume,
    };
    match pool.install(|| dispatch(cli.command, &ctx)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::DenseSizeLimit { .. } => {
            EXIT_VALIDATION
        }
        _ => EXIT_COMPUTE,
    }
}

struct Context {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
    resume: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn policy(&self) -> &TruncationPolicy {
        &self.cfg.truncation
    }

    fn params(&self) -> ModelParams {
        self.cfg.params()
    }

    fn disordered(&self) -> bool {
        self.cfg.noise.disorder_amplitude > 0.0
    }

    /// Coupling set `index`; uniform without disorder.
    fn couplings(&self, params: &ModelParams, index: u64) -> Result<SiteCouplings> {
        noise::disorder_set(params, &self.cfg.noise, index)
    }

    fn propagator(&self, params: &ModelParams, set: u64) -> Result<FoldedPropagator> {
        let gates = GateSequence::from_params(params, &self.couplings(params, set)?)?;
        Ok(FoldedPropagator::new(&gates))
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(
            self.path("config.toml"),
            format!("# config_hash = {}\n{}", self.hash, self.cfg.to_toml()),
        )?;
        Ok(())
    }

    /// Appends per-point failures to `failures.log`; returns the exit code.
    fn report_failures(&self, command: &str, failures: &[(String, Error)]) -> Result<i32> {
        if failures.is_empty() {
            return Ok(EXIT_OK);
        }
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path("failures.log"))?;
        for (point, e) in failures {
            log::error!("{command} {point}: {e}");
            writeln!(f, "{command}\t{}\t{point}\t{e}", self.hash)?;
        }
        eprintln!(
            "{} point(s) failed; see {}",
            failures.len(),
            self.path("failures.log").display()
        );
        Ok(EXIT_COMPUTE)
    }

    /// Rows of an earlier run with the same config, when resuming.
    fn previous<T: DeserializeOwned + HasHash>(&self, name: &str) -> Result<Vec<T>> {
        let path = self.path(name);
        if !self.resume || !path.exists() {
            return Ok(Vec::new());
        }
        let rows: Vec<T> = read_csv(&path)?;
        Ok(rows
            .into_iter()
            .filter(|r| r.config_hash() == self.hash)
            .collect())
    }
}

fn dispatch(command: Command, ctx: &Context) -> Result<i32> {
    if command == Command::Validate {
        return cmd_validate(ctx);
    }
    ctx.prepare()?;
    match command {
        Command::Trajectory => cmd_trajectory(ctx),
        Command::Cluster => cmd_cluster(ctx),
        Command::TwoCluster => cmd_two_cluster(ctx),
        Command::Autocorr => cmd_autocorr(ctx),
        Command::Fit => cmd_fit(ctx),
        Command::Empirical => cmd_empirical(ctx),
        Command::Validate => unreachable!(),
    }
}

trait HasHash {
    fn config_hash(&self) -> &str;
}

macro_rules! has_hash {
    ($($t:ty),*) => {$(
        impl HasHash for $t {
            fn config_hash(&self) -> &str {
                &self.config_hash
            }
        }
    )*};
}

has_hash!(ClusterRow, ManifestRow, AutocorrRow);

/// Header first (also for an empty table), then one line per row.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&tmp)?;
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

// ---------------------------------------------------------------- trajectory

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub index: u64,
    pub seed: u64,
    pub disorder_set: Option<u64>,
    pub sites: usize,
    pub steps: usize,
    pub file: String,
    pub readout_file: Option<String>,
    pub truncated: bool,
    pub activity: f64,
    pub params_hash: String,
    pub chi: Option<usize>,
    pub eps: f64,
    pub p_err: f64,
    pub config_hash: String,
}

const MANIFEST_HEADER: &[&str] = &[
    "index",
    "seed",
    "disorder_set",
    "sites",
    "steps",
    "file",
    "readout_file",
    "truncated",
    "activity",
    "params_hash",
    "chi",
    "eps",
    "p_err",
    "config_hash",
];

/// Readout flips use stream 1 of the trajectory's generator.
fn readout_rng(seed: u64) -> crate::SimRng {
    let mut rng = crate::SimRng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn cmd_trajectory(ctx: &Context) -> Result<i32> {
    let params = ctx.params();
    let run = &ctx.cfg.run;
    let sets = if ctx.disordered() {
        run.disorder_sets as u64
    } else {
        1
    };
    if !ctx.disordered() && run.disorder_sets > 1 {
        log::warn!("run.disorder_sets ignored without disorder");
    }
    let dir = ctx.path("records");
    fs::create_dir_all(&dir)?;
    let total = sets * run.trajectories as u64;
    let results: Vec<(u64, Result<ManifestRow>)> = (0..total)
        .into_par_iter()
        .map(|index| (index, one_trajectory(ctx, &params, &dir, index)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (index, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((format!("trajectory {index}"), e)),
        }
    }
    write_csv(&ctx.path("manifest.csv"), MANIFEST_HEADER, &rows)?;
    ctx.report_failures("trajectory", &failures)
}

fn one_trajectory(
    ctx: &Context,
    params: &ModelParams,
    dir: &Path,
    index: u64,
) -> Result<ManifestRow> {
    let run = &ctx.cfg.run;
    let policy = ctx.policy();
    let set = index / run.trajectories as u64;
    let couplings = ctx.couplings(params, set)?;
    let seed = crate::derived_seed(run.seed, index);
    let p_hash = params_hash(params, &couplings, Some(policy));
    let name = format!("traj_{index:04}");
    let file = dir.join(format!("{name}.rec"));
    let p_err = ctx.cfg.noise.p_err;

    let reusable = |r: &TrajectoryRecord| {
        r.meta.params_hash == p_hash
            && r.meta.seed == seed
            && r.steps == run.steps
            && !r.meta.truncated
    };
    let existing = if ctx.resume && file.exists() {
        TrajectoryRecord::load(&file).ok().filter(|r| reusable(r))
    } else {
        None
    };
    let record = match existing {
        Some(r) => {
            log::info!("{name}: reusing existing record");
            r
        }
        None => {
            let gates = GateSequence::from_params(params, &couplings)?;
            let meta = RecordMeta {
                params: Some(params.clone()),
                couplings: Some(couplings.clone()),
                policy: Some(policy.clone()),
                seed,
                params_hash: p_hash,
                ..Default::default()
            };
            let mut rec = TrajectoryRecord::with_capacity(params.sites, run.steps, meta);
            let diag = Diagnostics {
                densities: run.densities,
                entropy: run.entropy,
            };
            if let Err(e) = crate::mps::pure::run_trajectory_into(
                &gates, policy, run.steps, seed, diag, &mut rec,
            ) {
                // keep the completed prefix
                rec.meta.truncated = true;
                if rec.steps > 0 {
                    rec.save(&file)?;
                }
                return Err(e);
            }
            rec.save(&file)?;
            rec
        }
    };
    if run.rasters {
        record.write_pbm(std::io::BufWriter::new(fs::File::create(
            dir.join(format!("{name}.pbm")),
        )?))?;
        if record.densities.is_some() {
            record.write_density_pgm(std::io::BufWriter::new(fs::File::create(
                dir.join(format!("{name}.pgm")),
            )?))?;
        }
    }
    let readout_file = if p_err > 0.0 {
        let noisy = noise::apply_readout_errors(&record, p_err, &mut readout_rng(seed))?;
        let f = format!("{name}.readout.rec");
        noisy.save(dir.join(&f))?;
        Some(format!("records/{f}"))
    } else {
        None
    };
    Ok(ManifestRow {
        index,
        seed,
        disorder_set: ctx.disordered().then_some(set),
        sites: record.sites,
        steps: record.steps,
        file: format!("records/{name}.rec"),
        readout_file,
        truncated: record.meta.truncated,
        activity: record.average_activity(),
        params_hash: format!("{p_hash:016x}"),
        chi: policy.max_bond,
        eps: policy.svd_cutoff,
        p_err,
        config_hash: ctx.hash.clone(),
    })
}

// ---------------------------------------------------------------- clusters

const CLUSTER_HEADER: &[&str] = &[
    "ell",
    "tau",
    "delta_i",
    "delta_t",
    "log_p",
    "p",
    "f",
    "chi",
    "discarded_weight_max",
    "eps",
    "seed",
    "config_hash",
];

fn cluster_key(r: &ClusterRow) -> (usize, usize, Option<usize>, Option<usize>) {
    (r.ell, r.tau, r.delta_i, r.delta_t)
}

fn mpo_seed(ctx: &Context) -> u64 {
    // no randomness in the exact evolution beyond the coupling set
    if ctx.disordered() {
        ctx.cfg.noise.disorder_seed
    } else {
        ctx.cfg.run.seed
    }
}

fn cmd_cluster(ctx: &Context) -> Result<i32> {
    let params = ctx.params();
    let c = &ctx.cfg.cluster;
    if ctx.disordered() {
        log::warn!("cluster probabilities use disorder set 0");
    }
    let prop = ctx.propagator(&params, 0)?;
    let previous: Vec<ClusterRow> = ctx.previous("cluster.csv")?;
    let seed = mpo_seed(ctx);
    let results: Vec<(usize, Result<Vec<ClusterRow>>)> = c
        .ells
        .par_iter()
        .map(|&ell| {
            let done: Vec<ClusterRow> = previous
                .iter()
                .filter(|r| {
                    r.ell == ell && r.delta_i.is_none() && r.delta_t.is_none() && r.tau <= c.tau_max
                })
                .cloned()
                .collect();
            if c.tau_max > 0 && done.len() == c.tau_max {
                return (ell, Ok(done));
            }
            let rows = if c.tau_max == 0 {
                Ok(Vec::new())
            } else {
                mpo::tau_sweep(&prop, ell, c.tau_max, ctx.policy()).map(|v| {
                    v.iter()
                        .map(|r| ClusterRow::new(r, ctx.policy(), seed, &ctx.hash))
                        .collect()
                })
            };
            (ell, rows)
        })
        .collect();
    finish_cluster_table(
        ctx,
        "cluster",
        results.into_iter().map(|(e, r)| (format!("ell {e}"), r)),
    )
}

fn finish_cluster_table(
    ctx: &Context,
    command: &str,
    results: impl Iterator<Item = (String, Result<Vec<ClusterRow>>)>,
) -> Result<i32> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (point, r) in results {
        match r {
            Ok(v) => rows.extend(v),
            Err(e) => failures.push((point, e)),
        }
    }
    rows.sort_by_key(cluster_key);
    rows.dedup_by_key(|r| cluster_key(r));
    write_csv(
        &ctx.path(&format!("{}.csv", command.replace('-', "_"))),
        CLUSTER_HEADER,
        &rows,
    )?;
    ctx.report_failures(command, &failures)
}

#[derive(Clone, Copy, Debug)]
enum PairJob {
    Single,
    Temporal,
    Spatial(usize),
}

fn cmd_two_cluster(ctx: &Context) -> Result<i32> {
    let params = ctx.params();
    let tc = &ctx.cfg.two_cluster;
    let prop = ctx.propagator(&params, 0)?;
    let previous: Vec<ClusterRow> = ctx.previous("two_cluster.csv")?;
    let seed = mpo_seed(ctx);
    let policy = ctx.policy();
    let mut jobs = Vec::new();
    if !tc.delta_t.is_empty() || !tc.delta_i.is_empty() {
        jobs.push(PairJob::Single);
    }
    if !tc.delta_t.is_empty() {
        jobs.push(PairJob::Temporal);
    }
    jobs.extend(tc.delta_i.iter().map(|&d| PairJob::Spatial(d)));
    let find = |di: Option<usize>, dt: Option<usize>| {
        previous
            .iter()
            .find(|r| r.ell == tc.ell && r.tau == tc.tau && r.delta_i == di && r.delta_t == dt)
            .cloned()
    };
    let row = |r: &mpo::ClusterProb| ClusterRow::new(r, policy, seed, &ctx.hash);
    let results: Vec<(String, Result<Vec<ClusterRow>>)> = jobs
        .par_iter()
        .map(|job| match *job {
            PairJob::Single => {
                let r = find(None, None).map(|r| Ok(vec![r])).unwrap_or_else(|| {
                    mpo::p_cluster(&prop, mpo::ClusterSpec::new(tc.ell, tc.tau), policy)
                        .map(|r| vec![row(&r)])
                });
                ("single".to_string(), r)
            }
            PairJob::Temporal => {
                let done: Option<Vec<ClusterRow>> =
                    tc.delta_t.iter().map(|&d| find(None, Some(d))).collect();
                let r = match done {
                    Some(v) => Ok(v),
                    None => mpo::temporal_gap_sweep(&prop, tc.ell, tc.tau, &tc.delta_t, policy)
                        .map(|v| v.iter().map(row).collect()),
                };
                ("temporal".to_string(), r)
            }
            PairJob::Spatial(d) => {
                let r = find(Some(d), None).map(|r| Ok(vec![r])).unwrap_or_else(|| {
                    mpo::p_two_clusters_spatial(&prop, tc.ell, tc.tau, d, policy)
                        .map(|r| vec![row(&r)])
                });
                (format!("delta_i {d}"), r)
            }
        })
        .collect();
    finish_cluster_table(ctx, "two-cluster", results.into_iter())
}

// ---------------------------------------------------------------- autocorrelation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrRow {
    pub v: f64,
    pub disorder_set: Option<u64>,
    pub site: usize,
    pub delta_t: usize,
    pub single: f64,
    pub joint: f64,
    pub c: f64,
    pub chi: Option<usize>,
    pub discarded_weight_max: f64,
    pub eps: f64,
    pub seed: u64,
    pub config_hash: String,
}

const AUTOCORR_HEADER: &[&str] = &[
    "v",
    "disorder_set",
    "site",
    "delta_t",
    "single",
    "joint",
    "c",
    "chi",
    "discarded_weight_max",
    "eps",
    "seed",
    "config_hash",
];

fn cmd_autocorr(ctx: &Context) -> Result<i32> {
    let base = ctx.params();
    let ac = &ctx.cfg.autocorr;
    let site = ac.site.unwrap_or_else(|| mpo::central_site(base.sites));
    let mut vs = vec![base.v];
    for v in &ac.v_values {
        if !vs.contains(v) {
            vs.push(*v);
        }
    }
    let sets: Vec<Option<u64>> = if ctx.disordered() {
        (0..ctx.cfg.run.disorder_sets as u64).map(Some).collect()
    } else {
        vec![None]
    };
    let jobs: Vec<(f64, Option<u64>)> = vs
        .iter()
        .flat_map(|&v| sets.iter().map(move |&s| (v, s)))
        .collect();
    let previous: Vec<AutocorrRow> = ctx.previous("autocorr.csv")?;
    let seed = mpo_seed(ctx);
    let policy = ctx.policy();
    let results: Vec<(String, Result<Vec<AutocorrRow>>)> = jobs
        .par_iter()
        .map(|&(v, set)| {
            let point = format!("v {v} set {set:?}");
            let done: Vec<AutocorrRow> = previous
                .iter()
                .filter(|r| r.v == v && r.disorder_set == set && r.site == site)
                .cloned()
                .collect();
            if ac.delta_max > 0 && done.len() == ac.delta_max {
                return (point, Ok(done));
            }
            if ac.delta_max == 0 {
                return (point, Ok(Vec::new()));
            }
            let compute = || -> Result<Vec<AutocorrRow>> {
                let params = base.with_v(v);
                let prop = ctx.propagator(&params, set.unwrap_or(0))?;
                let sweep = mpo::autocorrelation_sweep(&prop, site, ac.delta_max, policy)?;
                Ok(sweep
                    .iter()
                    .map(|a| AutocorrRow {
                        v,
                        disorder_set: set,
                        site,
                        delta_t: a.delta_t,
                        single: a.single,
                        joint: a.joint,
                        c: a.c,
                        chi: policy.max_bond,
                        discarded_weight_max: a.discarded_max,
                        eps: policy.svd_cutoff,
                        seed,
                        config_hash: ctx.hash.clone(),
                    })
                    .collect())
            };
            (point, compute())
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (point, r) in results {
        match r {
            Ok(v) => rows.extend(v),
            Err(e) => failures.push((point, e)),
        }
    }
    write_csv(&ctx.path("autocorr.csv"), AUTOCORR_HEADER, &rows)?;
    ctx.report_failures("autocorr", &failures)
}

// ---------------------------------------------------------------- fits

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub axis: FitAxis,
    pub fixed: usize,
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub residual_rms: f64,
    pub points: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    pub chi: Option<usize>,
    pub eps: f64,
    pub seed: u64,
    pub config_hash: String,
}

const FIT_HEADER: &[&str] = &[
    "axis",
    "fixed",
    "alpha",
    "beta",
    "r_squared",
    "residual_rms",
    "points",
    "range_lo",
    "range_hi",
    "chi",
    "eps",
    "seed",
    "config_hash",
];

fn cmd_fit(ctx: &Context) -> Result<i32> {
    let fc = &ctx.cfg.fit;
    let input = fc.input.clone().unwrap_or_else(|| ctx.path("cluster.csv"));
    if !input.exists() {
        return Err(Error::Config(format!(
            "fit input {} not found",
            input.display()
        )));
    }
    let rows: Vec<ClusterRow> = read_csv(&input)?;
    let singles: Vec<&ClusterRow> = rows
        .iter()
        .filter(|r| r.delta_i.is_none() && r.delta_t.is_none())
        .collect();
    let points: Vec<(usize, usize, f64)> =
        singles.iter().map(|r| (r.ell, r.tau, r.log_p)).collect();
    let table = FreeEnergyTable::from_log_p(&points, Provenance::ExactMpo)?;
    let (chi, eps, seed) = singles
        .first()
        .map(|r| (r.chi, r.eps, r.seed))
        .unwrap_or((None, 0.0, 0));
    let fixed: Vec<usize> = if fc.fixed.is_empty() {
        let mut v: Vec<usize> = table
            .rows()
            .map(|r| match fc.axis {
                FitAxis::Temporal => r.tau,
                FitAxis::Spatial => r.ell,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    } else {
        fc.fixed.clone()
    };
    let range = (fc.range[0], fc.range[1]);
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for &x in &fixed {
        let profile = match fc.axis {
            FitAxis::Temporal => analysis::temporal_increment_profile(&table, x),
            FitAxis::Spatial => analysis::spatial_increment_profile(&table, x),
        };
        let samples: Vec<(f64, f64)> = profile.iter().map(|(a, b)| (*a as f64, *b)).collect();
        if fc.fixed.is_empty() && samples.is_empty() {
            continue;
        }
        match analysis::fit_tension(&samples, range, fc.axis, x) {
            Ok(fit) => {
                let axis = match fc.axis {
                    FitAxis::Temporal => "temporal",
                    FitAxis::Spatial => "spatial",
                };
                let report = format!("config_hash = {}\n{}", ctx.hash, fit.report());
                fs::write(ctx.path(&format!("fit_{axis}_{x}.txt")), report)?;
                out.push(FitRow {
                    axis: fit.axis,
                    fixed: x,
                    alpha: fit.alpha,
                    beta: fit.beta,
                    r_squared: fit.r_squared,
                    residual_rms: fit.residual_rms,
                    points: fit.points,
                    range_lo: range.0,
                    range_hi: range.1,
                    chi,
                    eps,
                    seed,
                    config_hash: ctx.hash.clone(),
                });
            }
            Err(e) => failures.push((format!("fixed {x}"), e)),
        }
    }
    write_csv(&ctx.path("fits.csv"), FIT_HEADER, &out)?;
    let fe: Vec<FreeEnergyCsvRow> = table
        .rows()
        .map(|r| FreeEnergyCsvRow {
            ell: r.ell,
            tau: r.tau,
            log_p: r.log_p,
            f: r.f,
            config_hash: ctx.hash.clone(),
        })
        .collect();
    write_csv(
        &ctx.path("free_energy.csv"),
        &["ell", "tau", "log_p", "f", "config_hash"],
        &fe,
    )?;
    ctx.report_failures("fit", &failures)
}

#[derive(Serialize)]
struct FreeEnergyCsvRow {
    ell: usize,
    tau: usize,
    log_p: f64,
    f: f64,
    config_hash: String,
}

// ---------------------------------------------------------------- empirical

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalClusterRow {
    pub source: String,
    pub ell: usize,
    pub tau: usize,
    pub p: f64,
    pub stderr: f64,
    pub f: f64,
    pub records: usize,
    pub anchors: usize,
    pub margin: usize,
    pub burn_in: usize,
    pub chi: Option<usize>,
    pub eps: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalAutocorrRow {
    pub source: String,
    pub delta_t: usize,
    pub c: f64,
    pub stderr: f64,
    pub records: usize,
    pub samples: usize,
    pub margin: usize,
    pub burn_in: usize,
    pub chi: Option<usize>,
    pub eps: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Records in `dir`, sorted by file name; `readout` selects the
/// `.readout.rec` copies.
pub fn load_records(dir: &Path, readout: bool) -> Result<Vec<TrajectoryRecord>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".rec") && name.ends_with(".readout.rec") == readout
        })
        .collect();
    files.sort();
    files.iter().map(TrajectoryRecord::load).collect()
}

fn cmd_empirical(ctx: &Context) -> Result<i32> {
    let ec = &ctx.cfg.empirical;
    let dir = ec.records.clone().unwrap_or_else(|| ctx.path("records"));
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "record directory {} not found",
            dir.display()
        )));
    }
    let mut sources = vec![("ideal", load_records(&dir, false)?)];
    let noisy = load_records(&dir, true)?;
    if !noisy.is_empty() {
        sources.push(("readout", noisy));
    }
    let policy = ctx.policy();
    let seed = ctx.cfg.run.seed;
    let mut cluster_rows = Vec::new();
    let mut ac_rows = Vec::new();
    let mut failures = Vec::new();
    for (source, records) in &sources {
        if records.is_empty() {
            failures.push((
                format!("{source} records"),
                Error::Analysis(format!("no records in {}", dir.display())),
            ));
            continue;
        }
        let grid: Vec<(usize, usize)> = ec
            .ells
            .iter()
            .flat_map(|&l| ec.taus.iter().map(move |&t| (l, t)))
            .collect();
        let est: Vec<_> = grid
            .par_iter()
            .map(|&(l, t)| {
                (
                    (l, t),
                    analysis::empirical_cluster_prob(records, l, t, ec.margin, ec.burn_in),
                )
            })
            .collect();
        for ((ell, tau), r) in est {
            match r {
                Ok(e) => cluster_rows.push(EmpiricalClusterRow {
                    source: source.to_string(),
                    ell,
                    tau,
                    p: e.value,
                    stderr: e.stderr,
                    f: -e.value.ln(),
                    records: e.records,
                    anchors: e.samples,
                    margin: ec.margin,
                    burn_in: ec.burn_in,
                    chi: policy.max_bond,
                    eps: policy.svd_cutoff,
                    seed,
                    config_hash: ctx.hash.clone(),
                }),
                Err(e) => failures.push((format!("{source} {ell}x{tau}"), e)),
            }
        }
        let est: Vec<_> = ec
            .lags
            .par_iter()
            .map(|&d| {
                (
                    d,
                    analysis::empirical_autocorrelation(
                        records,
                        d,
                        ec.margin,
                        ec.burn_in,
                        ec.site_set,
                    ),
                )
            })
            .collect();
        for (delta_t, r) in est {
            match r {
                Ok(e) => ac_rows.push(EmpiricalAutocorrRow {
                    source: source.to_string(),
                    delta_t,
                    c: e.value,
                    stderr: e.stderr,
                    records: e.records,
                    samples: e.samples,
                    margin: ec.margin,
                    burn_in: ec.burn_in,
                    chi: policy.max_bond,
                    eps: policy.svd_cutoff,
                    seed,
                    config_hash: ctx.hash.clone(),
                }),
                Err(e) => failures.push((format!("{source} lag {delta_t}"), e)),
            }
        }
    }
    write_csv(
        &ctx.path("empirical_cluster.csv"),
        &[
            "source",
            "ell",
            "tau",
            "p",
            "stderr",
            "f",
            "records",
            "anchors",
            "margin",
            "burn_in",
            "chi",
            "eps",
            "seed",
            "config_hash",
        ],
        &cluster_rows,
    )?;
    write_csv(
        &ctx.path("empirical_autocorr.csv"),
        &[
            "source",
            "delta_t",
            "c",
            "stderr",
            "records",
            "samples",
            "margin",
            "burn_in",
            "chi",
            "eps",
            "seed",
            "config_hash",
        ],
        &ac_rows,
    )?;
    ctx.report_failures("empirical", &failures)
}

// ---------------------------------------------------------------- validate

fn cmd_validate(ctx: &Context) -> Result<i32> {
    let params = ctx.params();
    if params.sites > validate::VALIDATE_MAX_SITES {
        return Err(Error::Config(format!(
            "validate runs the dense oracle and needs L <= {}, got {}",
            validate::VALIDATE_MAX_SITES,
            params.sites
        )));
    }
    let couplings = ctx.couplings(&params, 0)?;
    let opts = ValidateOptions {
        policy: ctx.policy().clone(),
        steps: ctx.cfg.validate.steps,
        seed: ctx.cfg.validate.seed,
        corrupt_gate_order: ctx.cfg.validate.corrupt_gate_order,
    };
    let checks = validate::run_validation(&params, &couplings, &opts)?;
    let mut report = format!("config_hash = {}\n", ctx.hash);
    for c in &checks {
        report.push_str(&format!("{c}\n"));
    }
    let ok = validate::all_passed(&checks);
    report.push_str(if ok {
        "all checks passed\n"
    } else {
        "VALIDATION FAILED\n"
    });
    print!("{report}");
    fs::create_dir_all(&ctx.out)?;
    fs::write(ctx.path("validate.txt"), &report)?;
    Ok(if ok { EXIT_OK } else { EXIT_INVARIANT })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("run.toml");
        fs::write(&p, body).unwrap();
        p
    }

    fn run_args(args: &[&str]) -> i32 {
        run(std::iter::once("trajstat").chain(args.iter().copied()))
    }

    #[test]
    fn missing_config_is_a_validation_error() {
        assert_eq!(run_args(&["trajectory"]), EXIT_VALIDATION);
        assert_eq!(run_args(&["bogus"]), EXIT_VALIDATION);
    }

    #[test]
    fn invalid_model_writes_nothing() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("out");
        let cfg = write_config(d.path(), "[model]\nsites = 0\n");
        let code = run_args(&[
            "trajectory",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_VALIDATION);
        assert!(!out.exists());
    }

    #[test]
    fn empty_grid_gives_header_only() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("out");
        let cfg = write_config(d.path(), "[model]\nsites = 3\n");
        let code = run_args(&[
            "cluster",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(out.join("cluster.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("ell,tau,delta_i,delta_t,log_p,p,f,chi"));
    }

    #[test]
    fn csv_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.csv");
        let row = AutocorrRow {
            v: 2.0,
            disorder_set: None,
            site: 1,
            delta_t: 3,
            single: 0.5,
            joint: 0.3,
            c: 0.05,
            chi: Some(8),
            discarded_weight_max: 0.0,
            eps: 1e-10,
            seed: 4,
            config_hash: "ab".into(),
        };
        write_csv(&p, AUTOCORR_HEADER, std::slice::from_ref(&row)).unwrap();
        let back: Vec<AutocorrRow> = read_csv(&p).unwrap();
        assert_eq!(back, vec![row]);
    }
}
