//! Experiment execution and result persistence.
//!
//! `execute` takes a parsed [`ExperimentSpec`], dispatches on its command,
//! and writes every artifact into the spec's output directory:
//!
//! * `run`: `metrics.csv` (one row per round) and `summary.csv`
//!   (min/p25/p50/p75/max of per-node final loss and accuracy);
//! * `spectral`: `spectral.csv`, one row per topology in the grid;
//! * `bounds`: `bounds.csv`, contraction factors, edge counts, and the
//!   composed-factor cap check per topology;
//! * `verify`: `reports.csv`, one row per claim from the built-in grid.
//!
//! Every run also writes `spec.resolved` (the canonical form of the spec)
//! and finishes with `manifest.txt`: artifact version, timestamp, status,
//! and a SHA-256 digest per output file. The manifest is written last, so
//! its presence marks a completed run. Reruns of an identical spec produce
//! byte-identical data files (only the manifest timestamp moves).
//!
//! Floats are serialized as 17-significant-digit scientific notation, so
//! parsing them back yields the exact doubles. Undefined optional values
//! (the exact-consensus ratio sentinel, fields that do not apply to a
//! topology kind) serialize as empty CSV fields.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use sha2::{Digest, Sha256};

use crate::bounds::{beta_bounds, check_beta_hsl_cap, derived_step_size, ProblemConstants};
use crate::config::{
    serialize_config, Command, ExperimentSpec, ObjectiveBlock, StepSizeSpec, TrainingBlock,
};
use crate::learning::{
    make_logistic_objective, make_shared_design_quadratic, run_experiment, Objective, TrainConfig,
};
use crate::metrics::RoundMetrics;
use crate::rng::{derive_seed, stream, TAG_OBJECTIVE, TAG_SPECTRAL};
use crate::spectral::average_spectral_gap;
use crate::topology::TopologyConfig;
use crate::verify::{run_verification_grid, VerificationReport};
use crate::{Error, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// How a completed run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// Training produced a non-finite model; the offending round is kept.
    Diverged { round: usize },
    /// Some verification claims failed.
    ClaimsFailed { failed: usize },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// Record of one completed execution: what ran, when, how it ended, and a
/// content digest for every file written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub name: String,
    pub command: Command,
    pub seed: u64,
    pub timestamp_unix: u64,
    pub status: RunStatus,
    pub output_dir: PathBuf,
    /// `(file name, hex SHA-256 of contents)`, in write order.
    pub files: Vec<(String, String)>,
}

// ---------------------------------------------------------------------------
// serialization helpers

/// 17 significant digits: enough to reproduce the exact double.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|n| n.to_string()).unwrap_or_default()
}

/// Linear-interpolation quantile on a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn quantile_row(label: &str, values: &mut [f64]) -> String {
    values.sort_by(|a, b| a.total_cmp(b));
    let q = |p| fmt_float(quantile(values, p));
    format!(
        "{label},{},{},{},{},{}\n",
        q(0.0),
        q(0.25),
        q(0.5),
        q(0.75),
        q(1.0)
    )
}

fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from("round,cd_pre,cd_post,cdr,mean_loss,mean_grad_norm_sq,accuracy\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.round,
            fmt_float(m.cd_pre),
            fmt_float(m.cd_post),
            fmt_opt_float(m.cdr),
            fmt_opt_float(m.mean_loss),
            fmt_opt_float(m.mean_grad_norm_sq),
            fmt_opt_float(m.accuracy),
        ));
    }
    out
}

/// The descriptor columns shared by `spectral.csv` and `bounds.csv`.
fn topology_columns(cfg: &TopologyConfig) -> String {
    let (b_hs, b_hh, b_sh) = match cfg.degrees() {
        Some((a, b, c)) => (Some(a), Some(b), Some(c)),
        None => (None, None, None),
    };
    format!(
        "{},{},{},{},{},{},{},{}",
        cfg.kind_str(),
        cfg.n_s(),
        fmt_opt_usize(cfg.n_h()),
        fmt_opt_usize(b_hs),
        fmt_opt_usize(b_hh),
        fmt_opt_usize(b_sh),
        fmt_opt_usize(cfg.fanout()),
        fmt_opt_float(cfg.edge_probability()),
    )
}

fn reports_csv(reports: &[VerificationReport]) -> String {
    let mut out = String::from("claim,trials,empirical,bound_or_target,standard_error,passed\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.claim,
            r.trials,
            fmt_float(r.empirical),
            fmt_float(r.bound_or_target),
            fmt_float(r.standard_error),
            r.passed,
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// command bodies

fn build_objective(spec: &ExperimentSpec, n_s: usize) -> Result<Objective> {
    let mut rng = stream(spec.seed, &[TAG_OBJECTIVE]);
    match spec.objective.as_ref().expect("validated: run has an objective") {
        ObjectiveBlock::Quadratic { dim, spread } => {
            // shared diagonal design, entries evenly spaced in (1, 2]
            let diag: Vec<f64> = (0..*dim).map(|j| 1.0 + (j + 1) as f64 / *dim as f64).collect();
            Ok(make_shared_design_quadratic(n_s, &diag, *spread, &mut rng))
        }
        ObjectiveBlock::Logistic { samples, test_samples, dim, separation, alpha } => {
            make_logistic_objective(n_s, *samples, *test_samples, *dim, *separation, *alpha, &mut rng)
        }
    }
}

/// Resolves `step_size = derived` from the closed-form problem constants.
/// Only the quadratic family exposes them (smoothness, heterogeneity, the
/// optimality gap, and mini-batch noise measured at the minimizer).
fn resolve_step_size(
    training: &TrainingBlock,
    cfg: &TopologyConfig,
    obj: &Objective,
) -> Result<f64> {
    match training.step_size {
        StepSizeSpec::Fixed(v) => Ok(v),
        StepSizeSpec::Derived => {
            let (n_s, n_h, b_hs, b_hh, b_sh) = match *cfg {
                TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh } => (n_s, n_h, b_hs, b_hh, b_sh),
                _ => {
                    return Err(Error::config(
                        "step_size = derived needs contraction factors, so kind must be hsl",
                    ))
                }
            };
            let b = beta_bounds(n_s, n_h, b_hs, b_hh, b_sh)?;
            let x0 = Array1::from_elem(obj.dim(), training.x0);
            let xstar = obj.quadratic_minimizer().map_err(|_| {
                Error::config("step_size = derived requires the quadratic objective (closed-form constants)")
            })?;
            let constants = ProblemConstants {
                l_smooth: obj.quadratic_smoothness()?,
                sigma_sq: obj.quadratic_batch_noise_at(xstar.view(), training.batch_size)?,
                h_sq: obj.quadratic_constant_heterogeneity().ok_or_else(|| {
                    Error::config("derived step size needs a shared design (constant heterogeneity)")
                })?,
                delta0: obj.quadratic_delta0(x0.view())?,
                rounds: training.rounds,
                n_s,
            };
            derived_step_size(&constants, &b)
        }
    }
}

struct CommandOutput {
    files: Vec<(String, String)>, // (name, contents)
    status: RunStatus,
}

fn run_command(spec: &ExperimentSpec) -> Result<CommandOutput> {
    let training = spec.training.as_ref().expect("validated: run has training");
    let topology = spec.topologies[0];
    let objective = build_objective(spec, topology.n_s())?;
    let step_size = resolve_step_size(training, &topology, &objective)?;
    let cfg = TrainConfig {
        topology,
        rounds: training.rounds,
        local_steps: training.local_steps,
        step_size,
        batch_size: training.batch_size,
        eval_every: training.eval_every,
        seed: spec.seed,
        x0_value: training.x0,
    };

    match run_experiment(&cfg, &objective) {
        Ok(result) => {
            let mut files = vec![("metrics.csv".to_string(), metrics_csv(&result.metrics))];

            let mut summary = String::from("metric,min,p25,p50,p75,max\n");
            let finals = &result.final_models;
            let mut losses: Vec<f64> = (0..finals.n())
                .map(|i| objective.global_loss(finals.row(i)))
                .collect();
            summary.push_str(&quantile_row("final_loss", &mut losses));
            let accuracies: Option<Vec<f64>> = (0..finals.n())
                .map(|i| objective.test_accuracy(finals.row(i)))
                .collect();
            if let Some(mut acc) = accuracies {
                summary.push_str(&quantile_row("accuracy", &mut acc));
            }
            files.push(("summary.csv".to_string(), summary));
            Ok(CommandOutput { files, status: RunStatus::Ok })
        }
        Err(Error::Divergence { round, .. }) => Ok(CommandOutput {
            files: vec![("metrics.csv".to_string(), metrics_csv(&[]))],
            status: RunStatus::Diverged { round },
        }),
        Err(e) => Err(e),
    }
}

fn spectral_command(spec: &ExperimentSpec) -> Result<CommandOutput> {
    let mut out = String::from("kind,n_s,n_h,b_hs,b_hh,b_sh,k,p,edges,samples,mean_gap,std_gap\n");
    for (idx, cfg) in spec.topologies.iter().enumerate() {
        let master = derive_seed(spec.seed, &[TAG_SPECTRAL, idx as u64]);
        let report = average_spectral_gap(cfg, spec.spectral_samples, master)?;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            topology_columns(cfg),
            report.edges,
            report.samples,
            fmt_float(report.mean_gap),
            fmt_float(report.std_gap),
        ));
    }
    Ok(CommandOutput {
        files: vec![("spectral.csv".to_string(), out)],
        status: RunStatus::Ok,
    })
}

fn bounds_command(spec: &ExperimentSpec) -> Result<CommandOutput> {
    let mut out = String::from(
        "kind,n_s,n_h,b_hs,b_hh,b_sh,k,p,edges,beta_hs,beta_hh,beta_sh,beta_hsl,beta_prime,cap_premise,cap_value,cap_satisfied\n",
    );
    for cfg in &spec.topologies {
        let beta_cols = match *cfg {
            TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh } => {
                let b = beta_bounds(n_s, n_h, b_hs, b_hh, b_sh)?;
                let cap = check_beta_hsl_cap(n_s, n_h, b_hs, b_sh, b.beta_hsl);
                format!(
                    "{},{},{},{},{},{},{},{}",
                    fmt_float(b.beta_hs),
                    fmt_float(b.beta_hh),
                    fmt_float(b.beta_sh),
                    fmt_float(b.beta_hsl),
                    fmt_float(b.beta_prime),
                    cap.premise_holds,
                    fmt_float(cap.bound),
                    cap.satisfied,
                )
            }
            _ => ",,,,,,,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{}\n",
            topology_columns(cfg),
            cfg.total_edges(),
            beta_cols
        ));
    }
    Ok(CommandOutput {
        files: vec![("bounds.csv".to_string(), out)],
        status: RunStatus::Ok,
    })
}

fn verify_command(spec: &ExperimentSpec) -> Result<CommandOutput> {
    let reports = run_verification_grid(spec.verify_trials, spec.seed)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    Ok(CommandOutput {
        files: vec![("reports.csv".to_string(), reports_csv(&reports))],
        status: if failed == 0 {
            RunStatus::Ok
        } else {
            RunStatus::ClaimsFailed { failed }
        },
    })
}

// ---------------------------------------------------------------------------
// orchestration

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

fn manifest_text(m: &RunManifest) -> String {
    let mut out = String::new();
    out.push_str(&format!("version = {}\n", m.version));
    out.push_str(&format!("name = {}\n", m.name));
    out.push_str(&format!("command = {}\n", m.command.as_str()));
    out.push_str(&format!("seed = {}\n", m.seed));
    out.push_str(&format!("timestamp_unix = {}\n", m.timestamp_unix));
    match m.status {
        RunStatus::Ok => out.push_str("status = ok\n"),
        RunStatus::Diverged { round } => {
            out.push_str("status = diverged\n");
            out.push_str(&format!("diverged_round = {round}\n"));
        }
        RunStatus::ClaimsFailed { failed } => {
            out.push_str("status = claims_failed\n");
            out.push_str(&format!("failed_claims = {failed}\n"));
        }
    }
    for (name, digest) in &m.files {
        out.push_str(&format!("file.{name} = {digest}\n"));
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<String> {
    fs::write(dir.join(name), contents)?;
    Ok(sha256_hex(contents.as_bytes()))
}

/// Executes a validated spec: runs the command, writes all data files and
/// the canonical spec snapshot, then writes `manifest.txt` last. On I/O
/// failure no manifest appears; a diverged training run or failed claims
/// still complete with the status recorded.
pub fn execute(spec: &ExperimentSpec) -> Result<RunManifest> {
    crate::init_worker_pool();
    let output = match spec.command {
        Command::Run => run_command(spec)?,
        Command::Spectral => spectral_command(spec)?,
        Command::Bounds => bounds_command(spec)?,
        Command::Verify => verify_command(spec)?,
    };

    let dir = &spec.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(output.files.len() + 1);
    let snapshot = serialize_config(spec);
    files.push(("spec.resolved".to_string(), write_file(dir, "spec.resolved", &snapshot)?));
    for (name, contents) in &output.files {
        files.push((name.clone(), write_file(dir, name, contents)?));
    }

    let manifest = RunManifest {
        version: ARTIFACT_VERSION.to_string(),
        name: spec.name.clone(),
        command: spec.command,
        seed: spec.seed,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        status: output.status,
        output_dir: dir.clone(),
        files,
    };
    fs::write(dir.join("manifest.txt"), manifest_text(&manifest))?;
    Ok(manifest)
}
