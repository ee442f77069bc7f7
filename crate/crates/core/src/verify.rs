//! Monte Carlo verification of the mixing-stage claims.
//!
//! Every claim is checked the same way: freeze an input model matrix `X`,
//! resample the stage many times, and compare the empirical mean of the
//! trial statistic against the closed form. Bound claims pass when
//! `empirical <= bound + 3 se`; equality claims when
//! `|empirical - target| <= 3 se`, with `se` the standard error of the
//! trial mean. A small absolute slack absorbs float dust on claims whose
//! statistic is identically zero.
//!
//! Checked per stage, all as ratios against the input's consensus distance
//! (so targets are the closed-form contraction factors):
//!
//! * contraction: `E[CD(after)] / CD(X) <= beta_stage` (one-sided; the
//!   composed round against `beta_hsl` likewise);
//! * spread about the pre-stage mean: push, gossip, and pull obey exact
//!   equalities `E[(1/rows) sum ||after_i - mean(X)||^2] = beta * CD(X)`;
//! * average preservation: the post-stage mean is the pre-stage mean in
//!   expectation, coordinate by coordinate;
//! * mean shift: `E[||mean(after) - mean(X)||^2]` equals
//!   `beta_hs * CD(X) / n_h` for push and `beta_sh * CD(X) / n_s` for pull,
//!   and is at most `beta_hh * CD(X) / n_h` for gossip;
//! * gossip in-degrees follow `Binomial(n - 1, b/(n - 1))`, checked by a
//!   chi-square test at significance 0.01.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

use crate::bounds::beta_bounds;
use crate::metrics::{consensus_distance, dispersion_about, kahan_sum, ModelMatrix};
use crate::rng::{stream, TAG_TRIAL};
use crate::topology::{
    sample_gossip_matrix, sample_push_matrix, sample_pull_matrix, TopologyConfig,
};
use crate::{Error, Result};

/// Absolute slack for claims whose statistic collapses to float dust
/// (e.g. full-fan-in stages where the target is exactly zero).
const ZERO_DUST_TOL: f64 = 1e-9;

/// Which part of the round a claim exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Push,
    Gossip,
    Pull,
    FullHsl,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Push => "push",
            Stage::Gossip => "gossip",
            Stage::Pull => "pull",
            Stage::FullHsl => "full_hsl",
        }
    }
}

/// Whether a claim is a one-sided bound or a two-sided equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimKind {
    UpperBound,
    Equality,
}

/// One verified claim: the empirical mean, its target or bound, the
/// standard error of the mean, and the resulting verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub claim: String,
    pub kind: ClaimKind,
    pub trials: usize,
    pub empirical: f64,
    pub bound_or_target: f64,
    pub standard_error: f64,
    pub passed: bool,
}

impl VerificationReport {
    fn from_samples(claim: String, kind: ClaimKind, samples: &[f64], target: f64) -> Self {
        let trials = samples.len();
        let n = trials as f64;
        let mean = kahan_sum(samples.iter().copied()) / n;
        let var = if trials > 1 {
            kahan_sum(samples.iter().map(|s| (s - mean) * (s - mean))) / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        let slack = 3.0 * se + ZERO_DUST_TOL;
        let passed = match kind {
            ClaimKind::UpperBound => mean <= target + slack,
            ClaimKind::Equality => (mean - target).abs() <= slack,
        };
        VerificationReport {
            claim,
            kind,
            trials,
            empirical: mean,
            bound_or_target: target,
            standard_error: se,
            passed,
        }
    }
}

fn require_trials(trials: usize) -> Result<()> {
    if trials < 100 {
        return Err(Error::config(format!(
            "verification needs trials >= 100 (got {trials})"
        )));
    }
    Ok(())
}

fn hsl_params(cfg: &TopologyConfig) -> Result<(usize, usize, usize, usize, usize)> {
    match *cfg {
        TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh } => {
            cfg.validate()?;
            Ok((n_s, n_h, b_hs, b_hh, b_sh))
        }
        _ => Err(Error::config("stage verification requires kind = hsl")),
    }
}

fn check_stage_input(stage: Stage, x: &ModelMatrix, n_s: usize, n_h: usize) -> Result<()> {
    let want = match stage {
        Stage::Push | Stage::FullHsl => n_s,
        Stage::Gossip | Stage::Pull => n_h,
    };
    if x.n() != want {
        return Err(Error::dimension(format!(
            "{} stage input must have {want} rows, got {}",
            stage.name(),
            x.n()
        )));
    }
    Ok(())
}

/// Samples the stage once on its own trial stream and returns the
/// post-stage model matrix.
fn run_stage_once(
    stage: Stage,
    cfg: &TopologyConfig,
    x: &ModelMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<ModelMatrix> {
    let (n_s, n_h, b_hs, b_hh, b_sh) = hsl_params(cfg)?;
    match stage {
        Stage::Push => sample_push_matrix(n_s, n_h, b_hs, rng)?.mix(x),
        Stage::Gossip => sample_gossip_matrix(n_h, b_hh, rng)?.mix(x),
        Stage::Pull => sample_pull_matrix(n_s, n_h, b_sh, rng)?.mix(x),
        Stage::FullHsl => {
            let push = sample_push_matrix(n_s, n_h, b_hs, rng)?;
            let gossip = sample_gossip_matrix(n_h, b_hh, rng)?;
            let pull = sample_pull_matrix(n_s, n_h, b_sh, rng)?;
            pull.mix(&gossip.mix(&push.mix(x)?)?)
        }
    }
}

fn stage_beta(stage: Stage, cfg: &TopologyConfig) -> Result<f64> {
    let (n_s, n_h, b_hs, b_hh, b_sh) = hsl_params(cfg)?;
    let b = beta_bounds(n_s, n_h, b_hs, b_hh, b_sh)?;
    Ok(match stage {
        Stage::Push => b.beta_hs,
        Stage::Gossip => b.beta_hh,
        Stage::Pull => b.beta_sh,
        Stage::FullHsl => b.beta_hsl,
    })
}

fn claim_label(stage: Stage, cfg: &TopologyConfig, what: &str) -> String {
    let (n_s, n_h, b_hs, b_hh, b_sh) = match *cfg {
        TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh } => (n_s, n_h, b_hs, b_hh, b_sh),
        _ => (0, 0, 0, 0, 0),
    };
    // fields are ';'-joined so the label stays one unquoted CSV column
    format!(
        "{}_{}[n_s={n_s};n_h={n_h};b_hs={b_hs};b_hh={b_hh};b_sh={b_sh}]",
        stage.name(),
        what
    )
}

/// Runs `trials` resamples of the stage and produces per-trial values via
/// `stat`, one derived stream per trial index.
fn trial_values<F>(
    stage: Stage,
    cfg: &TopologyConfig,
    x: &ModelMatrix,
    trials: usize,
    master: u64,
    stat: F,
) -> Result<Vec<f64>>
where
    F: Fn(&ModelMatrix) -> f64 + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(master, &[TAG_TRIAL, stage as u64, t as u64]);
            let after = run_stage_once(stage, cfg, x, &mut rng)?;
            Ok(stat(&after))
        })
        .collect()
}

/// Contraction and spread-about-the-old-mean claims for one stage.
///
/// Returns the one-sided contraction report (`E[CD after]/CD(X) <= beta`)
/// and, for the three single stages, the two-sided spread equality
/// (`E[mean dist^2 to old mean]/CD(X) = beta`). The composed round carries
/// only the contraction claim.
pub fn verify_stage_cdr(
    stage: Stage,
    cfg: &TopologyConfig,
    x: &ModelMatrix,
    trials: usize,
    master: u64,
) -> Result<Vec<VerificationReport>> {
    require_trials(trials)?;
    let (n_s, n_h, _, _, _) = hsl_params(cfg)?;
    check_stage_input(stage, x, n_s, n_h)?;
    let cd_pre = consensus_distance(x);
    if cd_pre == 0.0 {
        return Err(Error::config(
            "verification input is already at exact consensus; contraction ratios are undefined",
        ));
    }
    let beta = stage_beta(stage, cfg)?;
    let old_mean = x.mean_row();

    let pairs: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(master, &[TAG_TRIAL, stage as u64, t as u64]);
            let after = run_stage_once(stage, cfg, x, &mut rng)?;
            Ok((
                consensus_distance(&after) / cd_pre,
                dispersion_about(&after, old_mean.view()) / cd_pre,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let cd_ratios: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let spreads: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    let mut reports = vec![VerificationReport::from_samples(
        claim_label(stage, cfg, "cd_contraction"),
        ClaimKind::UpperBound,
        &cd_ratios,
        beta,
    )];
    if stage != Stage::FullHsl {
        reports.push(VerificationReport::from_samples(
            claim_label(stage, cfg, "spread_about_old_mean"),
            ClaimKind::Equality,
            &spreads,
            beta,
        ));
    }
    Ok(reports)
}

/// Average preservation: each coordinate of the post-stage mean equals the
/// pre-stage mean in expectation. The report covers the worst coordinate
/// (largest deviation in standard-error units).
pub fn verify_average_preservation(
    stage: Stage,
    cfg: &TopologyConfig,
    x: &ModelMatrix,
    trials: usize,
    master: u64,
) -> Result<VerificationReport> {
    require_trials(trials)?;
    let (n_s, n_h, _, _, _) = hsl_params(cfg)?;
    check_stage_input(stage, x, n_s, n_h)?;
    let d = x.dim();
    let target = x.mean_row();

    let means: Vec<Array1<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(master, &[TAG_TRIAL, stage as u64, t as u64]);
            Ok(run_stage_once(stage, cfg, x, &mut rng)?.mean_row())
        })
        .collect::<Result<Vec<_>>>()?;

    let n = trials as f64;
    let mut worst: Option<(f64, f64, f64)> = None; // (|dev|/se, dev, se)
    let mut all_within = true;
    for j in 0..d {
        let col: Vec<f64> = means.iter().map(|m| m[j]).collect();
        let mean = kahan_sum(col.iter().copied()) / n;
        let var = kahan_sum(col.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
        let se = (var / n).sqrt();
        let dev = mean - target[j];
        let within = dev.abs() <= 3.0 * se + ZERO_DUST_TOL;
        all_within &= within;
        let score = dev.abs() / (se + f64::MIN_POSITIVE);
        if worst.map_or(true, |(w, _, _)| score > w) {
            worst = Some((score, dev, se));
        }
    }
    let (_, dev, se) = worst.unwrap_or((0.0, 0.0, 0.0));
    Ok(VerificationReport {
        claim: claim_label(stage, cfg, "average_preservation"),
        kind: ClaimKind::Equality,
        trials,
        empirical: dev,
        bound_or_target: 0.0,
        standard_error: se,
        passed: all_within,
    })
}

/// Squared motion of the average model: equality targets for push and pull,
/// an upper bound for gossip (whose receiver weights correlate).
pub fn verify_mean_shift(
    stage: Stage,
    cfg: &TopologyConfig,
    x: &ModelMatrix,
    trials: usize,
    master: u64,
) -> Result<VerificationReport> {
    require_trials(trials)?;
    let (n_s, n_h, _, _, _) = hsl_params(cfg)?;
    check_stage_input(stage, x, n_s, n_h)?;
    let cd_pre = consensus_distance(x);
    let beta = stage_beta(stage, cfg)?;
    let (kind, target) = match stage {
        Stage::Push => (ClaimKind::Equality, beta * cd_pre / n_h as f64),
        Stage::Gossip => (ClaimKind::UpperBound, beta * cd_pre / n_h as f64),
        Stage::Pull => (ClaimKind::Equality, beta * cd_pre / n_s as f64),
        Stage::FullHsl => {
            return Err(Error::config(
                "mean-shift closed forms exist per stage, not for the composed round",
            ))
        }
    };
    let old_mean = x.mean_row();
    let shifts = trial_values(stage, cfg, x, trials, master, |after| {
        let new_mean = after.mean_row();
        kahan_sum(
            new_mean
                .iter()
                .zip(old_mean.iter())
                .map(|(a, b)| (a - b) * (a - b)),
        )
    })?;
    Ok(VerificationReport::from_samples(
        claim_label(stage, cfg, "mean_shift"),
        kind,
        &shifts,
        target,
    ))
}

/// Samples gossip rounds and tallies how many distinct senders reached
/// each node. Nodes are exchangeable, so one histogram covers them all.
fn sample_indegree_histogram(n: usize, b: usize, samples: usize, master: u64) -> Result<Vec<u64>> {
    let counts: Vec<Vec<usize>> = (0..samples)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(master, &[TAG_TRIAL, Stage::Gossip as u64, t as u64]);
            let w = sample_gossip_matrix(n, b, &mut rng)?;
            Ok((0..n)
                .map(|i| (0..n).filter(|&j| j != i && w.entry(i, j) > 0.0).count())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut histogram = vec![0u64; n];
    for round in &counts {
        for &c in round {
            histogram[c] += 1;
        }
    }
    Ok(histogram)
}

/// Pearson chi-square of an in-degree histogram against
/// `Binomial(n-1, b/(n-1))`. Adjacent degree bins are pooled until every
/// bin expects at least 5 counts. Returns `(statistic, critical)` at
/// significance 0.01.
fn indegree_chi_square(histogram: &[u64], n: usize, b: usize) -> Result<(f64, f64)> {
    let total = histogram.iter().sum::<u64>() as f64;
    let p = b as f64 / (n as f64 - 1.0);
    let binom = Binomial::new(p, (n - 1) as u64)
        .map_err(|e| Error::config(format!("in-degree check: {e}")))?;

    let mut bins: Vec<(f64, u64)> = Vec::new(); // (expected, observed)
    let mut acc_e = 0.0;
    let mut acc_o = 0u64;
    for deg in 0..n {
        acc_e += total * binom.pmf(deg as u64);
        acc_o += histogram[deg];
        if acc_e >= 5.0 {
            bins.push((acc_e, acc_o));
            acc_e = 0.0;
            acc_o = 0;
        }
    }
    if acc_e > 0.0 || acc_o > 0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += acc_e;
                last.1 += acc_o;
            }
            None => bins.push((acc_e, acc_o)),
        }
    }
    if bins.len() < 2 {
        return Err(Error::config(
            "in-degree check: too few populated bins for a chi-square test",
        ));
    }
    let statistic = kahan_sum(bins.iter().map(|&(e, o)| {
        let d = o as f64 - e;
        d * d / e
    }));
    let dof = (bins.len() - 1) as f64;
    let chi = ChiSquared::new(dof).map_err(|e| Error::config(format!("chi-square: {e}")))?;
    Ok((statistic, chi.inverse_cdf(0.99)))
}

/// Goodness of fit of gossip in-degrees against `Binomial(n-1, b/(n-1))`:
/// Pearson chi-square over pooled bins (expected count >= 5), pass iff the
/// statistic stays below the 0.99 quantile. `empirical` is the statistic,
/// `bound_or_target` the critical value.
pub fn verify_indegree_binomial(
    n: usize,
    b: usize,
    samples: usize,
    master: u64,
) -> Result<VerificationReport> {
    if n < 2 || b < 1 || b > n - 1 {
        return Err(Error::config(format!(
            "in-degree check: need n >= 2 and 1 <= b <= n - 1 (got n = {n}, b = {b})"
        )));
    }
    if samples < 100 {
        return Err(Error::config(format!(
            "in-degree check needs samples >= 100 (got {samples})"
        )));
    }
    let claim = format!("gossip_indegree_binomial[n={n};b={b}]");
    let histogram = sample_indegree_histogram(n, b, samples, master)?;

    if b == n - 1 {
        // degenerate: every node always has in-degree n-1
        let passed = histogram[n - 1] == samples as u64 * n as u64;
        return Ok(VerificationReport {
            claim,
            kind: ClaimKind::UpperBound,
            trials: samples,
            empirical: if passed { 0.0 } else { f64::INFINITY },
            bound_or_target: 0.0,
            standard_error: 0.0,
            passed,
        });
    }
    let (statistic, critical) = indegree_chi_square(&histogram, n, b)?;
    Ok(VerificationReport {
        claim,
        kind: ClaimKind::UpperBound,
        trials: samples,
        empirical: statistic,
        bound_or_target: critical,
        standard_error: 0.0,
        passed: statistic <= critical,
    })
}

/// Deterministic test inputs for the verification grid. Every family
/// produces rows that are far from consensus in a different way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFamily {
    /// Independent standard normal entries.
    Gaussian,
    /// Row `i` concentrates all mass on coordinate `i mod dim`.
    OneHot,
    /// All rows are multiples of one direction.
    RankOne,
}

impl InputFamily {
    pub const ALL: [InputFamily; 3] = [InputFamily::Gaussian, InputFamily::OneHot, InputFamily::RankOne];

    pub fn name(&self) -> &'static str {
        match self {
            InputFamily::Gaussian => "gaussian",
            InputFamily::OneHot => "one_hot",
            InputFamily::RankOne => "rank_one",
        }
    }

    pub fn build(&self, n: usize, dim: usize, rng: &mut ChaCha8Rng) -> ModelMatrix {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut m = Array2::zeros((n, dim));
        match self {
            InputFamily::Gaussian => {
                for v in m.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            InputFamily::OneHot => {
                for i in 0..n {
                    m[[i, i % dim]] = 1.0 + (i / dim) as f64;
                }
            }
            InputFamily::RankOne => {
                let mut dir = Array1::<f64>::zeros(dim);
                for v in dir.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for i in 0..n {
                    let scale: f64 = rng.gen_range(-2.0..2.0);
                    for j in 0..dim {
                        m[[i, j]] = scale * dir[j];
                    }
                }
            }
        }
        ModelMatrix::from_array(m)
    }
}

/// The hub-and-spoke grid exercised by the `verify` command and the
/// acceptance suite: varied sizes, fan-ins at both extremes, and the
/// degenerate zero-factor corners.
pub const VERIFY_GRID: [(usize, usize, usize, usize, usize); 12] = [
    (12, 4, 3, 2, 1),
    (16, 4, 16, 1, 4),
    (20, 6, 4, 1, 2),
    (20, 6, 4, 2, 2),
    (24, 12, 6, 5, 4),
    (30, 6, 2, 1, 1),
    (30, 6, 6, 3, 3),
    (40, 8, 8, 3, 2),
    (50, 5, 10, 2, 2),
    (50, 10, 5, 4, 3),
    (10, 2, 5, 1, 2),
    (100, 5, 2, 2, 2),
];

/// Input dimension used by the grid runs.
pub const GRID_DIM: usize = 6;

/// Runs the full verification grid: for every config and input family, the
/// four contraction claims, the three spread equalities, per-stage mean
/// shift, composed-round average preservation, and one in-degree
/// goodness-of-fit row per distinct `(n_h, b_hh)`.
pub fn run_verification_grid(trials: usize, master: u64) -> Result<Vec<VerificationReport>> {
    require_trials(trials)?;
    let mut reports = Vec::new();
    let mut seen_gossip: Vec<(usize, usize)> = Vec::new();
    for (ci, &(n_s, n_h, b_hs, b_hh, b_sh)) in VERIFY_GRID.iter().enumerate() {
        let cfg = TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh };
        for (fi, family) in InputFamily::ALL.iter().enumerate() {
            let tag = (ci * 8 + fi) as u64;
            let mut input_rng = stream(master, &[crate::rng::TAG_INPUT_FAMILY, tag]);
            let spoke_x = family.build(n_s, GRID_DIM, &mut input_rng);
            let hub_x = family.build(n_h, GRID_DIM, &mut input_rng);
            let claim_master = crate::rng::derive_seed(master, &[TAG_TRIAL, tag]);

            for stage in [Stage::Push, Stage::FullHsl] {
                reports.extend(verify_stage_cdr(stage, &cfg, &spoke_x, trials, claim_master)?);
            }
            for stage in [Stage::Gossip, Stage::Pull] {
                reports.extend(verify_stage_cdr(stage, &cfg, &hub_x, trials, claim_master)?);
            }
            reports.push(verify_mean_shift(Stage::Push, &cfg, &spoke_x, trials, claim_master)?);
            reports.push(verify_mean_shift(Stage::Gossip, &cfg, &hub_x, trials, claim_master)?);
            reports.push(verify_mean_shift(Stage::Pull, &cfg, &hub_x, trials, claim_master)?);
            reports.push(verify_average_preservation(
                Stage::FullHsl,
                &cfg,
                &spoke_x,
                trials,
                claim_master,
            )?);
        }
        if !seen_gossip.contains(&(n_h, b_hh)) {
            seen_gossip.push((n_h, b_hh));
            reports.push(verify_indegree_binomial(
                n_h,
                b_hh,
                trials,
                crate::rng::derive_seed(master, &[TAG_TRIAL, 4096 + ci as u64]),
            )?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::TAG_INPUT_FAMILY;

    fn gaussian_input(n: usize, dim: usize, seed: u64) -> ModelMatrix {
        InputFamily::Gaussian.build(n, dim, &mut stream(seed, &[TAG_INPUT_FAMILY]))
    }

    #[test]
    fn push_contraction_and_equality_hold() {
        let cfg = TopologyConfig::Hsl { n_s: 20, n_h: 6, b_hs: 4, b_hh: 2, b_sh: 2 };
        let x = gaussian_input(20, 5, 11);
        let reports = verify_stage_cdr(Stage::Push, &cfg, &x, 4000, 171).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert!(r.passed, "{}: empirical {} vs {} (se {})", r.claim, r.empirical, r.bound_or_target, r.standard_error);
        }
        // contraction must be strictly below the factor, not just within 3 se
        assert!(reports[0].empirical < reports[0].bound_or_target);
    }

    #[test]
    fn gossip_and_pull_equalities_hold() {
        let cfg = TopologyConfig::Hsl { n_s: 20, n_h: 8, b_hs: 4, b_hh: 3, b_sh: 2 };
        let hub_x = gaussian_input(8, 5, 12);
        for stage in [Stage::Gossip, Stage::Pull] {
            let reports = verify_stage_cdr(stage, &cfg, &hub_x, 6000, 172).unwrap();
            for r in &reports {
                assert!(r.passed, "{}: {} vs {} (se {})", r.claim, r.empirical, r.bound_or_target, r.standard_error);
            }
        }
    }

    #[test]
    fn full_round_contraction_holds() {
        let cfg = TopologyConfig::Hsl { n_s: 30, n_h: 6, b_hs: 5, b_hh: 2, b_sh: 2 };
        let x = gaussian_input(30, 4, 13);
        let reports = verify_stage_cdr(Stage::FullHsl, &cfg, &x, 4000, 173).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].passed, "{:?}", reports[0]);
    }

    #[test]
    fn full_fanin_push_contracts_to_zero() {
        // b_hs = n_s: every hub averages everyone, CD after is float dust
        let cfg = TopologyConfig::Hsl { n_s: 12, n_h: 4, b_hs: 12, b_hh: 1, b_sh: 2 };
        let x = gaussian_input(12, 4, 14);
        let reports = verify_stage_cdr(Stage::Push, &cfg, &x, 500, 174).unwrap();
        assert_eq!(reports[0].bound_or_target, 0.0);
        assert!(reports[0].passed, "{:?}", reports[0]);
    }

    #[test]
    fn average_preservation_and_mean_shift_hold() {
        let cfg = TopologyConfig::Hsl { n_s: 18, n_h: 6, b_hs: 3, b_hh: 2, b_sh: 3 };
        let spoke_x = gaussian_input(18, 5, 15);
        let hub_x = gaussian_input(6, 5, 16);
        let pres = verify_average_preservation(Stage::FullHsl, &cfg, &spoke_x, 6000, 175).unwrap();
        assert!(pres.passed, "{pres:?}");
        for (stage, x) in [(Stage::Push, &spoke_x), (Stage::Gossip, &hub_x), (Stage::Pull, &hub_x)] {
            let r = verify_mean_shift(stage, &cfg, x, 6000, 176).unwrap();
            assert!(r.passed, "{}: {} vs {} (se {})", r.claim, r.empirical, r.bound_or_target, r.standard_error);
        }
    }

    #[test]
    fn mean_shift_equalities_are_tight() {
        // push target is an exact equality: empirical must straddle within
        // noise, not sit far below like a slack bound would allow
        let cfg = TopologyConfig::Hsl { n_s: 16, n_h: 4, b_hs: 4, b_hh: 1, b_sh: 2 };
        let x = gaussian_input(16, 3, 17);
        let r = verify_mean_shift(Stage::Push, &cfg, &x, 20_000, 177).unwrap();
        assert!(r.passed);
        assert!(
            (r.empirical - r.bound_or_target).abs() <= 3.0 * r.standard_error + 1e-9,
            "equality drifted: {} vs {}",
            r.empirical,
            r.bound_or_target
        );
    }

    #[test]
    fn indegree_distribution_is_binomial() {
        let r = verify_indegree_binomial(10, 2, 5000, 178).unwrap();
        assert!(r.passed, "chi2 {} vs critical {}", r.empirical, r.bound_or_target);
        // degenerate full-fanout case
        let r = verify_indegree_binomial(4, 3, 500, 179).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn indegree_test_rejects_a_wrong_distribution() {
        // in-degrees sampled at fanout 3 tested against the fanout-2 model
        // must blow far past the critical value
        let histogram = sample_indegree_histogram(10, 3, 5000, 180).unwrap();
        let (statistic, critical) = indegree_chi_square(&histogram, 10, 2).unwrap();
        assert!(statistic > 10.0 * critical, "chi2 {statistic} vs critical {critical}");
        // and against the matching model it sits below
        let (statistic, critical) = indegree_chi_square(&histogram, 10, 3).unwrap();
        assert!(statistic <= critical, "chi2 {statistic} vs critical {critical}");
    }

    #[test]
    fn trials_floor_is_enforced() {
        let cfg = TopologyConfig::Hsl { n_s: 10, n_h: 4, b_hs: 2, b_hh: 1, b_sh: 2 };
        let x = gaussian_input(10, 3, 18);
        assert!(verify_stage_cdr(Stage::Push, &cfg, &x, 99, 181).is_err());
    }

    #[test]
    fn consensus_input_is_rejected() {
        let cfg = TopologyConfig::Hsl { n_s: 10, n_h: 4, b_hs: 2, b_hh: 1, b_sh: 2 };
        let x = ModelMatrix::replicate(&Array1::from_elem(3, 2.5), 10);
        assert!(verify_stage_cdr(Stage::Push, &cfg, &x, 500, 182).is_err());
    }

    #[test]
    fn one_hot_and_rank_one_families_are_far_from_consensus() {
        for family in InputFamily::ALL {
            let x = family.build(12, 4, &mut stream(3, &[TAG_INPUT_FAMILY, 7]));
            assert!(consensus_distance(&x) > 0.0, "{}", family.name());
        }
    }
}
