//! Synthetic objectives, data partitioning, local SGD, and the training loop.
//!
//! Each node `i` owns a shard defining `f_i`; the global objective is
//! `F = (1/n) * sum_i f_i`. A round is: every node takes `local_steps` SGD
//! steps on its shard, then models mix through the round's sampled
//! topology. Two objective families are provided:
//!
//! * quadratic: `f_i(x) = 0.5 * ||A_i x - b_i||^2` over the shard's rows;
//!   gradients, optima, smoothness, and heterogeneity are all closed-form,
//!   which is what the bound checks need.
//! * logistic: binary regression on a two-Gaussian synthetic set, with
//!   label-skewed shards via Dirichlet partitioning and a held-out test set
//!   for accuracy.

use ndarray::{Array1, Array2, ArrayView1};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, StandardNormal};
use rayon::prelude::*;

use crate::metrics::{
    consensus_distance, consensus_distance_ratio, kahan_sum, ModelMatrix, RoundMetrics,
};
use crate::rng::{stream, TAG_BASELINE_MIX, TAG_GOSSIP, TAG_LOCAL_SGD, TAG_PULL, TAG_PUSH};
use crate::topology::{sample_baseline, sample_hsl_round, TopologyConfig};
use crate::{Error, Result};

/// One node's quadratic shard: rows of `a` with targets `b`.
#[derive(Debug, Clone)]
pub struct QuadraticShard {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl QuadraticShard {
    /// Residual `A x - b`.
    fn residual(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        &self.a.dot(&x) - &self.b
    }

    /// `0.5 * ||A x - b||^2`.
    pub fn loss(&self, x: ArrayView1<'_, f64>) -> f64 {
        let r = self.residual(x);
        0.5 * kahan_sum(r.iter().map(|v| v * v))
    }

    /// `A^T (A x - b)`.
    pub fn grad(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.a.t().dot(&self.residual(x))
    }
}

/// One labeled sample with label in {-1, +1}.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub features: Array1<f64>,
    pub label: f64,
}

/// Binary logistic loss over a shard: mean of `ln(1 + exp(-y * w.x))`.
#[derive(Debug, Clone, Default)]
pub struct LogisticShard {
    pub samples: Vec<LabeledSample>,
}

fn log1p_exp(t: f64) -> f64 {
    // ln(1 + e^t) without overflow
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticShard {
    pub fn loss(&self, w: ArrayView1<'_, f64>) -> f64 {
        let m = self.samples.len().max(1) as f64;
        kahan_sum(
            self.samples
                .iter()
                .map(|s| log1p_exp(-s.label * s.features.dot(&w))),
        ) / m
    }

    pub fn grad(&self, w: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut g = Array1::zeros(w.len());
        for s in &self.samples {
            let coeff = -s.label * sigmoid(-s.label * s.features.dot(&w));
            g.scaled_add(coeff, &s.features);
        }
        g / self.samples.len().max(1) as f64
    }
}

/// The federation's objective: one shard per node, plus an optional shared
/// test set for the logistic family.
#[derive(Debug, Clone)]
pub enum Objective {
    Quadratic(Vec<QuadraticShard>),
    Logistic {
        shards: Vec<LogisticShard>,
        test_set: Vec<LabeledSample>,
    },
}

impl Objective {
    pub fn n_nodes(&self) -> usize {
        match self {
            Objective::Quadratic(shards) => shards.len(),
            Objective::Logistic { shards, .. } => shards.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Quadratic(shards) => shards.first().map(|s| s.a.ncols()).unwrap_or(0),
            Objective::Logistic { shards, test_set } => shards
                .iter()
                .find_map(|s| s.samples.first())
                .or_else(|| test_set.first())
                .map(|s| s.features.len())
                .unwrap_or(0),
        }
    }

    pub fn node_loss(&self, i: usize, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            Objective::Quadratic(shards) => shards[i].loss(x),
            Objective::Logistic { shards, .. } => shards[i].loss(x),
        }
    }

    pub fn node_grad(&self, i: usize, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Objective::Quadratic(shards) => shards[i].grad(x),
            Objective::Logistic { shards, .. } => shards[i].grad(x),
        }
    }

    /// `F(x) = (1/n) * sum_i f_i(x)`.
    pub fn global_loss(&self, x: ArrayView1<'_, f64>) -> f64 {
        let n = self.n_nodes() as f64;
        kahan_sum((0..self.n_nodes()).map(|i| self.node_loss(i, x))) / n
    }

    /// `grad F(x)`.
    pub fn global_grad(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut g = Array1::zeros(x.len());
        for i in 0..self.n_nodes() {
            g += &self.node_grad(i, x);
        }
        g / self.n_nodes() as f64
    }

    /// Mean squared deviation of node gradients from the global gradient at
    /// one point: `(1/n) * sum_i ||grad f_i(x) - grad F(x)||^2`.
    pub fn heterogeneity_at(&self, x: ArrayView1<'_, f64>) -> f64 {
        let gbar = self.global_grad(x);
        let n = self.n_nodes() as f64;
        kahan_sum((0..self.n_nodes()).map(|i| {
            let gi = self.node_grad(i, x);
            kahan_sum(gi.iter().zip(gbar.iter()).map(|(a, b)| (a - b) * (a - b)))
        })) / n
    }

    /// Fraction of test samples the sign of `w.x` classifies correctly.
    /// `None` when no test set is attached.
    pub fn test_accuracy(&self, w: ArrayView1<'_, f64>) -> Option<f64> {
        match self {
            Objective::Quadratic(_) => None,
            Objective::Logistic { test_set, .. } => {
                if test_set.is_empty() {
                    return None;
                }
                let correct = test_set
                    .iter()
                    .filter(|s| s.features.dot(&w) * s.label > 0.0)
                    .count();
                Some(correct as f64 / test_set.len() as f64)
            }
        }
    }
}

/// Closed-form problem constants for quadratic objectives.
impl Objective {
    /// Per-node smoothness: the largest eigenvalue of any `A_i^T A_i`.
    /// Only defined for the quadratic family.
    pub fn quadratic_smoothness(&self) -> Result<f64> {
        let shards = match self {
            Objective::Quadratic(s) => s,
            _ => return Err(Error::config("smoothness is closed-form only for quadratic")),
        };
        let mut l = 0.0f64;
        for s in shards {
            let gram = s.a.t().dot(&s.a);
            let n = gram.nrows();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| gram[[i, j]]);
            let top = m
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, &v| acc.max(v));
            l = l.max(top);
        }
        Ok(l)
    }

    /// Exact heterogeneity bound when every node shares one design matrix:
    /// node gradients then differ by the constant `A^T (b_mean - b_i)`, so
    /// the supremum over models is attained everywhere. `None` when designs
    /// differ (the supremum is unbounded) or for the logistic family.
    pub fn quadratic_constant_heterogeneity(&self) -> Option<f64> {
        let shards = match self {
            Objective::Quadratic(s) => s,
            _ => return None,
        };
        let first = shards.first()?;
        if !shards.iter().all(|s| s.a == first.a) {
            return None;
        }
        let x0 = Array1::zeros(first.a.ncols());
        Some(self.heterogeneity_at(x0.view()))
    }

    /// Global minimizer of the stacked least-squares system via its normal
    /// equations.
    pub fn quadratic_minimizer(&self) -> Result<Array1<f64>> {
        let shards = match self {
            Objective::Quadratic(s) => s,
            _ => return Err(Error::config("minimizer is closed-form only for quadratic")),
        };
        let d = shards[0].a.ncols();
        let mut gram = Array2::<f64>::zeros((d, d));
        let mut rhs = Array1::<f64>::zeros(d);
        for s in shards {
            gram += &s.a.t().dot(&s.a);
            rhs += &s.a.t().dot(&s.b);
        }
        let gm = nalgebra::DMatrix::from_fn(d, d, |i, j| gram[[i, j]]);
        let rv = nalgebra::DVector::from_fn(d, |i, _| rhs[i]);
        let sol = gm
            .lu()
            .solve(&rv)
            .ok_or_else(|| Error::config("minimizer: normal equations are singular"))?;
        Ok(Array1::from_iter(sol.iter().copied()))
    }

    /// `F(x0) - min F` for quadratics with a shared invertible design.
    pub fn quadratic_delta0(&self, x0: ArrayView1<'_, f64>) -> Result<f64> {
        let xstar = self.quadratic_minimizer()?;
        Ok(self.global_loss(x0) - self.global_loss(xstar.view()))
    }

    /// Exact mini-batch gradient noise `max_i E||g_i_batch(x) - grad f_i(x)||^2`
    /// at the point `x`, from the finite-population variance of the
    /// per-row gradient terms. Zero when the batch covers every row
    /// (sampling switches to the exact full gradient).
    pub fn quadratic_batch_noise_at(&self, x: ArrayView1<'_, f64>, batch_size: usize) -> Result<f64> {
        let shards = match self {
            Objective::Quadratic(s) => s,
            _ => return Err(Error::config("batch noise is closed-form only for quadratic")),
        };
        if batch_size == 0 {
            return Err(Error::config("batch noise: batch_size must be >= 1"));
        }
        let mut worst = 0.0f64;
        for s in shards {
            let m = s.a.nrows();
            if batch_size >= m {
                continue;
            }
            let residual = s.a.dot(&x) - &s.b;
            // per-row terms g_r = a_r (a_r . x - b_r) and their mean
            let terms: Vec<Array1<f64>> = (0..m)
                .map(|r| s.a.row(r).to_owned() * residual[r])
                .collect();
            let mut mean = Array1::<f64>::zeros(s.a.ncols());
            for t in &terms {
                mean += t;
            }
            mean /= m as f64;
            let scatter = kahan_sum(terms.iter().map(|t| {
                let d = t - &mean;
                d.dot(&d)
            }));
            // estimator (m/batch) sum of batch iid row draws
            worst = worst.max(m as f64 / batch_size as f64 * scatter);
        }
        Ok(worst)
    }
}

/// Training-loop parameters. `step_size` is the SGD step; `batch_size`
/// caps the per-step mini-batch (draws are with replacement, full-shard
/// and deterministic when the cap covers the shard). `eval_every` sets the
/// loss/accuracy cadence; consensus metrics are recorded every round.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub topology: TopologyConfig,
    pub rounds: usize,
    pub local_steps: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub x0_value: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.rounds == 0 {
            return Err(Error::config("training: rounds must be >= 1"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("training: local_steps must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training: batch_size must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("training: eval_every must be >= 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config(format!(
                "training: step_size must be finite and > 0 (got {})",
                self.step_size
            )));
        }
        if !self.x0_value.is_finite() {
            return Err(Error::config("training: x0 must be finite"));
        }
        Ok(())
    }
}

/// First-step stochastic gradient recorded during local SGD.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub node: usize,
    pub grad: Array1<f64>,
    pub is_stochastic: bool,
}

fn quadratic_batch_grad(
    shard: &QuadraticShard,
    x: ArrayView1<'_, f64>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> (Array1<f64>, bool) {
    let m = shard.a.nrows();
    if batch_size >= m {
        return (shard.grad(x), false);
    }
    // rows drawn with replacement; scaled to stay unbiased for the shard sum
    let scale = m as f64 / batch_size as f64;
    let mut g = Array1::zeros(x.len());
    for _ in 0..batch_size {
        let j = rng.gen_range(0..m);
        let row = shard.a.row(j);
        let r = row.dot(&x) - shard.b[j];
        g.scaled_add(scale * r, &row);
    }
    (g, true)
}

fn logistic_batch_grad(
    shard: &LogisticShard,
    w: ArrayView1<'_, f64>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> (Array1<f64>, bool) {
    let m = shard.samples.len();
    if batch_size >= m {
        return (shard.grad(w), false);
    }
    let mut g = Array1::zeros(w.len());
    for _ in 0..batch_size {
        let s = &shard.samples[rng.gen_range(0..m)];
        let coeff = -s.label * sigmoid(-s.label * s.features.dot(&w));
        g.scaled_add(coeff, &s.features);
    }
    (g / batch_size as f64, true)
}

/// `local_steps` SGD steps of one node on its own shard. Returns the moved
/// model and the first step's gradient sample.
pub fn local_sgd(
    obj: &Objective,
    node: usize,
    x: ArrayView1<'_, f64>,
    local_steps: usize,
    step_size: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> (Array1<f64>, GradientSample) {
    let mut x = x.to_owned();
    let mut first: Option<GradientSample> = None;
    for _ in 0..local_steps {
        let (g, stochastic) = match obj {
            Objective::Quadratic(shards) => {
                quadratic_batch_grad(&shards[node], x.view(), batch_size, rng)
            }
            Objective::Logistic { shards, .. } => {
                logistic_batch_grad(&shards[node], x.view(), batch_size, rng)
            }
        };
        if first.is_none() {
            first = Some(GradientSample { node, grad: g.clone(), is_stochastic: stochastic });
        }
        x.scaled_add(-step_size, &g);
    }
    let first = first.expect("local_steps >= 1");
    (x, first)
}

/// Loss/gradient/accuracy snapshot of the fleet.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    /// `F` at the average model.
    pub mean_loss: f64,
    /// `(1/n) * sum_i ||grad F(x_i)||^2`.
    pub mean_grad_norm_sq: f64,
    /// Mean per-node test accuracy (logistic with a test set only).
    pub accuracy: Option<f64>,
}

pub fn evaluate(x: &ModelMatrix, obj: &Objective) -> EvalReport {
    let mean = x.mean_row();
    let mean_loss = obj.global_loss(mean.view());
    let n = x.n();
    let grads: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = obj.global_grad(x.row(i));
            kahan_sum(g.iter().map(|v| v * v))
        })
        .collect();
    let mean_grad_norm_sq = kahan_sum(grads.iter().copied()) / n as f64;
    let accuracy = match obj {
        Objective::Quadratic(_) => None,
        Objective::Logistic { .. } => {
            let accs: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| obj.test_accuracy(x.row(i)).unwrap_or(f64::NAN))
                .collect();
            if accs.iter().any(|a| a.is_nan()) {
                None
            } else {
                Some(kahan_sum(accs.iter().copied()) / n as f64)
            }
        }
    };
    EvalReport { mean_loss, mean_grad_norm_sq, accuracy }
}

/// Full training trace plus the final stacked models.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metrics: Vec<RoundMetrics>,
    pub final_models: ModelMatrix,
}

/// Runs the training loop: per round, local SGD on every node (each node on
/// its own `[TAG_LOCAL_SGD, round, node]` stream), then one sampled mixing
/// round. Evaluation runs on the first round, every `eval_every`-th round,
/// and the last. Non-finite models abort with a divergence error.
pub fn run_experiment(cfg: &TrainConfig, obj: &Objective) -> Result<ExperimentResult> {
    cfg.validate()?;
    let n = obj.n_nodes();
    let d = obj.dim();
    if n != cfg.topology.n_s() {
        return Err(Error::dimension(format!(
            "objective has {n} shards but topology has n_s = {}",
            cfg.topology.n_s()
        )));
    }
    if d == 0 {
        return Err(Error::config("objective has zero dimension"));
    }
    let master = cfg.seed;
    let x0 = Array1::from_elem(d, cfg.x0_value);
    let mut x = ModelMatrix::replicate(&x0, n);
    let mut metrics = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        // local steps, one independent stream per node
        let rows: Vec<Array1<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(master, &[TAG_LOCAL_SGD, round as u64, i as u64]);
                local_sgd(
                    obj,
                    i,
                    x.row(i),
                    cfg.local_steps,
                    cfg.step_size,
                    cfg.batch_size,
                    &mut rng,
                )
                .0
            })
            .collect();
        let mut stepped = ModelMatrix::zeros(n, d);
        for (i, row) in rows.iter().enumerate() {
            stepped.as_array_mut().row_mut(i).assign(row);
        }

        let cd_pre = consensus_distance(&stepped);
        let mixed = match cfg.topology {
            TopologyConfig::Hsl { .. } => {
                let round_tag = round as u64;
                let stages = sample_hsl_round(
                    &cfg.topology,
                    &mut stream(master, &[TAG_PUSH, round_tag]),
                    &mut stream(master, &[TAG_GOSSIP, round_tag]),
                    &mut stream(master, &[TAG_PULL, round_tag]),
                )?;
                let hub = stages.push.mix(&stepped)?;
                let gossiped = stages.gossip.mix(&hub)?;
                stages.pull.mix(&gossiped)?
            }
            _ => {
                let mut rng = stream(master, &[TAG_BASELINE_MIX, round as u64]);
                sample_baseline(&cfg.topology, &mut rng)?.mix(&stepped)?
            }
        };
        if !mixed.is_finite() {
            return Err(Error::Divergence {
                round,
                message: "model entries became non-finite; lower the step size".to_string(),
            });
        }
        let cd_post = consensus_distance(&mixed);
        x = mixed;

        let is_eval =
            round == 0 || round == cfg.rounds - 1 || (round + 1) % cfg.eval_every == 0;
        let (mean_loss, mean_grad_norm_sq, accuracy) = if is_eval {
            let ev = evaluate(&x, obj);
            (Some(ev.mean_loss), Some(ev.mean_grad_norm_sq), ev.accuracy)
        } else {
            (None, None, None)
        };
        metrics.push(RoundMetrics {
            round,
            cd_pre,
            cd_post,
            cdr: consensus_distance_ratio(cd_pre, cd_post),
            mean_loss,
            mean_grad_norm_sq,
            accuracy,
        });
    }
    Ok(ExperimentResult { metrics, final_models: x })
}

/// Splits sample indices over `n_s` nodes with per-class Dirichlet(alpha)
/// label skew: for each class, node shares are one Dirichlet draw and each
/// sample lands on a node drawn from those shares. Every node is guaranteed
/// at least one sample afterwards by stealing singles from the currently
/// largest node.
pub fn partition_dirichlet(
    labels: &[usize],
    n_s: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if n_s == 0 {
        return Err(Error::config("partition: n_s must be >= 1"));
    }
    if labels.len() < n_s {
        return Err(Error::config(format!(
            "partition: need at least one sample per node ({} samples for n_s = {n_s})",
            labels.len()
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config(format!(
            "partition: alpha must be finite and > 0 (got {alpha})"
        )));
    }
    let n_classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); n_s];
    if n_s == 1 {
        nodes[0] = (0..labels.len()).collect();
        return Ok(nodes);
    }
    for class in 0..n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let dir = Dirichlet::new_with_size(alpha, n_s)
            .map_err(|e| Error::config(format!("partition: bad Dirichlet parameters: {e}")))?;
        let shares: Vec<f64> = dir.sample(rng);
        let picker = WeightedIndex::new(&shares)
            .map_err(|e| Error::config(format!("partition: degenerate Dirichlet draw: {e}")))?;
        for idx in members {
            nodes[picker.sample(rng)].push(idx);
        }
    }
    // rebalance: empty nodes steal one sample from the currently largest
    for i in 0..n_s {
        if nodes[i].is_empty() {
            let donor = (0..n_s)
                .max_by_key(|&j| nodes[j].len())
                .expect("n_s >= 1");
            if nodes[donor].len() <= 1 {
                return Err(Error::sampling(
                    "partition: cannot rebalance, no node has more than one sample",
                ));
            }
            let moved = nodes[donor].pop().expect("donor nonempty");
            nodes[i].push(moved);
        }
    }
    Ok(nodes)
}

/// Synthetic two-Gaussian binary classification task: class `+1` centered
/// at `+mu`, class `-1` at `-mu` (both isotropic unit variance), where `mu`
/// has norm `separation / 2`. Returns features, labels in {-1, +1}, and
/// class ids in {0, 1} for partitioning.
pub fn gaussian_mixture(
    samples: usize,
    dim: usize,
    separation: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Array1<f64>>, Vec<f64>, Vec<usize>) {
    let mut dir = Array1::<f64>::zeros(dim);
    for v in dir.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let norm = dir.dot(&dir).sqrt().max(1e-12);
    let mu = dir * (separation / 2.0 / norm);
    let mut feats = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    let mut classes = Vec::with_capacity(samples);
    for _ in 0..samples {
        let class = rng.gen_range(0..2usize);
        let sign = if class == 1 { 1.0 } else { -1.0 };
        let mut f = Array1::<f64>::zeros(dim);
        for (j, v) in f.iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *v = sign * mu[j] + noise;
        }
        feats.push(f);
        labels.push(sign);
        classes.push(class);
    }
    (feats, labels, classes)
}

/// Assembles the logistic objective: generates the mixture, holds out a
/// test set, and shards the rest with Dirichlet label skew.
pub fn make_logistic_objective(
    n_s: usize,
    samples: usize,
    test_samples: usize,
    dim: usize,
    separation: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Objective> {
    if dim == 0 || dim > 50 {
        return Err(Error::config(format!(
            "logistic: dim must lie in 1..=50 (got {dim})"
        )));
    }
    if samples + test_samples > 20_000 {
        return Err(Error::config(format!(
            "logistic: at most 20000 total samples (got {})",
            samples + test_samples
        )));
    }
    let (feats, labels, classes) = gaussian_mixture(samples + test_samples, dim, separation, rng);
    let train_idx: Vec<usize> = (0..samples).collect();
    let train_classes: Vec<usize> = train_idx.iter().map(|&i| classes[i]).collect();
    let split = partition_dirichlet(&train_classes, n_s, alpha, rng)?;
    let shards: Vec<LogisticShard> = split
        .iter()
        .map(|idxs| LogisticShard {
            samples: idxs
                .iter()
                .map(|&i| LabeledSample { features: feats[i].clone(), label: labels[i] })
                .collect(),
        })
        .collect();
    let test_set: Vec<LabeledSample> = (samples..samples + test_samples)
        .map(|i| LabeledSample { features: feats[i].clone(), label: labels[i] })
        .collect();
    Ok(Objective::Logistic { shards, test_set })
}

/// Quadratic fleet with one shared design matrix and node-specific targets
/// `b_i = A x_star + spread * delta_i`. With `spread = 0` every node owns
/// the same problem (zero heterogeneity).
pub fn make_shared_design_quadratic(
    n_s: usize,
    design_diag: &[f64],
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> Objective {
    let d = design_diag.len();
    let a = Array2::from_diag(&Array1::from_iter(design_diag.iter().copied()));
    let mut xstar = Array1::<f64>::zeros(d);
    for v in xstar.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let base = a.dot(&xstar);
    let shards = (0..n_s)
        .map(|_| {
            let mut b = base.clone();
            if spread > 0.0 {
                for v in b.iter_mut() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *v += spread * noise;
                }
            }
            QuadraticShard { a: a.clone(), b }
        })
        .collect();
    Objective::Quadratic(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, TAG_OBJECTIVE};
    use ndarray::array;

    fn rng(seed: u64) -> ChaCha8Rng {
        stream(seed, &[TAG_OBJECTIVE])
    }

    #[test]
    fn quadratic_full_batch_step_is_exact() {
        let shard = QuadraticShard {
            a: array![[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]],
            b: array![1.0, -2.0, 0.5],
        };
        let obj = Objective::Quadratic(vec![shard.clone()]);
        let x = array![0.25, -1.5];
        let (moved, g) = local_sgd(&obj, 0, x.view(), 1, 0.1, usize::MAX, &mut rng(1));
        let expected_grad = shard.a.t().dot(&(&shard.a.dot(&x) - &shard.b));
        assert!(!g.is_stochastic);
        for j in 0..2 {
            assert_eq!(g.grad[j], expected_grad[j]);
            assert_eq!(moved[j], x[j] - 0.1 * expected_grad[j]);
        }
    }

    #[test]
    fn minibatch_quadratic_gradient_is_unbiased() {
        let shard = QuadraticShard {
            a: array![[1.0, 0.5], [2.0, -1.0], [0.0, 1.5], [1.0, 1.0]],
            b: array![0.5, 1.0, -0.25, 2.0],
        };
        let x = array![0.3, -0.7];
        let exact = shard.grad(x.view());
        let mut r = rng(2);
        let trials = 200_000;
        let mut acc = Array1::<f64>::zeros(2);
        for _ in 0..trials {
            let (g, stochastic) = quadratic_batch_grad(&shard, x.view(), 2, &mut r);
            assert!(stochastic);
            acc += &g;
        }
        acc /= trials as f64;
        for j in 0..2 {
            assert!(
                (acc[j] - exact[j]).abs() < 0.05 * (1.0 + exact[j].abs()),
                "coord {j}: {} vs {}",
                acc[j],
                exact[j]
            );
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let shard = LogisticShard {
            samples: vec![
                LabeledSample { features: array![1.0, -0.5, 2.0], label: 1.0 },
                LabeledSample { features: array![-0.25, 1.5, 0.5], label: -1.0 },
                LabeledSample { features: array![0.75, 0.0, -1.0], label: 1.0 },
            ],
        };
        let w = array![0.2, -0.4, 0.1];
        let g = shard.grad(w.view());
        let eps = 1e-6;
        for j in 0..3 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += eps;
            wm[j] -= eps;
            let fd = (shard.loss(wp.view()) - shard.loss(wm.view())) / (2.0 * eps);
            assert!((g[j] - fd).abs() < 1e-6, "coord {j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn partition_single_node_takes_everything() {
        let labels = vec![0, 1, 0, 1, 1];
        let parts = partition_dirichlet(&labels, 1, 1.0, &mut rng(3)).unwrap();
        assert_eq!(parts[0].len(), 5);
    }

    #[test]
    fn partition_large_alpha_is_near_iid() {
        // the 2% margin is about 1.3 sigma of multinomial assignment noise
        // per node, so this checks a pinned draw, not a tail guarantee
        let mut r = rng(10);
        let n_s = 10;
        let total = 10_000;
        let labels: Vec<usize> = (0..total).map(|i| i % 2).collect();
        let parts = partition_dirichlet(&labels, n_s, 1e6, &mut r).unwrap();
        for (i, part) in parts.iter().enumerate() {
            let ones = part.iter().filter(|&&s| labels[s] == 1).count();
            let share = ones as f64 / part.len() as f64;
            assert!((share - 0.5).abs() < 0.02, "node {i}: class share {share}");
        }
    }

    #[test]
    fn partition_alpha_one_is_skewed_and_leaves_no_empty_nodes() {
        let mut r = rng(5);
        let total = 5_000;
        let labels: Vec<usize> = (0..total).map(|i| i % 10).collect();
        let mut max_share_sum = 0.0;
        let seeds = 50;
        for _ in 0..seeds {
            let parts = partition_dirichlet(&labels, 100, 1.0, &mut r).unwrap();
            assert!(parts.iter().all(|p| !p.is_empty()));
            let mut per_run = 0.0;
            for part in &parts {
                let mut counts = [0usize; 10];
                for &s in part {
                    counts[labels[s]] += 1;
                }
                let max = *counts.iter().max().unwrap() as f64;
                per_run += max / part.len() as f64;
            }
            max_share_sum += per_run / 100.0;
        }
        let mean_max_share = max_share_sum / seeds as f64;
        assert!(mean_max_share > 0.15, "mean max-class share {mean_max_share}");
    }

    #[test]
    fn shared_design_heterogeneity_is_constant_in_x() {
        let obj = make_shared_design_quadratic(8, &[1.0, 2.0, 0.5], 0.7, &mut rng(6));
        let h0 = obj.heterogeneity_at(Array1::zeros(3).view());
        let h1 = obj.heterogeneity_at(array![5.0, -2.0, 11.0].view());
        assert!((h0 - h1).abs() <= 1e-9 * h0.max(1.0), "{h0} vs {h1}");
        assert!(obj.quadratic_constant_heterogeneity().is_some());
        let l = obj.quadratic_smoothness().unwrap();
        assert!((l - 4.0).abs() < 1e-12, "largest diag^2 = 4, got {l}");
    }

    #[test]
    fn homogeneous_fleet_converges_like_gradient_descent() {
        let mut r = rng(7);
        let obj = make_shared_design_quadratic(6, &[1.0, 1.0, 1.0], 0.0, &mut r);
        let cfg = TrainConfig {
            topology: TopologyConfig::Hsl { n_s: 6, n_h: 3, b_hs: 2, b_hh: 1, b_sh: 2 },
            rounds: 200,
            local_steps: 1,
            step_size: 0.05,
            batch_size: usize::MAX,
            eval_every: 1,
            seed: 99,
            x0_value: 0.0,
        };
        let result = run_experiment(&cfg, &obj).unwrap();
        assert_eq!(result.metrics.len(), 200);
        // identical shards: models stay at consensus (up to float dust)
        for m in &result.metrics {
            assert!(m.cd_post <= 1e-20, "round {}: cd {}", m.round, m.cd_post);
        }
        let last = result.metrics.last().unwrap();
        assert!(last.mean_grad_norm_sq.unwrap() < 1e-6);
        assert!(
            last.mean_loss.unwrap() < result.metrics[0].mean_loss.unwrap(),
            "loss should fall"
        );
    }

    #[test]
    fn run_is_deterministic_per_seed() {
        let mut r = rng(8);
        let obj = make_shared_design_quadratic(9, &[1.5, 0.5], 1.0, &mut r);
        let cfg = TrainConfig {
            topology: TopologyConfig::ElLocal { n_s: 9, k: 3 },
            rounds: 25,
            local_steps: 2,
            step_size: 0.05,
            batch_size: 1,
            eval_every: 5,
            seed: 1234,
            x0_value: 0.0,
        };
        let a = run_experiment(&cfg, &obj).unwrap();
        let b = run_experiment(&cfg, &obj).unwrap();
        assert_eq!(a.final_models.as_array(), b.final_models.as_array());
        assert_eq!(a.metrics, b.metrics);
        let c = run_experiment(&TrainConfig { seed: 4321, ..cfg }, &obj).unwrap();
        assert_ne!(a.final_models.as_array(), c.final_models.as_array());
    }

    #[test]
    fn divergence_is_reported_with_round() {
        let mut r = rng(9);
        let obj = make_shared_design_quadratic(4, &[10.0], 0.0, &mut r);
        let cfg = TrainConfig {
            topology: TopologyConfig::FedavgStar { n_s: 4 },
            rounds: 400,
            local_steps: 1,
            step_size: 10.0,
            batch_size: usize::MAX,
            eval_every: 400,
            seed: 5,
            x0_value: 0.0,
        };
        match run_experiment(&cfg, &obj) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn eval_cadence_fills_first_last_and_multiples() {
        let mut r = rng(10);
        let obj = make_shared_design_quadratic(5, &[1.0, 1.0], 0.5, &mut r);
        let cfg = TrainConfig {
            topology: TopologyConfig::FedavgStar { n_s: 5 },
            rounds: 7,
            local_steps: 1,
            step_size: 0.05,
            batch_size: usize::MAX,
            eval_every: 3,
            seed: 11,
            x0_value: 0.0,
        };
        let result = run_experiment(&cfg, &obj).unwrap();
        let evaluated: Vec<usize> = result
            .metrics
            .iter()
            .filter(|m| m.mean_loss.is_some())
            .map(|m| m.round)
            .collect();
        assert_eq!(evaluated, vec![0, 2, 5, 6]);
    }
}
