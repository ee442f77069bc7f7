//! Communication topologies and row-stochastic mixing-matrix samplers.
//!
//! Hub-and-spoke rounds compose three randomized stages:
//!
//! * push  `W_hs` (`n_h x n_s`): each hub averages `b_hs` spokes sampled
//!   without replacement.
//! * gossip `W_hh` (`n_h x n_h`): each hub sends to `b_hh` other hubs; every
//!   hub averages itself with whatever arrived.
//! * pull  `W_sh` (`n_s x n_h`): each spoke averages `b_sh` hubs sampled
//!   without replacement.
//!
//! Flat baselines (epidemic gossip, its degree-regular oracle variant,
//! Erdős–Rényi, torus, star) are sampled as single `n_s x n_s` matrices.
//! All samplers draw from a caller-provided seeded stream and are
//! deterministic given that stream.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::ModelMatrix;
use crate::{Error, Result};

/// Row sums of sampled matrices must land within this of 1.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A communication topology together with its degree parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyConfig {
    /// Two-tier hub-and-spoke mixing; one round is push, gossip, pull.
    Hsl {
        n_s: usize,
        n_h: usize,
        b_hs: usize,
        b_hh: usize,
        b_sh: usize,
    },
    /// Epidemic gossip over the spokes: each spoke sends to `k` others,
    /// receivers average themselves with arrivals.
    ElLocal { n_s: usize, k: usize },
    /// Degree-regular epidemic gossip: in- and out-degree exactly `k`,
    /// built from `k` superposed self-loop-free permutations.
    ElOracle { n_s: usize, k: usize },
    /// Each directed edge present independently with probability `p`.
    ErdosRenyi { n_s: usize, p: f64 },
    /// Static 2-D wraparound grid; every node averages itself and its four
    /// neighbors with weight 1/5. Requires square `n_s`.
    Torus { n_s: usize },
    /// Static star collapsed to uniform averaging: every row is `1/n_s`.
    FedavgStar { n_s: usize },
}

impl TopologyConfig {
    pub fn kind_str(&self) -> &'static str {
        match self {
            TopologyConfig::Hsl { .. } => "hsl",
            TopologyConfig::ElLocal { .. } => "el_local",
            TopologyConfig::ElOracle { .. } => "el_oracle",
            TopologyConfig::ErdosRenyi { .. } => "erdos_renyi",
            TopologyConfig::Torus { .. } => "torus",
            TopologyConfig::FedavgStar { .. } => "fedavg_star",
        }
    }

    pub fn n_s(&self) -> usize {
        match *self {
            TopologyConfig::Hsl { n_s, .. }
            | TopologyConfig::ElLocal { n_s, .. }
            | TopologyConfig::ElOracle { n_s, .. }
            | TopologyConfig::ErdosRenyi { n_s, .. }
            | TopologyConfig::Torus { n_s }
            | TopologyConfig::FedavgStar { n_s } => n_s,
        }
    }

    pub fn n_h(&self) -> Option<usize> {
        match *self {
            TopologyConfig::Hsl { n_h, .. } => Some(n_h),
            _ => None,
        }
    }

    pub fn degrees(&self) -> Option<(usize, usize, usize)> {
        match *self {
            TopologyConfig::Hsl { b_hs, b_hh, b_sh, .. } => Some((b_hs, b_hh, b_sh)),
            _ => None,
        }
    }

    pub fn fanout(&self) -> Option<usize> {
        match *self {
            TopologyConfig::ElLocal { k, .. } | TopologyConfig::ElOracle { k, .. } => Some(k),
            TopologyConfig::Torus { .. } => Some(4),
            _ => None,
        }
    }

    pub fn edge_probability(&self) -> Option<f64> {
        match *self {
            TopologyConfig::ErdosRenyi { p, .. } => Some(p),
            _ => None,
        }
    }

    /// True when every round reuses the same matrix.
    pub fn is_static(&self) -> bool {
        matches!(
            self,
            TopologyConfig::Torus { .. } | TopologyConfig::FedavgStar { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n_s = self.n_s();
        if n_s < 2 && !matches!(self, TopologyConfig::Torus { .. } | TopologyConfig::FedavgStar { .. })
        {
            return Err(Error::config(format!(
                "{}: n_s must be >= 2 (got {n_s})",
                self.kind_str()
            )));
        }
        match *self {
            TopologyConfig::Hsl {
                n_s,
                n_h,
                b_hs,
                b_hh,
                b_sh,
            } => {
                if n_h < 2 {
                    return Err(Error::config(format!("hsl: n_h must be >= 2 (got {n_h})")));
                }
                if b_hs < 1 || b_hs > n_s {
                    return Err(Error::config(format!(
                        "hsl: b_hs must satisfy 1 <= b_hs <= n_s (got b_hs = {b_hs}, n_s = {n_s})"
                    )));
                }
                if b_hh < 1 || b_hh > n_h - 1 {
                    return Err(Error::config(format!(
                        "hsl: b_hh must satisfy 1 <= b_hh <= n_h - 1 (got b_hh = {b_hh}, n_h = {n_h})"
                    )));
                }
                if b_sh < 1 || b_sh > n_h {
                    return Err(Error::config(format!(
                        "hsl: b_sh must satisfy 1 <= b_sh <= n_h (got b_sh = {b_sh}, n_h = {n_h})"
                    )));
                }
            }
            TopologyConfig::ElLocal { n_s, k } | TopologyConfig::ElOracle { n_s, k } => {
                if k < 1 || k > n_s - 1 {
                    return Err(Error::config(format!(
                        "{}: k must satisfy 1 <= k <= n_s - 1 (got k = {k}, n_s = {n_s})",
                        self.kind_str()
                    )));
                }
            }
            TopologyConfig::ErdosRenyi { p, .. } => {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(Error::config(format!(
                        "erdos_renyi: p must lie in [0, 1] (got {p})"
                    )));
                }
            }
            TopologyConfig::Torus { n_s } => {
                let m = (n_s as f64).sqrt().round() as usize;
                if n_s == 0 || m * m != n_s {
                    return Err(Error::config(format!(
                        "torus: n_s must be a perfect square (got {n_s})"
                    )));
                }
            }
            TopologyConfig::FedavgStar { n_s } => {
                if n_s == 0 {
                    return Err(Error::config("fedavg_star: n_s must be >= 1".to_string()));
                }
            }
        }
        Ok(())
    }

    /// Directed messages per round. Hub-and-spoke counts all three stages;
    /// the star counts both legs of its up/down exchange; Erdős–Rényi
    /// reports the rounded expectation.
    pub fn total_edges(&self) -> u64 {
        match *self {
            TopologyConfig::Hsl {
                n_s,
                n_h,
                b_hs,
                b_hh,
                b_sh,
            } => (n_h * b_hs + n_h * b_hh + n_s * b_sh) as u64,
            TopologyConfig::ElLocal { n_s, k } | TopologyConfig::ElOracle { n_s, k } => {
                (n_s * k) as u64
            }
            TopologyConfig::ErdosRenyi { n_s, p } => {
                (p * (n_s as f64) * ((n_s - 1) as f64)).round() as u64
            }
            TopologyConfig::Torus { n_s } => (4 * n_s) as u64,
            TopologyConfig::FedavgStar { n_s } => (2 * n_s) as u64,
        }
    }
}

/// Dense row-stochastic matrix. Construction checks the invariant: entries
/// finite and nonnegative, each row summing to 1 within [`ROW_SUM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    data: Array2<f64>,
}

impl MixingMatrix {
    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        for (i, row) in data.outer_iter().enumerate() {
            let mut sum = 0.0;
            for &v in row.iter() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::dimension(format!(
                        "mixing matrix entry at row {i} is {v}; entries must be finite and >= 0"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::dimension(format!(
                    "mixing matrix row {i} sums to {sum:.17e}, expected 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        Ok(MixingMatrix { data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Applies the matrix to stacked models: returns `W * X`.
    pub fn mix(&self, x: &ModelMatrix) -> Result<ModelMatrix> {
        if self.cols() != x.n() {
            return Err(Error::dimension(format!(
                "cannot mix: matrix is {}x{} but model matrix has {} rows",
                self.rows(),
                self.cols(),
                x.n()
            )));
        }
        Ok(ModelMatrix::from_array(self.data.dot(x.as_array())))
    }

    /// Matrix product `self * rhs`, revalidated as row-stochastic.
    pub fn compose(&self, rhs: &MixingMatrix) -> Result<MixingMatrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::dimension(format!(
                "cannot compose {}x{} with {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        MixingMatrix::from_array(self.data.dot(&rhs.data))
    }
}

/// Effective one-round spoke-to-spoke matrix `W_sh * W_hh * W_hs`.
pub fn compose_effective(
    pull: &MixingMatrix,
    gossip: &MixingMatrix,
    push: &MixingMatrix,
) -> Result<MixingMatrix> {
    if gossip.rows() != gossip.cols() {
        return Err(Error::dimension(format!(
            "gossip matrix must be square, got {}x{}",
            gossip.rows(),
            gossip.cols()
        )));
    }
    if pull.cols() != gossip.rows() || gossip.cols() != push.rows() {
        return Err(Error::dimension(format!(
            "stage shapes do not chain: pull {}x{}, gossip {}x{}, push {}x{}",
            pull.rows(),
            pull.cols(),
            gossip.rows(),
            gossip.cols(),
            push.rows(),
            push.cols()
        )));
    }
    pull.compose(gossip)?.compose(push)
}

/// `amount` distinct indices drawn uniformly from `0..n`.
fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, amount: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, amount).into_vec()
}

/// `amount` distinct indices from `0..n` excluding `skip`.
fn sample_distinct_excluding(rng: &mut ChaCha8Rng, n: usize, amount: usize, skip: usize) -> Vec<usize> {
    sample_distinct(rng, n - 1, amount)
        .into_iter()
        .map(|j| if j >= skip { j + 1 } else { j })
        .collect()
}

/// Push stage: row per hub, `b_hs` spoke columns at weight `1/b_hs`.
pub fn sample_push_matrix(
    n_s: usize,
    n_h: usize,
    b_hs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MixingMatrix> {
    TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh: 1, b_sh: 1 }.validate()?;
    let w = 1.0 / b_hs as f64;
    let mut m = Array2::zeros((n_h, n_s));
    for i in 0..n_h {
        for j in sample_distinct(rng, n_s, b_hs) {
            m[[i, j]] = w;
        }
    }
    MixingMatrix::from_array(m)
}

/// Pull stage: row per spoke, `b_sh` hub columns at weight `1/b_sh`.
pub fn sample_pull_matrix(
    n_s: usize,
    n_h: usize,
    b_sh: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MixingMatrix> {
    TopologyConfig::Hsl { n_s, n_h, b_hs: 1, b_hh: 1, b_sh }.validate()?;
    let w = 1.0 / b_sh as f64;
    let mut m = Array2::zeros((n_s, n_h));
    for i in 0..n_s {
        for j in sample_distinct(rng, n_h, b_sh) {
            m[[i, j]] = w;
        }
    }
    MixingMatrix::from_array(m)
}

/// Gossip stage over `n` nodes: every sender picks `b` distinct receivers
/// other than itself; receiver `i` averages itself with its `a_i` arrivals
/// at weight `1/(a_i + 1)`.
pub fn sample_gossip_matrix(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Result<MixingMatrix> {
    if n < 2 || b < 1 || b > n - 1 {
        return Err(Error::config(format!(
            "gossip: need n >= 2 and 1 <= b <= n - 1 (got n = {n}, b = {b})"
        )));
    }
    let mut senders: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        for t in sample_distinct_excluding(rng, n, b, s) {
            senders[t].push(s);
        }
    }
    let mut m = Array2::zeros((n, n));
    for (i, arrived) in senders.iter().enumerate() {
        let w = 1.0 / (arrived.len() + 1) as f64;
        m[[i, i]] = w;
        for &s in arrived {
            m[[i, s]] = w;
        }
    }
    MixingMatrix::from_array(m)
}

/// Superposes `k` uniform self-loop-free, mutually edge-disjoint
/// permutations, giving in- and out-degree exactly `k`. Retries are capped
/// at `100 * k` rejected permutations.
///
/// The chance that a fresh permutation avoids the edges already placed
/// falls roughly like e^-j once j permutations are down, independent of
/// `n`, so densities much past k = 4 exhaust the budget and surface the
/// sampling error instead of stalling.
fn sample_oracle_regular(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<MixingMatrix> {
    let mut edges = vec![false; n * n];
    let mut senders: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut perm: Vec<usize> = (0..n).collect();
    let mut retries = 0usize;
    let budget = 100 * k;
    let mut accepted = 0usize;
    while accepted < k {
        perm.shuffle(rng);
        let ok = perm
            .iter()
            .enumerate()
            .all(|(src, &dst)| src != dst && !edges[src * n + dst]);
        if ok {
            for (src, &dst) in perm.iter().enumerate() {
                edges[src * n + dst] = true;
                senders[dst].push(src);
            }
            accepted += 1;
        } else {
            retries += 1;
            if retries > budget {
                return Err(Error::sampling(format!(
                    "el_oracle: exceeded {budget} permutation retries for n = {n}, k = {k}"
                )));
            }
        }
    }
    let w = 1.0 / (k + 1) as f64;
    let mut m = Array2::zeros((n, n));
    for (i, arrived) in senders.iter().enumerate() {
        m[[i, i]] = w;
        for &s in arrived {
            m[[i, s]] = w;
        }
    }
    MixingMatrix::from_array(m)
}

fn sample_erdos_renyi(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<MixingMatrix> {
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        let mut arrived: Vec<usize> = Vec::new();
        for j in 0..n {
            if j != i && rng.gen::<f64>() < p {
                arrived.push(j);
            }
        }
        let w = 1.0 / (arrived.len() + 1) as f64;
        m[[i, i]] = w;
        for s in arrived {
            m[[i, s]] = w;
        }
    }
    MixingMatrix::from_array(m)
}

fn torus_matrix(n_s: usize) -> Result<MixingMatrix> {
    let m = (n_s as f64).sqrt().round() as usize;
    let mut w = Array2::zeros((n_s, n_s));
    let idx = |r: usize, c: usize| (r % m) * m + (c % m);
    for r in 0..m {
        for c in 0..m {
            let i = idx(r, c);
            for j in [
                i,
                idx(r + 1, c),
                idx(r + m - 1, c),
                idx(r, c + 1),
                idx(r, c + m - 1),
            ] {
                w[[i, j]] += 0.2;
            }
        }
    }
    MixingMatrix::from_array(w)
}

/// One round's mixing matrix for a flat (non-hub) topology.
pub fn sample_baseline(cfg: &TopologyConfig, rng: &mut ChaCha8Rng) -> Result<MixingMatrix> {
    cfg.validate()?;
    match *cfg {
        TopologyConfig::Hsl { .. } => Err(Error::config(
            "sample_baseline requires a flat topology; use sample_round_matrix for hsl",
        )),
        TopologyConfig::ElLocal { n_s, k } => sample_gossip_matrix(n_s, k, rng),
        TopologyConfig::ElOracle { n_s, k } => sample_oracle_regular(n_s, k, rng),
        TopologyConfig::ErdosRenyi { n_s, p } => sample_erdos_renyi(n_s, p, rng),
        TopologyConfig::Torus { n_s } => torus_matrix(n_s),
        TopologyConfig::FedavgStar { n_s } => {
            MixingMatrix::from_array(Array2::from_elem((n_s, n_s), 1.0 / n_s as f64))
        }
    }
}

/// The three freshly sampled stage matrices of one hub-and-spoke round.
pub struct HslRound {
    pub push: MixingMatrix,
    pub gossip: MixingMatrix,
    pub pull: MixingMatrix,
}

/// Samples one round's stages; each stage consumes its own stream.
pub fn sample_hsl_round(
    cfg: &TopologyConfig,
    push_rng: &mut ChaCha8Rng,
    gossip_rng: &mut ChaCha8Rng,
    pull_rng: &mut ChaCha8Rng,
) -> Result<HslRound> {
    match *cfg {
        TopologyConfig::Hsl {
            n_s,
            n_h,
            b_hs,
            b_hh,
            b_sh,
        } => {
            cfg.validate()?;
            Ok(HslRound {
                push: sample_push_matrix(n_s, n_h, b_hs, push_rng)?,
                gossip: sample_gossip_matrix(n_h, b_hh, gossip_rng)?,
                pull: sample_pull_matrix(n_s, n_h, b_sh, pull_rng)?,
            })
        }
        _ => Err(Error::config("sample_hsl_round requires kind = hsl")),
    }
}

/// One round's effective spoke-to-spoke matrix for any topology. Hub-and-
/// spoke rounds draw push, gossip, and pull in that order from the one
/// stream, then compose.
pub fn sample_round_matrix(cfg: &TopologyConfig, rng: &mut ChaCha8Rng) -> Result<MixingMatrix> {
    match *cfg {
        TopologyConfig::Hsl {
            n_s,
            n_h,
            b_hs,
            b_hh,
            b_sh,
        } => {
            cfg.validate()?;
            let push = sample_push_matrix(n_s, n_h, b_hs, rng)?;
            let gossip = sample_gossip_matrix(n_h, b_hh, rng)?;
            let pull = sample_pull_matrix(n_s, n_h, b_sh, rng)?;
            compose_effective(&pull, &gossip, &push)
        }
        _ => sample_baseline(cfg, rng),
    }
}
