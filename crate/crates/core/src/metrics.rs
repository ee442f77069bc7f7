//! Consensus metrics over stacked node models.
//!
//! The central quantity is the consensus distance
//! `CD(X) = (1/n) * sum_i ||x_i - mean(X)||^2`, the mean squared distance of
//! node models from their average. One mixing step contracts it in
//! expectation; the per-round ratio `CD_post / CD_pre` is what the
//! contraction-factor bounds are checked against.
//!
//! Accumulations run in a fixed index order with compensated (Kahan)
//! summation so results are reproducible and survive adversarial magnitude
//! spreads.

use ndarray::{Array1, Array2, ArrayView1};

/// Stacked models: one row per node, one column per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrix {
    data: Array2<f64>,
}

impl ModelMatrix {
    pub fn from_array(data: Array2<f64>) -> Self {
        ModelMatrix { data }
    }

    /// `n` copies of one row.
    pub fn replicate(row: &Array1<f64>, n: usize) -> Self {
        let mut data = Array2::zeros((n, row.len()));
        for mut r in data.outer_iter_mut() {
            r.assign(row);
        }
        ModelMatrix { data }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        ModelMatrix { data: Array2::zeros((n, dim)) }
    }

    /// Number of nodes (rows).
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Model dimension (columns).
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Coordinatewise mean across nodes.
    pub fn mean_row(&self) -> Array1<f64> {
        let n = self.n() as f64;
        let mut out = Array1::zeros(self.dim());
        for j in 0..self.dim() {
            out[j] = kahan_sum(self.data.column(j).iter().copied()) / n;
        }
        out
    }
}

/// Compensated sequential sum in iteration order.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Squared Euclidean distance between two rows.
pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    kahan_sum(a.iter().zip(b.iter()).map(|(x, y)| {
        let d = x - y;
        d * d
    }))
}

/// Mean squared distance of node models from their average:
/// `(1/n) * sum_i ||x_i - mean||^2`. Zero iff all rows are equal.
pub fn consensus_distance(x: &ModelMatrix) -> f64 {
    let mean = x.mean_row();
    let n = x.n() as f64;
    kahan_sum((0..x.n()).map(|i| sq_dist(x.row(i), mean.view()))) / n
}

/// Mean squared distance of rows from a fixed reference point. Used for the
/// stage identities, which measure post-stage spread around the *pre-stage*
/// average.
pub fn dispersion_about(x: &ModelMatrix, point: ArrayView1<'_, f64>) -> f64 {
    let n = x.n() as f64;
    kahan_sum((0..x.n()).map(|i| sq_dist(x.row(i), point))) / n
}

/// Per-round contraction ratio `cd_post / cd_pre`. `None` means the models
/// entered the round already at exact consensus, where the ratio is
/// undefined; callers serialize that as an empty field, never as NaN.
pub fn consensus_distance_ratio(cd_pre: f64, cd_post: f64) -> Option<f64> {
    if cd_pre == 0.0 {
        None
    } else {
        Some(cd_post / cd_pre)
    }
}

/// Absolute gap between the two sides of the variance identity
/// `(1/n) * sum_i ||x_i - mean||^2 = (1/(2 n^2)) * sum_{i,j} ||x_i - x_j||^2`.
/// The right side is computed by the brute-force double loop, so this is an
/// independent check on [`consensus_distance`].
pub fn variance_identity_gap(x: &ModelMatrix) -> f64 {
    let n = x.n();
    let lhs = consensus_distance(x);
    let pair_sum = kahan_sum((0..n).flat_map(|i| {
        let x_ref = &x;
        (0..n).map(move |j| sq_dist(x_ref.row(i), x_ref.row(j)))
    }));
    let rhs = pair_sum / (2.0 * (n as f64) * (n as f64));
    (lhs - rhs).abs()
}

/// One training round's record. `cdr` is `None` at exact pre-round
/// consensus; loss, gradient norm, and accuracy are `None` on rounds the
/// evaluation cadence skipped (accuracy also when the objective has no test
/// set).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub cd_pre: f64,
    pub cd_post: f64,
    pub cdr: Option<f64>,
    pub mean_loss: Option<f64>,
    pub mean_grad_norm_sq: Option<f64>,
    pub accuracy: Option<f64>,
}
