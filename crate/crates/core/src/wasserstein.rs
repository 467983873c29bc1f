//! Wasserstein distances between empirical measures.
//!
//! For `p >= 1` the reported value is `(inf E|U - V|^p)^{1/p}`; for `p < 1`
//! it is the raw infimum `inf E|U - V|^p` without a root. Exact values come
//! from the quantile coupling in one dimension (`p >= 1`) or from an exact
//! assignment solver on equal-size uniform clouds.

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy_noise::pairwise_sum;
use crate::rng::{stream, Purpose};
use crate::sde_sim::{mean_and_stderr, norm, TrajectoryBatch};

/// Default largest assignment size.
pub const DEFAULT_CAP: usize = 4096;

/// A weighted point cloud in `R^dim`, points row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    pub fn uniform(points: Vec<f64>, dim: usize) -> Result<Self> {
        check_points(&points, dim)?;
        let n = points.len() / dim;
        Ok(Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
            uniform: true,
        })
    }

    pub fn weighted(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        check_points(&points, dim)?;
        let n = points.len() / dim;
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        let uniform = weights.iter().all(|w| (w * n as f64 - 1.0).abs() <= 1e-12);
        Ok(Self {
            dim,
            points,
            weights,
            uniform,
        })
    }

    pub fn from_batch(batch: &TrajectoryBatch) -> Result<Self> {
        Self::uniform(batch.states.clone(), batch.dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Every point moved by `u`.
    pub fn shifted(&self, u: &[f64]) -> Self {
        let mut points = self.points.clone();
        for x in points.chunks_exact_mut(self.dim) {
            for (a, b) in x.iter_mut().zip(u) {
                *a += b;
            }
        }
        Self {
            points,
            ..self.clone()
        }
    }

    /// Every point multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            points: self.points.iter().map(|x| c * x).collect(),
            ..self.clone()
        }
    }

    /// Uniform measure on the points `[lo, hi)`.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        Self::uniform(self.points[lo * self.dim..hi * self.dim].to_vec(), self.dim)
    }

    /// `sum_i w_i |x_i|^p`.
    pub fn moment(&self, p: f64) -> f64 {
        let terms: Vec<f64> = self
            .points
            .chunks_exact(self.dim)
            .zip(&self.weights)
            .map(|(x, w)| w * norm(x).powf(p))
            .collect();
        pairwise_sum(&terms)
    }

    /// Root mean square distance to the weighted mean.
    pub fn spread(&self) -> f64 {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for (x, w) in self.points.chunks_exact(d).zip(&self.weights) {
            for c in 0..d {
                mean[c] += w * x[c];
            }
        }
        let terms: Vec<f64> = self
            .points
            .chunks_exact(d)
            .zip(&self.weights)
            .map(|(x, w)| w * x.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
            .collect();
        pairwise_sum(&terms).sqrt()
    }

    /// Projection onto a direction, as a one-dimensional measure.
    pub fn project(&self, dir: &[f64]) -> Self {
        let points = self
            .points
            .chunks_exact(self.dim)
            .map(|x| x.iter().zip(dir).map(|(a, b)| a * b).sum())
            .collect();
        Self {
            dim: 1,
            points,
            weights: self.weights.clone(),
            uniform: self.uniform,
        }
    }
}

fn check_points(points: &[f64], dim: usize) -> Result<()> {
    if dim == 0 || points.is_empty() || points.len() % dim != 0 {
        return Err(Error::InvalidArgument(
            "a measure needs at least one point and a positive dimension".into(),
        ));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("points must be finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact1d,
    Assignment,
    Sliced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WpResult {
    pub value: f64,
    pub p: f64,
    pub method: Method,
    /// `min(1, 1/p)`.
    pub outer_exponent: f64,
    /// The transport cost `E|U - V|^p` of the coupling found.
    pub cost: f64,
    /// Monte Carlo error of the estimator, when it averages several parts.
    pub stderr: Option<f64>,
    /// False when the value is only an upper bound (monotone coupling, `p < 1`).
    pub exact: bool,
}

pub fn outer_exponent(p: f64) -> f64 {
    if p >= 1.0 {
        1.0 / p
    } else {
        1.0
    }
}

fn finish(cost: f64, p: f64, method: Method, exact: bool) -> WpResult {
    let cost = cost.max(0.0);
    WpResult {
        value: cost.powf(outer_exponent(p)),
        p,
        method,
        outer_exponent: outer_exponent(p),
        cost,
        stderr: None,
        exact,
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p must be positive, got {p}")));
    }
    Ok(())
}

/// Quantile coupling on the line. Optimal for `p >= 1`; an upper bound for `p < 1`.
pub fn wp_exact_1d(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, p: f64) -> Result<WpResult> {
    check_p(p)?;
    for mu in [mu1, mu2] {
        if mu.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: mu.dim(),
            });
        }
    }
    let cost = if mu1.is_uniform() && mu2.is_uniform() && mu1.len() == mu2.len() {
        let mut a = mu1.points.clone();
        let mut b = mu2.points.clone();
        a.sort_unstable_by(f64::total_cmp);
        b.sort_unstable_by(f64::total_cmp);
        let terms: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(p)).collect();
        pairwise_sum(&terms) / a.len() as f64
    } else {
        let sorted = |mu: &EmpiricalMeasure| {
            let mut v: Vec<(f64, f64)> = mu.points.iter().copied().zip(mu.weights.iter().copied()).collect();
            v.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));
            v
        };
        let (a, b) = (sorted(mu1), sorted(mu2));
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (a[0].1, b[0].1);
        let mut terms = Vec::with_capacity(a.len() + b.len());
        while i < a.len() && j < b.len() {
            let m = ra.min(rb);
            terms.push(m * (a[i].0 - b[j].0).abs().powf(p));
            ra -= m;
            rb -= m;
            if ra <= 0.0 {
                i += 1;
                if i < a.len() {
                    ra = a[i].1;
                }
            }
            if rb <= 0.0 {
                j += 1;
                if j < b.len() {
                    rb = b[j].1;
                }
            }
        }
        pairwise_sum(&terms)
    };
    Ok(finish(cost, p, Method::Exact1d, p >= 1.0))
}

fn check_assignment(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, p: f64, cap: usize) -> Result<()> {
    check_p(p)?;
    if mu1.dim() != mu2.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu1.dim(),
            found: mu2.dim(),
        });
    }
    if mu1.len() != mu2.len() || !mu1.is_uniform() || !mu2.is_uniform() {
        return Err(Error::UnequalWeights);
    }
    if mu1.len() > cap {
        return Err(Error::SizeCapExceeded { n: mu1.len(), cap });
    }
    Ok(())
}

/// Cost matrix `|x_i - y_j|^p`, row-major.
pub fn cost_matrix(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, p: f64) -> Vec<f64> {
    let n = mu1.len();
    let d = mu1.dim();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let x = mu1.point(i);
        let row = &mut c[i * n..(i + 1) * n];
        for (j, r) in row.iter_mut().enumerate() {
            let y = &mu2.points[j * d..(j + 1) * d];
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            *r = if p == 2.0 {
                d2
            } else if p == 1.0 {
                d2.sqrt()
            } else {
                d2.powf(0.5 * p)
            };
        }
    }
    c
}

// Forward auction with epsilon scaling. Returns column potentials (the
// negated prices) and an assignment satisfying eps-complementary slackness
// for a small final eps, which is then a warm start for exact augmentation.
fn auction_prices(n: usize, cost: &[f64]) -> (Vec<f64>, Vec<usize>, f64) {
    const NONE: usize = usize::MAX;
    let (lo, hi) = cost
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = hi - lo;
    if !(range > 0.0) {
        return (vec![0.0; n], (0..n).collect(), 0.0);
    }
    let eps_final = range * 1e-8 / n as f64;
    let mut eps = range / 8.0;
    let mut price = vec![0.0f64; n];
    let mut owner = vec![NONE; n];
    let mut assigned = vec![NONE; n];
    let mut queue: Vec<usize> = Vec::with_capacity(n);
    loop {
        owner.iter_mut().for_each(|o| *o = NONE);
        assigned.iter_mut().for_each(|a| *a = NONE);
        queue.clear();
        queue.extend((0..n).rev());
        while let Some(i) = queue.pop() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut b1, mut b2, mut j1) = (f64::INFINITY, f64::INFINITY, 0);
            for (j, (cij, pj)) in row.iter().zip(&price).enumerate() {
                let w = cij + pj;
                if w < b2 {
                    if w < b1 {
                        b2 = b1;
                        b1 = w;
                        j1 = j;
                    } else {
                        b2 = w;
                    }
                }
            }
            let gap = if b2.is_finite() { b2 - b1 } else { 0.0 };
            price[j1] += gap + eps;
            let prev = owner[j1];
            owner[j1] = i;
            assigned[i] = j1;
            if prev != NONE {
                assigned[prev] = NONE;
                queue.push(prev);
            }
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 6.0).max(eps_final);
    }
    let v = price.iter().map(|p| -p).collect();
    (v, assigned, range * 1e-12)
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix. Returns
/// `col_of_row`.
///
/// An epsilon-scaling auction supplies near-optimal column prices; pairs
/// that are exactly tight under them are kept and the remaining rows are
/// matched by shortest augmenting paths. Column prices `v` are explicit;
/// row prices are implicit, and every assigned row keeps its column at the
/// minimum of `c_ij - v_j`. The result is optimal up to floating-point ties.
pub fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    if n == 0 {
        return Vec::new();
    }
    let c = |i: usize, j: usize| cost[i * n + j];
    let (mut v, mut rowsol, tie) = auction_prices(n, cost);
    let mut colsol = vec![NONE; n];

    // Keep only pairs that are exactly tight under the auction prices.
    let mut free = Vec::new();
    for i in 0..n {
        let j0 = rowsol[i];
        let own = c(i, j0) - v[j0];
        let row = &cost[i * n..(i + 1) * n];
        let tight = row.iter().zip(&v).all(|(cij, vj)| cij - vj >= own);
        if tight && colsol[j0] == NONE {
            colsol[j0] = i;
        } else {
            rowsol[i] = NONE;
            free.push(i);
        }
    }

    // Shortest augmenting paths (Dijkstra over columns) for the rest.
    let mut dist = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut done = vec![false; n];
    let mut scanned: Vec<usize> = Vec::with_capacity(n);
    for &start in &free {
        for j in 0..n {
            dist[j] = c(start, j) - v[j];
            pred[j] = start;
            done[j] = false;
        }
        scanned.clear();
        let mut min;
        let sink = loop {
            let mut jmin = NONE;
            let mut jfree = NONE;
            min = f64::INFINITY;
            let mut fmin = f64::INFINITY;
            for j in 0..n {
                if !done[j] {
                    let dj = dist[j];
                    if dj < min {
                        min = dj;
                        jmin = j;
                    }
                    if dj < fmin && colsol[j] == NONE {
                        fmin = dj;
                        jfree = j;
                    }
                }
            }
            // Degenerate costs (1d, p = 1) produce wide plateaus of equal
            // distances; ending on a free column inside the plateau keeps
            // the paths short at a cost of at most `tie` per augmentation.
            if jfree != NONE && fmin <= min + tie {
                jmin = jfree;
                min = fmin;
            }
            done[jmin] = true;
            let i = colsol[jmin];
            if i == NONE {
                break jmin;
            }
            scanned.push(jmin);
            // Row i sits at its minimum reduced cost in column jmin.
            let h = c(i, jmin) - v[jmin] - min;
            let row = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                let nd = row[j] - v[j] - h;
                if nd < dist[j] && !done[j] {
                    dist[j] = nd;
                    pred[j] = i;
                }
            }
        };
        for &j in &scanned {
            v[j] += dist[j] - min;
        }
        let mut j = sink;
        loop {
            let i = pred[j];
            colsol[j] = i;
            let next = rowsol[i];
            rowsol[i] = j;
            if i == start {
                break;
            }
            j = next;
        }
    }
    rowsol
}

/// Exact `W_p` between two uniform clouds of equal size.
pub fn wp_assignment(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, p: f64) -> Result<WpResult> {
    wp_assignment_with_cap(mu1, mu2, p, DEFAULT_CAP)
}

pub fn wp_assignment_with_cap(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    p: f64,
    cap: usize,
) -> Result<WpResult> {
    check_assignment(mu1, mu2, p, cap)?;
    let n = mu1.len();
    let c = cost_matrix(mu1, mu2, p);
    let sigma = solve_assignment(n, &c);
    let terms: Vec<f64> = (0..n).map(|i| c[i * n + sigma[i]]).collect();
    Ok(finish(pairwise_sum(&terms) / n as f64, p, Method::Assignment, true))
}

/// Exact assignment after subsampling the larger cloud (without replacement)
/// to the size of the smaller one, averaged over `reps` draws. Weighted inputs
/// are first resampled with replacement according to their weights.
pub fn wp_assignment_bootstrap(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    p: f64,
    reps: usize,
    cap: usize,
    seed: u64,
) -> Result<WpResult> {
    if mu1.len() == mu2.len() && mu1.is_uniform() && mu2.is_uniform() && mu1.len() <= cap {
        return wp_assignment_with_cap(mu1, mu2, p, cap);
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let n = mu1.len().min(mu2.len()).min(cap);
    let mut values = Vec::with_capacity(reps);
    let mut costs = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = stream(seed, Purpose::Resample, r as u64);
        let a = subsample(mu1, n, &mut rng)?;
        let b = subsample(mu2, n, &mut rng)?;
        let res = wp_assignment_with_cap(&a, &b, p, cap)?;
        values.push(res.value);
        costs.push(res.cost);
    }
    let (value, stderr) = mean_and_stderr(&values);
    Ok(WpResult {
        value,
        p,
        method: Method::Assignment,
        outer_exponent: outer_exponent(p),
        cost: mean_and_stderr(&costs).0,
        stderr: Some(stderr),
        exact: false,
    })
}

fn subsample<R: rand::Rng>(mu: &EmpiricalMeasure, n: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
    let d = mu.dim();
    let mut pts = Vec::with_capacity(n * d);
    if mu.is_uniform() {
        let mut idx = index::sample(rng, mu.len(), n).into_vec();
        idx.sort_unstable();
        for i in idx {
            pts.extend_from_slice(mu.point(i));
        }
    } else {
        let dist = rand_distr::weighted::WeightedIndex::new(mu.weights())
            .map_err(|e| Error::InvalidWeights(e.to_string()))?;
        for _ in 0..n {
            pts.extend_from_slice(mu.point(dist.sample(rng)));
        }
    }
    EmpiricalMeasure::uniform(pts, d)
}

/// Mean of per-direction one-dimensional `W_p` over random unit directions.
/// A lower bound on `W_p`, used for trends only.
pub fn wp_sliced(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    p: f64,
    n_directions: usize,
    seed: u64,
) -> Result<WpResult> {
    if p < 1.0 {
        return Err(Error::InvalidArgument("sliced estimator requires p >= 1".into()));
    }
    if n_directions == 0 {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    if mu1.dim() != mu2.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu1.dim(),
            found: mu2.dim(),
        });
    }
    let d = mu1.dim();
    let mut rng = stream(seed, Purpose::Slicing, 0);
    let mut values = Vec::with_capacity(n_directions);
    for _ in 0..n_directions {
        let dir = loop {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&g);
            if n > 0.0 {
                break g.into_iter().map(|x| x / n).collect::<Vec<_>>();
            }
        };
        values.push(wp_exact_1d(&mu1.project(&dir), &mu2.project(&dir), p)?.value);
    }
    let (value, stderr) = mean_and_stderr(&values);
    Ok(WpResult {
        value,
        p,
        method: Method::Sliced,
        outer_exponent: outer_exponent(p),
        cost: value.powf(p),
        stderr: Some(stderr),
        exact: false,
    })
}

/// Splits paired clouds into `batches` consecutive blocks of equal size,
/// solves each block exactly and reports the mean and its standard error.
/// Index `j` of both clouds always lands in the same block.
pub fn wp_batched(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    p: f64,
    batches: usize,
    cap: usize,
) -> Result<WpResult> {
    if mu1.len() != mu2.len() {
        return Err(Error::UnequalWeights);
    }
    if batches == 0 || batches > mu1.len() {
        return Err(Error::InvalidArgument("batch count must be in 1..=n".into()));
    }
    let size = mu1.len() / batches;
    let mut values = Vec::with_capacity(batches);
    for b in 0..batches {
        let (lo, hi) = (b * size, (b + 1) * size);
        values.push(wp_assignment_with_cap(&mu1.slice(lo, hi)?, &mu2.slice(lo, hi)?, p, cap)?.value);
    }
    let (value, stderr) = mean_and_stderr(&values);
    Ok(WpResult {
        value,
        p,
        method: Method::Assignment,
        outer_exponent: outer_exponent(p),
        cost: if p >= 1.0 { value.powf(p) } else { value },
        stderr: Some(stderr),
        exact: batches == 1,
    })
}

/// `6 n^{-1/2}` times the spread of `mu`.
pub fn sampling_tol(mu: &EmpiricalMeasure) -> f64 {
    6.0 * mu.spread() / (mu.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub lhs: f64,
    /// `|u|` for `p >= 1`, `|u|^p` for `p < 1`.
    pub rhs: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `W_p(mu + u, mu)` by exact assignment against `|u|` (`p >= 1`) or the
/// band `[max(|u|^p - 2 E|U|^p, 0), |u|^p]` (`p < 1`).
pub fn verify_shift_linearity(mu: &EmpiricalMeasure, u: &[f64], p: f64, tol: f64) -> Result<ShiftReport> {
    if u.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: u.len(),
        });
    }
    let lhs = wp_assignment(&mu.shifted(u), mu, p)?.value;
    let un = norm(u);
    Ok(if p >= 1.0 {
        ShiftReport {
            lhs,
            rhs: un,
            lower: un,
            upper: un,
            tol,
            pass: (lhs - un).abs() <= tol,
        }
    } else {
        let upper = un.powf(p);
        let lower = (upper - 2.0 * mu.moment(p)).max(0.0);
        ShiftReport {
            lhs,
            rhs: upper,
            lower,
            upper,
            tol,
            pass: lhs >= lower - tol && lhs <= upper + tol,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub translated: f64,
    pub reduced: f64,
    pub translation_pass: bool,
    pub base: f64,
    pub scaled: f64,
    /// `|c|` for `p >= 1`, `|c|^p` for `p < 1`.
    pub factor: f64,
    pub homogeneity_pass: bool,
}

/// Checks `W(u1 + U1, u2 + U2) = W(u1 - u2 + U1, U2)` and
/// `W(c U1, c U2) = factor * W(U1, U2)` with exact assignment.
pub fn verify_translation_homogeneity(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    u1: &[f64],
    u2: &[f64],
    c: f64,
    p: f64,
) -> Result<HomogeneityReport> {
    let rel = 1e-9;
    let translated = wp_assignment(&mu1.shifted(u1), &mu2.shifted(u2), p)?.value;
    let diff: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| a - b).collect();
    let reduced = wp_assignment(&mu1.shifted(&diff), mu2, p)?.value;
    let base = wp_assignment(mu1, mu2, p)?.value;
    let scaled = wp_assignment(&mu1.scaled(c), &mu2.scaled(c), p)?.value;
    let factor = if p >= 1.0 { c.abs() } else { c.abs().powf(p) };
    Ok(HomogeneityReport {
        translated,
        reduced,
        translation_pass: (translated - reduced).abs() <= rel * translated.max(reduced).max(1e-300),
        base,
        scaled,
        factor,
        homogeneity_pass: (scaled - factor * base).abs() <= rel * scaled.max(factor * base).max(1e-300),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn cloud(n: usize, d: usize, seed: u64) -> EmpiricalMeasure {
        let mut rng = stream(seed, Purpose::Sampler, 0);
        let pts = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        EmpiricalMeasure::uniform(pts, d).unwrap()
    }

    fn brute_force(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, p: f64) -> f64 {
        let n = mu1.len();
        let c = cost_matrix(mu1, mu2, p);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |s| {
            let cost: f64 = s.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
            best = best.min(cost);
        });
        (best / n as f64).powf(outer_exponent(p))
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn weights_validated() {
        assert!(EmpiricalMeasure::weighted(vec![0.0, 1.0], 1, vec![0.5, 0.4]).is_err());
        assert!(EmpiricalMeasure::weighted(vec![0.0, 1.0], 1, vec![1.5, -0.5]).is_err());
        assert!(EmpiricalMeasure::uniform(vec![], 1).is_err());
        assert!(EmpiricalMeasure::uniform(vec![f64::NAN], 1).is_err());
        let mu = EmpiricalMeasure::weighted(vec![0.0, 1.0], 1, vec![0.5, 0.5]).unwrap();
        assert!(mu.is_uniform());
    }

    #[test]
    fn point_masses() {
        let a = EmpiricalMeasure::uniform(vec![0.0], 1).unwrap();
        let b = EmpiricalMeasure::uniform(vec![3.0], 1).unwrap();
        assert_eq!(wp_exact_1d(&a, &b, 2.0).unwrap().value, 3.0);
        assert_eq!(wp_exact_1d(&a, &a, 2.0).unwrap().value, 0.0);
        assert_eq!(wp_exact_1d(&a, &b, 0.5).unwrap().value, 3f64.sqrt());
    }

    #[test]
    fn weighted_quantile_coupling() {
        // Mass 1/4 at 0 and 3/4 at 1 versus uniform on {0, 1}: 1/4 moves by 1.
        let a = EmpiricalMeasure::weighted(vec![0.0, 1.0], 1, vec![0.25, 0.75]).unwrap();
        let b = EmpiricalMeasure::uniform(vec![0.0, 1.0], 1).unwrap();
        let r = wp_exact_1d(&a, &b, 2.0).unwrap();
        assert!((r.cost - 0.25).abs() < 1e-15);
        assert!((r.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_shift_1d() {
        let n = 100_000;
        let a = cloud(n, 1, 1);
        let b = cloud(n, 1, 2).shifted(&[1.0]);
        let r = wp_exact_1d(&a, &b, 2.0).unwrap();
        assert!((r.value - 1.0).abs() < 0.02, "{}", r.value);
    }

    #[test]
    fn assignment_examples() {
        let a = EmpiricalMeasure::uniform(vec![0.0, 0.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(wp_assignment(&a, &a, 1.5).unwrap().value, 0.0);
        let r = wp_assignment(&a, &a.shifted(&[0.0, 1.0]), 2.0).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
        let big = cloud(10, 1, 3);
        assert!(matches!(
            wp_assignment_with_cap(&big, &big, 2.0, 5),
            Err(Error::SizeCapExceeded { n: 10, cap: 5 })
        ));
        assert!(matches!(
            wp_assignment(&big, &cloud(9, 1, 4), 2.0),
            Err(Error::UnequalWeights)
        ));
    }

    #[test]
    fn assignment_matches_exact_1d() {
        let a = cloud(512, 1, 5);
        let b = cloud(512, 1, 6).scaled(1.7).shifted(&[0.4]);
        for p in [1.0, 1.5, 2.0] {
            let x = wp_assignment(&a, &b, p).unwrap().value;
            let y = wp_exact_1d(&a, &b, p).unwrap().value;
            assert!((x - y).abs() <= 1e-12 * y.max(1.0), "p {p}: {x} vs {y}");
        }
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = stream(100, Purpose::Sampler, 0);
        for k in 0..60 {
            let n = rng.random_range(1..=6);
            let d = rng.random_range(1..=3);
            let p = [0.5, 1.0, 2.0][k % 3];
            let a = cloud(n, d, 1000 + k as u64);
            let b = cloud(n, d, 2000 + k as u64);
            let x = wp_assignment(&a, &b, p).unwrap().value;
            let y = brute_force(&a, &b, p);
            assert!((x - y).abs() <= 1e-12 * y.max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn assignment_with_heavy_ties() {
        // Integer lattice points give many equal costs.
        let mut rng = stream(101, Purpose::Sampler, 0);
        for k in 0..40 {
            let n = rng.random_range(2..=7);
            let p = [0.5, 1.0, 2.0][k % 3];
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..3) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..3) as f64).collect();
            let a = EmpiricalMeasure::uniform(a, 1).unwrap();
            let b = EmpiricalMeasure::uniform(b, 1).unwrap();
            let x = wp_assignment(&a, &b, p).unwrap().value;
            let y = brute_force(&a, &b, p);
            assert!((x - y).abs() <= 1e-12 * y.max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn monotone_coupling_is_not_optimal_below_one() {
        // For p < 1 moving one point far beats shifting both.
        let a = EmpiricalMeasure::uniform(vec![0.0, 1.0], 1).unwrap();
        let b = EmpiricalMeasure::uniform(vec![1.0, 2.0], 1).unwrap();
        let mono = wp_exact_1d(&a, &b, 0.5).unwrap();
        let opt = wp_assignment(&a, &b, 0.5).unwrap();
        assert!(!mono.exact);
        assert!(opt.value < mono.value);
        assert!((opt.value - 0.5 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sliced_below_assignment() {
        for k in 0..50 {
            let a = cloud(12, 2, 300 + k);
            let b = cloud(12, 2, 400 + k).shifted(&[0.3, -0.2]);
            for p in [1.0, 2.0] {
                let s = wp_sliced(&a, &b, p, 20, k).unwrap().value;
                let e = wp_assignment(&a, &b, p).unwrap().value;
                assert!(s <= e + 1e-12, "{s} > {e}");
            }
        }
        let a = cloud(50, 3, 7);
        assert_eq!(wp_sliced(&a, &a, 2.0, 5, 1).unwrap().value, 0.0);
        assert!(wp_sliced(&a, &a, 0.5, 5, 1).is_err());
    }

    #[test]
    fn sliced_seeds_agree() {
        let a = cloud(400, 2, 8);
        let b = cloud(400, 2, 9).shifted(&[1.0, 0.0]);
        let r1 = wp_sliced(&a, &b, 2.0, 200, 1).unwrap();
        let r2 = wp_sliced(&a, &b, 2.0, 200, 2).unwrap();
        let se = (r1.stderr.unwrap().powi(2) + r2.stderr.unwrap().powi(2)).sqrt();
        assert!((r1.value - r2.value).abs() < 3.0 * se);
    }

    #[test]
    fn shift_linearity() {
        let mu = cloud(300, 2, 10);
        let tol = sampling_tol(&mu);
        let r = verify_shift_linearity(&mu, &[0.0, 0.0], 2.0, tol).unwrap();
        assert_eq!(r.lhs, 0.0);
        let r = verify_shift_linearity(&mu, &[3.0, 4.0], 2.0, tol).unwrap();
        assert!(r.pass && (r.lhs - 5.0).abs() < 1e-12);
        let wide = mu.scaled(50.0);
        let r = verify_shift_linearity(&wide, &[0.1, 0.0], 0.5, 0.0).unwrap();
        assert_eq!(r.lower, 0.0);
        assert!(r.pass && r.lhs <= 0.1f64.sqrt());
    }

    #[test]
    fn translation_and_homogeneity() {
        let a = cloud(40, 2, 11);
        let b = cloud(40, 2, 12);
        let r = verify_translation_homogeneity(&a, &b, &[1.0, 2.0], &[-0.5, 0.0], 1.0, 2.0).unwrap();
        assert!(r.translation_pass && r.homogeneity_pass);
        assert_eq!(r.scaled, r.base);
        let r = verify_translation_homogeneity(&a, &b, &[1.0, 2.0], &[0.0, 0.0], -2.0, 2.0).unwrap();
        assert!(r.homogeneity_pass && r.factor == 2.0);
        let r = verify_translation_homogeneity(&a, &b, &[0.0, 0.0], &[3.0, 1.0], 3.0, 0.5).unwrap();
        assert!(r.homogeneity_pass && (r.factor - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn no_root_below_one() {
        let a = cloud(30, 2, 13);
        let b = cloud(30, 2, 14);
        let base = wp_assignment(&a, &b, 0.5).unwrap().value;
        let doubled = wp_assignment(&a.scaled(2.0), &b.scaled(2.0), 0.5).unwrap().value;
        assert!((doubled / base - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn metric_axioms() {
        for k in 0..20 {
            let a = cloud(25, 2, 500 + k);
            let b = cloud(25, 2, 600 + k).shifted(&[0.5, 0.0]);
            let c = cloud(25, 2, 700 + k).scaled(1.5);
            for p in [1.0, 2.0] {
                let ab = wp_assignment(&a, &b, p).unwrap().value;
                let ba = wp_assignment(&b, &a, p).unwrap().value;
                let bc = wp_assignment(&b, &c, p).unwrap().value;
                let ac = wp_assignment(&a, &c, p).unwrap().value;
                assert!((ab - ba).abs() <= 1e-12 * ab);
                assert!(ac <= ab + bc + 1e-9);
            }
        }
    }

    #[test]
    fn bootstrap_unequal_counts() {
        let a = cloud(300, 1, 15);
        let b = cloud(200, 1, 16).shifted(&[2.0]);
        let r = wp_assignment_bootstrap(&a, &b, 2.0, 8, DEFAULT_CAP, 1).unwrap();
        assert!((r.value - 2.0).abs() < 0.3, "{}", r.value);
        assert!(r.stderr.unwrap() > 0.0);
        let w = EmpiricalMeasure::weighted(vec![0.0, 1.0], 1, vec![0.9, 0.1]).unwrap();
        let r = wp_assignment_bootstrap(&w, &w, 2.0, 4, DEFAULT_CAP, 2).unwrap();
        assert!(r.value.is_finite());
    }

    #[test]
    fn batched_estimator() {
        let a = cloud(800, 2, 17);
        let r = wp_batched(&a.shifted(&[1.0, 1.0]), &a, 2.0, 8, DEFAULT_CAP).unwrap();
        assert!((r.value - 2f64.sqrt()).abs() < 1e-12);
        assert!(wp_batched(&a, &cloud(10, 2, 1), 2.0, 2, DEFAULT_CAP).is_err());
    }

    #[test]
    fn empirical_convergence_trend() {
        let mut prev = f64::INFINITY;
        for n in [100, 1000, 10_000] {
            let a = cloud(n, 1, 18);
            let b = cloud(n, 1, 19);
            let w = wp_exact_1d(&a, &b, 2.0).unwrap().value;
            assert!(w < prev);
            prev = w;
            let gap = (a.moment(2.0) - b.moment(2.0)).abs();
            assert!(gap < 10.0 / (n as f64).sqrt());
        }
    }
}
