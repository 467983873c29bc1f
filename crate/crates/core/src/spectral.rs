//! Rate, Jordan order and rotation data of the linearized decay.
//!
//! For a matrix `A` with spectrum in the right half plane and a direction `w`,
//! `e^{-At} w = e^{-qt} t^{l-1} (sum_k e^{i theta_k t} v_k + o(1))`.
//! [`linear_cutoff_params`] reads `q`, `l`, the frequencies and the vectors off
//! the generalized eigenspaces of `A`; [`nonlinear_cutoff_params`] first runs
//! the nonlinear flow into a small ball and linearizes there.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::sde_sim::{hitting_time, norm};
use crate::vector_fields::{sample_ball, VectorFieldSpec};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    /// Eigenvalues with real part at or below this are rejected.
    pub stability_tol: f64,
    /// Eigenvalues closer than `cluster_tol * max(1, |lambda|_max)` are one
    /// cluster. Numerical eigenvalues of a `k x k` Jordan block spread by
    /// about `eps_mach^{1/k}`, so this is much wider than machine precision.
    pub cluster_tol: f64,
    /// Singular values below `rank_zero_tol * scale` count as zero.
    pub rank_zero_tol: f64,
    /// Singular values above `rank_nonzero_tol * scale` count as nonzero;
    /// anything in between is reported as ambiguous.
    pub rank_nonzero_tol: f64,
    /// Components of `w` below `projection_tol * |w|` are treated as absent.
    pub projection_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            stability_tol: 1e-10,
            cluster_tol: 1e-4,
            rank_zero_tol: 1e-9,
            rank_nonzero_tol: 1e-5,
            projection_tol: 1e-9,
        }
    }
}

/// Output of the extraction. `thetas[k]` goes with `vs[k]`; a zero frequency
/// comes first with a real vector, then conjugate pairs `(theta, -theta)` with
/// `theta > 0` in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffParams {
    pub q: f64,
    pub ell: usize,
    pub m: usize,
    pub thetas: Vec<f64>,
    pub vs: Vec<Vec<C64>>,
    /// Time spent by the nonlinear flow before linearizing (0 for linear input).
    pub tau: f64,
    /// Direction handed to the linear analysis.
    pub w: Vec<f64>,
    /// Radius of the linearization ball, when the flow was run.
    pub r0: Option<f64>,
    /// Analytic upper bound `ln(2|x|/R0)/delta` on `tau`.
    pub tau_bound: Option<f64>,
}

impl CutoffParams {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `sum_k e^{i theta_k t} v_k`, real by conjugate symmetry.
    pub fn rotating_sum(&self, t: f64) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (theta, v) in self.thetas.iter().zip(&self.vs) {
            let phase = C64::new(0.0, theta * t).exp();
            for i in 0..d {
                out[i] += (phase * v[i]).re;
            }
        }
        out
    }

    /// `sum_k |v_k|`.
    pub fn norm_bound(&self) -> f64 {
        self.vs.iter().map(|v| cnorm(v)).sum()
    }
}

fn cnorm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
struct Cluster {
    lambda: C64,
    size: usize,
}

fn cluster_eigenvalues(eigs: &[C64], tol: f64) -> Vec<Cluster> {
    let n = eigs.len();
    let scale = eigs.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eigs[i] - eigs[j]).norm() <= tol * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut clusters: Vec<(usize, C64, usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match clusters.iter_mut().find(|c| c.0 == r) {
            Some(c) => {
                c.1 += eigs[i];
                c.2 += 1;
            }
            None => clusters.push((r, eigs[i], 1)),
        }
    }
    clusters
        .into_iter()
        .map(|(_, sum, size)| Cluster {
            lambda: sum / size as f64,
            size,
        })
        .collect()
}

enum RankClass {
    Zero,
    Nonzero,
}

fn classify(value: f64, scale: f64, opts: &SpectralOptions, lambda: C64) -> Result<RankClass> {
    if value <= opts.rank_zero_tol * scale {
        Ok(RankClass::Zero)
    } else if value >= opts.rank_nonzero_tol * scale {
        Ok(RankClass::Nonzero)
    } else {
        Err(Error::DefectiveAmbiguity {
            re: lambda.re,
            im: lambda.im,
            value: value / scale,
        })
    }
}

/// Generalized eigenspace of one cluster.
struct Eigenspace {
    lambda: C64,
    /// `A - lambda I`.
    shifted: DMatrix<C64>,
    /// Columns spanning `ker (A - lambda I)^size`.
    basis: DMatrix<C64>,
    /// Largest Jordan block.
    max_block: usize,
}

fn eigenspace(a: &DMatrix<C64>, cluster: &Cluster, opts: &SpectralOptions) -> Result<Eigenspace> {
    let d = a.nrows();
    let lambda = cluster.lambda;
    let shifted = a - DMatrix::<C64>::identity(d, d) * lambda;
    let base_scale = shifted.norm().max(f64::MIN_POSITIVE);
    let mut power = DMatrix::<C64>::identity(d, d);
    let mut prev_nullity = 0;
    let mut prev_step = usize::MAX;
    let mut max_block = 0;
    let mut basis = None;
    for j in 1..=cluster.size {
        power = &power * &shifted;
        let scale = base_scale.powi(j as i32);
        let svd = power.clone().svd(false, true);
        let mut null_idx = Vec::new();
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if let RankClass::Zero = classify(s, scale, opts, lambda)? {
                null_idx.push(i);
            }
        }
        let nullity = null_idx.len();
        // A Jordan staircase has positive, nonincreasing nullity increments
        // until it saturates.
        let step = nullity.saturating_sub(prev_nullity);
        if nullity < prev_nullity || (j == 1 && nullity == 0) || step > prev_step {
            return Err(Error::DefectiveAmbiguity {
                re: lambda.re,
                im: lambda.im,
                value: svd.singular_values.min() / scale,
            });
        }
        if step > 0 {
            max_block = j;
        }
        prev_step = step;
        prev_nullity = nullity;
        if j == cluster.size {
            if nullity != cluster.size {
                let worst = svd
                    .singular_values
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                return Err(Error::DefectiveAmbiguity {
                    re: lambda.re,
                    im: lambda.im,
                    value: worst / scale,
                });
            }
            let v_t = svd.v_t.expect("right singular vectors requested");
            let mut b = DMatrix::<C64>::zeros(d, nullity);
            for (c, &i) in null_idx.iter().enumerate() {
                b.set_column(c, &v_t.row(i).adjoint());
            }
            basis = Some(b);
        }
    }
    Ok(Eigenspace {
        lambda,
        shifted,
        basis: basis.expect("cluster size is at least one"),
        max_block,
    })
}

/// Decay parameters of `e^{-At} w`. The returned `tau` is 0.
pub fn linear_cutoff_params(a: &DMatrix<f64>, w: &[f64], opts: &SpectralOptions) -> Result<CutoffParams> {
    let d = a.nrows();
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: a.ncols(),
        });
    }
    if w.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: w.len(),
        });
    }
    let w_norm = norm(w);
    if !(w_norm > 0.0) {
        return Err(Error::InvalidArgument("direction w must be nonzero".into()));
    }
    let eigs: Vec<C64> = a.clone().complex_eigenvalues().iter().copied().collect();
    for z in &eigs {
        if z.re <= opts.stability_tol {
            return Err(Error::EigenvalueInStability { re: z.re, im: z.im });
        }
    }
    let clusters = cluster_eigenvalues(&eigs, opts.cluster_tol);
    let im_tol = opts.cluster_tol * eigs.iter().map(|z| z.norm()).fold(1.0, f64::max);

    // Real clusters and upper-half-plane representatives; lower clusters are
    // taken as exact conjugates so conjugate symmetry holds exactly.
    let mut reps = Vec::new();
    let mut lower_sizes = Vec::new();
    for c in clusters {
        if c.lambda.im.abs() <= im_tol {
            reps.push((
                Cluster {
                    lambda: C64::new(c.lambda.re, 0.0),
                    size: c.size,
                },
                false,
            ));
        } else if c.lambda.im > 0.0 {
            reps.push((c, true));
        } else {
            lower_sizes.push(c.size);
        }
    }
    let ac = a.map(|x| C64::new(x, 0.0));
    let mut spaces: Vec<(Eigenspace, bool)> = Vec::new();
    for (c, complex) in &reps {
        spaces.push((eigenspace(&ac, c, opts)?, *complex));
    }
    let total: usize = spaces
        .iter()
        .map(|(s, complex)| s.basis.ncols() * if *complex { 2 } else { 1 })
        .sum();
    let upper: usize = spaces.iter().filter(|s| s.1).map(|s| s.0.basis.ncols()).sum();
    if total != d || upper != lower_sizes.iter().sum::<usize>() {
        return Err(Error::DegenerateInput(format!(
            "generalized eigenspaces span {total} of {d} dimensions"
        )));
    }

    // Coordinates of w in the stacked eigenbasis.
    let mut basis = DMatrix::<C64>::zeros(d, d);
    let mut col = 0;
    let mut offsets = Vec::new();
    for (s, complex) in &spaces {
        let k = s.basis.ncols();
        offsets.push(col);
        basis.view_mut((0, col), (d, k)).copy_from(&s.basis);
        col += k;
        if *complex {
            basis.view_mut((0, col), (d, k)).copy_from(&s.basis.map(|z| z.conj()));
            col += k;
        }
    }
    let wc = DVector::from_iterator(d, w.iter().map(|&x| C64::new(x, 0.0)));
    let coords = basis
        .lu()
        .solve(&wc)
        .ok_or_else(|| Error::DegenerateInput("eigenbasis is singular".into()))?;

    // Per representative: projection, effective Jordan order and leading vector.
    struct Term {
        lambda: C64,
        order: usize,
        v: DVector<C64>,
        complex: bool,
    }
    let mut terms = Vec::new();
    for ((s, complex), &off) in spaces.iter().zip(&offsets) {
        let k = s.basis.ncols();
        let proj = &s.basis * coords.rows(off, k);
        let pnorm = proj.norm();
        if pnorm <= opts.projection_tol * w_norm {
            continue;
        }
        let base = s.shifted.norm().max(f64::MIN_POSITIVE);
        let mut order = 1;
        let mut lead = proj.clone();
        let mut cur = proj.clone();
        for j in 1..s.max_block {
            cur = &s.shifted * &cur;
            if cur.norm() > opts.rank_zero_tol * base.powi(j as i32) * pnorm {
                order = j + 1;
                lead = cur.clone();
            }
        }
        let fact: f64 = (1..order).map(|i| i as f64).product();
        let sign = if (order - 1) % 2 == 0 { 1.0 } else { -1.0 };
        terms.push(Term {
            lambda: s.lambda,
            order,
            v: lead * C64::new(sign / fact, 0.0),
            complex: *complex,
        });
    }
    if terms.is_empty() {
        return Err(Error::DegenerateInput("w has no component in any eigenspace".into()));
    }
    let q = terms.iter().map(|t| t.lambda.re).fold(f64::INFINITY, f64::min);
    let slow: Vec<&Term> = terms
        .iter()
        .filter(|t| t.lambda.re - q <= im_tol)
        .collect();
    let ell = slow.iter().map(|t| t.order).max().unwrap();
    let mut lead: Vec<&&Term> = slow.iter().filter(|t| t.order == ell).collect();
    // theta = Im(lambda) > 0 for the conjugate of an upper representative.
    lead.sort_by(|a, b| a.lambda.im.total_cmp(&b.lambda.im));

    let mut thetas = Vec::new();
    let mut vs = Vec::new();
    for t in lead {
        if t.complex {
            let theta = t.lambda.im;
            thetas.push(theta);
            vs.push(t.v.iter().map(|z| z.conj()).collect());
            thetas.push(-theta);
            vs.push(t.v.iter().copied().collect());
        } else {
            thetas.insert(0, 0.0);
            vs.insert(0, t.v.iter().map(|z| C64::new(z.re, 0.0)).collect());
        }
    }
    Ok(CutoffParams {
        q,
        ell,
        m: thetas.len(),
        thetas,
        vs,
        tau: 0.0,
        w: w.to_vec(),
        r0: None,
        tau_bound: None,
    })
}

/// Largest `|(e^{qt}/t^{l-1}) e^{-At} w - sum_k e^{i theta_k t} v_k|` over the
/// second half of `t_grid`.
pub fn verify_hg_limit(params: &CutoffParams, a: &DMatrix<f64>, w: &[f64], t_grid: &[f64]) -> f64 {
    let wv = DVector::from_column_slice(w);
    let start = t_grid.len() / 2;
    let mut worst: f64 = 0.0;
    for &t in &t_grid[start..] {
        let flow = (a * (-t)).exp() * &wv;
        let scale = (params.q * t).exp() / t.powi(params.ell as i32 - 1);
        let target = params.rotating_sum(t);
        let res: f64 = (0..w.len())
            .map(|i| (flow[i] * scale - target[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(res);
    }
    worst
}

/// Integration settings for the nonlinear flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub dt: f64,
    /// Give up if the ball is not reached by this time.
    pub horizon: f64,
}

impl FlowOptions {
    pub fn for_field(field: &VectorFieldSpec) -> Self {
        Self {
            dt: (1e-2 / field.delta()).min(1e-3),
            horizon: 200.0 / field.delta(),
        }
    }
}

/// Runs `x' = -b(x)` from `x` until `|X_t| <= R0/2`, then linearizes at the
/// origin in the direction reached.
pub fn nonlinear_cutoff_params(
    field: &VectorFieldSpec,
    x: &[f64],
    r0: f64,
    flow: &FlowOptions,
    opts: &SpectralOptions,
) -> Result<CutoffParams> {
    if !(r0 > 0.0) {
        return Err(Error::InvalidArgument(format!("R0 must be positive, got {r0}")));
    }
    let xn = norm(x);
    if !(xn > 0.0) {
        return Err(Error::InvalidArgument("starting point must be nonzero".into()));
    }
    let (tau, w) = hitting_time(field, x, 0.5 * r0, flow.dt, flow.horizon)?;
    let mut params = linear_cutoff_params(&field.jacobian_at_origin(), &w, opts)?;
    params.tau = tau;
    params.r0 = Some(r0);
    params.tau_bound = Some(((2.0 * xn / r0).ln() / field.delta()).max(0.0));
    Ok(params)
}

/// Largest `R` in `{1, 1/2, 1/4, ...}` with
/// `|b(x) - Db(0) x| <= 0.1 |Db(0) x|` on sampled points of the sphere of radius `R`.
pub fn default_r0(field: &VectorFieldSpec) -> f64 {
    let d = field.dim();
    let jac = field.jacobian_at_origin();
    let mut rng = stream(0x7a11_0f5e, Purpose::Sampler, 0);
    let dirs: Vec<Vec<f64>> = (0..256)
        .map(|_| {
            let u = sample_ball(&mut rng, d, 1.0);
            let n = norm(&u);
            u.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let mut r = 1.0;
    for _ in 0..40 {
        let ok = dirs.iter().all(|u| {
            let x: Vec<f64> = u.iter().map(|v| v * r).collect();
            let lin = &jac * DVector::from_column_slice(&x);
            let b = field.eval_vec(&x);
            let rem: f64 = (0..d).map(|i| (b[i] - lin[i]).powi(2)).sum::<f64>().sqrt();
            rem <= 0.1 * lin.norm()
        });
        if ok {
            return r;
        }
        r *= 0.5;
    }
    r
}

/// Sampled `t -> sum_k e^{i theta_k t} v_k` on `[t_max/2, t_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaLimitSet {
    pub samples: Vec<Vec<f64>>,
    pub is_sphere: bool,
    /// Mean norm of the samples; the sphere radius when `is_sphere`.
    pub radius: f64,
    pub min_norm: f64,
    pub max_norm: f64,
}

pub fn omega_limit_set(params: &CutoffParams, t_max: f64, n_samples: usize, sphere_tol: f64) -> Result<OmegaLimitSet> {
    if n_samples < 100 {
        return Err(Error::InvalidArgument("omega_limit_set needs at least 100 samples".into()));
    }
    let samples: Vec<Vec<f64>> = (0..n_samples)
        .map(|i| {
            let t = 0.5 * t_max + 0.5 * t_max * i as f64 / (n_samples - 1) as f64;
            params.rotating_sum(t)
        })
        .collect();
    let norms: Vec<f64> = samples.iter().map(|s| norm(s)).collect();
    let min_norm = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let radius = norms.iter().sum::<f64>() / n_samples as f64;
    let is_sphere = max_norm > 0.0 && (max_norm - min_norm) / max_norm < sphere_tol;
    Ok(OmegaLimitSet {
        samples,
        is_sphere,
        radius,
        min_norm,
        max_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResonanceReport {
    pub resonant: bool,
    pub witness: Option<Vec<i64>>,
}

/// Searches integer vectors `h` with `0 < max|h_i| <= h_max` for
/// `sum h_i theta_i` within `tol` of `2 pi Z`. Vectors are visited by
/// increasing `max|h_i|` with the first nonzero entry positive; the first hit
/// is the witness.
pub fn non_resonance_check(thetas: &[f64], h_max: i64, tol: f64) -> ResonanceReport {
    let n = thetas.len();
    let two_pi = std::f64::consts::TAU;
    if n == 0 {
        return ResonanceReport {
            resonant: false,
            witness: None,
        };
    }
    for level in 1..=h_max {
        let mut h = vec![-level; n];
        loop {
            let max_abs = h.iter().map(|v| v.abs()).max().unwrap();
            let first = h.iter().find(|&&v| v != 0).copied().unwrap_or(0);
            if max_abs == level && first > 0 {
                let s: f64 = h.iter().zip(thetas).map(|(&k, t)| k as f64 * t).sum();
                let r = s - two_pi * (s / two_pi).round();
                if r.abs() < tol {
                    return ResonanceReport {
                        resonant: true,
                        witness: Some(h),
                    };
                }
            }
            // Odometer step over [-level, level]^n.
            let mut carry = true;
            for i in (0..n).rev() {
                if h[i] < level {
                    h[i] += 1;
                    carry = false;
                    break;
                }
                h[i] = -level;
            }
            if carry {
                break;
            }
        }
    }
    ResonanceReport {
        resonant: false,
        witness: None,
    }
}

/// Whether `(v_0, Re v_k, Im v_k, ...)` over the zero frequency and the
/// positive representatives is orthogonal with `|Re v_k| = |Im v_k|`.
pub fn normal_growth_check(params: &CutoffParams, tol: f64) -> bool {
    let mut family: Vec<Vec<f64>> = Vec::new();
    for (theta, v) in params.thetas.iter().zip(&params.vs) {
        if *theta == 0.0 {
            family.push(v.iter().map(|z| z.re).collect());
        } else if *theta > 0.0 {
            let re: Vec<f64> = v.iter().map(|z| z.re).collect();
            let im: Vec<f64> = v.iter().map(|z| z.im).collect();
            let (nr, ni) = (norm(&re), norm(&im));
            if (nr - ni).abs() > tol * nr.max(ni) {
                return false;
            }
            family.push(re);
            family.push(im);
        }
    }
    for i in 0..family.len() {
        for j in i + 1..family.len() {
            let dot: f64 = family[i].iter().zip(&family[j]).map(|(a, b)| a * b).sum();
            if dot.abs() > tol * norm(&family[i]) * norm(&family[j]) {
                return false;
            }
        }
    }
    true
}

/// Positive frequencies, one per conjugate pair.
pub fn positive_thetas(params: &CutoffParams) -> Vec<f64> {
    params.thetas.iter().copied().filter(|&t| t > 0.0).collect()
}
