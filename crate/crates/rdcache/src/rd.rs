//! The three rate-distortion primitives: marginal RD, conditional RD with
//! side information, and joint RD under simultaneous per-source constraints.
//!
//! All three are built on one slope-parametrized alternating-minimization
//! core. A slope vector prices distortion into the Blahut update
//! `w(x_hat|x) ~ q(x_hat) exp(-sum_k s_k d_k(x_hat, x))`; an outer bisection
//! on the slope(s) then meets the distortion target(s). Zero targets are
//! handled by restricting the channel support to zero-distortion pairs and
//! minimizing mutual information over that support directly, which avoids
//! the infinite-slope degeneracy.
//!
//! When the distortion curve has a slope jump (an affine segment of the RD
//! curve), the bisection cannot hit the target exactly; the fallback blends
//! the two bracketing channels so that the blend meets the target. On an
//! affine segment the blend is optimal, so the reported value is the convex
//! envelope.

use crate::error::{Error, Result};
use crate::info::{mutual_information_unchecked, MASS_EPS};
use crate::source::{DistortionMatrix, DistortionTuple, SourceLibrary};

/// Inner alternating-minimization tolerance on the Lagrangian functional.
pub const BA_TOL: f64 = 1e-10;
/// Inner iteration cap.
pub const BA_MAX_ITERS: usize = 100_000;
/// Outer bisection tolerance on achieved distortion.
pub const SLOPE_DIST_TOL: f64 = 1e-7;
/// Largest slope (nats per distortion unit) used by the bisection.
const SLOPE_CAP: f64 = 1e5;
/// Targets at or below this are treated as exact-zero distortion.
const ZERO_TARGET: f64 = 1e-14;

/// A conditional pmf from a context alphabet to a reconstruction alphabet,
/// stored row-major with one row per context.
#[derive(Debug, Clone, PartialEq)]
pub struct TestChannel {
    pub matrix: Vec<f64>,
    pub contexts: usize,
    pub outputs: usize,
    pub context: ContextKind,
}

/// What a [`TestChannel`] row is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextKind {
    /// Rows indexed by a single source symbol x.
    Source,
    /// Rows indexed by `u * nx + x` for side information u.
    SourceAndSide { nx: usize, nu: usize },
    /// Rows indexed by the flattened joint symbol, outputs by the flattened
    /// product reconstruction.
    Joint,
}

impl TestChannel {
    #[inline]
    pub fn row(&self, ctx: usize) -> &[f64] {
        &self.matrix[ctx * self.outputs..(ctx + 1) * self.outputs]
    }
}

/// Outcome of one RD computation.
#[derive(Debug, Clone)]
pub struct RdResult {
    /// Bits per source symbol.
    pub rate: f64,
    pub achieving_channel: TestChannel,
    /// Achieved expected distortion per constraint.
    pub achieved_distortions: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

// ---------------------------------------------------------------------------
// Core alternating minimization at fixed slopes
// ---------------------------------------------------------------------------

struct BaProblem<'a> {
    /// Source pmf over n symbols.
    p: &'a [f64],
    n: usize,
    /// Reconstruction alphabet size.
    m: usize,
    /// Per-constraint distortion tables, each m x n recon-major.
    d: Vec<Vec<f64>>,
    /// Allowed (recon, source) pairs; disallowed pairs get zero mass.
    allowed: Vec<bool>,
}

struct BaOut {
    rate: f64,
    dists: Vec<f64>,
    w: Vec<f64>, // n x m, source-major rows
    iterations: usize,
    converged: bool,
}

struct BaSettings {
    tol: f64,
    max_iters: usize,
}

const BA_DEFAULT: BaSettings = BaSettings {
    tol: BA_TOL,
    max_iters: BA_MAX_ITERS,
};

fn ba_at_slopes(prob: &BaProblem, slopes: &[f64], q: &mut [f64]) -> BaOut {
    ba_at_slopes_with(prob, slopes, q, &BA_DEFAULT)
}

fn ba_at_slopes_with(
    prob: &BaProblem,
    slopes: &[f64],
    q: &mut [f64],
    settings: &BaSettings,
) -> BaOut {
    let (n, m) = (prob.n, prob.m);
    // e[mm][j] = exp(-(cost - colmin)) so that every column keeps an exact 1.
    let mut cost = vec![0.0; m * n];
    for (k, s) in slopes.iter().enumerate() {
        let dk = &prob.d[k];
        for idx in 0..m * n {
            cost[idx] += s * dk[idx];
        }
    }
    let mut e = vec![0.0; m * n];
    for j in 0..n {
        let mut cmin = f64::INFINITY;
        for mm in 0..m {
            if prob.allowed[mm * n + j] {
                cmin = cmin.min(cost[mm * n + j]);
            }
        }
        for mm in 0..m {
            let idx = mm * n + j;
            e[idx] = if prob.allowed[idx] {
                (-(cost[idx] - cmin)).exp()
            } else {
                0.0
            };
        }
    }

    // Keep q strictly positive on entry: a warm start may carry entries at
    // or near zero, and the multiplicative update cannot resurrect those
    // fast enough before the convergence check fires.
    let qs: f64 = q.iter().sum();
    if qs <= 0.0 {
        for v in q.iter_mut() {
            *v = 1.0 / m as f64;
        }
    } else {
        let floor = 1e-6 / m as f64;
        let mut total = 0.0;
        for v in q.iter_mut() {
            *v = (*v / qs).max(floor);
            total += *v;
        }
        for v in q.iter_mut() {
            *v /= total;
        }
    }

    let mut z = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut f_old = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iters {
        iterations += 1;
        let mut f_new = 0.0;
        for j in 0..n {
            if prob.p[j] <= MASS_EPS {
                z[j] = 1.0;
                continue;
            }
            let mut s = 0.0;
            for mm in 0..m {
                s += q[mm] * e[mm * n + j];
            }
            z[j] = s;
            f_new -= prob.p[j] * s.ln();
        }
        for mm in 0..m {
            let mut s = 0.0;
            for j in 0..n {
                if prob.p[j] > MASS_EPS {
                    s += prob.p[j] * e[mm * n + j] / z[j];
                }
            }
            g[mm] = s;
        }
        let mut qsum = 0.0;
        for mm in 0..m {
            q[mm] *= g[mm];
            qsum += q[mm];
        }
        if qsum <= 0.0 {
            // Should not happen thanks to the column shift; reset and go on.
            for v in q.iter_mut() {
                *v = 1.0 / m as f64;
            }
            qsum = 1.0;
        }
        for v in q.iter_mut() {
            *v /= qsum;
        }
        if (f_new - f_old).abs() <= settings.tol * f_new.abs().max(1.0) {
            converged = true;
            break;
        }
        f_old = f_new;
    }

    // Final channel from the converged output distribution.
    let mut w = vec![0.0; n * m];
    for j in 0..n {
        if prob.p[j] <= MASS_EPS {
            // Deterministic filler for zero-mass rows: lowest allowed symbol.
            let mm = (0..m).find(|&mm| prob.allowed[mm * n + j]).unwrap_or(0);
            w[j * m + mm] = 1.0;
            continue;
        }
        let mut s = 0.0;
        for mm in 0..m {
            s += q[mm] * e[mm * n + j];
        }
        for mm in 0..m {
            w[j * m + mm] = q[mm] * e[mm * n + j] / s;
        }
    }
    let (rate, dists) = eval_channel_raw(prob.p, n, m, &prob.d, &w);
    BaOut {
        rate,
        dists,
        w,
        iterations,
        converged,
    }
}

/// Rate (bits) and per-constraint distortions of an explicit channel.
fn eval_channel_raw(
    p: &[f64],
    n: usize,
    m: usize,
    d: &[Vec<f64>],
    w: &[f64],
) -> (f64, Vec<f64>) {
    let mut joint = vec![0.0; n * m];
    for j in 0..n {
        for mm in 0..m {
            joint[j * m + mm] = p[j] * w[j * m + mm];
        }
    }
    let rate = mutual_information_unchecked(&joint, n, m);
    let mut dists = vec![0.0; d.len()];
    for (k, dk) in d.iter().enumerate() {
        let mut s = 0.0;
        for j in 0..n {
            for mm in 0..m {
                s += joint[j * m + mm] * dk[mm * n + j];
            }
        }
        dists[k] = s;
    }
    (rate, dists)
}

fn transpose_to_recon_major(d: &DistortionMatrix) -> Vec<f64> {
    // DistortionMatrix is already recon-major (recon rows, source cols).
    d.values.clone()
}

fn full_mask(m: usize, n: usize) -> Vec<bool> {
    vec![true; m * n]
}

/// Mask restricted to zero-distortion pairs of the listed constraints.
fn zero_support_mask(m: usize, n: usize, d: &[&[f64]]) -> Vec<bool> {
    let mut mask = vec![true; m * n];
    for dk in d {
        for idx in 0..m * n {
            if dk[idx] != 0.0 {
                mask[idx] = false;
            }
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// Marginal RD
// ---------------------------------------------------------------------------

/// The informational RD function `min I(X; X_hat) s.t. E d <= target` of a
/// single source, with the achieving test channel.
///
/// ```
/// use rdcache::{rd_function, DistortionMatrix};
/// // the classical binary formula 1 - h(D) at D = 0.1
/// let r = rd_function(&[0.5, 0.5], &DistortionMatrix::hamming(2), 0.1).unwrap();
/// assert!((r.rate - (1.0 - rdcache::binary_entropy(0.1))).abs() < 1e-9);
/// ```
pub fn rd_function(pmf: &[f64], d: &DistortionMatrix, target: f64) -> Result<RdResult> {
    if !(target.is_finite() && target >= 0.0) {
        return Err(Error::ShapeMismatch(format!("distortion target {}", target)));
    }
    if pmf.len() != d.source_size {
        return Err(Error::ShapeMismatch(format!(
            "pmf over {} symbols, distortion has {} columns",
            pmf.len(),
            d.source_size
        )));
    }
    crate::info::check_pmf(pmf).map_err(|_| Error::InvalidPmf("marginal pmf".into()))?;

    // Exact closed form for the binary Hamming source.
    if d.is_hamming() && d.source_size == 2 {
        return Ok(binary_hamming_rd(pmf[1] / (pmf[0] + pmf[1]), target));
    }

    let (n, m) = (d.source_size, d.recon_size);
    let dd = vec![transpose_to_recon_major(d)];
    if target <= ZERO_TARGET {
        let mask = zero_support_mask(m, n, &[&dd[0]]);
        let prob = BaProblem {
            p: pmf,
            n,
            m,
            d: dd,
            allowed: mask,
        };
        let mut q = vec![1.0 / m as f64; m];
        let out = ba_at_slopes(&prob, &[], &mut q);
        return Ok(finish(out, ContextKind::Source, n, m));
    }

    // Zero-rate reachable?
    let (d0, best_const) = best_constant(pmf, n, m, &dd[0]);
    if d0 <= target {
        return Ok(constant_result(n, m, best_const, d0, ContextKind::Source));
    }

    let prob = BaProblem {
        p: pmf,
        n,
        m,
        d: dd,
        allowed: full_mask(m, n),
    };
    let out = bisect_single_slope(&prob, target)?;
    Ok(finish(out, ContextKind::Source, n, m))
}

fn finish(out: BaOut, context: ContextKind, n: usize, m: usize) -> RdResult {
    RdResult {
        rate: out.rate,
        achieving_channel: TestChannel {
            matrix: out.w,
            contexts: n,
            outputs: m,
            context,
        },
        achieved_distortions: out.dists,
        iterations: out.iterations,
        converged: out.converged,
    }
}

fn best_constant(pmf: &[f64], n: usize, m: usize, d: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for mm in 0..m {
        let mut s = 0.0;
        for j in 0..n {
            s += pmf[j] * d[mm * n + j];
        }
        if s < best.0 - 1e-15 {
            best = (s, mm);
        }
    }
    best
}

fn constant_result(n: usize, m: usize, mm: usize, dist: f64, context: ContextKind) -> RdResult {
    let mut w = vec![0.0; n * m];
    for j in 0..n {
        w[j * m + mm] = 1.0;
    }
    RdResult {
        rate: 0.0,
        achieving_channel: TestChannel {
            matrix: w,
            contexts: n,
            outputs: m,
            context,
        },
        achieved_distortions: vec![dist],
        iterations: 0,
        converged: true,
    }
}

/// Bisect one slope so the achieved distortion meets `target`, blending the
/// bracketing channels when the curve has a slope jump.
fn bisect_single_slope(prob: &BaProblem, target: f64) -> Result<BaOut> {
    let m = prob.m;
    let mut q = vec![1.0 / m as f64; m];
    let mut iters_total = 0;

    let eval = |s: f64, q: &mut Vec<f64>| -> BaOut { ba_at_slopes(prob, &[s], q) };

    let mut lo = 0.0;
    let mut out_lo = eval(lo, &mut q.clone());
    iters_total += out_lo.iterations;
    if out_lo.dists[0] <= target + SLOPE_DIST_TOL {
        // The unconstrained (slope-0) point already meets the target.
        out_lo.iterations = iters_total;
        return Ok(out_lo);
    }
    let mut hi = 1.0;
    let mut out_hi;
    loop {
        out_hi = eval(hi, &mut q);
        iters_total += out_hi.iterations;
        if out_hi.dists[0] <= target || hi >= SLOPE_CAP {
            break;
        }
        lo = hi;
        out_lo = out_hi;
        hi *= 4.0;
    }
    if out_hi.dists[0] > target + SLOPE_DIST_TOL {
        return Err(Error::InfeasibleTarget(vec![target]));
    }

    for _ in 0..200 {
        if (out_hi.dists[0] - target).abs() <= SLOPE_DIST_TOL {
            out_hi.iterations = iters_total;
            return Ok(out_hi);
        }
        if (out_lo.dists[0] - target).abs() <= SLOPE_DIST_TOL && out_lo.dists[0] <= target {
            out_lo.iterations = iters_total;
            return Ok(out_lo);
        }
        if hi - lo <= 1e-13 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let out_mid = eval(mid, &mut q);
        iters_total += out_mid.iterations;
        if out_mid.dists[0] > target {
            lo = mid;
            out_lo = out_mid;
        } else {
            hi = mid;
            out_hi = out_mid;
        }
    }

    // Slope jump: blend the bracketing channels to land on the target. On an
    // affine segment of the RD curve the blend is exactly optimal.
    let gap = out_lo.dists[0] - out_hi.dists[0];
    let t = if gap > 1e-15 {
        ((target - out_hi.dists[0]) / gap).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let w: Vec<f64> = out_lo
        .w
        .iter()
        .zip(out_hi.w.iter())
        .map(|(a, b)| t * a + (1.0 - t) * b)
        .collect();
    let (rate, dists) = eval_channel_raw(prob.p, prob.n, prob.m, &prob.d, &w);
    Ok(BaOut {
        rate,
        dists,
        w,
        iterations: iters_total,
        converged: true,
    })
}

/// Exact RD point of a Bernoulli(p1) source under Hamming distortion,
/// including the achieving channel.
fn binary_hamming_rd(p1: f64, target: f64) -> RdResult {
    let pmin = p1.min(1.0 - p1);
    let context = ContextKind::Source;
    if target >= pmin {
        // Majority constant; ties broken toward symbol 0.
        let mm = if p1 > 0.5 { 1 } else { 0 };
        return constant_result(2, 2, mm, pmin, context);
    }
    let rate = crate::closed_form::binary_entropy(p1) - crate::closed_form::binary_entropy(target);
    let w = bernoulli_channel(p1, target);
    RdResult {
        rate: rate.max(0.0),
        achieving_channel: TestChannel {
            matrix: w,
            contexts: 2,
            outputs: 2,
            context,
        },
        achieved_distortions: vec![target],
        iterations: 0,
        converged: true,
    }
}

/// Forward test channel realizing X = X_hat xor Bern(dist) with
/// P(X=1) = p1; requires dist < min(p1, 1-p1).
fn bernoulli_channel(p1: f64, dist: f64) -> Vec<f64> {
    let p0 = 1.0 - p1;
    let beta = ((p1 - dist) / (1.0 - 2.0 * dist)).clamp(0.0, 1.0);
    let w10 = if p0 > MASS_EPS { beta * dist / p0 } else { 0.0 };
    let w11 = if p1 > MASS_EPS {
        beta * (1.0 - dist) / p1
    } else {
        1.0
    };
    vec![
        (1.0 - w10).clamp(0.0, 1.0),
        w10.clamp(0.0, 1.0),
        (1.0 - w11).clamp(0.0, 1.0),
        w11.clamp(0.0, 1.0),
    ]
}

// ---------------------------------------------------------------------------
// Conditional RD with side information
// ---------------------------------------------------------------------------

/// The informational conditional RD function
/// `min I(X; X_hat | U) s.t. E d <= target` from a joint pmf over (X, U)
/// flattened with x slowest (`joint[x * nu + u]`).
///
/// Decomposes into per-u subproblems coupled through one common slope.
pub fn conditional_rd_function(
    joint: &[f64],
    nx: usize,
    nu: usize,
    d: &DistortionMatrix,
    target: f64,
) -> Result<RdResult> {
    if joint.len() != nx * nu || d.source_size != nx {
        return Err(Error::ShapeMismatch(format!(
            "joint {} vs {}x{}, distortion columns {}",
            joint.len(),
            nx,
            nu,
            d.source_size
        )));
    }
    if !(target.is_finite() && target >= 0.0) {
        return Err(Error::ShapeMismatch(format!("distortion target {}", target)));
    }
    crate::info::check_pmf(joint).map_err(|_| Error::InvalidPmf("joint (x,u) pmf".into()))?;

    let m = d.recon_size;
    let mut pu = vec![0.0; nu];
    let mut cond = vec![vec![0.0; nx]; nu];
    for x in 0..nx {
        for u in 0..nu {
            pu[u] += joint[x * nu + u];
        }
    }
    for u in 0..nu {
        if pu[u] > MASS_EPS {
            for x in 0..nx {
                cond[u][x] = joint[x * nu + u] / pu[u];
            }
        }
    }

    let dd = transpose_to_recon_major(d);

    // Channel rows are indexed u * nx + x.
    let context = ContextKind::SourceAndSide { nx, nu };
    let pack = |per_u: Vec<Vec<f64>>| -> Vec<f64> {
        let mut w = vec![0.0; nu * nx * m];
        for (u, wu) in per_u.into_iter().enumerate() {
            for x in 0..nx {
                for mm in 0..m {
                    w[(u * nx + x) * m + mm] = wu[x * m + mm];
                }
            }
        }
        w
    };

    // Exact closed-form path for binary Hamming.
    if d.is_hamming() && nx == 2 {
        let (rate, dist, per_u, iters) = conditional_binary_hamming(&pu, &cond, target);
        return Ok(RdResult {
            rate,
            achieving_channel: TestChannel {
                matrix: pack(per_u),
                contexts: nu * nx,
                outputs: m,
                context,
            },
            achieved_distortions: vec![dist],
            iterations: iters,
            converged: true,
        });
    }

    if target <= ZERO_TARGET {
        let mask = zero_support_mask(m, nx, &[&dd]);
        let mut rate = 0.0;
        let mut iters = 0;
        let mut conv = true;
        let mut per_u = Vec::with_capacity(nu);
        for u in 0..nu {
            if pu[u] <= MASS_EPS {
                per_u.push(filler_channel(nx, m, &mask));
                continue;
            }
            let prob = BaProblem {
                p: &cond[u],
                n: nx,
                m,
                d: vec![dd.clone()],
                allowed: mask.clone(),
            };
            let mut q = vec![1.0 / m as f64; m];
            let out = ba_at_slopes(&prob, &[], &mut q);
            rate += pu[u] * out.rate;
            iters += out.iterations;
            conv &= out.converged;
            per_u.push(out.w);
        }
        return Ok(RdResult {
            rate,
            achieving_channel: TestChannel {
                matrix: pack(per_u),
                contexts: nu * nx,
                outputs: m,
                context,
            },
            achieved_distortions: vec![0.0],
            iterations: iters,
            converged: conv,
        });
    }

    // Zero-rate check: best per-u constants.
    let mut d0 = 0.0;
    let mut consts = Vec::with_capacity(nu);
    for u in 0..nu {
        let (du, mm) = best_constant(&cond[u], nx, m, &dd);
        d0 += pu[u] * if pu[u] > MASS_EPS { du } else { 0.0 };
        consts.push(mm);
    }
    if d0 <= target {
        let per_u: Vec<Vec<f64>> = consts
            .iter()
            .map(|&mm| {
                let mut w = vec![0.0; nx * m];
                for x in 0..nx {
                    w[x * m + mm] = 1.0;
                }
                w
            })
            .collect();
        return Ok(RdResult {
            rate: 0.0,
            achieving_channel: TestChannel {
                matrix: pack(per_u),
                contexts: nu * nx,
                outputs: m,
                context,
            },
            achieved_distortions: vec![d0],
            iterations: 0,
            converged: true,
        });
    }

    // Common-slope bisection over the aggregated distortion.
    let probs: Vec<BaProblem> = (0..nu)
        .map(|u| BaProblem {
            p: &cond[u],
            n: nx,
            m,
            d: vec![dd.clone()],
            allowed: full_mask(m, nx),
        })
        .collect();
    let mut qs: Vec<Vec<f64>> = vec![vec![1.0 / m as f64; m]; nu];
    let mut iters_total = 0usize;

    let eval = |s: f64, qs: &mut Vec<Vec<f64>>, iters_total: &mut usize| -> (f64, f64, Vec<Vec<f64>>, bool) {
        let mut rate = 0.0;
        let mut dist = 0.0;
        let mut conv = true;
        let mut per_u = Vec::with_capacity(nu);
        for u in 0..nu {
            if pu[u] <= MASS_EPS {
                per_u.push(filler_channel(nx, m, &probs[u].allowed));
                continue;
            }
            let out = ba_at_slopes(&probs[u], &[s], &mut qs[u]);
            rate += pu[u] * out.rate;
            dist += pu[u] * out.dists[0];
            *iters_total += out.iterations;
            conv &= out.converged;
            per_u.push(out.w);
        }
        (rate, dist, per_u, conv)
    };

    let mut lo = 0.0;
    let (mut r_lo, mut d_lo, mut w_lo, _) = eval(lo, &mut qs, &mut iters_total);
    debug_assert!(d_lo > target);
    let mut hi = 1.0;
    let (mut r_hi, mut d_hi, mut w_hi, mut conv_hi);
    loop {
        let (r, dst, w, cv) = eval(hi, &mut qs, &mut iters_total);
        r_hi = r;
        d_hi = dst;
        w_hi = w;
        conv_hi = cv;
        if d_hi <= target || hi >= SLOPE_CAP {
            break;
        }
        lo = hi;
        r_lo = r_hi;
        d_lo = d_hi;
        w_lo = w_hi.clone();
        hi *= 4.0;
    }
    if d_hi > target + SLOPE_DIST_TOL {
        return Err(Error::InfeasibleTarget(vec![target]));
    }

    // Safeguarded false position (Illinois): the distortion-vs-slope curve
    // is smooth between jumps, so secant steps land in a handful of evals;
    // the alternation guard keeps the bracket shrinking at jumps.
    let mut side = 0i32;
    for it in 0..200 {
        if (d_hi - target).abs() <= SLOPE_DIST_TOL || hi - lo <= 1e-13 * (1.0 + hi) {
            break;
        }
        let (flo, fhi) = (d_lo - target, d_hi - target);
        let mut mid = if (flo - fhi).abs() > 1e-300 && it % 4 != 3 {
            let scale = match side {
                1 => 0.5,
                -1 => 2.0,
                _ => 1.0,
            };
            hi - fhi * scale * (hi - lo) / (fhi * scale - flo)
        } else {
            0.5 * (lo + hi)
        };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let (r, dst, w, cv) = eval(mid, &mut qs, &mut iters_total);
        if dst > target {
            lo = mid;
            r_lo = r;
            d_lo = dst;
            w_lo = w;
            side = if side == -1 { 0 } else { -1 };
        } else {
            hi = mid;
            r_hi = r;
            d_hi = dst;
            w_hi = w;
            conv_hi = cv;
            side = if side == 1 { 0 } else { 1 };
        }
    }

    let (rate, dist, per_u) = if (d_hi - target).abs() <= SLOPE_DIST_TOL {
        (r_hi, d_hi, w_hi)
    } else {
        // Blend bracketing solutions onto the target (slope jump).
        let gap = d_lo - d_hi;
        let t = if gap > 1e-15 {
            ((target - d_hi) / gap).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut per_u = Vec::with_capacity(nu);
        let mut rate = 0.0;
        let mut dist = 0.0;
        for u in 0..nu {
            let w: Vec<f64> = w_lo[u]
                .iter()
                .zip(w_hi[u].iter())
                .map(|(a, b)| t * a + (1.0 - t) * b)
                .collect();
            if pu[u] > MASS_EPS {
                let (r, ds) = eval_channel_raw(&cond[u], nx, m, std::slice::from_ref(&dd), &w);
                rate += pu[u] * r;
                dist += pu[u] * ds[0];
            }
            per_u.push(w);
        }
        let _ = (r_lo, conv_hi);
        (rate, dist, per_u)
    };

    Ok(RdResult {
        rate,
        achieving_channel: TestChannel {
            matrix: pack(per_u),
            contexts: nu * nx,
            outputs: m,
            context,
        },
        achieved_distortions: vec![dist],
        iterations: iters_total,
        converged: true,
    })
}

fn filler_channel(n: usize, m: usize, mask: &[bool]) -> Vec<f64> {
    let mut w = vec![0.0; n * m];
    for x in 0..n {
        let mm = (0..m).find(|&mm| mask[mm * n + x]).unwrap_or(0);
        w[x * m + mm] = 1.0;
    }
    w
}

/// Closed-form conditional RD for binary sources under Hamming distortion:
/// every per-u curve is h(p_u) - h(D_u), so the common-slope allocation is
/// D_u = min(1/(1+2^s), min(p_u, 1-p_u)) and s is found by bisection.
fn conditional_binary_hamming(
    pu: &[f64],
    cond: &[Vec<f64>],
    target: f64,
) -> (f64, f64, Vec<Vec<f64>>, usize) {
    let nu = pu.len();
    let h = crate::closed_form::binary_entropy;
    let p1: Vec<f64> = cond.iter().map(|c| c[1]).collect();
    let amin: Vec<f64> = p1.iter().map(|&a| a.min(1.0 - a)).collect();
    let t0: f64 = pu.iter().zip(amin.iter()).map(|(&w, &a)| w * a).sum();

    let channels = |du: &[f64]| -> Vec<Vec<f64>> {
        (0..nu)
            .map(|u| {
                if amin[u] <= du[u] + 1e-15 {
                    // Majority constant.
                    let mm = if p1[u] > 0.5 { 1 } else { 0 };
                    let mut w = vec![0.0; 4];
                    w[mm] = 1.0;
                    w[2 + mm] = 1.0;
                    w
                } else {
                    bernoulli_channel(p1[u], du[u])
                }
            })
            .collect()
    };

    if target >= t0 {
        let du: Vec<f64> = amin.clone();
        let rate = 0.0;
        return (rate, t0, channels(&du), 0);
    }

    // Bisection on the bits-slope s: D(s) = sum_u p(u) min(1/(1+2^s), amin_u).
    let total = |s: f64| -> f64 {
        let t = 1.0 / (1.0 + (2f64).powf(s));
        pu.iter()
            .zip(amin.iter())
            .map(|(&w, &a)| w * t.min(a))
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = 60.0;
    let mut iters = 0;
    for _ in 0..200 {
        iters += 1;
        let mid = 0.5 * (lo + hi);
        if total(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    let t = 1.0 / (1.0 + (2f64).powf(s));
    let du: Vec<f64> = amin.iter().map(|&a| t.min(a)).collect();
    let dist: f64 = pu.iter().zip(du.iter()).map(|(&w, &d)| w * d).sum();
    let rate: f64 = pu
        .iter()
        .zip(p1.iter().zip(du.iter()))
        .map(|(&w, (&a, &d))| w * (h(a) - h(d)).max(0.0))
        .sum();
    (rate, dist, channels(&du), iters)
}

/// Value-only conditional RD at search precision: a faster inner tolerance
/// for descent loops whose winner is re-evaluated at full precision. The
/// returned rate sits within ~1e-5 of the full-precision value.
pub(crate) fn conditional_rd_value_coarse(
    joint: &[f64],
    nx: usize,
    nu: usize,
    d: &DistortionMatrix,
    target: f64,
) -> Result<f64> {
    let m = d.recon_size;
    let mut pu = vec![0.0; nu];
    let mut cond = vec![vec![0.0; nx]; nu];
    for x in 0..nx {
        for u in 0..nu {
            pu[u] += joint[x * nu + u];
        }
    }
    for u in 0..nu {
        if pu[u] > MASS_EPS {
            for x in 0..nx {
                cond[u][x] = joint[x * nu + u] / pu[u];
            }
        }
    }
    let dd = transpose_to_recon_major(d);
    let zero_mask;
    let mask: &[bool] = if target <= ZERO_TARGET {
        zero_mask = zero_support_mask(m, nx, &[&dd]);
        &zero_mask
    } else {
        zero_mask = full_mask(m, nx);
        &zero_mask
    };
    let probs: Vec<BaProblem> = (0..nu)
        .map(|u| BaProblem {
            p: &cond[u],
            n: nx,
            m,
            d: vec![dd.clone()],
            allowed: mask.to_vec(),
        })
        .collect();
    let mut qs: Vec<Vec<f64>> = vec![vec![1.0 / m as f64; m]; nu];
    let coarse = BaSettings {
        tol: 1e-9,
        max_iters: 20_000,
    };
    let eval = |s: f64, qs: &mut Vec<Vec<f64>>| -> (f64, f64) {
        let mut rate = 0.0;
        let mut dist = 0.0;
        for u in 0..nu {
            if pu[u] <= MASS_EPS {
                continue;
            }
            let out = ba_at_slopes_with(&probs[u], &[s], &mut qs[u], &coarse);
            rate += pu[u] * out.rate;
            dist += pu[u] * out.dists[0];
        }
        (rate, dist)
    };
    if target <= ZERO_TARGET {
        let mut rate = 0.0;
        for u in 0..nu {
            if pu[u] <= MASS_EPS {
                continue;
            }
            let out = ba_at_slopes_with(&probs[u], &[], &mut qs[u], &coarse);
            rate += pu[u] * out.rate;
        }
        return Ok(rate);
    }
    let (mut _r_lo, d0) = eval(0.0, &mut qs);
    if d0 <= target + 1e-5 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut d_lo = d0;
    let mut hi = 1.0;
    let (mut r_hi, mut d_hi);
    loop {
        let (r, dst) = eval(hi, &mut qs);
        r_hi = r;
        d_hi = dst;
        if d_hi <= target || hi >= 1e5 {
            break;
        }
        lo = hi;
        d_lo = d_hi;
        hi *= 4.0;
    }
    let mut r_lo_pt = (0.0f64, d_lo);
    let mut side = 0i32;
    for it in 0..60 {
        if (d_hi - target).abs() <= 3e-6 || hi - lo <= 1e-10 * (1.0 + hi) {
            break;
        }
        let (flo, fhi) = (d_lo - target, d_hi - target);
        let mut mid = if (flo - fhi).abs() > 1e-300 && it % 4 != 3 {
            let scale = match side {
                1 => 0.5,
                -1 => 2.0,
                _ => 1.0,
            };
            hi - fhi * scale * (hi - lo) / (fhi * scale - flo)
        } else {
            0.5 * (lo + hi)
        };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let (r, dst) = eval(mid, &mut qs);
        if dst > target {
            lo = mid;
            d_lo = dst;
            r_lo_pt = (r, dst);
            side = if side == -1 { 0 } else { -1 };
        } else {
            hi = mid;
            r_hi = r;
            d_hi = dst;
            side = if side == 1 { 0 } else { 1 };
        }
    }
    // chord value on a jump
    if (d_hi - target).abs() > 3e-6 && r_lo_pt.1 > d_hi {
        let t = ((target - d_hi) / (r_lo_pt.1 - d_hi)).clamp(0.0, 1.0);
        return Ok(t * r_lo_pt.0 + (1.0 - t) * r_hi);
    }
    Ok(r_hi)
}

/// Re-evaluate an explicit conditional channel: returns
/// (I(X;X_hat|U), E d) under the given joint pmf over (X, U).
pub fn eval_conditional_channel(
    joint: &[f64],
    nx: usize,
    nu: usize,
    d: &DistortionMatrix,
    channel: &TestChannel,
) -> Result<(f64, f64)> {
    let m = d.recon_size;
    if channel.contexts != nu * nx || channel.outputs != m {
        return Err(Error::ShapeMismatch("channel shape".into()));
    }
    let dd = transpose_to_recon_major(d);
    let mut pu = vec![0.0; nu];
    for x in 0..nx {
        for u in 0..nu {
            pu[u] += joint[x * nu + u];
        }
    }
    let mut rate = 0.0;
    let mut dist = 0.0;
    for u in 0..nu {
        if pu[u] <= MASS_EPS {
            continue;
        }
        let cond: Vec<f64> = (0..nx).map(|x| joint[x * nu + u] / pu[u]).collect();
        let mut w = vec![0.0; nx * m];
        for x in 0..nx {
            for mm in 0..m {
                w[x * m + mm] = channel.matrix[(u * nx + x) * m + mm];
            }
        }
        let (r, ds) = eval_channel_raw(&cond, nx, m, std::slice::from_ref(&dd), &w);
        rate += pu[u] * r;
        dist += pu[u] * ds[0];
    }
    Ok((rate, dist))
}

// ---------------------------------------------------------------------------
// Joint RD with L simultaneous constraints
// ---------------------------------------------------------------------------

/// The informational joint RD function `min I(Xbar; Xbar_hat)` subject to
/// `E d_l <= D_l` for every source, via multi-slope alternating minimization
/// with cyclic per-coordinate bisection on the slopes.
pub fn joint_rd_function(lib: &SourceLibrary, targets: &DistortionTuple) -> Result<RdResult> {
    targets.validate(lib.num_sources())?;
    let l = lib.num_sources();
    let n = lib.joint_alphabet_size();
    let m: usize = lib.recon_alphabet_sizes.iter().product();
    if m == 0 || m > 1 << 16 {
        return Err(Error::InstanceTooLarge(format!(
            "product reconstruction alphabet of size {}",
            m
        )));
    }

    // Reconstruction strides, row-major like the source side.
    let mut rstrides = vec![1usize; l];
    for i in (0..l.saturating_sub(1)).rev() {
        rstrides[i] = rstrides[i + 1] * lib.recon_alphabet_sizes[i + 1];
    }
    // Per-source distortion tables over the product alphabets.
    let mut dfull: Vec<Vec<f64>> = Vec::with_capacity(l);
    for k in 0..l {
        let dk = &lib.distortion[k];
        let mut t = vec![0.0; m * n];
        for mm in 0..m {
            let rk = (mm / rstrides[k]) % lib.recon_alphabet_sizes[k];
            for j in 0..n {
                let xk = lib.symbol_of(j, k);
                t[mm * n + j] = dk.get(rk, xk);
            }
        }
        dfull.push(t);
    }

    let zero: Vec<usize> = (0..l).filter(|&k| targets.0[k] <= ZERO_TARGET).collect();
    let active: Vec<usize> = (0..l).filter(|&k| targets.0[k] > ZERO_TARGET).collect();

    let zero_tables: Vec<&[f64]> = zero.iter().map(|&k| dfull[k].as_slice()).collect();
    let mask = if zero.is_empty() {
        full_mask(m, n)
    } else {
        zero_support_mask(m, n, &zero_tables)
    };
    // Guard: every source column must keep at least one allowed recon symbol
    // (guaranteed by the per-source zero-distortion invariant).
    for j in 0..n {
        if lib.joint_pmf[j] > MASS_EPS && !(0..m).any(|mm| mask[mm * n + j]) {
            return Err(Error::InfeasibleTarget(targets.0.clone()));
        }
    }

    let d_active: Vec<Vec<f64>> = active.iter().map(|&k| dfull[k].clone()).collect();
    let prob = BaProblem {
        p: &lib.joint_pmf,
        n,
        m,
        d: d_active,
        allowed: mask.clone(),
    };

    let finish_joint = |out: BaOut, iters: usize, converged: bool| -> RdResult {
        // Expand to per-source achieved distortions in source order.
        let (_, all_dists) = eval_channel_raw(
            &lib.joint_pmf,
            n,
            m,
            &dfull.iter().cloned().collect::<Vec<_>>(),
            &out.w,
        );
        RdResult {
            rate: out.rate,
            achieving_channel: TestChannel {
                matrix: out.w,
                contexts: n,
                outputs: m,
                context: ContextKind::Joint,
            },
            achieved_distortions: all_dists,
            iterations: iters,
            converged,
        }
    };

    if active.is_empty() {
        let mut q = vec![1.0 / m as f64; m];
        let out = ba_at_slopes(&prob, &[], &mut q);
        let it = out.iterations;
        let cv = out.converged;
        return Ok(finish_joint(out, it, cv));
    }

    // Zero-rate check over pure constant reconstructions (restricted to the
    // zero-support when zero targets are present).
    if zero.is_empty() {
        let mut best: Option<usize> = None;
        'outer: for mm in 0..m {
            for (kk, &k) in active.iter().enumerate() {
                let _ = kk;
                let mut s = 0.0;
                for j in 0..n {
                    s += lib.joint_pmf[j] * dfull[k][mm * n + j];
                }
                if s > targets.0[k] {
                    continue 'outer;
                }
            }
            best = Some(mm);
            break;
        }
        if let Some(mm) = best {
            let mut w = vec![0.0; n * m];
            for j in 0..n {
                w[j * m + mm] = 1.0;
            }
            let out = BaOut {
                rate: 0.0,
                dists: vec![],
                w,
                iterations: 0,
                converged: true,
            };
            return Ok(finish_joint(out, 0, true));
        }
    }

    let na = active.len();
    let mut slopes = vec![1.0f64; na];
    let mut q = vec![1.0 / m as f64; m];
    let mut iters_total = 0usize;

    let tgt: Vec<f64> = active.iter().map(|&k| targets.0[k]).collect();
    let mut best_feasible: Option<BaOut> = None;
    // Low-rate infeasible envelope points, kept for the blend fallback when
    // the distortion surface jumps over the targets.
    let mut pool: Vec<BaOut> = Vec::new();

    let consider = |out: &BaOut, best: &mut Option<BaOut>, pool: &mut Vec<BaOut>| {
        let feas = out
            .dists
            .iter()
            .zip(tgt.iter())
            .all(|(&d, &t)| d <= t + 1e-9);
        let snapshot = || BaOut {
            rate: out.rate,
            dists: out.dists.clone(),
            w: out.w.clone(),
            iterations: out.iterations,
            converged: out.converged,
        };
        if feas {
            let better = match best {
                None => true,
                Some(b) => out.rate < b.rate - 1e-15,
            };
            if better {
                *best = Some(snapshot());
            }
        } else if best.as_ref().map_or(true, |b| out.rate < b.rate - 1e-12) {
            pool.push(snapshot());
            if pool.len() > 256 {
                // Drop the worst-rate half to bound memory.
                pool.sort_by(|a, b| a.rate.partial_cmp(&b.rate).unwrap());
                pool.truncate(128);
            }
        }
    };

    let mut out = ba_at_slopes(&prob, &slopes, &mut q);
    iters_total += out.iterations;
    consider(&out, &mut best_feasible, &mut pool);

    let mut all_met = false;
    let mut prev_round_dists: Option<Vec<f64>> = None;
    for _round in 0..50 {
        for k in 0..na {
            // Bisection bracket for coordinate k holding the others.
            let mut lo = 0.0;
            let mut hi = slopes[k].max(1.0);
            let mut s_save = slopes[k];

            slopes[k] = lo;
            let out_lo = ba_at_slopes(&prob, &slopes, &mut q);
            iters_total += out_lo.iterations;
            consider(&out_lo, &mut best_feasible, &mut pool);
            if out_lo.dists[k] <= tgt[k] + SLOPE_DIST_TOL {
                // Constraint slack at zero slope.
                out = out_lo;
                s_save = 0.0;
                slopes[k] = s_save;
                continue;
            }
            // Grow hi until feasible for coordinate k.
            loop {
                slopes[k] = hi;
                let o = ba_at_slopes(&prob, &slopes, &mut q);
                iters_total += o.iterations;
                consider(&o, &mut best_feasible, &mut pool);
                if o.dists[k] <= tgt[k] || hi >= SLOPE_CAP {
                    out = o;
                    break;
                }
                lo = hi;
                hi *= 4.0;
            }
            for _ in 0..60 {
                if (out.dists[k] - tgt[k]).abs() <= SLOPE_DIST_TOL
                    || hi - lo <= 1e-12 * (1.0 + hi)
                {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                slopes[k] = mid;
                let o = ba_at_slopes(&prob, &slopes, &mut q);
                iters_total += o.iterations;
                consider(&o, &mut best_feasible, &mut pool);
                if o.dists[k] > tgt[k] {
                    lo = mid;
                } else {
                    hi = mid;
                    out = o;
                }
            }
            slopes[k] = hi;
            let _ = s_save;
        }
        all_met = out
            .dists
            .iter()
            .zip(tgt.iter())
            .enumerate()
            .all(|(k, (&d, &t))| (d - t).abs() <= 1e-6 || (d <= t && slopes[k] <= 1e-12));
        if all_met {
            consider(&out, &mut best_feasible, &mut pool);
            break;
        }
        // Stagnation: a slope jump pins the achieved distortions away from
        // the targets; further rounds cannot move them and the blend
        // fallback below finishes the job.
        if let Some(prev) = &prev_round_dists {
            let moved = out
                .dists
                .iter()
                .zip(prev.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if moved < 1e-9 {
                break;
            }
        }
        prev_round_dists = Some(out.dists.clone());
    }

    // Anchor for the blend fallback: the tightest channel (all high slopes,
    // equivalently the zero-support restriction), feasible for any target.
    {
        let anchor_slopes = vec![SLOPE_CAP; na];
        let mut qa = vec![1.0 / m as f64; m];
        let anchor = ba_at_slopes(&prob, &anchor_slopes, &mut qa);
        iters_total += anchor.iterations;
        consider(&anchor, &mut best_feasible, &mut pool);

        // Blend each low-rate infeasible envelope point toward feasibility
        // against the feasible partners; distortion is linear in the channel
        // so the least sufficient blend weight is closed-form, and mutual
        // information is convex so the blend can only undercut the chord.
        let mut partners: Vec<BaOut> = Vec::new();
        if let Some(b) = &best_feasible {
            partners.push(BaOut {
                rate: b.rate,
                dists: b.dists.clone(),
                w: b.w.clone(),
                iterations: 0,
                converged: b.converged,
            });
        }
        partners.push(anchor);
        for cand in &pool {
            if best_feasible
                .as_ref()
                .map_or(false, |b| cand.rate >= b.rate - 1e-15)
            {
                continue;
            }
            for partner in &partners {
                let mut t_needed = 0.0f64;
                let mut ok = true;
                for k in 0..na {
                    let (di, dp) = (cand.dists[k], partner.dists[k]);
                    if di > tgt[k] {
                        if dp >= tgt[k] {
                            ok = false;
                            break;
                        }
                        t_needed = t_needed.max((di - tgt[k]) / (di - dp));
                    }
                }
                if !ok {
                    continue;
                }
                let t = (t_needed + 1e-12).min(1.0);
                let w: Vec<f64> = cand
                    .w
                    .iter()
                    .zip(partner.w.iter())
                    .map(|(&a, &b)| (1.0 - t) * a + t * b)
                    .collect();
                let (rate, dists) = eval_channel_raw(&lib.joint_pmf, n, m, &prob.d, &w);
                let blended = BaOut {
                    rate,
                    dists,
                    w,
                    iterations: 0,
                    converged: true,
                };
                let mut dummy = Vec::new();
                consider(&blended, &mut best_feasible, &mut dummy);
            }
        }
    }

    match best_feasible {
        Some(best) => {
            let it = iters_total;
            let cv = all_met || best.converged;
            Ok(finish_joint(best, it, cv))
        }
        None => Err(Error::NoConvergence {
            cap: iters_total,
            gap: out
                .dists
                .iter()
                .zip(tgt.iter())
                .map(|(&d, &t)| (d - t).max(0.0))
                .fold(0.0, f64::max),
        }),
    }
}

/// Re-evaluate a joint channel against a library: (rate, per-source dists).
pub fn eval_joint_channel(lib: &SourceLibrary, channel: &TestChannel) -> Result<(f64, Vec<f64>)> {
    let l = lib.num_sources();
    let n = lib.joint_alphabet_size();
    let m: usize = lib.recon_alphabet_sizes.iter().product();
    if channel.contexts != n || channel.outputs != m {
        return Err(Error::ShapeMismatch("channel shape".into()));
    }
    let mut rstrides = vec![1usize; l];
    for i in (0..l.saturating_sub(1)).rev() {
        rstrides[i] = rstrides[i + 1] * lib.recon_alphabet_sizes[i + 1];
    }
    let mut dfull: Vec<Vec<f64>> = Vec::with_capacity(l);
    for k in 0..l {
        let dk = &lib.distortion[k];
        let mut t = vec![0.0; m * n];
        for mm in 0..m {
            let rk = (mm / rstrides[k]) % lib.recon_alphabet_sizes[k];
            for j in 0..n {
                t[mm * n + j] = dk.get(rk, lib.symbol_of(j, k));
            }
        }
        dfull.push(t);
    }
    let (rate, dists) = eval_channel_raw(&lib.joint_pmf, n, m, &dfull, &channel.matrix);
    Ok((rate, dists))
}
