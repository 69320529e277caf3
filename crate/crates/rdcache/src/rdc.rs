//! The cache tradeoff function and its structural bounds.
//!
//! The central object is
//! `R(D, C) = min over U with I(Xbar; U) <= C of max_l R_{X_l | U}(D_l)`,
//! a min-max over auxiliary channels p(u | xbar) with auxiliary cardinality
//! at most `|Xbar| + 2L` (`|Xbar| + L` in the all-Hamming lossless case).
//! The program is nonconvex, so [`rdc_value`] is a multistart descent
//! heuristic with an exhaustive-grid safety net ([`rdc_brute_force`]) rather
//! than a claimed global method; the structural bounds bracket every
//! reported value.

use rayon::prelude::*;

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::info::{entropy_unchecked, MASS_EPS};
use crate::rd::{conditional_rd_function, joint_rd_function, rd_function};
use crate::source::{marginal, sub_library, DistortionTuple, SourceLibrary};

/// Feasibility slack on the cache constraint; moves are rejected beyond it.
const FEAS_EPS: f64 = 1e-12;

/// An auxiliary channel p(u | xbar): one row per joint source symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxChannel {
    pub matrix: Vec<f64>,
    pub contexts: usize,
    pub aux_size: usize,
}

impl AuxChannel {
    pub fn constant(contexts: usize, aux_size: usize) -> Self {
        let mut matrix = vec![0.0; contexts * aux_size];
        for j in 0..contexts {
            matrix[j * aux_size] = 1.0;
        }
        AuxChannel {
            matrix,
            contexts,
            aux_size,
        }
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.matrix[j * self.aux_size..(j + 1) * self.aux_size]
    }
}

/// How a tradeoff point was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Solver,
    Oracle,
    GenieBound,
    SuperuserBound,
    SuperGenieBound,
    ClosedForm,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Solver => "solver",
            Method::Oracle => "oracle",
            Method::GenieBound => "genie",
            Method::SuperuserBound => "superuser",
            Method::SuperGenieBound => "super-genie",
            Method::ClosedForm => "closed-form",
        }
    }
}

/// One (C, D, R) sample with provenance.
#[derive(Debug, Clone)]
pub struct TradeoffPoint {
    pub cache: f64,
    pub distortions: DistortionTuple,
    pub rate: f64,
    pub witness: Option<AuxChannel>,
    pub method: Method,
}

/// Options shared by the descent solver.
#[derive(Debug, Clone)]
pub struct SolverOpts {
    /// Seed for the random restarts; curves are reproducible given it.
    pub seed: u64,
    /// Number of random restarts on top of the structured starts.
    pub restarts: usize,
    /// Cap on the auxiliary alphabet (the default cardinality bound still
    /// applies; this can only lower it).
    pub aux_cap: Option<usize>,
    /// Pattern-descent sweep cap per start.
    pub max_sweeps: usize,
    /// Smallest pattern step before a start is declared converged.
    pub min_step: f64,
    /// Run a coarse aux-2 grid scan as an extra start on tiny instances.
    pub coarse_scan: bool,
    /// Include the joint-quantization start family (witnesses of the joint
    /// RD at scaled targets). Curve sweeps compute the family once and feed
    /// it through `extra_starts` instead.
    pub joint_family_starts: bool,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            seed: 0,
            restarts: 20,
            aux_cap: None,
            max_sweeps: 300,
            min_step: 1e-5,
            coarse_scan: true,
            joint_family_starts: true,
        }
    }
}

/// Default auxiliary cardinality: |Xbar| + 2L, tightened to |Xbar| + L when
/// every distortion is Hamming and every target is zero.
pub fn default_aux_size(lib: &SourceLibrary, targets: &DistortionTuple) -> usize {
    let n = lib.joint_alphabet_size();
    let l = lib.num_sources();
    if lib.all_hamming() && targets.0.iter().all(|&d| d <= 0.0) {
        n + l
    } else {
        n + 2 * l
    }
}

// ---------------------------------------------------------------------------
// Objective evaluation
// ---------------------------------------------------------------------------

/// Shared per-instance tables for fast objective evaluation.
struct EvalContext<'a> {
    lib: &'a SourceLibrary,
    targets: &'a DistortionTuple,
    /// symbol_of table per source.
    sym: Vec<Vec<usize>>,
    /// Per-source fast-path flags: Hamming with binary source alphabet.
    binary_hamming: Vec<bool>,
    hamming: Vec<bool>,
    /// Marginal RD value per source: an upper bound on its conditional RD
    /// under any auxiliary, used to skip dominated sources in the max.
    marginal_rate: Vec<f64>,
    /// Source order by descending marginal rate.
    source_order: Vec<usize>,
}

impl<'a> EvalContext<'a> {
    fn new(lib: &'a SourceLibrary, targets: &'a DistortionTuple) -> Self {
        let l = lib.num_sources();
        let n = lib.joint_alphabet_size();
        let sym: Vec<Vec<usize>> = (0..l)
            .map(|k| (0..n).map(|j| lib.symbol_of(j, k)).collect())
            .collect();
        let binary_hamming: Vec<bool> = (0..l)
            .map(|k| lib.distortion[k].is_hamming() && lib.alphabet_sizes[k] == 2)
            .collect();
        let hamming: Vec<bool> = (0..l).map(|k| lib.distortion[k].is_hamming()).collect();
        let marginal_rate: Vec<f64> = (0..l)
            .map(|k| {
                let p = marginal(lib, &[k]).unwrap_or_else(|_| vec![1.0]);
                rd_function(&p, &lib.distortion[k], targets.0[k])
                    .map(|r| r.rate)
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        let mut source_order: Vec<usize> = (0..l).collect();
        source_order.sort_by(|&a, &b| {
            marginal_rate[b]
                .partial_cmp(&marginal_rate[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        EvalContext {
            lib,
            targets,
            sym,
            binary_hamming,
            hamming,
            marginal_rate,
            source_order,
        }
    }

    /// I(Xbar; U) of a channel given as a flat n x aux matrix.
    fn cache_information(&self, w: &[f64], aux: usize) -> f64 {
        let p = &self.lib.joint_pmf;
        let n = self.lib.joint_alphabet_size();
        let mut pu = vec![0.0; aux];
        let mut h_u_given_x = 0.0;
        for j in 0..n {
            if p[j] <= MASS_EPS {
                continue;
            }
            let row = &w[j * aux..(j + 1) * aux];
            let mut hrow = 0.0;
            for (u, &v) in row.iter().enumerate() {
                pu[u] += p[j] * v;
                hrow -= crate::info::plog2p(v);
            }
            h_u_given_x += p[j] * hrow;
        }
        (entropy_unchecked(&pu) - h_u_given_x).max(0.0)
    }

    /// max_l R_{X_l | U}(D_l) for the channel; value-only fast paths.
    /// Sources whose marginal rate cannot exceed the running max are
    /// skipped (conditioning never increases the rate). Descent loops use
    /// search precision; oracles re-evaluate precisely.
    fn objective(&self, w: &[f64], aux: usize) -> Result<f64> {
        self.objective_at(w, aux, false)
    }

    fn objective_precise(&self, w: &[f64], aux: usize) -> Result<f64> {
        self.objective_at(w, aux, true)
    }

    fn objective_at(&self, w: &[f64], aux: usize, precise: bool) -> Result<f64> {
        let p = &self.lib.joint_pmf;
        let n = self.lib.joint_alphabet_size();
        let mut worst: f64 = 0.0;
        for &k in &self.source_order {
            if self.marginal_rate[k] <= worst + 1e-15 {
                break;
            }
            let nx = self.lib.alphabet_sizes[k];
            let mut joint = vec![0.0; nx * aux];
            for j in 0..n {
                if p[j] <= MASS_EPS {
                    continue;
                }
                let x = self.sym[k][j];
                let row = &w[j * aux..(j + 1) * aux];
                for (u, &v) in row.iter().enumerate() {
                    joint[x * aux + u] += p[j] * v;
                }
            }
            let target = self.targets.0[k];
            let rate = if self.hamming[k] && target <= 1e-14 {
                // H(X | U) directly.
                let mut pu = vec![0.0; aux];
                for x in 0..nx {
                    for u in 0..aux {
                        pu[u] += joint[x * aux + u];
                    }
                }
                (entropy_unchecked(&joint) - entropy_unchecked(&pu)).max(0.0)
            } else if self.binary_hamming[k] {
                conditional_binary_hamming_value(&joint, aux, target)
            } else if precise {
                conditional_rd_function(&joint, nx, aux, &self.lib.distortion[k], target)?.rate
            } else {
                crate::rd::conditional_rd_value_coarse(
                    &joint,
                    nx,
                    aux,
                    &self.lib.distortion[k],
                    target,
                )?
            };
            worst = worst.max(rate);
            if worst.is_nan() {
                return Err(Error::InvalidPmf("objective is NaN".into()));
            }
        }
        Ok(worst)
    }
}

/// Value-only conditional RD for binary sources under Hamming distortion
/// (mirrors the closed form in the rd module).
fn conditional_binary_hamming_value(joint: &[f64], nu: usize, target: f64) -> f64 {
    let h = crate::closed_form::binary_entropy;
    let mut rate0 = 0.0;
    let mut pu = vec![0.0; nu];
    let mut amin = vec![0.0; nu];
    let mut t0 = 0.0;
    for u in 0..nu {
        let w = joint[u] + joint[nu + u];
        pu[u] = w;
        if w <= MASS_EPS {
            continue;
        }
        let p1 = joint[nu + u] / w;
        let a = p1.min(1.0 - p1);
        amin[u] = a;
        t0 += w * a;
        rate0 += w * h(p1);
    }
    if target >= t0 {
        return 0.0;
    }
    if target <= 1e-14 {
        return rate0; // H(X|U)
    }
    let total = |s: f64| -> f64 {
        let t = 1.0 / (1.0 + (2f64).powf(s));
        pu.iter()
            .zip(amin.iter())
            .map(|(&w, &a)| w * t.min(a))
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = 60.0;
    for _ in 0..200 {
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
    let t = 1.0 / (1.0 + (2f64).powf(0.5 * (lo + hi)));
    let mut rate = 0.0;
    for u in 0..nu {
        if pu[u] > MASS_EPS && amin[u] > t {
            rate += pu[u] * (h(amin[u]) - h(t)).max(0.0);
        }
    }
    rate
}

/// Re-evaluate an auxiliary channel: returns (I(Xbar;U), max_l rate,
/// per-source rates). This is the witness-consistency entry point.
pub fn eval_aux_channel(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    aux: &AuxChannel,
) -> Result<(f64, f64, Vec<f64>)> {
    targets.validate(lib.num_sources())?;
    if aux.contexts != lib.joint_alphabet_size() {
        return Err(Error::ShapeMismatch("aux channel contexts".into()));
    }
    let ctx = EvalContext::new(lib, targets);
    let i = ctx.cache_information(&aux.matrix, aux.aux_size);
    let mut rates = Vec::with_capacity(lib.num_sources());
    let n = lib.joint_alphabet_size();
    for k in 0..lib.num_sources() {
        let nx = lib.alphabet_sizes[k];
        let mut joint = vec![0.0; nx * aux.aux_size];
        for j in 0..n {
            let x = ctx.sym[k][j];
            for u in 0..aux.aux_size {
                joint[x * aux.aux_size + u] += lib.joint_pmf[j] * aux.matrix[j * aux.aux_size + u];
            }
        }
        let r = conditional_rd_function(
            &joint,
            nx,
            aux.aux_size,
            &lib.distortion[k],
            targets.0[k],
        )?;
        rates.push(r.rate);
    }
    let worst = rates.iter().cloned().fold(0.0, f64::max);
    Ok((i, worst, rates))
}

// ---------------------------------------------------------------------------
// Structural bounds
// ---------------------------------------------------------------------------

/// Subset rates reused across a cache sweep: marginal RDs, the joint RD, and
/// every nonempty-subset joint RD for the super-genie bound.
#[derive(Debug, Clone)]
pub struct BoundContext {
    pub marginal_rates: Vec<f64>,
    pub joint_rate: f64,
    /// (subset bitmask, |S|, R_{X_S}(D_S))
    pub subset_rates: Vec<(usize, usize, f64)>,
}

pub fn bound_context(lib: &SourceLibrary, targets: &DistortionTuple) -> Result<BoundContext> {
    targets.validate(lib.num_sources())?;
    let l = lib.num_sources();
    if l > 8 {
        return Err(Error::InstanceTooLarge(format!("{} sources", l)));
    }
    let mut marginal_rates = Vec::with_capacity(l);
    for k in 0..l {
        let p = marginal(lib, &[k])?;
        marginal_rates.push(rd_function(&p, &lib.distortion[k], targets.0[k])?.rate);
    }
    let mut subset_rates = Vec::new();
    let mut joint_rate = 0.0;
    for mask in 1usize..(1 << l) {
        let idx: Vec<usize> = (0..l).filter(|&i| mask >> i & 1 == 1).collect();
        let rate = if idx.len() == 1 {
            marginal_rates[idx[0]]
        } else {
            let sub = sub_library(lib, &idx)?;
            let sub_targets = DistortionTuple(idx.iter().map(|&i| targets.0[i]).collect());
            joint_rd_function(&sub, &sub_targets)?.rate
        };
        if mask == (1 << l) - 1 {
            joint_rate = rate;
        }
        subset_rates.push((mask, idx.len(), rate));
    }
    Ok(BoundContext {
        marginal_rates,
        joint_rate,
        subset_rates,
    })
}

impl BoundContext {
    pub fn genie(&self, cache: f64) -> f64 {
        let rmax = self.marginal_rates.iter().cloned().fold(0.0, f64::max);
        (rmax - cache).max(0.0)
    }

    pub fn superuser(&self, cache: f64) -> f64 {
        let l = self.marginal_rates.len() as f64;
        ((self.joint_rate - cache) / l).max(0.0)
    }

    pub fn super_genie(&self, cache: f64) -> f64 {
        self.subset_rates
            .iter()
            .map(|&(_, s, r)| ((r - cache) / s as f64).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Genie bound: the rate if the demand were known before caching,
/// `[max_l R_{X_l}(D_l) - C]^+`.
///
/// ```
/// use rdcache::{dsbs_library, genie_bound, DistortionTuple};
/// let lib = dsbs_library(0.1).unwrap();
/// let lossless = DistortionTuple(vec![0.0, 0.0]);
/// let g = genie_bound(&lib, &lossless, 0.3).unwrap();
/// assert!((g - 0.7).abs() < 1e-12); // each marginal costs 1 bit
/// ```
pub fn genie_bound(lib: &SourceLibrary, targets: &DistortionTuple, cache: f64) -> Result<f64> {
    if cache < 0.0 {
        return Err(Error::InvalidCache { cache });
    }
    targets.validate(lib.num_sources())?;
    let mut rmax: f64 = 0.0;
    for k in 0..lib.num_sources() {
        let p = marginal(lib, &[k])?;
        rmax = rmax.max(rd_function(&p, &lib.distortion[k], targets.0[k])?.rate);
    }
    Ok((rmax - cache).max(0.0))
}

/// Superuser bound: `[(R_Xbar(D) - C) / L]^+`.
pub fn superuser_bound(lib: &SourceLibrary, targets: &DistortionTuple, cache: f64) -> Result<f64> {
    if cache < 0.0 {
        return Err(Error::InvalidCache { cache });
    }
    let joint = joint_rd_function(lib, targets)?.rate;
    Ok(((joint - cache) / lib.num_sources() as f64).max(0.0))
}

/// Super-genie bound: `max over S of [(R_{X_S}(D_S) - C) / |S|]^+`,
/// dominating both the genie and superuser bounds.
pub fn super_genie_bound(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    cache: f64,
) -> Result<f64> {
    if cache < 0.0 {
        return Err(Error::InvalidCache { cache });
    }
    Ok(bound_context(lib, targets)?.super_genie(cache))
}

// ---------------------------------------------------------------------------
// The descent solver
// ---------------------------------------------------------------------------

/// Approximate the tradeoff value at one (D, C) point by multistart
/// alternating descent over auxiliary channels, with feasibility enforced by
/// rejection. Returns the best point found with its witness channel.
pub fn rdc_value(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    cache: f64,
    opts: &SolverOpts,
) -> Result<TradeoffPoint> {
    rdc_value_with_starts(lib, targets, cache, opts, &[])
}

/// Same as [`rdc_value`] but with extra caller-provided starting channels
/// (used by curve sweeps to chain witnesses across cache points).
pub fn rdc_value_with_starts(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    cache: f64,
    opts: &SolverOpts,
    extra_starts: &[AuxChannel],
) -> Result<TradeoffPoint> {
    if !(cache.is_finite() && cache >= 0.0) {
        return Err(Error::InvalidCache { cache });
    }
    targets.validate(lib.num_sources())?;

    let mut aux = default_aux_size(lib, targets);
    if let Some(cap) = opts.aux_cap {
        aux = aux.min(cap.max(1));
    }
    let n = lib.joint_alphabet_size();
    let ctx = EvalContext::new(lib, targets);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    // Information-graded channels: caller-provided witnesses plus the
    // joint-quantization family when this call computes it. These drive the
    // disjoint time-share blends.
    let mut graded: Vec<Vec<f64>> = extra_starts
        .iter()
        .filter(|ch| ch.contexts == n)
        .map(|ch| embed_channel(&ch.matrix, n, ch.aux_size, aux))
        .collect();
    if opts.joint_family_starts {
        for ch in joint_family_battery(lib, targets)? {
            graded.push(embed_channel(&ch.matrix, n, ch.aux_size, aux));
        }
    }
    starts.extend(graded.iter().cloned());
    // Disjoint time-shares of witness pairs: on a linear stretch of the
    // tradeoff the chord between two good endpoints is optimal, and the
    // blend weight meeting I = C is closed-form.
    if graded.len() <= 10 {
        for a in 0..graded.len() {
            for b in a + 1..graded.len() {
                if let Some(w) = disjoint_pair_blend(&ctx, &graded[a], &graded[b], aux, cache) {
                    starts.push(w);
                }
            }
        }
    } else {
        let mut by_info: Vec<(f64, usize)> = graded
            .iter()
            .enumerate()
            .map(|(i, w)| (ctx.cache_information(w, aux), i))
            .collect();
        by_info.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in by_info.windows(2) {
            if let Some(w) =
                disjoint_pair_blend(&ctx, &graded[pair[0].1], &graded[pair[1].1], aux, cache)
            {
                starts.push(w);
            }
        }
        // The straddling pair: the best below C against the best above C.
        let below = by_info.iter().rev().find(|&&(i, _)| i <= cache);
        let above = by_info.iter().find(|&&(i, _)| i > cache);
        if let (Some(&(_, a)), Some(&(_, b))) = (below, above) {
            if let Some(w) = disjoint_pair_blend(&ctx, &graded[a], &graded[b], aux, cache) {
                starts.push(w);
            }
        }
    }
    starts.extend(structured_starts(lib, targets, cache, aux, &ctx, opts)?);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for i in 0..opts.restarts {
        let alpha = if i % 2 == 0 { 1.0 } else { 0.25 };
        starts.push(random_channel(&mut rng, n, aux, alpha));
    }

    // Make every start feasible. Infeasible starts contribute two variants:
    // a same-symbol blend toward the constant channel, and (when a column is
    // spare) a disjoint-block blend, which time-shares the start with the
    // constant channel and makes the cache information exactly linear in
    // the blend weight.
    let mut feasible: Vec<Vec<f64>> = Vec::with_capacity(starts.len() * 2);
    for w in starts {
        if ctx.cache_information(&w, aux) <= cache + FEAS_EPS {
            feasible.push(w);
            continue;
        }
        if let Some(d) = disjoint_blend(&ctx, &w, aux, cache) {
            feasible.push(d);
        }
        feasible.push(blend_to_feasible(&ctx, w, aux, cache));
    }
    // Distinct starts only: blends frequently collapse onto each other
    // (every start becomes the constant channel at C = 0, for example).
    {
        let mut seen: Vec<Vec<u64>> = Vec::new();
        feasible.retain(|w| {
            let key: Vec<u64> = w.iter().map(|v| (v * 1e9).round() as u64).collect();
            if seen.contains(&key) {
                false
            } else {
                seen.push(key);
                true
            }
        });
    }

    let results: Vec<(f64, usize, Vec<f64>)> = feasible
        .par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let (obj, w) = pattern_descent(&ctx, start.clone(), aux, cache, opts);
            (obj, idx, w)
        })
        .collect();

    let best = results
        .into_iter()
        .min_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        })
        .ok_or_else(|| Error::InvalidPmf("no starts".into()))?;

    let witness = AuxChannel {
        matrix: best.2,
        contexts: n,
        aux_size: aux,
    };
    // Final consistency pass through the full conditional-RD path.
    let (_, rate, _) = eval_aux_channel(lib, targets, &witness)?;
    Ok(TradeoffPoint {
        cache,
        distortions: targets.clone(),
        rate: rate.min(best.0),
        witness: Some(witness),
        method: Method::Solver,
    })
}

fn embed_channel(w: &[f64], n: usize, from_aux: usize, to_aux: usize) -> Vec<f64> {
    if from_aux == to_aux {
        return w.to_vec();
    }
    let mut out = vec![0.0; n * to_aux];
    for j in 0..n {
        for u in 0..from_aux {
            let tu = u.min(to_aux - 1);
            out[j * to_aux + tu] += w[j * from_aux + u];
        }
    }
    out
}

fn random_channel(rng: &mut ChaCha8Rng, n: usize, aux: usize, alpha: f64) -> Vec<f64> {
    let gamma = rand_distr_gamma(alpha);
    let mut w = vec![0.0; n * aux];
    for j in 0..n {
        let mut sum = 0.0;
        for u in 0..aux {
            let g = gamma.sample(rng).max(1e-12);
            w[j * aux + u] = g;
            sum += g;
        }
        for u in 0..aux {
            w[j * aux + u] /= sum;
        }
    }
    w
}

fn rand_distr_gamma(alpha: f64) -> impl Distribution<f64> {
    // Dirichlet rows via normalized Gamma draws.
    rand::distributions::Standard.map(move |u: f64| {
        // Inverse-CDF-free sampling: for alpha = 1 this is Exp(1); for
        // smaller alpha use the Weibull-like transform u^(1/alpha) * Exp(1)
        // which keeps the draw positive and spiky. The start distribution
        // only needs diversity, not exact Dirichlet marginals.
        let e = -(1.0 - u).max(1e-16).ln();
        if (alpha - 1.0).abs() < 1e-12 {
            e
        } else {
            e * rand::random::<f64>().powf(1.0 / alpha - 1.0).max(1e-12)
        }
    })
}

/// Time-share two channels on disjoint auxiliary blocks with the weight
/// chosen so the blend's cache information lands exactly on `cache`
/// (information is linear in the weight across disjoint blocks).
fn disjoint_pair_blend(
    ctx: &EvalContext,
    wa: &[f64],
    wb: &[f64],
    aux: usize,
    cache: f64,
) -> Option<Vec<f64>> {
    let n = ctx.lib.joint_alphabet_size();
    let ca = compress_channel(ctx, wa, aux);
    let cb = compress_channel(ctx, wb, aux);
    let mut ua = ca.1;
    let mut ub = cb.1;
    let (wa, wb) = (ca.0, cb.0);
    if ua == 0 || ub == 0 {
        return None;
    }
    while ua + ub > aux {
        // Truncation only bites when both witnesses genuinely need many
        // columns; drop from the wider one.
        if ua >= ub && ua > 1 {
            ua -= 1;
        } else if ub > 1 {
            ub -= 1;
        } else {
            return None;
        }
    }
    let ia = ctx.cache_information(&wa, aux);
    let ib = ctx.cache_information(&wb, aux);
    let (lo, hi, wlo, whi, ulo, uhi) = if ia <= ib {
        (ia, ib, &wa, &wb, ua, ub)
    } else {
        (ib, ia, &wb, &wa, ub, ua)
    };
    if cache < lo || hi - lo < 1e-12 {
        return None;
    }
    // Weight on the high-information branch.
    let t = ((cache - lo) / (hi - lo)).clamp(0.0, 1.0);
    let mut out = vec![0.0; n * aux];
    for j in 0..n {
        for slot in 0..ulo {
            out[j * aux + slot] += (1.0 - t) * wlo[j * aux + slot];
        }
        for slot in 0..uhi {
            out[j * aux + ulo + slot] += t * whi[j * aux + slot];
        }
        // Renormalize: truncated columns carried little mass.
        let sum: f64 = out[j * aux..(j + 1) * aux].iter().sum();
        if sum > 0.0 {
            for v in &mut out[j * aux..(j + 1) * aux] {
                *v /= sum;
            }
        } else {
            out[j * aux] = 1.0;
        }
    }
    Some(out)
}

/// Merge auxiliary columns with matching posteriors (they are redundant for
/// both the cache information and the objective), drop near-empty columns,
/// and pack the survivors to the front. Returns the packed channel and the
/// number of used columns.
fn compress_channel(ctx: &EvalContext, w: &[f64], aux: usize) -> (Vec<f64>, usize) {
    let n = ctx.lib.joint_alphabet_size();
    let p = &ctx.lib.joint_pmf;
    // Posterior p(xbar | u) and mass per column.
    let mut mass = vec![0.0; aux];
    let mut post = vec![vec![0.0; n]; aux];
    for u in 0..aux {
        for j in 0..n {
            let v = p[j] * w[j * aux + u];
            mass[u] += v;
            post[u][j] = v;
        }
        if mass[u] > 0.0 {
            for v in post[u].iter_mut() {
                *v /= mass[u];
            }
        }
    }
    // Group columns by posterior.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for u in 0..aux {
        if mass[u] <= 1e-9 {
            continue;
        }
        let mut placed = false;
        for g in groups.iter_mut() {
            let rep = g[0];
            let close = post[rep]
                .iter()
                .zip(post[u].iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                < 1e-6;
            if close {
                g.push(u);
                placed = true;
                break;
            }
        }
        if !placed {
            groups.push(vec![u]);
        }
    }
    let used = groups.len().max(1);
    let mut out = vec![0.0; n * aux];
    for j in 0..n {
        for (slot, g) in groups.iter().enumerate() {
            let mut v = 0.0;
            for &u in g {
                v += w[j * aux + u];
            }
            out[j * aux + slot] = v;
        }
        // Columns dropped for lack of mass: fold the remainder into slot 0.
        let sum: f64 = out[j * aux..(j + 1) * aux].iter().sum();
        if sum < 1.0 {
            out[j * aux] += 1.0 - sum;
        } else if sum > 1.0 {
            for v in &mut out[j * aux..(j + 1) * aux] {
                *v /= sum;
            }
        }
    }
    (out, used)
}

/// Time-share `w` with the constant channel on a disjoint auxiliary block:
/// column 0 carries the constant branch, the used columns of `w` are packed
/// into the remaining slots. The blend has I = t * I(w), so t = C / I(w)
/// is exactly feasible.
fn disjoint_blend(ctx: &EvalContext, w: &[f64], aux: usize, cache: f64) -> Option<Vec<f64>> {
    let n = ctx.lib.joint_alphabet_size();
    // Columns of w carrying mass.
    let mut used: Vec<usize> = (0..aux)
        .filter(|&u| (0..n).any(|j| w[j * aux + u] > 1e-12))
        .collect();
    if used.len() + 1 > aux {
        // Drop the least-used column into the last kept slot.
        while used.len() + 1 > aux {
            used.pop();
        }
        if used.is_empty() {
            return None;
        }
    }
    let iw = ctx.cache_information(w, aux);
    if iw <= 0.0 {
        return None;
    }
    let t = (cache / iw).min(1.0).max(0.0);
    let mut out = vec![0.0; n * aux];
    for j in 0..n {
        let mut rest = 0.0;
        for (slot, &u) in used.iter().enumerate() {
            let v = t * w[j * aux + u];
            out[j * aux + 1 + slot] += v;
            rest += v;
        }
        // Unpacked columns' mass joins the constant branch.
        out[j * aux] = (1.0 - rest).max(0.0);
    }
    Some(out)
}

fn blend_to_feasible(ctx: &EvalContext, w: Vec<f64>, aux: usize, cache: f64) -> Vec<f64> {
    let i = ctx.cache_information(&w, aux);
    if i <= cache + FEAS_EPS {
        return w;
    }
    let n = ctx.lib.joint_alphabet_size();
    let constant = AuxChannel::constant(n, aux).matrix;
    let blend = |t: f64| -> Vec<f64> {
        w.iter()
            .zip(constant.iter())
            .map(|(&a, &c)| (1.0 - t) * a + t * c)
            .collect()
    };
    // I(t) is convex with I(1) = 0, so {t : I <= C} is an interval ending
    // at 1; bisect for its left endpoint.
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ctx.cache_information(&blend(mid), aux) <= cache {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    blend(hi)
}

/// Projected coordinate-perturbation descent: move a row toward a corner of
/// the simplex, accept only feasible moves that reduce the max objective,
/// shrink the step when a sweep stalls.
fn pattern_descent(
    ctx: &EvalContext,
    mut w: Vec<f64>,
    aux: usize,
    cache: f64,
    opts: &SolverOpts,
) -> (f64, Vec<f64>) {
    let n = ctx.lib.joint_alphabet_size();
    let mut obj = match ctx.objective(&w, aux) {
        Ok(v) => v,
        Err(_) => return (f64::INFINITY, w),
    };
    if obj <= 1e-12 {
        return (obj, w);
    }
    let mut step = 0.5;
    let mut sweeps = 0;
    let mut cand = w.clone();
    while step >= opts.min_step && sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut improved = false;
        for j in 0..n {
            if ctx.lib.joint_pmf[j] <= MASS_EPS {
                continue;
            }
            for u in 0..aux {
                let row = &w[j * aux..(j + 1) * aux];
                if row[u] >= 1.0 - 1e-12 {
                    continue;
                }
                cand.copy_from_slice(&w);
                for v in 0..aux {
                    let e = if v == u { 1.0 } else { 0.0 };
                    cand[j * aux + v] = (1.0 - step) * row[v] + step * e;
                }
                if ctx.cache_information(&cand, aux) > cache + FEAS_EPS {
                    continue;
                }
                if let Ok(o) = ctx.objective(&cand, aux) {
                    if o < obj - 1e-12 {
                        w.copy_from_slice(&cand);
                        obj = o;
                        improved = true;
                        if obj <= 1e-12 {
                            return (obj, w);
                        }
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (obj, w)
}

fn structured_starts(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    cache: f64,
    aux: usize,
    ctx: &EvalContext,
    opts: &SolverOpts,
) -> Result<Vec<Vec<f64>>> {
    let n = lib.joint_alphabet_size();
    let l = lib.num_sources();
    let mut starts = Vec::new();

    // Constant U.
    starts.push(AuxChannel::constant(n, aux).matrix);

    // Quantized Xbar.
    let mut ident = vec![0.0; n * aux];
    for j in 0..n {
        ident[j * aux + (j % aux)] = 1.0;
    }
    starts.push(ident);

    // Marginal-code start on the worst source.
    let mut worst = (0usize, f64::NEG_INFINITY);
    let mut marg_results = Vec::with_capacity(l);
    for k in 0..l {
        let p = marginal(lib, &[k])?;
        let r = rd_function(&p, &lib.distortion[k], targets.0[k])?;
        if r.rate > worst.1 {
            worst = (k, r.rate);
        }
        marg_results.push(r);
    }
    {
        let k = worst.0;
        let r = &marg_results[k];
        let m = lib.recon_alphabet_sizes[k];
        let mut w = vec![0.0; n * aux];
        for j in 0..n {
            let x = ctx.sym[k][j];
            for mm in 0..m {
                let u = mm.min(aux - 1);
                w[j * aux + u] += r.achieving_channel.matrix[x * m + mm];
            }
        }
        starts.push(w);
    }

    // Common-part start: the component labeling of the co-occurrence graph
    // is a deterministic function of every source separately, so caching it
    // costs exactly its entropy and helps every demand at once.
    {
        let gk = crate::common_info::gacs_korner_zero(lib);
        let nc = gk.witness.num_components;
        if nc > 1 {
            let mut w = vec![0.0; n * aux];
            for j in 0..n {
                let comp = gk.witness.component_of(0, lib.symbol_of(j, 0)).min(aux - 1);
                w[j * aux + comp] = 1.0;
            }
            starts.push(w);
        }
    }

    // Deterministic partition starts on tiny joint alphabets.
    if n <= 5 {
        for part in set_partitions(n, aux) {
            let mut w = vec![0.0; n * aux];
            for (j, &b) in part.iter().enumerate() {
                w[j * aux + b] = 1.0;
            }
            starts.push(w);
        }
    }

    // Coarse aux-2 scan start.
    if opts.coarse_scan && n <= 4 && aux >= 2 {
        if let Some(best) = coarse_scan_best(ctx, cache, 8) {
            starts.push(embed_channel(&best, n, 2, aux));
        }
    }

    Ok(starts)
}

/// All set partitions of {0..n-1} into at most `max_blocks` blocks, encoded
/// as block labels in first-appearance order.
fn set_partitions(n: usize, max_blocks: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(
        i: usize,
        n: usize,
        used: usize,
        max_blocks: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=used.min(max_blocks - 1) {
            cur[i] = b;
            let nused = used.max(b + 1);
            rec(i + 1, n, nused, max_blocks, cur, out);
        }
    }
    rec(0, n, 0, max_blocks, &mut cur, &mut out);
    out
}

/// Feasible minimum over an aux-2 channel grid at the given resolution.
fn coarse_scan_best(ctx: &EvalContext, cache: f64, steps: usize) -> Option<Vec<f64>> {
    let n = ctx.lib.joint_alphabet_size();
    let rows: Vec<[f64; 2]> = (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            [1.0 - t, t]
        })
        .collect();
    let total = rows.len().pow(n as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let mut w = vec![0.0; n * 2];
        for j in 0..n {
            w[j * 2] = rows[idx[j]][0];
            w[j * 2 + 1] = rows[idx[j]][1];
        }
        if ctx.cache_information(&w, 2) <= cache + FEAS_EPS {
            if let Ok(o) = ctx.objective(&w, 2) {
                if best.as_ref().map_or(true, |b| o < b.0 - 1e-15) {
                    best = Some((o, w));
                }
            }
        }
        // mixed-radix increment
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < rows.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == n {
                break;
            }
        }
    }
    best.map(|b| b.1)
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// Documented slack of the exhaustive grid relative to the unrestricted
/// optimum: a resolution term (how far the grid minimum may sit above the
/// continuum optimum at the same auxiliary cardinality) plus a constant
/// cardinality allowance (the guard caps the grid auxiliary at three
/// symbols, which cannot express every joint-quantization witness, e.g.
/// zero-rate points need a product reconstruction alphabet). Heuristic
/// constants, validated by the acceptance suite.
pub fn grid_gap(grid_steps: usize) -> f64 {
    1.6 / grid_steps.max(1) as f64 + 0.08
}

/// Exhaustive grid search over auxiliary channels at resolution
/// 1/grid_steps. Guarded to |Xbar| <= 4 and aux_size <= 3; serves as the
/// independent oracle for the descent solver.
pub fn rdc_brute_force(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    cache: f64,
    grid_steps: usize,
    aux_size: usize,
) -> Result<TradeoffPoint> {
    if !(cache.is_finite() && cache >= 0.0) {
        return Err(Error::InvalidCache { cache });
    }
    targets.validate(lib.num_sources())?;
    let n = lib.joint_alphabet_size();
    if n > 4 || aux_size > 3 {
        return Err(Error::InstanceTooLarge(format!(
            "brute force needs |Xbar| <= 4 and aux <= 3, got {} and {}",
            n, aux_size
        )));
    }
    if aux_size == 0 || grid_steps == 0 {
        return Err(Error::ShapeMismatch("empty grid".into()));
    }

    // All pmf rows with entries k/grid_steps.
    let rows = simplex_grid(aux_size, grid_steps);
    let nrows = rows.len();
    let total = nrows.pow(n as u32);
    if total > 700_000_000 {
        return Err(Error::InstanceTooLarge(format!(
            "{} grid channels",
            total
        )));
    }

    let ctx = EvalContext::new(lib, targets);
    let row_entropy: Vec<f64> = rows.iter().map(|r| entropy_unchecked(r)).collect();

    // Parallelize over the first row index; inner indices run serially.
    let inner = nrows.pow((n - 1) as u32);
    let best = (0..nrows)
        .into_par_iter()
        .map(|first| {
            let mut best: Option<(f64, usize)> = None;
            let mut idx = vec![0usize; n];
            idx[0] = first;
            let mut w = vec![0.0; n * aux_size];
            for rest in 0..inner {
                let mut r = rest;
                for j in 1..n {
                    idx[j] = r % nrows;
                    r /= nrows;
                }
                // I(Xbar;U) = H(U) - sum_j p_j H(row_j)
                let mut pu = [0.0f64; 3];
                let mut hcond = 0.0;
                for j in 0..n {
                    let p = lib.joint_pmf[j];
                    if p <= MASS_EPS {
                        continue;
                    }
                    let row = &rows[idx[j]];
                    for u in 0..aux_size {
                        pu[u] += p * row[u];
                    }
                    hcond += p * row_entropy[idx[j]];
                }
                let i = (entropy_unchecked(&pu[..aux_size]) - hcond).max(0.0);
                if i > cache + FEAS_EPS {
                    continue;
                }
                for j in 0..n {
                    w[j * aux_size..(j + 1) * aux_size].copy_from_slice(&rows[idx[j]]);
                }
                if let Ok(o) = ctx.objective_precise(&w, aux_size) {
                    let flat = first * inner + rest;
                    if best.as_ref().map_or(true, |b| {
                        o < b.0 - 1e-15 || (o < b.0 + 1e-15 && flat < b.1)
                    }) {
                        best = Some((o, flat));
                    }
                }
            }
            best
        })
        .reduce(
            || None,
            |a, b| match (a, b) {
                (None, x) => x,
                (x, None) => x,
                (Some(a), Some(b)) => {
                    if b.0 < a.0 - 1e-15 || (b.0 < a.0 + 1e-15 && b.1 < a.1) {
                        Some(b)
                    } else {
                        Some(a)
                    }
                }
            },
        );

    let (rate, flat) = best.ok_or_else(|| {
        Error::InfeasibleTarget(vec![cache]) // no feasible grid point (cannot happen: constant row is always feasible)
    })?;
    // Rebuild the witness from the flat index.
    let mut idx = vec![0usize; n];
    idx[0] = flat / inner;
    let mut r = flat % inner;
    for j in 1..n {
        idx[j] = r % nrows;
        r /= nrows;
    }
    let mut w = vec![0.0; n * aux_size];
    for j in 0..n {
        w[j * aux_size..(j + 1) * aux_size].copy_from_slice(&rows[idx[j]]);
    }
    Ok(TradeoffPoint {
        cache,
        distortions: targets.clone(),
        rate,
        witness: Some(AuxChannel {
            matrix: w,
            contexts: n,
            aux_size,
        }),
        method: Method::Oracle,
    })
}

/// All compositions of `steps` into `parts` nonnegative integers, as pmfs.
fn simplex_grid(parts: usize, steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; parts];
    fn rec(i: usize, left: usize, parts: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if i == parts - 1 {
            cur[i] = left;
            out.push(cur.iter().map(|&k| k as f64 / steps as f64).collect());
            return;
        }
        for k in 0..=left {
            cur[i] = k;
            rec(i + 1, left - k, parts, steps, cur, out);
        }
    }
    rec(0, steps, parts, steps, &mut cur, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Curves and critical capacities
// ---------------------------------------------------------------------------

/// One cache point on a sampled tradeoff curve.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub cache: f64,
    pub rate_raw: f64,
    /// Monotone (non-increasing) envelope of the raw rates.
    pub rate_envelope: f64,
    pub genie: f64,
    pub superuser: f64,
    pub super_genie: f64,
    pub witness_aux_size: usize,
    pub converged: bool,
}

/// A full cache sweep with bounds.
#[derive(Debug, Clone)]
pub struct TradeoffCurve {
    pub distortions: DistortionTuple,
    pub points: Vec<CurvePoint>,
    /// Witness channels per point, reused by the critical-capacity
    /// refinements.
    pub witnesses: Vec<Option<AuxChannel>>,
    /// Set when the raw solver output violated monotonicity by more than
    /// 1e-4 somewhere along the sweep.
    pub monotonicity_warning: bool,
}

/// The cache-independent start battery for one (library, targets) pair:
/// witnesses of the joint RD at a family of scaled targets. Curve sweeps
/// compute this once and share it across cache points.
pub fn joint_family_battery(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
) -> Result<Vec<AuxChannel>> {
    let l = lib.num_sources();
    let n = lib.joint_alphabet_size();
    let mut d0 = Vec::with_capacity(l);
    for k in 0..l {
        let p = marginal(lib, &[k])?;
        let d = &lib.distortion[k];
        let mut best = f64::INFINITY;
        for mm in 0..d.recon_size {
            let mut s = 0.0;
            for (x, &px) in p.iter().enumerate() {
                s += px * d.get(mm, x);
            }
            best = best.min(s);
        }
        d0.push(best);
    }
    let m: usize = lib.recon_alphabet_sizes.iter().product();
    let mut out = Vec::new();
    for f in [0.0, 0.15, 0.3, 0.5, 0.7, 0.85] {
        let scaled = DistortionTuple(
            (0..l)
                .map(|k| targets.0[k] + f * (d0[k] - targets.0[k]).max(0.0))
                .collect(),
        );
        if let Ok(jr) = joint_rd_function(lib, &scaled) {
            out.push(AuxChannel {
                matrix: jr.achieving_channel.matrix,
                contexts: n,
                aux_size: m,
            });
        }
    }
    Ok(out)
}

/// Sample the tradeoff at each cache capacity, chaining each point's witness
/// into the next start set (a witness feasible at C is feasible at C' > C,
/// which keeps the raw curve non-increasing up to descent noise).
pub fn rdc_curve(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    cache_grid: &[f64],
    opts: &SolverOpts,
) -> Result<TradeoffCurve> {
    if cache_grid.is_empty() {
        return Err(Error::ShapeMismatch("empty cache grid".into()));
    }
    let ctx = bound_context(lib, targets)?;
    let mut order: Vec<usize> = (0..cache_grid.len()).collect();
    order.sort_by(|&a, &b| cache_grid[a].partial_cmp(&cache_grid[b]).unwrap());

    // Shared start battery: computed once, fed to every point.
    let battery = joint_family_battery(lib, targets)?;
    let point_opts = SolverOpts {
        joint_family_starts: false,
        ..opts.clone()
    };

    let mut results: Vec<Option<CurvePoint>> = vec![None; cache_grid.len()];
    let mut witnesses: Vec<Option<AuxChannel>> = vec![None; cache_grid.len()];
    let mut prev_witness: Option<AuxChannel> = None;
    for &i in &order {
        let c = cache_grid[i];
        let mut extra: Vec<AuxChannel> = battery.clone();
        extra.extend(prev_witness.iter().cloned());
        let pt = rdc_value_with_starts(lib, targets, c, &point_opts, &extra)?;
        let aux_size = pt.witness.as_ref().map_or(0, |w| w.aux_size);
        results[i] = Some(CurvePoint {
            cache: c,
            rate_raw: pt.rate,
            rate_envelope: pt.rate,
            genie: ctx.genie(c),
            superuser: ctx.superuser(c),
            super_genie: ctx.super_genie(c),
            witness_aux_size: aux_size,
            converged: true,
        });
        prev_witness = pt.witness.clone();
        witnesses[i] = pt.witness;
    }
    let mut points: Vec<CurvePoint> = results.into_iter().map(|p| p.unwrap()).collect();

    // Refinement pass: re-solve each point seeded with both neighbours'
    // witnesses (a higher-cache witness enters through the blend machinery).
    let refine_opts = SolverOpts {
        restarts: opts.restarts.min(4),
        joint_family_starts: false,
        max_sweeps: opts.max_sweeps.min(80),
        ..opts.clone()
    };
    for pass in 0..3 {
        let mut improved = false;
        for &i in &order {
            let c = cache_grid[i];
            let pos = order.iter().position(|&j| j == i).unwrap();
            let mut extra: Vec<AuxChannel> = Vec::new();
            for delta in [-2isize, -1, 1, 2] {
                let k = pos as isize + delta;
                if k >= 0 && (k as usize) < order.len() {
                    if let Some(w) = &witnesses[order[k as usize]] {
                        extra.push(w.clone());
                    }
                }
            }
            if let Some(w) = &witnesses[i] {
                extra.push(w.clone());
            }
            if extra.is_empty() {
                continue;
            }
            let pt = rdc_value_with_starts(lib, targets, c, &refine_opts, &extra)?;
            if pt.rate < points[i].rate_raw - 1e-9 {
                points[i].rate_raw = pt.rate;
                points[i].witness_aux_size = pt.witness.as_ref().map_or(0, |w| w.aux_size);
                witnesses[i] = pt.witness;
                improved = true;
            }
        }
        if !improved && pass > 0 {
            break;
        }
    }

    // Monotone envelope along ascending cache, plus the warning check.
    let mut warning = false;
    let mut best = f64::INFINITY;
    for &i in &order {
        if points[i].rate_raw > best + 1e-4 {
            warning = true;
        }
        best = best.min(points[i].rate_raw);
        points[i].rate_envelope = best;
    }

    Ok(TradeoffCurve {
        distortions: targets.clone(),
        points,
        witnesses,
        monotonicity_warning: warning,
    })
}

/// Tolerance for declaring the solver rate equal to a bound.
pub const CRITICAL_TOL: f64 = 1e-4;

/// Largest cache capacity at which the tradeoff still meets the genie bound,
/// searched on the curve grid restricted to [0, R_Xbar(D)] and refined by
/// bisection between the last matching and first failing grid points.
pub fn critical_capacity_genie(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    curve: &TradeoffCurve,
    opts: &SolverOpts,
) -> Result<f64> {
    let ctx = bound_context(lib, targets)?;
    let matches = |p: &CurvePoint| (p.rate_envelope - p.genie).abs() <= CRITICAL_TOL;
    critical_from_curve(lib, targets, curve, opts, ctx.joint_rate, true, &|c, r| {
        (r - ctx.genie(c)).abs() <= CRITICAL_TOL
    }, &matches)
}

/// Smallest cache capacity at which the tradeoff meets the superuser bound,
/// refined by bisection between grid neighbours.
pub fn critical_capacity_superuser(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    curve: &TradeoffCurve,
    opts: &SolverOpts,
) -> Result<f64> {
    let ctx = bound_context(lib, targets)?;
    let matches = |p: &CurvePoint| (p.rate_envelope - p.superuser).abs() <= CRITICAL_TOL;
    critical_from_curve(lib, targets, curve, opts, ctx.joint_rate, false, &|c, r| {
        (r - ctx.superuser(c)).abs() <= CRITICAL_TOL
    }, &matches)
}

fn critical_from_curve(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    curve: &TradeoffCurve,
    opts: &SolverOpts,
    cache_limit: f64,
    largest: bool,
    pred: &dyn Fn(f64, f64) -> bool,
    matches: &dyn Fn(&CurvePoint) -> bool,
) -> Result<f64> {
    let mut pts: Vec<&CurvePoint> = curve
        .points
        .iter()
        .filter(|p| p.cache <= cache_limit + 1e-9)
        .collect();
    pts.sort_by(|a, b| a.cache.partial_cmp(&b.cache).unwrap());
    if pts.is_empty() {
        return Err(Error::ShapeMismatch("curve has no points in range".into()));
    }

    // Refinement evals reuse the curve's witnesses so they carry curve
    // quality rather than standalone-solve noise, with one polish round
    // seeded by the first pass.
    let nearby: Vec<AuxChannel> = curve
        .witnesses
        .iter()
        .flatten()
        .cloned()
        .collect();
    let eval = |c: f64| -> Result<f64> {
        let first = rdc_value_with_starts(lib, targets, c, opts, &nearby)?;
        let mut extra = nearby.clone();
        extra.extend(first.witness.iter().cloned());
        let second = rdc_value_with_starts(lib, targets, c, opts, &extra)?;
        Ok(first.rate.min(second.rate))
    };

    if largest {
        // boundary between the matching prefix and the failing suffix
        let mut last_ok: Option<f64> = None;
        let mut first_bad: Option<f64> = None;
        for p in &pts {
            if matches(p) {
                if first_bad.is_none() {
                    last_ok = Some(p.cache);
                }
            } else if last_ok.is_some() && first_bad.is_none() {
                first_bad = Some(p.cache);
            } else if last_ok.is_none() && first_bad.is_none() {
                first_bad = Some(p.cache);
            }
        }
        match (last_ok, first_bad) {
            (Some(ok), None) => Ok(ok.min(cache_limit)),
            (Some(ok), Some(bad)) => {
                let mut lo = ok;
                let mut hi = bad;
                for _ in 0..12 {
                    if hi - lo < 1e-4 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if pred(mid, eval(mid)?) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(lo)
            }
            (None, _) => {
                // fails already at the smallest grid point; bisect below it
                let mut lo = 0.0;
                let mut hi = pts[0].cache;
                if pred(hi, pts[0].rate_envelope) {
                    return Ok(hi);
                }
                for _ in 0..12 {
                    if hi - lo < 1e-4 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if pred(mid, eval(mid)?) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(lo)
            }
        }
    } else {
        // smallest matching point, refined downward
        let first_ok = pts.iter().position(|p| matches(p));
        match first_ok {
            None => Ok(cache_limit),
            Some(0) => Ok(pts[0].cache),
            Some(k) => {
                let mut lo = pts[k - 1].cache;
                let mut hi = pts[k].cache;
                for _ in 0..12 {
                    if hi - lo < 1e-4 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if pred(mid, eval(mid)?) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Ok(hi)
            }
        }
    }
}

/// Evaluate the tradeoff through its network formulation: the caching value
/// is the min-max corner of the achievable (common, private) rate region at
/// common rate C. Shares the witness search with [`rdc_value`] and serves as
/// a consistency cross-check of the two objective forms, not an independent
/// algorithm.
pub fn gray_wyner_min_max(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    cache: f64,
    opts: &SolverOpts,
) -> Result<f64> {
    let pt = rdc_value(lib, targets, cache, opts)?;
    let witness = pt
        .witness
        .as_ref()
        .ok_or_else(|| Error::InvalidPmf("solver returned no witness".into()))?;
    // Region tuple of the witness: common rate I(Xbar;U) and private rates
    // R_{X_l|U}(D_l); the caching objective is the max private rate.
    let (common, _, rates) = eval_aux_channel(lib, targets, witness)?;
    if common > cache + 1e-9 {
        return Err(Error::InvalidCache { cache });
    }
    Ok(rates.iter().cloned().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::binary_entropy;
    use crate::source::dsbs_library;

    fn zero2() -> DistortionTuple {
        DistortionTuple(vec![0.0, 0.0])
    }

    #[test]
    fn genie_bound_values() {
        let lib = dsbs_library(0.1).unwrap();
        let g0 = genie_bound(&lib, &zero2(), 0.0).unwrap();
        assert!((g0 - 1.0).abs() < 1e-12);
        let g = genie_bound(&lib, &zero2(), 0.3).unwrap();
        assert!((g - 0.7).abs() < 1e-12);
        let ghuge = genie_bound(&lib, &zero2(), 10.0).unwrap();
        assert_eq!(ghuge, 0.0);
    }

    #[test]
    fn superuser_bound_values() {
        let lib = dsbs_library(0.1).unwrap();
        let h = 1.0 + binary_entropy(0.1);
        let s = superuser_bound(&lib, &zero2(), 0.5).unwrap();
        assert!((s - (h - 0.5) / 2.0).abs() < 1e-7);
        assert!((s - 0.48450).abs() < 1e-4);
        let s0 = superuser_bound(&lib, &zero2(), 0.0).unwrap();
        assert!((s0 - h / 2.0).abs() < 1e-7);
        let sfull = superuser_bound(&lib, &zero2(), h).unwrap();
        assert!(sfull.abs() < 1e-7);
    }

    #[test]
    fn super_genie_dominates_both() {
        let lib = dsbs_library(0.1).unwrap();
        for c in [0.0, 0.3, 0.5, 0.9, 1.3] {
            let sg = super_genie_bound(&lib, &zero2(), c).unwrap();
            let g = genie_bound(&lib, &zero2(), c).unwrap();
            let s = superuser_bound(&lib, &zero2(), c).unwrap();
            assert!(sg >= g - 1e-9, "C = {}", c);
            assert!(sg >= s - 1e-9, "C = {}", c);
        }
        // singleton subsets reproduce the genie, the full set the superuser
        let sg = super_genie_bound(&lib, &zero2(), 0.5).unwrap();
        assert!((sg - 0.5f64.max(0.48450)).abs() < 1e-4);
    }

    #[test]
    fn solver_at_zero_cache_equals_max_marginal() {
        let lib = dsbs_library(0.1).unwrap();
        let opts = SolverOpts {
            restarts: 4,
            ..Default::default()
        };
        let pt = rdc_value(&lib, &zero2(), 0.0, &opts).unwrap();
        assert!((pt.rate - 1.0).abs() < 1e-5, "rate {}", pt.rate);
    }

    #[test]
    fn solver_vanishes_above_joint_rate() {
        let lib = dsbs_library(0.1).unwrap();
        let h = 1.0 + binary_entropy(0.1);
        let opts = SolverOpts {
            restarts: 4,
            ..Default::default()
        };
        let pt = rdc_value(&lib, &zero2(), h + 0.01, &opts).unwrap();
        assert!(pt.rate < 1e-5, "rate {}", pt.rate);
    }

    #[test]
    fn witness_reproduces_point() {
        let lib = dsbs_library(0.1).unwrap();
        let opts = SolverOpts {
            restarts: 6,
            ..Default::default()
        };
        let pt = rdc_value(&lib, &zero2(), 0.9, &opts).unwrap();
        let w = pt.witness.as_ref().unwrap();
        let (i, rate, _) = eval_aux_channel(&lib, &zero2(), w).unwrap();
        assert!(i <= 0.9 + 1e-9);
        assert!((rate - pt.rate).abs() < 1e-8);
    }

    #[test]
    fn brute_force_matches_constant_at_zero_cache() {
        let lib = dsbs_library(0.1).unwrap();
        let pt = rdc_brute_force(&lib, &zero2(), 0.0, 8, 1).unwrap();
        assert!((pt.rate - 1.0).abs() < 1e-9);
    }

    #[test]
    fn brute_force_guards() {
        let lib = dsbs_library(0.1).unwrap();
        assert!(matches!(
            rdc_brute_force(&lib, &zero2(), 0.5, 8, 4),
            Err(Error::InstanceTooLarge(_))
        ));
        assert!(rdc_value(&lib, &zero2(), -0.5, &SolverOpts::default()).is_err());
    }

    #[test]
    fn dsbs_exact_segment_solver_accuracy() {
        // one representative point of the exact segment
        let rho = 0.1;
        let lib = dsbs_library(rho).unwrap();
        let h = 1.0 + binary_entropy(rho);
        let kw = crate::closed_form::wyner_dsbs(rho);
        let c = 0.5 * (kw + h);
        let opts = SolverOpts::default();
        let pt = rdc_value(&lib, &zero2(), c, &opts).unwrap();
        let expect = (h - c) / 2.0;
        assert!(
            (pt.rate - expect).abs() < 2e-3,
            "rate {} expected {}",
            pt.rate,
            expect
        );
    }

    #[test]
    fn curve_is_monotone_and_chains_witnesses() {
        let lib = dsbs_library(0.2).unwrap();
        let grid: Vec<f64> = (0..=6).map(|k| k as f64 * 0.25).collect();
        let opts = SolverOpts {
            restarts: 6,
            ..Default::default()
        };
        let curve = rdc_curve(&lib, &zero2(), &grid, &opts).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].rate_envelope <= w[0].rate_envelope + 1e-12);
            assert!(w[1].rate_raw <= w[0].rate_raw + 1e-4);
        }
        assert!(!curve.monotonicity_warning);
    }

    #[test]
    fn gray_wyner_agrees_with_solver() {
        let lib = dsbs_library(0.1).unwrap();
        let opts = SolverOpts {
            restarts: 6,
            ..Default::default()
        };
        for c in [0.0, 0.9, 1.2] {
            let a = rdc_value(&lib, &zero2(), c, &opts).unwrap().rate;
            let b = gray_wyner_min_max(&lib, &zero2(), c, &opts).unwrap();
            assert!((a - b).abs() <= 1e-4, "C = {}: {} vs {}", c, a, b);
        }
    }

    #[test]
    fn identical_sources_genie_holds_to_full_cache() {
        // X1 = X2: the genie bound is met for every C up to R_X(D)
        let lib = crate::source::build_library(
            vec![2, 2],
            vec![0.5, 0.0, 0.0, 0.5],
            vec![2, 2],
            vec![
                crate::source::DistortionMatrix::hamming(2),
                crate::source::DistortionMatrix::hamming(2),
            ],
        )
        .unwrap();
        let opts = SolverOpts {
            restarts: 4,
            ..Default::default()
        };
        let grid: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        let curve = rdc_curve(&lib, &zero2(), &grid, &opts).unwrap();
        let cg = critical_capacity_genie(&lib, &zero2(), &curve, &opts).unwrap();
        assert!((cg - 1.0).abs() < 2e-2, "cg {}", cg);
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(2, 16).len(), 17);
        assert_eq!(simplex_grid(3, 8).len(), 45);
        for row in simplex_grid(3, 8) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn set_partition_counts() {
        assert_eq!(set_partitions(4, 4).len(), 15); // Bell(4)
        assert_eq!(set_partitions(4, 2).len(), 8); // partitions into <= 2 blocks
    }
}
