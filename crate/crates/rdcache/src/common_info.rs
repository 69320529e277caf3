//! Gacs-Korner common information via the connected-components construction,
//! Wyner common-information closed forms, and the caching relations between
//! them.
//!
//! The zero-distortion Gacs-Korner value is computed exactly, with no
//! optimization: build the multipartite graph whose vertices are the source
//! symbols and whose edges join symbols that co-occur with positive mass;
//! the component label of the joint symbol is the maximal common variable,
//! and its entropy is the common information.

use crate::error::{Error, Result};
use crate::info::{entropy_unchecked, MASS_EPS};
use crate::rd::TestChannel;
use crate::source::{DistortionTuple, SourceLibrary};

/// Mass threshold for creating an edge; float noise must not merge
/// components.
pub const EDGE_EPS: f64 = 1e-12;

/// The multipartite co-occurrence graph over the union of source alphabets.
#[derive(Debug, Clone)]
pub struct CommonPartGraph {
    /// Offset of each source's vertex block.
    pub offsets: Vec<usize>,
    /// Component index of every vertex, contiguous from 0.
    pub components: Vec<usize>,
    pub num_components: usize,
}

impl CommonPartGraph {
    pub fn build(lib: &SourceLibrary) -> Self {
        let l = lib.num_sources();
        let mut offsets = vec![0usize; l];
        let mut total = 0usize;
        for k in 0..l {
            offsets[k] = total;
            total += lib.alphabet_sizes[k];
        }
        let mut uf = UnionFind::new(total);
        for (flat, &p) in lib.joint_pmf.iter().enumerate() {
            if p <= EDGE_EPS {
                continue;
            }
            // The vertices of a positive-mass tuple form a clique; unioning
            // consecutive pairs suffices.
            let first = offsets[0] + lib.symbol_of(flat, 0);
            for k in 1..l {
                uf.union(first, offsets[k] + lib.symbol_of(flat, k));
            }
        }
        // Contiguous relabeling in vertex order.
        let mut label = vec![usize::MAX; total];
        let mut components = vec![0usize; total];
        let mut next = 0usize;
        for v in 0..total {
            let root = uf.find(v);
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            components[v] = label[root];
        }
        CommonPartGraph {
            offsets,
            components,
            num_components: next,
        }
    }

    /// Component of symbol `x` of source `l`.
    #[inline]
    pub fn component_of(&self, l: usize, x: usize) -> usize {
        self.components[self.offsets[l] + x]
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Deterministic: smaller root wins.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Result of a common-information computation.
#[derive(Debug, Clone)]
pub struct CommonInfoResult {
    /// Bits.
    pub value: f64,
    /// Deterministic map from each source symbol to its component.
    pub witness: CommonPartGraph,
    /// Component masses, indexed by component.
    pub component_mass: Vec<f64>,
}

/// Zero-distortion Gacs-Korner common information: the entropy of the
/// connected-component label, which is a deterministic function of every
/// source separately.
///
/// ```
/// // two sources that always agree share their full entropy
/// let lib = rdcache::build_library(
///     vec![2, 2],
///     vec![0.3, 0.0, 0.0, 0.7],
///     vec![2, 2],
///     vec![
///         rdcache::DistortionMatrix::hamming(2),
///         rdcache::DistortionMatrix::hamming(2),
///     ],
/// )
/// .unwrap();
/// let common = rdcache::gacs_korner_zero(&lib);
/// assert!((common.value - rdcache::binary_entropy(0.3)).abs() < 1e-12);
/// assert_eq!(common.witness.num_components, 2);
/// ```
pub fn gacs_korner_zero(lib: &SourceLibrary) -> CommonInfoResult {
    let graph = CommonPartGraph::build(lib);
    let mut mass = vec![0.0; graph.num_components];
    for (flat, &p) in lib.joint_pmf.iter().enumerate() {
        if p > MASS_EPS {
            mass[graph.component_of(0, lib.symbol_of(flat, 0))] += p;
        }
    }
    let value = entropy_unchecked(&mass);
    CommonInfoResult {
        value,
        witness: graph,
        component_mass: mass,
    }
}

/// A candidate for the lossy Gacs-Korner feasibility check: an auxiliary
/// channel p(u | xbar) plus per-source reconstruction channels
/// p(x_hat_l | x_l, u).
#[derive(Debug, Clone)]
pub struct LossyGkCandidate {
    pub aux: crate::rdc::AuxChannel,
    /// One conditional per source, rows indexed u * nx + x.
    pub recon: Vec<TestChannel>,
}

/// Feasibility report for the lossy Gacs-Korner conditions.
#[derive(Debug, Clone)]
pub struct LossyGkReport {
    /// I(Xbar; U) of the candidate, in bits.
    pub cache_information: f64,
    pub violations: Vec<String>,
}

impl LossyGkReport {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

const GK_TOL: f64 = 1e-6;

/// Check the four lossy Gacs-Korner conditions for a candidate (U, Xhat)
/// tuple: the Markov chains U - X_l - X_rest and U - Xhat_l - X_l within
/// 1e-6 total variation of their factorizations, the distortion targets,
/// and marginal-RD optimality of each reconstruction. Reports I(Xbar;U)
/// either way; this is a verifier, not an optimizer.
pub fn gacs_korner_lossy_check(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    candidate: &LossyGkCandidate,
) -> Result<LossyGkReport> {
    targets.validate(lib.num_sources())?;
    let l = lib.num_sources();
    let n = lib.joint_alphabet_size();
    let nu = candidate.aux.aux_size;
    if candidate.recon.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "{} reconstruction channels for {} sources",
            candidate.recon.len(),
            l
        )));
    }

    let mut violations = Vec::new();

    // Joint p(xbar, u).
    let mut joint_xu = vec![0.0; n * nu];
    for j in 0..n {
        for u in 0..nu {
            joint_xu[j * nu + u] = lib.joint_pmf[j] * candidate.aux.matrix[j * nu + u];
        }
    }
    let cache_information =
        crate::info::mutual_information_unchecked(&joint_xu, n, nu);

    for k in 0..l {
        let nx = lib.alphabet_sizes[k];
        let m = lib.recon_alphabet_sizes[k];
        let ch = &candidate.recon[k];
        if ch.contexts != nu * nx || ch.outputs != m {
            return Err(Error::ShapeMismatch(format!(
                "reconstruction channel {} has shape {}x{}",
                k, ch.contexts, ch.outputs
            )));
        }

        // p(x_l, u) and the condition (i) factorization p(x_l) p(u | x_l)
        // matching p(u | xbar) almost surely.
        let mut p_xu = vec![0.0; nx * nu];
        for j in 0..n {
            let x = lib.symbol_of(j, k);
            for u in 0..nu {
                p_xu[x * nu + u] += joint_xu[j * nu + u];
            }
        }
        let mut p_x = vec![0.0; nx];
        for x in 0..nx {
            for u in 0..nu {
                p_x[x] += p_xu[x * nu + u];
            }
        }
        // TV between p(xbar, u) and p(xbar) p(u | x_k).
        let mut tv = 0.0;
        for j in 0..n {
            let x = lib.symbol_of(j, k);
            if p_x[x] <= MASS_EPS {
                continue;
            }
            for u in 0..nu {
                let fact = lib.joint_pmf[j] * p_xu[x * nu + u] / p_x[x];
                tv += (joint_xu[j * nu + u] - fact).abs();
            }
        }
        tv *= 0.5;
        if tv > GK_TOL {
            violations.push(format!(
                "markov (i) fails for source {}: TV {:.3e}",
                k, tv
            ));
        }

        // Joint p(u, xhat, x) for conditions (ii)-(iv).
        let mut p_uhx = vec![0.0; nu * m * nx];
        for x in 0..nx {
            for u in 0..nu {
                let base = p_xu[x * nu + u];
                if base <= MASS_EPS {
                    continue;
                }
                for mm in 0..m {
                    p_uhx[(u * m + mm) * nx + x] += base * ch.matrix[(u * nx + x) * m + mm];
                }
            }
        }
        // (ii) U - Xhat - X: TV between p(u, xhat, x) and
        // p(xhat) p(u|xhat) p(x|xhat).
        let mut p_h = vec![0.0; m];
        let mut p_uh = vec![0.0; nu * m];
        let mut p_hx = vec![0.0; m * nx];
        for u in 0..nu {
            for mm in 0..m {
                for x in 0..nx {
                    let v = p_uhx[(u * m + mm) * nx + x];
                    p_h[mm] += v;
                    p_uh[u * m + mm] += v;
                    p_hx[mm * nx + x] += v;
                }
            }
        }
        let mut tv2 = 0.0;
        for u in 0..nu {
            for mm in 0..m {
                if p_h[mm] <= MASS_EPS {
                    continue;
                }
                for x in 0..nx {
                    let fact = p_uh[u * m + mm] * p_hx[mm * nx + x] / p_h[mm];
                    tv2 += (p_uhx[(u * m + mm) * nx + x] - fact).abs();
                }
            }
        }
        tv2 *= 0.5;
        if tv2 > GK_TOL {
            violations.push(format!(
                "markov (ii) fails for source {}: TV {:.3e}",
                k, tv2
            ));
        }

        // (iii) distortion target.
        let mut dist = 0.0;
        for mm in 0..m {
            for x in 0..nx {
                let mut mass = 0.0;
                for u in 0..nu {
                    mass += p_uhx[(u * m + mm) * nx + x];
                }
                dist += mass * lib.distortion[k].get(mm, x);
            }
        }
        if dist > targets.0[k] + GK_TOL {
            violations.push(format!(
                "distortion (iii) fails for source {}: {:.6} > {:.6}",
                k, dist, targets.0[k]
            ));
        }

        // (iv) marginal-RD optimality: I(X; Xhat) = R_{X_l}(D_l).
        let mut p_xh = vec![0.0; nx * m];
        for x in 0..nx {
            for mm in 0..m {
                for u in 0..nu {
                    p_xh[x * m + mm] += p_uhx[(u * m + mm) * nx + x];
                }
            }
        }
        let ixh = crate::info::mutual_information_unchecked(&p_xh, nx, m);
        let rd = crate::rd::rd_function(&p_x, &lib.distortion[k], targets.0[k])?;
        if (ixh - rd.rate).abs() > GK_TOL {
            violations.push(format!(
                "optimality (iv) fails for source {}: I = {:.8}, RD = {:.8}",
                k, ixh, rd.rate
            ));
        }
    }

    Ok(LossyGkReport {
        cache_information,
        violations,
    })
}

/// Wyner common information of the DSBS: 1 + h(rho) - 2 h(rho*) with
/// rho* = 1/2 - sqrt(1 - 2 rho)/2.
///
/// ```
/// assert!((rdcache::wyner_ci_dsbs(0.0).unwrap() - 1.0).abs() < 1e-12);
/// assert!(rdcache::wyner_ci_dsbs(0.5).unwrap().abs() < 1e-12);
/// ```
pub fn wyner_ci_dsbs(rho: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&rho) || !rho.is_finite() {
        return Err(Error::RhoOutOfRange { rho });
    }
    Ok(crate::closed_form::wyner_dsbs(rho))
}

/// Wyner common information of the unit Gaussian pair:
/// (1/2) log2((1+rho)/(1-rho)); +infinity as rho -> 1.
pub fn wyner_ci_gaussian(rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
        return Err(Error::RhoOutOfRange { rho });
    }
    if rho >= 1.0 - 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(0.5 * ((1.0 + rho) / (1.0 - rho)).log2())
}

/// Relation between the zero-distortion Gacs-Korner common information and
/// the genie critical capacity.
#[derive(Debug, Clone)]
pub struct KgkVsCgReport {
    pub kgk: f64,
    pub critical_genie: f64,
    /// True when the marginal RD values all coincide, which forces equality.
    pub equality_expected: bool,
    /// kgk <= critical_genie within tolerance.
    pub holds: bool,
}

/// Check `C_g(D) >= K_GK` on a library, flagging the equal-marginal-RD case
/// where the two must coincide. The critical capacity comes from a sampled
/// tradeoff curve, so the comparison carries the solver tolerance.
pub fn kgk_vs_cg_check(
    lib: &SourceLibrary,
    targets: &DistortionTuple,
    opts: &crate::rdc::SolverOpts,
) -> Result<KgkVsCgReport> {
    targets.validate(lib.num_sources())?;
    let kgk = gacs_korner_zero(lib).value;

    let mut rates = Vec::new();
    for k in 0..lib.num_sources() {
        let p = crate::source::marginal(lib, &[k])?;
        rates.push(crate::rd::rd_function(&p, &lib.distortion[k], targets.0[k])?.rate);
    }
    let rmax = rates.iter().cloned().fold(0.0, f64::max);
    let equality_expected = rates.iter().all(|&r| (r - rmax).abs() <= 1e-9);

    let joint = crate::rd::joint_rd_function(lib, targets)?.rate;
    let grid: Vec<f64> = (0..=16).map(|k| joint * k as f64 / 16.0).collect();
    let curve = crate::rdc::rdc_curve(lib, targets, &grid, opts)?;
    let cg = crate::rdc::critical_capacity_genie(lib, targets, &curve, opts)?;

    Ok(KgkVsCgReport {
        kgk,
        critical_genie: cg,
        equality_expected,
        holds: cg >= kgk - 5e-3,
    })
}
