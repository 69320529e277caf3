//! Exact evaluators: binary-entropy utilities, the iid identical-source
//! tradeoff, bivariate Gaussian regions, the Gaussian subset lower bound,
//! and the DSBS bounds.
//!
//! Everything here is in bits, matching the discrete solvers.

use crate::error::{Error, Result};
use crate::source::DistortionMatrix;

/// Binary entropy h(p) in bits, with h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Inverse of the binary entropy on [0, 1/2], by bisection.
///
/// ```
/// let p = rdcache::binary_entropy_inverse(0.5);
/// assert!((rdcache::binary_entropy(p) - 0.5).abs() < 1e-10);
/// ```
pub fn binary_entropy_inverse(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 0.5;
    }
    let mut lo = 0.0f64;
    let mut hi = 0.5f64;
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The tradeoff for L mutually independent copies of one source with a
/// common distortion matrix and symmetric targets: `[R_X(D) - C/L]^+`.
pub fn iid_identical_rdc(
    pmf: &[f64],
    d: &DistortionMatrix,
    target: f64,
    cache: f64,
    l: usize,
) -> Result<f64> {
    if l == 0 {
        return Err(Error::ShapeMismatch("L = 0".into()));
    }
    if cache < 0.0 {
        return Err(Error::InvalidCache { cache });
    }
    let r = crate::rd::rd_function(pmf, d, target)?;
    Ok((r.rate - cache / l as f64).max(0.0))
}

/// A zero-mean unit-variance bivariate Gaussian pair with correlation rho.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPair {
    pub rho: f64,
}

impl GaussianPair {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::RhoOutOfRange { rho });
        }
        Ok(GaussianPair { rho })
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        [[1.0, self.rho], [self.rho, 1.0]]
    }
}

/// Joint RD function of the unit bivariate Gaussian pair at symmetric
/// squared-error targets D1 = D2 = D, in bits.
pub fn gaussian_joint_rd(rho: f64, d: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::RhoOutOfRange { rho });
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::ShapeMismatch(format!("distortion {}", d)));
    }
    Ok(if d <= 1.0 - rho {
        0.5 * ((1.0 - rho * rho) / (d * d)).log2()
    } else if d <= 1.0 {
        0.5 * ((1.0 + rho) / (2.0 * d - (1.0 - rho))).log2()
    } else {
        0.0
    })
}

/// Distortion-cache regions of the bivariate Gaussian tradeoff. The rate
/// expression is exact on S1 and S2 and an upper bound on S3 and S4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionTag {
    S1,
    S2,
    S3,
    S4,
}

impl RegionTag {
    /// True when the region carries an exact rate rather than a bound.
    pub fn is_exact(&self) -> bool {
        matches!(self, RegionTag::S1 | RegionTag::S2)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionTag::S1 => "S1",
            RegionTag::S2 => "S2",
            RegionTag::S3 => "S3",
            RegionTag::S4 => "S4",
        }
    }
}

/// Classify a (D, C) pair. Boundary points go to the region with the
/// stronger (exact) result, preferring S1 over S2 over S3/S4.
pub fn classify_gaussian_region(rho: f64, d: f64, cache: f64) -> Result<RegionTag> {
    if cache < 0.0 {
        return Err(Error::InvalidCache { cache });
    }
    let joint = gaussian_joint_rd(rho, d)?;
    let kw = wyner_gaussian(rho);
    Ok(if cache >= joint {
        RegionTag::S1
    } else if cache >= kw {
        RegionTag::S2
    } else if d <= 1.0 - rho {
        RegionTag::S3
    } else {
        RegionTag::S4
    })
}

fn wyner_gaussian(rho: f64) -> f64 {
    0.5 * ((1.0 + rho) / (1.0 - rho)).log2()
}

/// Rate of the bivariate Gaussian tradeoff at symmetric distortion D and
/// cache C: exact on S1/S2, an upper bound on S3/S4.
pub fn bivariate_gaussian_rdc(rho: f64, d: f64, cache: f64) -> Result<(f64, RegionTag)> {
    let region = classify_gaussian_region(rho, d, cache)?;
    let rate = match region {
        RegionTag::S1 => 0.0,
        RegionTag::S2 => 0.25 * ((1.0 - rho * rho) / (d * d)).log2() - cache / 2.0,
        RegionTag::S3 | RegionTag::S4 => {
            let shrink = 1.0 - 0.5 * (1.0 + rho) * (1.0 - (2f64).powf(-2.0 * cache));
            0.5 * (shrink / d).log2()
        }
    };
    Ok((rate, region))
}

/// Result of the subset lower bound: the raw maximand may be negative, a
/// rate bound below zero being vacuous, so a clamped value rides along.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLowerBound {
    pub raw: f64,
    pub clamped: f64,
    /// Subset achieving the maximum (bitmask over sources).
    pub subset: usize,
}

/// Subset lower bound for a multivariate Gaussian with symmetric targets:
/// max over nonempty S of (1/(2|S|)) log2(det K_S / D^|S|) - C/|S|.
pub fn gaussian_superuser_lower(
    cov: &[Vec<f64>],
    d: f64,
    cache: f64,
) -> Result<GaussianLowerBound> {
    let l = cov.len();
    if l == 0 || l > 8 || cov.iter().any(|row| row.len() != l) {
        return Err(Error::ShapeMismatch(format!("covariance {}x?", l)));
    }
    if cache < 0.0 {
        return Err(Error::InvalidCache { cache });
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::ShapeMismatch(format!("distortion {}", d)));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_subset = 0usize;
    for mask in 1usize..(1 << l) {
        let idx: Vec<usize> = (0..l).filter(|&i| mask >> i & 1 == 1).collect();
        let s = idx.len();
        let sub: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| cov[i][j]).collect())
            .collect();
        let det = determinant(&sub);
        if det <= 0.0 {
            return Err(Error::ShapeMismatch(
                "covariance is not positive definite".into(),
            ));
        }
        let term = (det / d.powi(s as i32)).log2() / (2.0 * s as f64) - cache / s as f64;
        if term > best {
            best = term;
            best_subset = mask;
        }
    }
    Ok(GaussianLowerBound {
        raw: best,
        clamped: best.max(0.0),
        subset: best_subset,
    })
}

/// Subset term of the bound above for one explicit subset bitmask.
pub fn gaussian_subset_term(cov: &[Vec<f64>], d: f64, cache: f64, mask: usize) -> f64 {
    let l = cov.len();
    let idx: Vec<usize> = (0..l).filter(|&i| mask >> i & 1 == 1).collect();
    let s = idx.len();
    let sub: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| idx.iter().map(|&j| cov[i][j]).collect())
        .collect();
    (determinant(&sub) / d.powi(s as i32)).log2() / (2.0 * s as f64) - cache / s as f64
}

/// Determinant by LU with partial pivoting; the matrices here are at most
/// 8x8.
fn determinant(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return 0.0;
        }
        if piv != col {
            m.swap(piv, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    det
}

/// DSBS bounds at zero distortion as a function of the cache capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsbsBounds {
    pub lower: f64,
    pub upper: f64,
    /// True when lower == upper is the exact tradeoff value.
    pub exact: bool,
}

/// Lower and upper bounds on the DSBS zero-distortion tradeoff.
///
/// Exact `(1 + h(rho) - C)/2` for `K_W <= C <= 1 + h(rho)`; for smaller
/// positive C the reported lower is `max((1+h(rho)-C)/2, [1-C]^+)` (the
/// second strict) and the upper is the forwarded-quantization achievable
/// rate `h((1-rho) a + rho/2)` with `a = h^{-1}((1-rho-C)/(1-rho))`.
///
/// ```
/// let b = rdcache::dsbs_rdc_bounds(0.1, 1.0).unwrap();
/// assert!(b.exact); // 1.0 is past the Wyner point for rho = 0.1
/// let expect = (1.0 + rdcache::binary_entropy(0.1) - 1.0) / 2.0;
/// assert!((b.lower - expect).abs() < 1e-12);
/// ```
pub fn dsbs_rdc_bounds(rho: f64, cache: f64) -> Result<DsbsBounds> {
    if !(0.0..=0.5).contains(&rho) || !rho.is_finite() {
        return Err(Error::RhoOutOfRange { rho });
    }
    if cache < 0.0 {
        return Err(Error::InvalidCache { cache });
    }
    let h_rho = binary_entropy(rho);
    let kw = wyner_dsbs(rho);
    let total = 1.0 + h_rho;
    Ok(if cache == 0.0 {
        DsbsBounds {
            lower: 1.0,
            upper: 1.0,
            exact: true,
        }
    } else if cache >= total {
        DsbsBounds {
            lower: 0.0,
            upper: 0.0,
            exact: true,
        }
    } else if cache >= kw {
        let r = (total - cache) / 2.0;
        DsbsBounds {
            lower: r,
            upper: r,
            exact: true,
        }
    } else {
        let lower = ((total - cache) / 2.0).max((1.0 - cache).max(0.0));
        let arg = ((1.0 - rho - cache) / (1.0 - rho)).clamp(0.0, 1.0);
        let alpha = binary_entropy_inverse(arg);
        let upper = binary_entropy((1.0 - rho) * alpha + rho / 2.0);
        DsbsBounds {
            lower,
            upper,
            exact: false,
        }
    })
}

/// Wyner common information of the DSBS: 1 + h(rho) - 2 h(rho*),
/// rho* = 1/2 - sqrt(1 - 2 rho)/2. Shared with the common_info module.
pub(crate) fn wyner_dsbs(rho: f64) -> f64 {
    let rho_star = 0.5 - 0.5 * (1.0 - 2.0 * rho).max(0.0).sqrt();
    1.0 + binary_entropy(rho) - 2.0 * binary_entropy(rho_star)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_endpoints() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        assert!((binary_entropy(0.1) - 0.46900).abs() < 1e-5);
    }

    #[test]
    fn entropy_inverse_roundtrip() {
        assert_eq!(binary_entropy_inverse(0.0), 0.0);
        for k in 1..=40 {
            let y = k as f64 / 40.0;
            let p = binary_entropy_inverse(y);
            assert!((binary_entropy(p) - y).abs() < 1e-10, "y = {}", y);
        }
    }

    #[test]
    fn entropy_inverse_monotone() {
        let mut prev = -1.0;
        for k in 0..=100 {
            let p = binary_entropy_inverse(k as f64 / 100.0);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn iid_identical_endpoints() {
        let d = DistortionMatrix::hamming(2);
        let p = [0.5, 0.5];
        let r0 = iid_identical_rdc(&p, &d, 0.1, 0.0, 2).unwrap();
        let rx = 1.0 - binary_entropy(0.1);
        assert!((r0 - rx).abs() < 1e-10);
        let rfull = iid_identical_rdc(&p, &d, 0.1, 2.0 * rx, 2).unwrap();
        assert!(rfull.abs() < 1e-12);
        let rmid = iid_identical_rdc(&p, &d, 0.1, 0.4, 2).unwrap();
        assert!((rmid - (rx - 0.2)).abs() < 1e-10);
        assert!((rmid - 0.33100).abs() < 1e-5);
    }

    #[test]
    fn gaussian_joint_rd_cases() {
        assert_eq!(gaussian_joint_rd(0.8, 1.5).unwrap(), 0.0);
        // boundary continuity at D = 1 - rho: both branches give K_W
        let rho = 0.8f64;
        let talk = gaussian_joint_rd(rho, 1.0 - rho).unwrap();
        let kw = 0.5 * ((1.0 + rho) / (1.0 - rho)).log2();
        assert!((talk - kw).abs() < 1e-10);
        let lo = gaussian_joint_rd(rho, 1.0 - rho - 1e-9).unwrap();
        let hi = gaussian_joint_rd(rho, 1.0 - rho + 1e-9).unwrap();
        assert!((lo - talk).abs() < 1e-7 && (hi - talk).abs() < 1e-7);
        // continuity at D = 1
        let a = gaussian_joint_rd(rho, 1.0 - 1e-10).unwrap();
        assert!(a.abs() < 1e-8);
        // plug-in: rho = 0.8, D = 0.1
        let v = gaussian_joint_rd(0.8, 0.1).unwrap();
        assert!((v - 0.5 * (36.0f64).log2()).abs() < 1e-12);
        assert!((v - 2.58496).abs() < 1e-5);
    }

    #[test]
    fn region_classification() {
        // C at or above the joint RD is S1
        let v = gaussian_joint_rd(0.8, 0.1).unwrap();
        assert_eq!(classify_gaussian_region(0.8, 0.1, v).unwrap(), RegionTag::S1);
        assert_eq!(
            classify_gaussian_region(0.8, 0.1, 2.0).unwrap(),
            RegionTag::S2
        );
        assert_eq!(
            classify_gaussian_region(0.8, 0.5, 0.3).unwrap(),
            RegionTag::S4
        );
        assert_eq!(
            classify_gaussian_region(0.8, 0.1, 0.5).unwrap(),
            RegionTag::S3
        );
        assert!(RegionTag::S2.is_exact() && !RegionTag::S3.is_exact());
    }

    #[test]
    fn bivariate_s2_value() {
        let (rate, tag) = bivariate_gaussian_rdc(0.8, 0.1, 2.0).unwrap();
        assert_eq!(tag, RegionTag::S2);
        assert!((rate - 0.29248).abs() < 1e-5);
    }

    #[test]
    fn bivariate_s3_alpha_case() {
        // C = K_W/2 makes 2^{-2C} = 1/3 and the bound exactly 1 bit
        let kw = 0.5 * (9.0f64).log2();
        let (rate, tag) = bivariate_gaussian_rdc(0.8, 0.1, kw / 2.0).unwrap();
        assert_eq!(tag, RegionTag::S3);
        assert!((rate - 1.0).abs() < 1e-9, "rate {}", rate);
    }

    #[test]
    fn superuser_lower_matches_s2() {
        let cov = vec![vec![1.0, 0.8], vec![0.8, 1.0]];
        for c in [1.7, 2.0, 2.3] {
            let lb = gaussian_superuser_lower(&cov, 0.1, c).unwrap();
            let (rate, tag) = bivariate_gaussian_rdc(0.8, 0.1, c).unwrap();
            assert_eq!(tag, RegionTag::S2);
            assert!((lb.raw - rate).abs() < 1e-10, "C={}: {} vs {}", c, lb.raw, rate);
            assert_eq!(lb.subset, 0b11);
        }
    }

    #[test]
    fn superuser_lower_singleton_case() {
        let cov = vec![vec![1.0]];
        let lb = gaussian_superuser_lower(&cov, 0.1, 0.5).unwrap();
        assert!((lb.raw - (0.5 * (10.0f64).log2() - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn superuser_lower_can_go_negative() {
        let cov = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
        let lb = gaussian_superuser_lower(&cov, 1.0, 5.0).unwrap();
        assert!(lb.raw < 0.0);
        assert_eq!(lb.clamped, 0.0);
    }

    #[test]
    fn dsbs_bounds_shape() {
        let rho = 0.1;
        let h = binary_entropy(rho);
        let kw = wyner_dsbs(rho);
        assert!((kw - 0.87269).abs() < 1e-4, "kw {}", kw);

        let b0 = dsbs_rdc_bounds(rho, 0.0).unwrap();
        assert_eq!((b0.lower, b0.upper, b0.exact), (1.0, 1.0, true));

        let bend = dsbs_rdc_bounds(rho, 1.0 + h).unwrap();
        assert_eq!((bend.lower, bend.upper), (0.0, 0.0));

        let bkw = dsbs_rdc_bounds(rho, kw).unwrap();
        assert!(bkw.exact);
        let rho_star = 0.5 - 0.5 * (1.0f64 - 2.0 * rho).sqrt();
        assert!((bkw.lower - binary_entropy(rho_star)).abs() < 1e-12);
        assert!((bkw.lower - 0.29815).abs() < 1e-4);

        // in the open bound region, lower <= upper and both between 0 and 1
        for k in 1..20 {
            let c = kw * k as f64 / 20.0;
            let b = dsbs_rdc_bounds(rho, c).unwrap();
            assert!(b.lower <= b.upper + 1e-12, "C = {}", c);
            assert!(!b.exact);
        }

        // continuity toward C -> 0+
        let beps = dsbs_rdc_bounds(rho, 1e-6).unwrap();
        assert!((beps.upper - 1.0).abs() < 1e-4);
        assert!((beps.upper - 1.0).abs() > 0.0);
    }

    #[test]
    fn dsbs_bounds_exact_segment_is_line() {
        for rho in [0.1, 0.25] {
            let h = binary_entropy(rho);
            let kw = wyner_dsbs(rho);
            for k in 0..=20 {
                let c = kw + (1.0 + h - kw) * k as f64 / 20.0;
                let b = dsbs_rdc_bounds(rho, c).unwrap();
                let expect = (1.0 + h - c) / 2.0;
                assert!(b.exact);
                assert!((b.lower - expect).abs() < 1e-12);
                assert!((b.upper - expect).abs() < 1e-12);
            }
        }
    }
}
