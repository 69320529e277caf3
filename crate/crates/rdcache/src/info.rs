//! Entropy, mutual information and small pmf helpers.
//!
//! All rates in this crate are in bits (base-2 logarithms) and `0 log 0 = 0`
//! throughout. Probabilities below [`MASS_EPS`] are treated as structural
//! zeros so that float noise cannot create phantom support.

use crate::error::{Error, Result};

/// Entries below this threshold are treated as zero mass.
pub const MASS_EPS: f64 = 1e-12;

pub(crate) const LN_2: f64 = std::f64::consts::LN_2;

/// `p log2 p` with the `0 log 0 = 0` convention.
#[inline]
pub(crate) fn plog2p(p: f64) -> f64 {
    if p > MASS_EPS {
        p * p.ln() / LN_2
    } else {
        0.0
    }
}

/// Shannon entropy of a pmf in bits.
///
/// ```
/// let h = rdcache::entropy(&[0.5, 0.5]).unwrap();
/// assert!((h - 1.0).abs() < 1e-12);
/// ```
pub fn entropy(pmf: &[f64]) -> Result<f64> {
    check_pmf(pmf)?;
    Ok(entropy_unchecked(pmf))
}

/// Entropy without validation, for hot inner loops on already-valid pmfs.
#[inline]
pub(crate) fn entropy_unchecked(pmf: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in pmf {
        h -= plog2p(p);
    }
    h
}

/// Mutual information I(A;B) from a joint pmf flattened row-major
/// (`rows` outcomes of A, `cols` outcomes of B), in bits.
///
/// ```
/// // independent uniform bits carry no shared information
/// let mi = rdcache::mutual_information(&[0.25; 4], 2, 2).unwrap();
/// assert!(mi.abs() < 1e-12);
/// ```
pub fn mutual_information(joint: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if joint.len() != rows * cols {
        return Err(Error::InvalidPmf(format!(
            "joint length {} does not match {}x{}",
            joint.len(),
            rows,
            cols
        )));
    }
    check_pmf(joint)?;
    Ok(mutual_information_unchecked(joint, rows, cols))
}

#[inline]
pub(crate) fn mutual_information_unchecked(joint: &[f64], rows: usize, cols: usize) -> f64 {
    let mut pa = vec![0.0; rows];
    let mut pb = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            let p = joint[i * cols + j];
            pa[i] += p;
            pb[j] += p;
        }
    }
    let mut mi = 0.0;
    for i in 0..rows {
        if pa[i] <= MASS_EPS {
            continue;
        }
        for j in 0..cols {
            let p = joint[i * cols + j];
            if p > MASS_EPS && pb[j] > MASS_EPS {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    (mi / LN_2).max(0.0)
}

/// Conditional mutual information I(A;B|U) from a joint pmf over (A,B,U),
/// flattened with A slowest and U fastest, in bits.
pub fn conditional_mutual_information(
    joint: &[f64],
    a: usize,
    b: usize,
    u: usize,
) -> Result<f64> {
    if joint.len() != a * b * u {
        return Err(Error::InvalidPmf(format!(
            "joint length {} does not match {}x{}x{}",
            joint.len(),
            a,
            b,
            u
        )));
    }
    check_pmf(joint)?;
    // I(A;B|U) = sum_u p(u) I(A;B|U=u)
    let mut total = 0.0;
    let mut slice = vec![0.0; a * b];
    for k in 0..u {
        let mut pu = 0.0;
        for i in 0..a {
            for j in 0..b {
                let p = joint[(i * b + j) * u + k];
                slice[i * b + j] = p;
                pu += p;
            }
        }
        if pu <= MASS_EPS {
            continue;
        }
        for v in slice.iter_mut() {
            *v /= pu;
        }
        total += pu * mutual_information_unchecked(&slice, a, b);
    }
    Ok(total)
}

pub(crate) fn check_pmf(pmf: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        if !p.is_finite() || p < -MASS_EPS {
            return Err(Error::InvalidPmf(format!("entry {} is {}", i, p)));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidPmf(format!("mass sums to {}", sum)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::dsbs_library;

    #[test]
    fn entropy_uniform_is_log_n() {
        assert!((entropy(&[0.25; 4]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_point_mass_is_zero() {
        assert!(entropy(&[1.0, 0.0, 0.0]).unwrap() < 1e-12);
    }

    #[test]
    fn dsbs_joint_entropy_is_one_plus_binary_entropy() {
        // H(X1,X2) = H(X1) + H(X2|X1) = 1 + h(rho) by the chain rule
        let lib = dsbs_library(0.1).unwrap();
        let h = entropy(&lib.joint_pmf).unwrap();
        let h_rho = crate::closed_form::binary_entropy(0.1);
        assert!((h - (1.0 + h_rho)).abs() < 1e-9);
        assert!((h - 1.46900).abs() < 1e-5);
    }

    #[test]
    fn mi_of_product_pmf_is_zero() {
        let p = [0.3, 0.7];
        let q = [0.2, 0.5, 0.3];
        let mut joint = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                joint[i * 3 + j] = p[i] * q[j];
            }
        }
        assert!(mutual_information(&joint, 2, 3).unwrap() < 1e-12);
    }

    #[test]
    fn cmi_chain_example() {
        // A = B = U = same fair bit: I(A;B|U) = 0 but I(A;B) = 1
        let mut joint = vec![0.0; 8];
        joint[0] = 0.5; // (0,0,0)
        joint[7] = 0.5; // (1,1,1)
        let cmi = conditional_mutual_information(&joint, 2, 2, 2).unwrap();
        assert!(cmi < 1e-12);
        // U independent: I(A;B|U) = I(A;B)
        let mut j2 = vec![0.0; 8];
        for u in 0..2 {
            j2[(0 * 2 + 0) * 2 + u] = 0.25;
            j2[(1 * 2 + 1) * 2 + u] = 0.25;
        }
        let cmi2 = conditional_mutual_information(&j2, 2, 2, 2).unwrap();
        assert!((cmi2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_pmf_rejected() {
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[-0.1, 1.1]).is_err());
    }
}
