//! The L-component discrete memoryless source library and its distortion
//! matrices.
//!
//! A [`SourceLibrary`] is the object every solver in this crate consumes: a
//! joint pmf over the product alphabet of `L` finite sources, one distortion
//! matrix per source, and the derived stride table used to address the
//! flattened (row-major) joint pmf at runtime-chosen `L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization window for input pmfs: renormalize if within this of 1,
/// reject otherwise.
pub const PMF_SUM_TOL: f64 = 1e-9;

/// One distortion matrix d(x_hat, x), stored row-major with `recon_size`
/// rows and `source_size` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionMatrix {
    pub recon_size: usize,
    pub source_size: usize,
    pub values: Vec<f64>,
}

impl DistortionMatrix {
    /// Hamming distortion on an alphabet of `n` symbols.
    pub fn hamming(n: usize) -> Self {
        let mut values = vec![1.0; n * n];
        for i in 0..n {
            values[i * n + i] = 0.0;
        }
        DistortionMatrix {
            recon_size: n,
            source_size: n,
            values,
        }
    }

    #[inline]
    pub fn get(&self, recon: usize, source: usize) -> f64 {
        self.values[recon * self.source_size + source]
    }

    pub fn is_hamming(&self) -> bool {
        if self.recon_size != self.source_size {
            return false;
        }
        self.values.iter().enumerate().all(|(k, &v)| {
            let (i, j) = (k / self.source_size, k % self.source_size);
            if i == j {
                v == 0.0
            } else {
                v == 1.0
            }
        })
    }

    /// Largest finite entry.
    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// A validated L-component source: joint pmf, per-source reconstruction
/// alphabets and distortion matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceLibrary {
    /// |X_l| for each source.
    pub alphabet_sizes: Vec<usize>,
    /// Joint pmf over the product alphabet, flattened row-major
    /// (source 1 slowest, source L fastest).
    pub joint_pmf: Vec<f64>,
    /// |X_hat_l| for each source.
    pub recon_alphabet_sizes: Vec<usize>,
    /// One matrix per source.
    pub distortion: Vec<DistortionMatrix>,
    /// Stride of each source index in the flattened pmf.
    pub strides: Vec<usize>,
    /// Largest distortion value across all matrices.
    pub d_max: f64,
}

/// A distortion target tuple, one entry per source.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTuple(pub Vec<f64>);

impl DistortionTuple {
    pub fn uniform(value: f64, len: usize) -> Self {
        DistortionTuple(vec![value; len])
    }

    pub fn validate(&self, num_sources: usize) -> Result<()> {
        if self.0.len() != num_sources {
            return Err(Error::ShapeMismatch(format!(
                "distortion tuple has {} entries for {} sources",
                self.0.len(),
                num_sources
            )));
        }
        for &d in &self.0 {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::ShapeMismatch(format!("distortion target {}", d)));
            }
        }
        Ok(())
    }
}

/// On-disk description of a source library. `distortions` entries may either
/// be explicit row-major matrices or the string `"hamming"`; both the
/// reconstruction alphabets and the distortions default to Hamming on the
/// source alphabet when omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSpec {
    pub alphabet_sizes: Vec<usize>,
    pub pmf: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon_alphabet_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortions: Option<Vec<DistortionSpec>>,
    /// Optional per-source distortion transform (see the f_separable module).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<crate::f_separable::TransformSpec>>,
}

/// One distortion entry in a [`SourceSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistortionSpec {
    /// The string `"hamming"`.
    Named(String),
    /// Explicit row-major |X_hat| x |X| matrix.
    Matrix(Vec<Vec<f64>>),
}

/// Validate and normalize a raw source description into a [`SourceLibrary`].
///
/// The pmf is renormalized when its mass is within `1e-9` of 1 and rejected
/// otherwise. Every distortion matrix must be finite and every source symbol
/// must have at least one zero-distortion reconstruction.
pub fn validate_library(spec: &SourceSpec) -> Result<SourceLibrary> {
    let l = spec.alphabet_sizes.len();
    if l == 0 {
        return Err(Error::ShapeMismatch("no sources".into()));
    }
    for (i, &n) in spec.alphabet_sizes.iter().enumerate() {
        if n == 0 {
            return Err(Error::ShapeMismatch(format!("source {} has empty alphabet", i)));
        }
    }
    let total: usize = spec.alphabet_sizes.iter().product();
    if spec.pmf.len() != total {
        return Err(Error::ShapeMismatch(format!(
            "pmf has {} entries, product alphabet has {}",
            spec.pmf.len(),
            total
        )));
    }

    let mut sum = 0.0;
    for (i, &p) in spec.pmf.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            if p < 0.0 && p.is_finite() {
                return Err(Error::NegativeMass { index: i, value: p });
            }
            return Err(Error::InvalidPmf(format!("entry {} is {}", i, p)));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PMF_SUM_TOL {
        return Err(Error::NotNormalized { sum });
    }
    let joint_pmf: Vec<f64> = spec.pmf.iter().map(|&p| p / sum).collect();

    let recon_alphabet_sizes = match &spec.recon_alphabet_sizes {
        Some(sizes) => {
            if sizes.len() != l {
                return Err(Error::ShapeMismatch(format!(
                    "{} recon alphabets for {} sources",
                    sizes.len(),
                    l
                )));
            }
            sizes.clone()
        }
        None => spec.alphabet_sizes.clone(),
    };

    let mut distortion = Vec::with_capacity(l);
    match &spec.distortions {
        None => {
            for ((i, &n), &r) in spec
                .alphabet_sizes
                .iter()
                .enumerate()
                .zip(recon_alphabet_sizes.iter())
            {
                if r != n {
                    return Err(Error::ShapeMismatch(format!(
                        "source {}: Hamming default needs recon size {} == source size {}",
                        i, r, n
                    )));
                }
                distortion.push(DistortionMatrix::hamming(n));
            }
        }
        Some(specs) => {
            if specs.len() != l {
                return Err(Error::ShapeMismatch(format!(
                    "{} distortion entries for {} sources",
                    specs.len(),
                    l
                )));
            }
            for (i, d) in specs.iter().enumerate() {
                let n = spec.alphabet_sizes[i];
                let r = recon_alphabet_sizes[i];
                match d {
                    DistortionSpec::Named(name) if name == "hamming" => {
                        if r != n {
                            return Err(Error::ShapeMismatch(format!(
                                "source {}: Hamming needs recon size {} == source size {}",
                                i, r, n
                            )));
                        }
                        distortion.push(DistortionMatrix::hamming(n));
                    }
                    DistortionSpec::Named(name) => {
                        return Err(Error::ShapeMismatch(format!(
                            "source {}: unknown distortion name {:?}",
                            i, name
                        )));
                    }
                    DistortionSpec::Matrix(rows) => {
                        if rows.len() != r || rows.iter().any(|row| row.len() != n) {
                            return Err(Error::ShapeMismatch(format!(
                                "source {}: distortion matrix is not {}x{}",
                                i, r, n
                            )));
                        }
                        let values: Vec<f64> = rows.iter().flatten().cloned().collect();
                        distortion.push(DistortionMatrix {
                            recon_size: r,
                            source_size: n,
                            values,
                        });
                    }
                }
            }
        }
    }

    build_library(spec.alphabet_sizes.clone(), joint_pmf, recon_alphabet_sizes, distortion)
}

/// Assemble a library from already-shaped parts, running the distortion
/// checks shared with [`validate_library`].
pub fn build_library(
    alphabet_sizes: Vec<usize>,
    joint_pmf: Vec<f64>,
    recon_alphabet_sizes: Vec<usize>,
    distortion: Vec<DistortionMatrix>,
) -> Result<SourceLibrary> {
    let mut d_max: f64 = 0.0;
    for (i, d) in distortion.iter().enumerate() {
        for row in 0..d.recon_size {
            for col in 0..d.source_size {
                let v = d.get(row, col);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InfiniteDistortion {
                        source_index: i,
                        row,
                        col,
                    });
                }
                d_max = d_max.max(v);
            }
        }
        for col in 0..d.source_size {
            if !(0..d.recon_size).any(|row| d.get(row, col) == 0.0) {
                return Err(Error::MissingZeroDistortionSymbol {
                    source_index: i,
                    symbol: col,
                });
            }
        }
    }
    let l = alphabet_sizes.len();
    let mut strides = vec![1usize; l];
    for i in (0..l.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * alphabet_sizes[i + 1];
    }
    Ok(SourceLibrary {
        alphabet_sizes,
        joint_pmf,
        recon_alphabet_sizes,
        distortion,
        strides,
        d_max,
    })
}

impl SourceLibrary {
    pub fn num_sources(&self) -> usize {
        self.alphabet_sizes.len()
    }

    /// Size of the product alphabet |X_bar|.
    pub fn joint_alphabet_size(&self) -> usize {
        self.joint_pmf.len()
    }

    /// Symbol of source `l` in the flattened joint index.
    #[inline]
    pub fn symbol_of(&self, flat: usize, l: usize) -> usize {
        (flat / self.strides[l]) % self.alphabet_sizes[l]
    }

    /// Round-trip through validation; used to confirm idempotence.
    pub fn revalidate(&self) -> Result<SourceLibrary> {
        build_library(
            self.alphabet_sizes.clone(),
            self.joint_pmf.clone(),
            self.recon_alphabet_sizes.clone(),
            self.distortion.clone(),
        )
    }

    /// True when every distortion matrix is Hamming.
    pub fn all_hamming(&self) -> bool {
        self.distortion.iter().all(|d| d.is_hamming())
    }
}

/// Exact marginal pmf of the sources in `subset` (indices 0-based, output
/// row-major in the order given).
pub fn marginal(lib: &SourceLibrary, subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let l = lib.num_sources();
    for &s in subset {
        if s >= l {
            return Err(Error::IndexOutOfRange { index: s, len: l });
        }
    }
    let sizes: Vec<usize> = subset.iter().map(|&s| lib.alphabet_sizes[s]).collect();
    let total: usize = sizes.iter().product();
    let mut out = vec![0.0; total];
    for (flat, &p) in lib.joint_pmf.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut idx = 0;
        for (k, &s) in subset.iter().enumerate() {
            idx = idx * sizes[k] + lib.symbol_of(flat, s);
        }
        out[idx] += p;
    }
    Ok(out)
}

/// Restriction of a library to a subset of sources (marginal pmf plus the
/// matching distortion matrices).
pub fn sub_library(lib: &SourceLibrary, subset: &[usize]) -> Result<SourceLibrary> {
    let pmf = marginal(lib, subset)?;
    let sizes: Vec<usize> = subset.iter().map(|&s| lib.alphabet_sizes[s]).collect();
    let recon: Vec<usize> = subset
        .iter()
        .map(|&s| lib.recon_alphabet_sizes[s])
        .collect();
    let dist: Vec<DistortionMatrix> = subset.iter().map(|&s| lib.distortion[s].clone()).collect();
    build_library(sizes, pmf, recon, dist)
}

/// The doubly symmetric binary source with crossover `rho`: two binary
/// sources with P[X1 != X2] = rho, uniform marginals, Hamming distortion.
///
/// ```
/// let lib = rdcache::dsbs_library(0.1).unwrap();
/// assert_eq!(lib.joint_pmf, vec![0.45, 0.05, 0.05, 0.45]);
/// ```
pub fn dsbs_library(rho: f64) -> Result<SourceLibrary> {
    if !(0.0..=0.5).contains(&rho) || !rho.is_finite() {
        return Err(Error::RhoOutOfRange { rho });
    }
    let agree = (1.0 - rho) / 2.0;
    let disagree = rho / 2.0;
    build_library(
        vec![2, 2],
        vec![agree, disagree, disagree, agree],
        vec![2, 2],
        vec![DistortionMatrix::hamming(2), DistortionMatrix::hamming(2)],
    )
}

/// True when the library has the DSBS shape; returns the crossover rho.
pub fn dsbs_parameter(lib: &SourceLibrary) -> Option<f64> {
    if lib.alphabet_sizes != [2, 2] || !lib.all_hamming() {
        return None;
    }
    let p = &lib.joint_pmf;
    if (p[0] - p[3]).abs() < 1e-9 && (p[1] - p[2]).abs() < 1e-9 {
        let rho = p[1] + p[2];
        if (0.0..=0.5 + 1e-12).contains(&rho) {
            return Some(rho.min(0.5));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bernoulli_pair_spec() -> SourceSpec {
        SourceSpec {
            alphabet_sizes: vec![2, 2],
            pmf: vec![0.25; 4],
            recon_alphabet_sizes: None,
            distortions: Some(vec![
                DistortionSpec::Named("hamming".into()),
                DistortionSpec::Named("hamming".into()),
            ]),
            f: None,
        }
    }

    #[test]
    fn accepts_uniform_bernoulli_pair() {
        let lib = validate_library(&bernoulli_pair_spec()).unwrap();
        assert_eq!(lib.num_sources(), 2);
        assert_eq!(lib.d_max, 1.0);
        assert!(lib.all_hamming());
    }

    #[test]
    fn rejects_half_mass() {
        let mut spec = bernoulli_pair_spec();
        spec.pmf = vec![0.125; 4];
        match validate_library(&spec) {
            Err(Error::NotNormalized { sum }) => assert!((sum - 0.5).abs() < 1e-12),
            other => panic!("expected NotNormalized, got {:?}", other),
        }
    }

    #[test]
    fn rejects_column_without_zero() {
        let mut spec = bernoulli_pair_spec();
        spec.distortions = Some(vec![
            DistortionSpec::Matrix(vec![vec![0.0, 0.5], vec![1.0, 0.5]]),
            DistortionSpec::Named("hamming".into()),
        ]);
        match validate_library(&spec) {
            Err(Error::MissingZeroDistortionSymbol { source_index: 0, symbol: 1 }) => {}
            other => panic!("expected MissingZeroDistortionSymbol, got {:?}", other),
        }
    }

    #[test]
    fn rejects_negative_mass() {
        let mut spec = bernoulli_pair_spec();
        spec.pmf = vec![0.5, 0.5, 0.25, -0.25];
        assert!(matches!(
            validate_library(&spec),
            Err(Error::NegativeMass { index: 3, .. })
        ));
    }

    #[test]
    fn renormalizes_within_window() {
        let mut spec = bernoulli_pair_spec();
        spec.pmf = vec![0.25 + 1e-10, 0.25, 0.25, 0.25];
        let lib = validate_library(&spec).unwrap();
        let sum: f64 = lib.joint_pmf.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn validation_is_idempotent() {
        let lib = validate_library(&bernoulli_pair_spec()).unwrap();
        let again = lib.revalidate().unwrap();
        assert_eq!(lib, again);
    }

    #[test]
    fn dsbs_pmf_and_marginals() {
        let lib = dsbs_library(0.1).unwrap();
        assert_eq!(lib.joint_pmf, vec![0.45, 0.05, 0.05, 0.45]);
        let m1 = marginal(&lib, &[0]).unwrap();
        assert!((m1[0] - 0.5).abs() < 1e-15 && (m1[1] - 0.5).abs() < 1e-15);
        // rho = 0 is perfectly correlated, rho = 0.5 independent fair bits
        assert_eq!(dsbs_library(0.0).unwrap().joint_pmf, vec![0.5, 0.0, 0.0, 0.5]);
        assert_eq!(dsbs_library(0.5).unwrap().joint_pmf, vec![0.25; 4]);
        assert!(dsbs_library(0.7).is_err());
        assert_eq!(dsbs_parameter(&lib), Some(0.1));
    }

    #[test]
    fn marginal_of_marginal_is_marginal() {
        // build a 3-source library and check the tower property through
        // sub_library
        let pmf: Vec<f64> = (1..=8).map(|k| k as f64 / 36.0).collect();
        let spec = SourceSpec {
            alphabet_sizes: vec![2, 2, 2],
            pmf,
            recon_alphabet_sizes: None,
            distortions: None,
            f: None,
        };
        let lib = validate_library(&spec).unwrap();
        let sub = sub_library(&lib, &[0, 2]).unwrap();
        let direct = marginal(&lib, &[2]).unwrap();
        let via_sub = marginal(&sub, &[1]).unwrap();
        for (a, b) in direct.iter().zip(via_sub.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn full_subset_marginal_is_identity() {
        let lib = dsbs_library(0.2).unwrap();
        let m = marginal(&lib, &[0, 1]).unwrap();
        assert_eq!(m, lib.joint_pmf);
    }

    #[test]
    fn independent_pair_marginal_factors() {
        let p = [0.3, 0.7];
        let q = [0.6, 0.4];
        let mut pmf = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                pmf[i * 2 + j] = p[i] * q[j];
            }
        }
        let spec = SourceSpec {
            alphabet_sizes: vec![2, 2],
            pmf,
            recon_alphabet_sizes: None,
            distortions: None,
            f: None,
        };
        let lib = validate_library(&spec).unwrap();
        let m2 = marginal(&lib, &[1]).unwrap();
        assert!((m2[0] - 0.6).abs() < 1e-15 && (m2[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn marginal_errors() {
        let lib = dsbs_library(0.1).unwrap();
        assert!(matches!(marginal(&lib, &[]), Err(Error::EmptySubset)));
        assert!(matches!(
            marginal(&lib, &[5]),
            Err(Error::IndexOutOfRange { index: 5, len: 2 })
        ));
    }
}
