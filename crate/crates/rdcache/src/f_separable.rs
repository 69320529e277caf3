//! Distortion transforms and the reduction of generalized-mean distortion
//! criteria to ordinary separable ones.
//!
//! A strictly increasing `f` turns the arithmetic per-symbol average into
//! the quasi-arithmetic mean `f^{-1}((1/n) sum f(d_i))`. The tradeoff under
//! such a criterion equals the ordinary tradeoff of the transformed
//! instance: apply `f` elementwise to the distortion matrix and to the
//! target, then solve as usual. When `f(0) != 0` the transformed matrix
//! would lose its zero-distortion symbols, so the module shifts both the
//! matrix and the target by `-f(0)`, which leaves the constraint set
//! unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rdc::{rdc_value, SolverOpts, TradeoffPoint};
use crate::source::{build_library, DistortionMatrix, DistortionTuple, SourceLibrary};

/// A continuous strictly increasing transform on [0, D_max].
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionTransform {
    Identity,
    /// t^exponent with exponent > 0.
    Power { exponent: f64 },
    /// (exp(scale t) - 1) / scale, increasing for every scale != 0.
    Exp { scale: f64 },
    /// Piecewise-linear through strictly increasing sample points starting
    /// at t = 0.
    Table { points: Vec<(f64, f64)> },
}

/// Serialized form used in source spec files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformSpec {
    Identity,
    Power { exponent: f64 },
    Exp { scale: f64 },
    Table { points: Vec<(f64, f64)> },
}

impl TransformSpec {
    pub fn build(&self) -> Result<DistortionTransform> {
        let t = match self {
            TransformSpec::Identity => DistortionTransform::Identity,
            TransformSpec::Power { exponent } => DistortionTransform::Power {
                exponent: *exponent,
            },
            TransformSpec::Exp { scale } => DistortionTransform::Exp { scale: *scale },
            TransformSpec::Table { points } => DistortionTransform::Table {
                points: points.clone(),
            },
        };
        t.validate()?;
        Ok(t)
    }
}

impl DistortionTransform {
    pub fn validate(&self) -> Result<()> {
        match self {
            DistortionTransform::Identity => Ok(()),
            DistortionTransform::Power { exponent } => {
                if !(exponent.is_finite() && *exponent > 0.0) {
                    Err(Error::InvalidTransform(format!(
                        "power exponent {} must be positive",
                        exponent
                    )))
                } else {
                    Ok(())
                }
            }
            DistortionTransform::Exp { scale } => {
                if !(scale.is_finite() && *scale != 0.0) {
                    Err(Error::InvalidTransform(format!(
                        "exp scale {} must be nonzero",
                        scale
                    )))
                } else {
                    Ok(())
                }
            }
            DistortionTransform::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidTransform(
                        "table needs at least two points".into(),
                    ));
                }
                if points[0].0 != 0.0 {
                    return Err(Error::InvalidTransform(
                        "table must start at t = 0".into(),
                    ));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                        return Err(Error::InvalidTransform(format!(
                            "table not strictly increasing at t = {}",
                            w[1].0
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// f(t).
    pub fn apply(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidTransform(format!("argument {}", t)));
        }
        match self {
            DistortionTransform::Identity => Ok(t),
            DistortionTransform::Power { exponent } => Ok(t.powf(*exponent)),
            DistortionTransform::Exp { scale } => Ok(((scale * t).exp() - 1.0) / scale),
            DistortionTransform::Table { points } => {
                let last = points[points.len() - 1];
                if t > last.0 + 1e-12 {
                    return Err(Error::InvalidTransform(format!(
                        "argument {} beyond table domain [0, {}]",
                        t, last.0
                    )));
                }
                for w in points.windows(2) {
                    if t <= w[1].0 {
                        let s = (t - w[0].0) / (w[1].0 - w[0].0);
                        return Ok(w[0].1 + s * (w[1].1 - w[0].1));
                    }
                }
                Ok(last.1)
            }
        }
    }

    /// f^{-1}(y) on the range of f.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self {
            DistortionTransform::Identity => Ok(y),
            DistortionTransform::Power { exponent } => {
                if y < 0.0 {
                    return Err(Error::InvalidTransform(format!("inverse of {}", y)));
                }
                Ok(y.powf(1.0 / exponent))
            }
            DistortionTransform::Exp { scale } => {
                let arg = 1.0 + scale * y;
                if arg <= 0.0 {
                    return Err(Error::InvalidTransform(format!("inverse of {}", y)));
                }
                Ok(arg.ln() / scale)
            }
            DistortionTransform::Table { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if y < first.1 - 1e-12 || y > last.1 + 1e-12 {
                    return Err(Error::InvalidTransform(format!(
                        "inverse of {} outside table range [{}, {}]",
                        y, first.1, last.1
                    )));
                }
                for w in points.windows(2) {
                    if y <= w[1].1 {
                        let s = (y - w[0].1) / (w[1].1 - w[0].1);
                        return Ok(w[0].0 + s * (w[1].0 - w[0].0));
                    }
                }
                Ok(last.0)
            }
        }
    }

    /// f(0); nonzero only for tables that do not pass through the origin.
    pub fn at_zero(&self) -> Result<f64> {
        self.apply(0.0)
    }
}

/// Elementwise transform of a distortion matrix, shifted by -f(0) so the
/// zero-distortion symbols survive; returns the matrix and the shift.
pub fn transform_distortion_matrix(
    d: &DistortionMatrix,
    f: &DistortionTransform,
) -> Result<(DistortionMatrix, f64)> {
    f.validate()?;
    let shift = f.at_zero()?;
    let mut values = Vec::with_capacity(d.values.len());
    for &v in &d.values {
        values.push(f.apply(v)? - shift);
    }
    Ok((
        DistortionMatrix {
            recon_size: d.recon_size,
            source_size: d.source_size,
            values,
        },
        shift,
    ))
}

/// The generalized-mean sequence distortion
/// `f^{-1}((1/n) sum_i f(d(xhat_i, x_i)))`.
///
/// ```
/// use rdcache::{f_separable_eval, DistortionMatrix, DistortionTransform};
/// let d = DistortionMatrix::hamming(2);
/// // identity recovers the arithmetic mean: half the symbols are wrong
/// let mean = f_separable_eval(&[0, 1, 1, 0], &[0, 0, 1, 1], &d, &DistortionTransform::Identity).unwrap();
/// assert!((mean - 0.5).abs() < 1e-12);
/// // a convex transform weights errors more heavily
/// let f = DistortionTransform::Exp { scale: 2.0 };
/// let heavy = f_separable_eval(&[0, 1, 1, 0], &[0, 0, 1, 1], &d, &f).unwrap();
/// assert!(heavy > mean);
/// ```
pub fn f_separable_eval(
    xhat_seq: &[usize],
    x_seq: &[usize],
    d: &DistortionMatrix,
    f: &DistortionTransform,
) -> Result<f64> {
    if xhat_seq.len() != x_seq.len() || x_seq.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "sequences of length {} and {}",
            xhat_seq.len(),
            x_seq.len()
        )));
    }
    f.validate()?;
    let mut acc = 0.0;
    for (&xh, &x) in xhat_seq.iter().zip(x_seq.iter()) {
        if xh >= d.recon_size || x >= d.source_size {
            return Err(Error::IndexOutOfRange {
                index: xh.max(x),
                len: d.recon_size.max(d.source_size),
            });
        }
        acc += f.apply(d.get(xh, x))?;
    }
    f.inverse(acc / x_seq.len() as f64)
}

/// Apply per-source transforms to a library.
pub fn transform_library(
    lib: &SourceLibrary,
    transforms: &[DistortionTransform],
) -> Result<(SourceLibrary, Vec<f64>)> {
    if transforms.len() != lib.num_sources() {
        return Err(Error::ShapeMismatch(format!(
            "{} transforms for {} sources",
            transforms.len(),
            lib.num_sources()
        )));
    }
    let mut matrices = Vec::with_capacity(lib.num_sources());
    let mut shifts = Vec::with_capacity(lib.num_sources());
    for (d, f) in lib.distortion.iter().zip(transforms.iter()) {
        let (m, shift) = transform_distortion_matrix(d, f)?;
        matrices.push(m);
        shifts.push(shift);
    }
    let out = build_library(
        lib.alphabet_sizes.clone(),
        lib.joint_pmf.clone(),
        lib.recon_alphabet_sizes.clone(),
        matrices,
    )?;
    Ok((out, shifts))
}

/// The tradeoff under generalized-mean distortion: solve the ordinary
/// problem on the transformed instance at the transformed targets.
pub fn f_separable_rdc(
    lib: &SourceLibrary,
    transforms: &[DistortionTransform],
    targets: &DistortionTuple,
    cache: f64,
    opts: &SolverOpts,
) -> Result<TradeoffPoint> {
    targets.validate(lib.num_sources())?;
    let (tlib, shifts) = transform_library(lib, transforms)?;
    let mut ttargets = Vec::with_capacity(targets.0.len());
    for ((f, &d), &shift) in transforms.iter().zip(targets.0.iter()).zip(shifts.iter()) {
        ttargets.push(f.apply(d)? - shift);
    }
    let mut pt = rdc_value(&tlib, &DistortionTuple(ttargets), cache, opts)?;
    // Report the caller's targets; the rate already refers to them.
    pt.distortions = targets.clone();
    Ok(pt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::dsbs_library;

    #[test]
    fn identity_leaves_matrix_alone() {
        let d = DistortionMatrix::hamming(3);
        let (t, shift) = transform_distortion_matrix(&d, &DistortionTransform::Identity).unwrap();
        assert_eq!(t, d);
        assert_eq!(shift, 0.0);
    }

    #[test]
    fn power_fixes_hamming() {
        let d = DistortionMatrix::hamming(2);
        let f = DistortionTransform::Power { exponent: 2.0 };
        let (t, _) = transform_distortion_matrix(&d, &f).unwrap();
        assert_eq!(t, d);
    }

    #[test]
    fn exp_transform_three_level_matrix() {
        let d = DistortionMatrix {
            recon_size: 2,
            source_size: 3,
            values: vec![0.0, 0.5, 1.0, 1.0, 0.0, 0.5],
        };
        let f = DistortionTransform::Exp { scale: 1.0 };
        let (t, shift) = transform_distortion_matrix(&d, &f).unwrap();
        assert_eq!(shift, 0.0);
        assert!((t.get(0, 1) - (0.5f64.exp() - 1.0)).abs() < 1e-15);
        assert!((t.get(0, 2) - (1.0f64.exp() - 1.0)).abs() < 1e-15);
        assert_eq!(t.get(0, 0), 0.0);
    }

    #[test]
    fn table_shift_restores_zero_symbols() {
        let d = DistortionMatrix::hamming(2);
        let f = DistortionTransform::Table {
            points: vec![(0.0, 0.2), (1.0, 1.0)],
        };
        let (t, shift) = transform_distortion_matrix(&d, &f).unwrap();
        assert!((shift - 0.2).abs() < 1e-15);
        assert_eq!(t.get(0, 0), 0.0);
        assert!((t.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_monotone_table_rejected() {
        let f = DistortionTransform::Table {
            points: vec![(0.0, 0.0), (0.5, 0.7), (1.0, 0.6)],
        };
        assert!(f.validate().is_err());
    }

    #[test]
    fn inverse_roundtrip() {
        let fs = [
            DistortionTransform::Identity,
            DistortionTransform::Power { exponent: 2.0 },
            DistortionTransform::Power { exponent: 0.5 },
            DistortionTransform::Exp { scale: 1.0 },
            DistortionTransform::Exp { scale: -2.0 },
            DistortionTransform::Table {
                points: vec![(0.0, 0.0), (0.3, 0.5), (1.0, 1.0)],
            },
        ];
        for f in &fs {
            for k in 0..=10 {
                let t = k as f64 / 10.0;
                let y = f.apply(t).unwrap();
                let back = f.inverse(y).unwrap();
                assert!((back - t).abs() < 1e-10, "{:?} at {}", f, t);
            }
        }
    }

    #[test]
    fn eval_identity_is_arithmetic_mean() {
        let d = DistortionMatrix::hamming(2);
        let xhat = [0, 1, 1, 0];
        let x = [0, 0, 1, 1];
        let v = f_separable_eval(&xhat, &x, &d, &DistortionTransform::Identity).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eval_constant_sequence_is_fixed_point() {
        // Kolmogorov axiom (iii): the mean of (a, ..., a) is a.
        let d = DistortionMatrix {
            recon_size: 2,
            source_size: 2,
            values: vec![0.3, 0.3, 0.3, 0.3],
        };
        for f in [
            DistortionTransform::Power { exponent: 3.0 },
            DistortionTransform::Exp { scale: 2.0 },
        ] {
            let v = f_separable_eval(&[0, 1, 0], &[1, 0, 1], &d, &f).unwrap();
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_exp_hand_computation() {
        // n = 2 Hamming distortions (0, 1) under f(t) = 2^t - 1 scaled:
        // f = exp with scale ln 2 gives f(t) = (2^t - 1)/ln 2.
        let d = DistortionMatrix::hamming(2);
        let f = DistortionTransform::Exp {
            scale: std::f64::consts::LN_2,
        };
        let v = f_separable_eval(&[0, 0], &[0, 1], &d, &f).unwrap();
        // mean of f(0) = 0 and f(1) = 1/ln2 is 1/(2 ln 2); inverse:
        // log2(1 + ln2 * y) = log2(1.5)
        let expect = (1.5f64).log2();
        assert!((v - expect).abs() < 1e-12, "{} vs {}", v, expect);
    }

    #[test]
    fn rdc_reduction_identity_is_bit_for_bit() {
        let lib = dsbs_library(0.1).unwrap();
        let targets = DistortionTuple(vec![0.0, 0.0]);
        let opts = SolverOpts {
            restarts: 4,
            ..Default::default()
        };
        let base = rdc_value(&lib, &targets, 0.9, &opts).unwrap();
        let f = vec![DistortionTransform::Identity, DistortionTransform::Identity];
        let red = f_separable_rdc(&lib, &f, &targets, 0.9, &opts).unwrap();
        assert_eq!(base.rate.to_bits(), red.rate.to_bits());
    }

    #[test]
    fn rdc_reduction_power_on_hamming_matches() {
        let lib = dsbs_library(0.1).unwrap();
        let targets = DistortionTuple(vec![0.0, 0.0]);
        let opts = SolverOpts {
            restarts: 4,
            ..Default::default()
        };
        let base = rdc_value(&lib, &targets, 1.1, &opts).unwrap();
        let f = vec![
            DistortionTransform::Power { exponent: 2.0 },
            DistortionTransform::Power { exponent: 2.0 },
        ];
        let red = f_separable_rdc(&lib, &f, &targets, 1.1, &opts).unwrap();
        assert!((base.rate - red.rate).abs() < 1e-12);
    }
}
