//! Property tests for the mathematical invariants that hold on every valid
//! input: marginalization consistency, entropy-inverse roundtrips, the
//! axioms of the generalized mean, and bound ordering.

use proptest::prelude::*;

use rdcache::{DistortionMatrix, DistortionTransform, SourceSpec};

fn pmf_strategy(total: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..1.0, total).prop_map(|raw| {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginal_tower_property(pmf in pmf_strategy(8)) {
        // marginalizing {0,2} then {2} equals marginalizing {2} directly
        let spec = SourceSpec {
            alphabet_sizes: vec![2, 2, 2],
            pmf,
            recon_alphabet_sizes: None,
            distortions: None,
            f: None,
        };
        let lib = rdcache::validate_library(&spec).unwrap();
        let sub = rdcache::sub_library(&lib, &[0, 2]).unwrap();
        let direct = rdcache::marginal(&lib, &[2]).unwrap();
        let via = rdcache::marginal(&sub, &[1]).unwrap();
        for (a, b) in direct.iter().zip(via.iter()) {
            prop_assert!((a - b).abs() < 1e-14);
        }
        // marginals are pmfs
        let s: f64 = direct.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_is_idempotent(pmf in pmf_strategy(6)) {
        let spec = SourceSpec {
            alphabet_sizes: vec![2, 3],
            pmf,
            recon_alphabet_sizes: None,
            distortions: None,
            f: None,
        };
        let lib = rdcache::validate_library(&spec).unwrap();
        prop_assert_eq!(lib.revalidate().unwrap(), lib);
    }

    #[test]
    fn binary_entropy_inverse_roundtrip(y in 0.0f64..1.0) {
        let p = rdcache::binary_entropy_inverse(y);
        prop_assert!((0.0..=0.5).contains(&p));
        prop_assert!((rdcache::binary_entropy(p) - y).abs() < 1e-10);
    }

    #[test]
    fn dsbs_bounds_ordered(rho in 0.0f64..0.5, c in 0.0f64..2.0) {
        let b = rdcache::dsbs_rdc_bounds(rho, c).unwrap();
        prop_assert!(b.lower <= b.upper + 1e-12);
        prop_assert!(b.lower >= 0.0 && b.upper <= 1.0 + 1e-12);
        if b.exact {
            prop_assert!((b.lower - b.upper).abs() < 1e-12);
        }
    }

    #[test]
    fn wyner_dominates_gacs_korner_on_dsbs(rho in 0.001f64..0.5) {
        let lib = rdcache::dsbs_library(rho).unwrap();
        let gk = rdcache::gacs_korner_zero(&lib).value;
        let w = rdcache::wyner_ci_dsbs(rho).unwrap();
        prop_assert!(w >= gk - 1e-12);
    }

    // Axioms of the generalized mean: symmetry, idempotence, monotonicity,
    // and replacement of a prefix by its own mean.
    #[test]
    fn generalized_mean_axioms(
        vals in proptest::collection::vec(0usize..2, 4..10),
        scale in 0.25f64..3.0,
        swap in 0usize..3,
    ) {
        let d = DistortionMatrix::hamming(2);
        let f = DistortionTransform::Exp { scale };
        let x: Vec<usize> = vec![0; vals.len()];
        let m = rdcache::f_separable_eval(&vals, &x, &d, &f).unwrap();

        // symmetry under transposition
        let mut perm = vals.clone();
        if perm.len() > swap + 1 {
            perm.swap(swap, swap + 1);
        }
        let mp = rdcache::f_separable_eval(&perm, &x, &d, &f).unwrap();
        prop_assert!((m - mp).abs() < 1e-12);

        // idempotence on constant sequences
        let ones = vec![1usize; vals.len()];
        let mi = rdcache::f_separable_eval(&ones, &x, &d, &f).unwrap();
        prop_assert!((mi - 1.0).abs() < 1e-10);

        // monotone in each argument: raising one symbol's distortion from
        // 0 to 1 cannot lower the mean
        if vals[0] == 0 {
            let mut raised = vals.clone();
            raised[0] = 1;
            let mr = rdcache::f_separable_eval(&raised, &x, &d, &f).unwrap();
            prop_assert!(mr >= m - 1e-12);
        }

        // partial-mean replacement: replacing the first k entries by a
        // block with the same block-mean leaves the total unchanged; with
        // 0/1 distortions we check the two-block composition identity
        // f^{-1}((k f(m1) + (n-k) f(m2))/n) against the direct evaluation
        let k = vals.len() / 2;
        let m1 = rdcache::f_separable_eval(&vals[..k], &x[..k], &d, &f).unwrap();
        let m2 = rdcache::f_separable_eval(&vals[k..], &x[k..], &d, &f).unwrap();
        let recomposed = f.inverse(
            (k as f64 * f.apply(m1).unwrap()
                + (vals.len() - k) as f64 * f.apply(m2).unwrap())
                / vals.len() as f64,
        ).unwrap();
        prop_assert!((recomposed - m).abs() < 1e-10);
    }

    #[test]
    fn transform_roundtrip(t in 0.0f64..1.0, exponent in 0.3f64..4.0, scale in -3.0f64..3.0) {
        let fs = [
            DistortionTransform::Power { exponent },
            DistortionTransform::Exp { scale: if scale.abs() < 0.05 { 1.0 } else { scale } },
        ];
        for f in fs {
            let y = f.apply(t).unwrap();
            prop_assert!((f.inverse(y).unwrap() - t).abs() < 1e-9);
        }
    }
}
