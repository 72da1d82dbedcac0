//! Property tests of the normalizer kernels' mathematical invariants.

use normkit::normalizers::{
    layernorm_forward, partial_len, partial_rms, rms, rmsnorm_forward, NormParams,
    DEFAULT_EPSILON,
};
use normkit::tensor::{Matrix, Vector};
use proptest::prelude::*;

fn vector_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, 1..=max_len)
}

proptest! {
    /// Scaling the input scales the statistic by |alpha| exactly (up to
    /// float rounding) once the stabilizer is out of the picture.
    #[test]
    fn rms_is_absolutely_homogeneous(
        data in vector_strategy(64),
        alpha in prop_oneof![Just(-3.0), Just(0.01), Just(1.0), Just(7.0), -5.0f64..5.0],
    ) {
        let a = Vector::from(data);
        prop_assume!(rms(&a, 0.0) >= 1e-3);
        prop_assume!(alpha != 0.0);
        let lhs = rms(&a.scale(alpha), 0.0);
        let rhs = alpha.abs() * rms(&a, 0.0);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs, "{lhs} vs {rhs}");
    }

    /// The partial statistic keeps the same linearity at any ratio.
    #[test]
    fn partial_rms_is_absolutely_homogeneous(
        data in vector_strategy(64),
        alpha in prop_oneof![Just(-3.0), Just(0.01), Just(7.0), -5.0f64..5.0],
        p in prop_oneof![Just(0.0625), Just(0.5), Just(1.0), 0.01f64..1.0],
    ) {
        let a = Vector::from(data);
        prop_assume!(partial_rms(&a, p, 0.0) >= 1e-3);
        prop_assume!(alpha != 0.0);
        let lhs = partial_rms(&a.scale(alpha), p, 0.0);
        let rhs = alpha.abs() * partial_rms(&a, p, 0.0);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs, "{lhs} vs {rhs}");
    }

    /// On zero-mean inputs the RMS and layer normalizers coincide.
    #[test]
    fn zero_mean_inputs_collapse_the_two_normalizers(data in vector_strategy(64)) {
        let raw = Vector::from(data);
        let centered = raw.shift(-raw.mean());
        let params = NormParams::new(centered.len());
        let (rn, _) = rmsnorm_forward(&centered, &params, DEFAULT_EPSILON).unwrap();
        let (ln, _) = layernorm_forward(&centered, &params, DEFAULT_EPSILON).unwrap();
        for (a, b) in rn.iter().zip(ln.iter()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    /// With unit gains the normalized output has unit mean square.
    #[test]
    fn unit_gain_output_has_unit_power(data in vector_strategy(64)) {
        let a = Vector::from(data);
        prop_assume!(rms(&a, 0.0) >= 1e-3);
        let params = NormParams::new(a.len());
        // Exact statement, stabilizer disabled.
        let (out, _) = rmsnorm_forward(&a, &params, 0.0).unwrap();
        let power = out.sum_sq() / out.len() as f64;
        prop_assert!((power - 1.0).abs() <= 1e-9, "power {power}");
        // At the default epsilon the power is short by eps/(ms + eps).
        let (out, _) = rmsnorm_forward(&a, &params, DEFAULT_EPSILON).unwrap();
        let power = out.sum_sq() / out.len() as f64;
        let ms = a.sum_sq() / a.len() as f64;
        let expected = ms / (ms + DEFAULT_EPSILON);
        prop_assert!((power - expected).abs() <= 1e-9, "power {power} vs {expected}");
    }

    /// Full coverage reduces the partial statistic to the plain one,
    /// bit for bit.
    #[test]
    fn partial_at_full_ratio_is_rms(data in vector_strategy(64)) {
        let a = Vector::from(data);
        prop_assert_eq!(
            partial_rms(&a, 1.0, DEFAULT_EPSILON).to_bits(),
            rms(&a, DEFAULT_EPSILON).to_bits()
        );
    }

    /// k = ceil(n p) stays in [1, n] and covers everything at p = 1.
    #[test]
    fn partial_len_bounds(n in 1usize..2000, p in 0.0001f64..1.0) {
        let k = partial_len(n, p);
        prop_assert!(k >= 1 && k <= n);
        prop_assert_eq!(partial_len(n, 1.0), n);
        // Ceiling: k - 1 < n p <= k.
        prop_assert!(((k - 1) as f64) < n as f64 * p);
        prop_assert!(n as f64 * p <= k as f64 + 1e-9);
    }

    /// Identity matvec and repeated-call bit determinism.
    #[test]
    fn matvec_identity_and_determinism(data in vector_strategy(32)) {
        let x = Vector::from(data);
        let eye = Matrix::identity(x.len());
        let once = eye.matvec(&x).unwrap();
        let twice = eye.matvec(&x).unwrap();
        prop_assert_eq!(once.as_slice(), x.as_slice());
        for (a, b) in once.iter().zip(twice.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
