use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use seltrunc::censored::censored_factor_spec;
use seltrunc::*;

const INF: f64 = f64::INFINITY;

fn family(nu: Option<f64>) -> Family {
    match nu {
        Some(nu) => Family::StudentT { nu },
        None => Family::Normal,
    }
}

fn nu_strategy() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), (4.0..15.0f64).prop_map(Some)]
}

// 2x2 dispersion from a Cholesky factor with a floor on the diagonal.
fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
    (0.5..1.5f64, -0.8..0.8f64, 0.5..1.5f64).prop_map(|(a, b, c)| {
        let l = DMatrix::from_row_slice(2, 2, &[a, 0.0, b, c]);
        &l * l.transpose()
    })
}

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (-1.5..1.0f64, 0.3..2.0f64).prop_map(|(a, w)| (a, a + w))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn truncated_moments_shift_with_location(
        nu in nu_strategy(),
        omega in spd2(),
        (a0, b0) in interval(),
        (a1, b1) in interval(),
        c0 in -3.0..3.0f64,
        c1 in -3.0..3.0f64,
    ) {
        let cfg = MomentConfig::default();
        let xi = DVector::from_column_slice(&[0.2, -0.1]);
        let c = DVector::from_column_slice(&[c0, c1]);
        let base = EllipticalJoint::new(family(nu), xi.clone(), omega.clone()).unwrap();
        let moved = EllipticalJoint::new(family(nu), &xi + &c, omega).unwrap();
        let bx = TruncationBox::new(vec![a0, a1], vec![b0, b1]).unwrap();
        let r0 = truncated_moments(&base, &bx, &cfg).unwrap();
        let r1 = truncated_moments(&moved, &bx.shifted(&[-c0, -c1]), &cfg).unwrap();
        prop_assert!(close(r0.prob_mass, r1.prob_mass, 1e-9));
        for i in 0..2 {
            prop_assert!(close(r0.mean[i] + c[i], r1.mean[i], 1e-8), "{} {}", r0.mean, r1.mean);
            for j in 0..2 {
                prop_assert!(close(r0.covariance[(i, j)], r1.covariance[(i, j)], 1e-8));
            }
        }
    }

    #[test]
    fn selection_moments_follow_positive_scaling(
        nu in nu_strategy(),
        sigma in spd2(),
        l0 in -3.0..3.0f64,
        l1 in -3.0..3.0f64,
        tau in -1.0..1.0f64,
        s0 in 0.3..3.0f64,
        s1 in 0.3..3.0f64,
        b0 in -1.0..1.0f64,
        b1 in -1.0..1.0f64,
        (lo0, hi0) in interval(),
        (lo1, hi1) in interval(),
    ) {
        let cfg = MomentConfig::default();
        let params = SutParams::extended(
            DVector::from_column_slice(&[0.1, -0.3]),
            sigma,
            DVector::from_column_slice(&[l0, l1]),
            tau,
            nu,
        ).unwrap();
        let spec = build_selection(&params).unwrap();
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[s0, s1]));
        let b = DVector::from_column_slice(&[b0, b1]);
        let image = spec.affine(&a, &b).unwrap();
        let bx = TruncationBox::new(vec![lo0, lo1], vec![hi0, hi1]).unwrap();
        let bx_image = TruncationBox::new(
            vec![s0 * lo0 + b0, s1 * lo1 + b1],
            vec![s0 * hi0 + b0, s1 * hi1 + b1],
        ).unwrap();
        let r = tse_mean_cov(&spec, &bx, &cfg).unwrap();
        let ri = tse_mean_cov(&image, &bx_image, &cfg).unwrap();
        let mean = &a * &r.mean + &b;
        let cov = &a * &r.covariance * &a;
        for i in 0..2 {
            prop_assert!(close(ri.mean[i], mean[i], 1e-7), "{} {}", ri.mean, mean);
            for j in 0..2 {
                prop_assert!(close(ri.covariance[(i, j)], cov[(i, j)], 1e-7));
            }
        }
    }

    #[test]
    fn complementary_quadrants_sum_to_one(
        nu in nu_strategy(),
        omega in spd2(),
        x0 in -2.0..2.0f64,
        x1 in -2.0..2.0f64,
    ) {
        let dist = EllipticalJoint::new(family(nu), DVector::zeros(2), omega).unwrap();
        let settings = RectangleProbSettings::default();
        let cuts = [(-INF, x0, x0, INF), (-INF, x1, x1, INF)];
        let mut total = 0.0;
        let mut err = 0.0;
        for k in 0..4 {
            let (lo0, hi0) = if k & 1 == 0 { (cuts[0].0, cuts[0].1) } else { (cuts[0].2, cuts[0].3) };
            let (lo1, hi1) = if k & 2 == 0 { (cuts[1].0, cuts[1].1) } else { (cuts[1].2, cuts[1].3) };
            let bx = TruncationBox::new(vec![lo0, lo1], vec![hi0, hi1]).unwrap();
            let est = rectangle_prob(&dist, &bx, &settings).unwrap();
            total += est.prob;
            err += est.error;
        }
        prop_assert!((total - 1.0).abs() <= err + 1e-13, "sum {total}, error {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn portfolio_contributions_add_up(
        nu in 4.0..12.0f64,
        sigma in spd2(),
        l0 in -2.0..2.0f64,
        l1 in -2.0..2.0f64,
        m0 in -0.05..0.05f64,
        m1 in -0.05..0.05f64,
        alpha in 0.01..0.2f64,
    ) {
        let params = SutParams::skew(
            DVector::from_column_slice(&[m0, m1]),
            sigma * 0.05,
            DVector::from_column_slice(&[l0, l1]),
            Some(nu),
        ).unwrap();
        let d = tce_sum_decomposed(&params, alpha, &MomentConfig::default()).unwrap();
        prop_assert!((d.contributions.sum() - d.total).abs() <= 1e-8 * (1.0 + d.total.abs()));
    }

    // Left side of the censoring identity by direct quadrature over the box, p = q = 1.
    #[test]
    fn censoring_identity_matches_quadrature(
        nu in nu_strategy(),
        lambda in -3.0..3.0f64,
        tau in -1.0..1.0f64,
        (a, b) in interval(),
    ) {
        let cfg = MomentConfig::default();
        let params = SutParams::extended(
            DVector::from_element(1, 0.2),
            DMatrix::from_element(1, 1, 1.3),
            DVector::from_element(1, lambda),
            tau,
            nu,
        ).unwrap();
        let spec = build_selection(&params).unwrap();
        let bx = TruncationBox::new(vec![a], vec![b]).unwrap();
        let factor = censored_factor_spec(&spec, &bx, &cfg.qmc).unwrap();
        let mass = se_box_prob(&spec, &bx, &cfg.qmc).unwrap().prob;
        let positive = TruncationBox::lower_orthant(vec![0.0]).unwrap();

        let integrand = |y: f64, power: i32| {
            let yv = DVector::from_element(1, y);
            let x1 = spec.joint().conditional(&spec.outcome_indices(), &yv).unwrap();
            let ratio = x1.density(&DVector::zeros(1)).unwrap()
                / rectangle_prob(&x1, &positive, &cfg.qmc).unwrap().prob;
            y.powi(power) * ratio * se_pdf(&spec, &yv, &cfg.qmc).unwrap() / mass
        };
        for (power, g) in [(0, GSpec::One), (1, GSpec::First), (2, GSpec::Second)] {
            let lhs = quadrature::double_exponential::integrate(|y| integrand(y, power), a, b, 1e-12).integral;
            let rhs = match factor.expectation(g, &cfg).unwrap() {
                GValue::Scalar(v) => v,
                GValue::Vector(v) => v[0],
                GValue::Matrix(m) => m[(0, 0)],
            };
            prop_assert!(close(lhs, rhs, 1e-8), "g = y^{power}: {lhs} vs {rhs}");
        }
    }
}
