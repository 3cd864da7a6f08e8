use proptest::prelude::*;

use varbesov::bayes::{hellinger_from_potentials, PosteriorHandle};
use varbesov::cli::config::strip_comments;
use varbesov::exponent::ExponentField;
use varbesov::forward::{mittag_leffler, propagate_grid, ForwardModel, ObservationSetup, ML_TOLERANCE};
use varbesov::io::{decode_binary, encode_binary};
use varbesov::modular::{modular_value, ModularSpec};
use varbesov::prior::{PriorSampler, PriorSpec};
use varbesov::wavelet::{analyze, synthesize, Convention, WaveletCoefficients, WaveletFamily};

fn coeffs(level: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 2usize << level)
}

fn variable_spec() -> ModularSpec {
    ModularSpec::new(ExponentField::cosine(1.2, 0.3), ExponentField::cosine(1.6, 0.4)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wavelet_roundtrip(signal in prop::collection::vec(-1.0f64..1.0, 64), order in 2usize..9) {
        let family = WaveletFamily::daubechies(order).unwrap();
        let c = analyze(&signal, &family).unwrap();
        let back = synthesize(&c, &family, 64).unwrap();
        for (a, b) in signal.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn modular_is_midpoint_convex(a in coeffs(3), b in coeffs(3)) {
        let spec = variable_spec();
        let ca = WaveletCoefficients::from_flat(Convention::Lambda, &a).unwrap();
        let cb = WaveletCoefficients::from_flat(Convention::Lambda, &b).unwrap();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let cm = WaveletCoefficients::from_flat(Convention::Lambda, &mid).unwrap();
        let (ra, rb, rm) = (
            modular_value(&ca, &spec).unwrap(),
            modular_value(&cb, &spec).unwrap(),
            modular_value(&cm, &spec).unwrap(),
        );
        prop_assert!(rm <= 0.5 * (ra + rb) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn modular_scales_between_exponent_bounds(a in coeffs(3), c in 1.0f64..4.0) {
        let spec = variable_spec();
        let u = WaveletCoefficients::from_flat(Convention::Lambda, &a).unwrap();
        let r = modular_value(&u, &spec).unwrap();
        let rc = modular_value(&u.map(|v| c * v), &spec).unwrap();
        prop_assert!(rc >= c.powf(spec.q.lower_bound()) * r * (1.0 - 1e-9));
        prop_assert!(rc <= c.powf(spec.q.upper_bound()) * r * (1.0 + 1e-9));
    }

    #[test]
    fn heat_is_linear_and_a_semigroup(
        f in prop::collection::vec(-1.0f64..1.0, 64),
        g in prop::collection::vec(-1.0f64..1.0, 64),
        a in -2.0f64..2.0,
        t1 in 1e-4f64..0.02,
        t2 in 1e-4f64..0.02,
    ) {
        let m1 = ForwardModel::heat(t1, 32).unwrap();
        let m2 = ForwardModel::heat(t2, 32).unwrap();
        let m12 = ForwardModel::heat(t1 + t2, 32).unwrap();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
        let (pf, pg, pc) = (
            propagate_grid(&f, &m1).unwrap(),
            propagate_grid(&g, &m1).unwrap(),
            propagate_grid(&combo, &m1).unwrap(),
        );
        for i in 0..64 {
            prop_assert!((pc[i] - (a * pf[i] + pg[i])).abs() < 1e-12);
        }
        let twice = propagate_grid(&propagate_grid(&f, &m1).unwrap(), &m2).unwrap();
        let once = propagate_grid(&f, &m12).unwrap();
        for i in 0..64 {
            prop_assert!((twice[i] - once[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mittag_leffler_is_a_decreasing_probability(alpha in 0.2f64..1.0, x in 0.0f64..40.0, dx in 0.01f64..5.0) {
        let e = mittag_leffler(alpha, -x, ML_TOLERANCE).unwrap();
        let e2 = mittag_leffler(alpha, -(x + dx), ML_TOLERANCE).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(e2 <= e + 1e-12);
    }

    #[test]
    fn hellinger_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 50),
        b in prop::collection::vec(-5.0f64..5.0, 50),
    ) {
        let ab = hellinger_from_potentials(&a, &b).unwrap();
        let ba = hellinger_from_potentials(&b, &a).unwrap();
        prop_assert!((ab.distance - ba.distance).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.distance));
        prop_assert_eq!(hellinger_from_potentials(&a, &a).unwrap().distance, 0.0);
    }

    #[test]
    fn binary_format_roundtrips(flat in coeffs(4), order in 1usize..10) {
        let c = WaveletCoefficients::from_flat(Convention::U, &flat).unwrap();
        let (h, back) = decode_binary(&encode_binary(&c, order).unwrap()).unwrap();
        prop_assert_eq!(back, c);
        prop_assert_eq!(h.family_order, order);
    }

    #[test]
    fn comment_stripping_keeps_lines(body in "[a-z \"/*\n]{0,80}") {
        prop_assert_eq!(strip_comments(&body).matches('\n').count(), body.matches('\n').count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn potential_is_bounded_below(draw in 0u64..1000, y in prop::collection::vec(-1.0f64..1.0, 6)) {
        let prior = PriorSpec::new(ExponentField::cosine(1.5, 0.2), ExponentField::constant(1.5), 2.0, 4, 1).unwrap();
        let setup = ObservationSetup::isotropic((0..6).map(|i| i as f64 / 6.0).collect(), 0.05).unwrap();
        let handle = PosteriorHandle::new(prior.clone(), ForwardModel::heat(0.01, 64).unwrap(), setup, y).unwrap();
        let u = PriorSampler::new(prior).unwrap().sample(draw).unwrap();
        let phi = handle.potential(&u.coeffs).unwrap();
        prop_assert!(phi >= -handle.data_energy() * (1.0 + 1e-12));
    }

    #[test]
    fn truncations_share_coarse_draws(draw in 0u64..1000, level in 1usize..6) {
        let spec = PriorSpec::new(ExponentField::cosine(1.5, 0.2), ExponentField::cosine(1.7, 0.2), 1.0, 6, 3).unwrap();
        let fine = PriorSampler::new(spec.clone()).unwrap().sample(draw).unwrap();
        let coarse = PriorSampler::new(spec.with_truncation(level)).unwrap().sample(draw).unwrap();
        prop_assert_eq!(fine.coeffs.truncated(level), coarse.coeffs);
    }
}
