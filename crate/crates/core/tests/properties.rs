use std::collections::BTreeMap;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use svine::backtest::{generate_portfolios, PortfolioSpec};
use svine::bicop::tau_inversion;
use svine::bootstrap::weighted_pit;
use svine::estimation::{MarginMode, PseudoSample, SVineModel, VinePlan};
use svine::forecast::{check_loss, crps};
use svine::margins::{EmpiricalMargin, SkewTParams};
use svine::vine_graph::{is_stationary_vine, m_vine_spec, random_rvine_on, VertexId};
use svine::{BivariateCopula, Family, FamilyTag};

fn family() -> impl Strategy<Value = FamilyTag> {
    let fams = prop_oneof![
        Just(Family::Gaussian),
        Just(Family::StudentT),
        Just(Family::Clayton),
        Just(Family::Gumbel),
        Just(Family::Frank),
    ];
    (fams, prop_oneof![Just(0u16), Just(90), Just(180), Just(270)]).prop_map(|(f, r)| {
        let r = if f.rotatable() { r } else { 0 };
        FamilyTag::new(f, r).unwrap()
    })
}

fn copula() -> impl Strategy<Value = BivariateCopula> {
    (family(), 0.05f64..0.8).prop_map(|(tag, t)| {
        let tau = if matches!(tag.rotation, 90 | 270) { -t } else { t };
        BivariateCopula::new(tag, tau_inversion(tag, tau)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hinv_inverts_h(c in copula(), w in 0.001f64..0.999, v in 0.001f64..0.999) {
        let u = c.hinv_given_v(w, v).unwrap();
        prop_assert!((c.h_given_v(u, v) - w).abs() < 1e-8);
        let b = c.hinv_given_u(w, v).unwrap();
        prop_assert!((c.h_given_u(v, b) - w).abs() < 1e-8);
    }

    #[test]
    fn h_is_a_conditional_distribution(c in copula(), u in 0.01f64..0.98, du in 0.001f64..0.02, v in 0.01f64..0.99) {
        let (a, b) = (c.h_given_v(u, v), c.h_given_v(u + du, v));
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b >= a - 1e-12);
        let p = c.pdf(u, v);
        prop_assert!(p.is_finite() && p > 0.0);
    }

    #[test]
    fn half_turn_reflects_the_density(t in 0.05f64..0.8, u in 0.01f64..0.99, v in 0.01f64..0.99, which in 0usize..2) {
        let fam = [Family::Clayton, Family::Gumbel][which];
        let base = BivariateCopula::new(FamilyTag::new(fam, 0).unwrap(), tau_inversion(FamilyTag::new(fam, 0).unwrap(), t)).unwrap();
        let turned = BivariateCopula::new(FamilyTag::new(fam, 180).unwrap(), base.params().to_vec()).unwrap();
        let (p, q) = (turned.pdf(u, v), base.pdf(1.0 - u, 1.0 - v));
        prop_assert!((p - q).abs() <= 1e-10 * q.max(1.0));
    }

    #[test]
    fn skew_t_quantile_inverts_cdf(mu in -2.0f64..2.0, sigma in 0.2f64..3.0, nu in 2.5f64..30.0, gamma in 0.5f64..2.0, u in 0.001f64..0.999) {
        let m = SkewTParams::new(mu, sigma, nu, gamma).unwrap();
        prop_assert!((m.cdf(m.quantile(u)) - u).abs() < 1e-9);
    }

    #[test]
    fn empirical_pit_stays_inside_the_unit_interval(x in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let m = EmpiricalMargin::new(&x).unwrap();
        for &xi in &x {
            let u = m.cdf(xi);
            prop_assert!(u > 0.0 && u < 1.0);
        }
        let data = Array2::from_shape_vec((x.len(), 1), x.clone()).unwrap();
        let (ps, _) = PseudoSample::from_observations(&data, MarginMode::Semiparametric).unwrap();
        prop_assert!(ps.data().iter().all(|&u| u > 0.0 && u < 1.0));
    }

    #[test]
    fn weighted_pit_is_bounded_and_shift_free(
        x in prop::collection::vec(-5.0f64..5.0, 3..60),
        seed in any::<u64>(),
        shift in -0.5f64..0.5,
    ) {
        let n = x.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi: Vec<f64> = (0..n).map(|_| 1.0 + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let moved: Vec<f64> = xi.iter().map(|v| v + shift).collect();
        let data = Array2::from_shape_vec((n, 1), x).unwrap();
        let (a, b) = (weighted_pit(&data, &xi), weighted_pit(&data, &moved));
        let lo = 1.0 / (n + 1) as f64;
        for (p, q) in a.iter().zip(b.iter()) {
            prop_assert!(*p >= lo && *p <= 1.0 - lo);
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn model_json_round_trips_exactly(rhos in prop::collection::vec(-0.9f64..0.9, 5)) {
        let spec = m_vine_spec(2, 1);
        let classes: BTreeMap<_, _> = VinePlan::new(&spec).unwrap().classes().iter().zip(&rhos)
            .map(|(c, &r)| (c.class.clone(), BivariateCopula::gaussian(r).unwrap()))
            .collect();
        let model = SVineModel::new(spec, classes).unwrap();
        let text = model.to_json_string().unwrap();
        let back = SVineModel::from_json_str(&text).unwrap();
        prop_assert_eq!(back.to_json_string().unwrap(), text);
        for ((c, a), (k, b)) in model.copulas().zip(back.copulas()) {
            prop_assert_eq!(c, k);
            prop_assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn portfolio_weights_close_the_budget(d in 2usize..30, count in 1usize..20, seed in any::<u64>()) {
        let spec = PortfolioSpec { count, ..PortfolioSpec::default() };
        let ws = generate_portfolios(d, &spec, seed).unwrap();
        prop_assert_eq!(ws.len(), count);
        for w in ws {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w[..d - 1].iter().all(|&x| (spec.lo..spec.hi).contains(&x)));
        }
    }

    #[test]
    fn scores_are_nonnegative(sample in prop::collection::vec(-10.0f64..10.0, 1..100), y in -20.0f64..20.0, alpha in 0.01f64..0.99) {
        prop_assert!(crps(&sample, y).unwrap() >= -1e-12);
        let q = sample[0];
        prop_assert!(check_loss(alpha, q, y) >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unstructured_vines_report_a_witness(seed in any::<u64>(), d in 1u32..=3, t_len in 2i32..=3) {
        let vertices: Vec<VertexId> = (1..=t_len).flat_map(|t| (1..=d).map(move |j| VertexId::new(t, j))).collect();
        let vine = random_rvine_on(vertices, &mut ChaCha8Rng::seed_from_u64(seed));
        let rep = is_stationary_vine(&vine);
        prop_assert_eq!(rep.stationary, rep.witness.is_none());
    }
}

#[test]
fn random_vines_over_time_are_rarely_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let vertices: Vec<VertexId> = (1..=3).flat_map(|t| (1..=3).map(move |j| VertexId::new(t, j))).collect();
    let stationary = (0..300)
        .filter(|_| is_stationary_vine(&random_rvine_on(vertices.clone(), &mut rng)).stationary)
        .count();
    assert!(stationary <= 3, "{stationary} of 300 random vines were stationary");
}
