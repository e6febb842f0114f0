use b2exp::precision::{check_precision, empirical_precision, theoretical_precision};
use b2exp::{
    seeded_bits, ArithContext, Eta, ExactValue, Mechanism, MechanismConfig, PrecisionRequest, PrecisionStrategy,
    SampleOptions, Variant,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow};
use proptest::prelude::*;

fn eta() -> impl Strategy<Value = Eta> {
    (1u32..=10, 1u32..=3)
        .prop_flat_map(|(y, z)| (1u64..=(1 << y), Just(y), Just(z)))
        .prop_map(|(x, y, z)| Eta::new(x, y, z).unwrap())
}

fn request() -> impl Strategy<Value = PrecisionRequest> {
    (-6i64..=4, 0i64..=24, 1u64..=64, eta())
        .prop_map(|(u_min, span, o_max, eta)| PrecisionRequest::new(u_min, u_min + span, o_max, eta).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn base_is_exact_and_within_bounds(eta in eta()) {
        let ctx = ArithContext::new(eta.base_bits().max(1)).unwrap();
        let base = eta.base(&ctx).unwrap();
        prop_assert!(base.significant_bits() <= eta.base_bits().max(1));
        prop_assert!(base.is_positive() && base <= ExactValue::one());
        prop_assert_eq!(base == ExactValue::one(), eta.x() == 1 << eta.y());
        let ratio = BigRational::new(BigInt::from(eta.x()), BigInt::one() << eta.y());
        prop_assert_eq!(base.to_rational(), ratio.pow(eta.z() as i32));
        prop_assert_eq!(eta.b_x() as usize, format!("{:b}", eta.x()).len());
    }

    #[test]
    fn empirical_is_on_schedule_and_minimal_there(req in request()) {
        let e = empirical_precision(&req).unwrap();
        let t = theoretical_precision(&req).unwrap();
        prop_assert!(e <= t);
        prop_assert!(check_precision(&req, e));
        prop_assert!(check_precision(&req, t));
        prop_assert!(e.is_power_of_two() || e == t);
        let previous = if e.is_power_of_two() { e / 2 } else { 1 << (63 - e.leading_zeros()) };
        prop_assert!(e == 1 || !check_precision(&req, previous));
    }

    #[test]
    fn passing_is_monotone_in_precision(req in request()) {
        let t = theoretical_precision(&req).unwrap();
        let mut passed = false;
        for p in 1..=t + 2 {
            let ok = check_precision(&req, p);
            prop_assert!(ok || !passed, "passed below {} but failed at it", p);
            passed |= ok;
        }
        prop_assert!(passed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    // any multiset inside the declared range, at either precision, stays exact
    #[test]
    fn either_strategy_is_sufficient(
        req in request(),
        draws in prop::collection::vec(any::<u64>(), 1..=64),
        variant in prop_oneof![Just(Variant::Standard), Just(Variant::FullScan), Just(Variant::Optimized)],
        seed in any::<u64>(),
    ) {
        let span = (req.u_max - req.u_min + 1) as u64;
        let n = draws.len().min(req.o_max as usize);
        let utilities: Vec<ExactValue> = draws[..n]
            .iter()
            .map(|d| ExactValue::from(req.u_min + (d % span) as i64))
            .collect();
        for strategy in [PrecisionStrategy::Theoretical, PrecisionStrategy::Empirical] {
            let cfg = MechanismConfig::new(req.eta, req.u_min, req.u_max, req.o_max as usize)
                .unwrap()
                .with_precision_strategy(strategy)
                .with_options(SampleOptions::new(1, variant).unwrap());
            let mechanism = Mechanism::new(cfg).unwrap();
            let result = mechanism.sample_index(&utilities, &mut seeded_bits(seed));
            prop_assert!(result.is_ok(), "{:?} {:?}: {:?}", req, strategy, result);
        }
    }
}

#[test]
fn worked_examples() {
    let eta1 = Eta::new(1, 1, 1).unwrap();
    let req = |u_max, o_max| PrecisionRequest::new(0, u_max, o_max, eta1).unwrap();
    assert_eq!(theoretical_precision(&req(16, 513)).unwrap(), 547);
    assert_eq!(theoretical_precision(&req(10, 10)).unwrap(), 32);
    assert_eq!(theoretical_precision(&req(0, 1)).unwrap(), 5);
    assert_eq!(empirical_precision(&req(1, 1)).unwrap(), 2);
    assert!(!check_precision(&req(2, 1), 1));

    // the 513-outcome, u_max = 16 weights are exact at the theoretical precision
    let ctx = ArithContext::new(547).unwrap();
    let (_, exact) = ctx.monitored(|c| {
        let base = eta1.base(c).unwrap();
        (0..=16).map(|u| c.pow_int(&base, u)).fold(ExactValue::zero(), |acc, w| c.add(&acc, &w))
    });
    assert!(exact);
}
