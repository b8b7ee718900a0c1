mod common;

use common::{max_rule_diff, threshold_contraction_error};
use diffplast_core::plasticity::{trace_update_bcm, trace_update_ndp_bcm, trace_update_ndp_oja, trace_update_oja};
use diffplast_core::rng::SeedTree;
use diffplast_core::{RuleKind, Tape, Tensor};
use rand::Rng;

#[test]
fn rules_match_the_straight_line_oracle() {
    for kind in RuleKind::ALL {
        for seed in 0..3 {
            let d = max_rule_diff(kind, 60, seed);
            assert!(d <= 1e-12, "{kind} seed {seed}: {d:e}");
        }
    }
}

#[test]
fn threshold_contracts_by_one_minus_rate() {
    for eta in [0.05, 0.1, 0.5, 0.9] {
        let err = threshold_contraction_error(eta, 40);
        assert!(err < 1e-6, "eta {eta}: {err:e}");
    }
}

#[test]
fn unit_modulation_is_bitwise_unmodulated_over_many_steps() {
    let mut rng = SeedTree::new(9).stream("ndp", &[]);
    let mut t = Tape::new();
    let zero = || Tensor::zeros(diffplast_core::Shape::matrix(3, 4));
    let (mut a, mut b) = (t.constant(zero()), t.constant(zero()));
    let (mut c, mut d) = (t.constant(zero()), t.constant(zero()));
    let ones = t.constant(Tensor::vector(vec![1.0; 3]));
    let eta = t.scalar(0.23);
    for _ in 0..60 {
        let pre = t.constant(Tensor::from_fn(diffplast_core::Shape::vector(4), |_| rng.random()));
        let post = t.constant(Tensor::from_fn(diffplast_core::Shape::vector(3), |_| rng.random()));
        let drive = t.constant(Tensor::from_fn(diffplast_core::Shape::vector(4), |_| rng.random_range(-0.5..0.5)));
        a = trace_update_oja(&mut t, a, pre, post, eta, 2.0).unwrap();
        b = trace_update_ndp_oja(&mut t, b, pre, post, ones, eta, 2.0).unwrap();
        c = trace_update_bcm(&mut t, c, post, drive, eta, 2.0).unwrap();
        d = trace_update_ndp_bcm(&mut t, d, post, drive, ones, eta, 2.0).unwrap();
        assert_eq!(t.value(a).data(), t.value(b).data());
        assert_eq!(t.value(c).data(), t.value(d).data());
    }
}
