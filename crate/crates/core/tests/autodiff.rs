use diffplast_core::gradcheck::{check_fn, op_suite};
use diffplast_core::{AutodiffError, Shape, SpikeMode, SurrogateParams, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn add_example() {
    let mut t = Tape::new();
    let a = t.param(Tensor::vector(vec![1.0, 2.0]));
    let b = t.param(Tensor::vector(vec![3.0, 4.0]));
    let c = t.add(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    let s = t.sum(c).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);
    assert_eq!(g.get(b).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn outer_example() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = t.constant(Tensor::vector(vec![3.0, 4.0, 5.0]));
    let o = t.outer(a, b).unwrap();
    assert_eq!(t.shape(o), Shape::matrix(2, 3));
    assert_eq!(t.value(o).data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    assert!(matches!(t.add(a, b), Err(AutodiffError::Shape { .. })));
    let m = t.constant(Tensor::zeros(Shape::matrix(2, 2)));
    assert!(t.mat_vec(m, b).is_err());
}

#[test]
fn spike_threshold_and_surrogate() {
    let mut t = Tape::new();
    let u = t.param(Tensor::vector(vec![9.99, 10.0, 12.0]));
    let s = t.spike(u, SurrogateParams::default()).unwrap();
    assert_eq!(t.value(s).data(), &[0.0, 1.0, 1.0]);

    let mut t = Tape::new();
    let u = t.param(Tensor::vector(vec![10.0, 8.0]));
    let s = t.spike(u, SurrogateParams::default()).unwrap();
    let l = t.sum(s).unwrap();
    let g = t.backward(l).unwrap();
    let g = g.get(u).unwrap().data();
    assert!((g[0] - 1.0).abs() < 1e-15);
    assert!((g[1] - (-2.0f64).exp()).abs() < 1e-15);
}

#[test]
fn non_finite_values_are_rejected_when_checked() {
    let mut t = Tape::new();
    t.set_check_finite(true);
    let x = t.constant(Tensor::vector(vec![0.0]));
    assert!(matches!(t.log(x), Err(AutodiffError::NonFinite { .. })));
}

#[test]
fn backward_errors() {
    let mut t = Tape::new();
    let a = t.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(t.backward(a), Err(AutodiffError::NonScalarLoss(_))));
    let s = t.sum(a).unwrap();
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(AutodiffError::BackwardTwice)));
    t.zero_grad();
    assert!(t.backward(s).is_ok());
}

#[test]
fn unreached_parameters_get_zero_gradient() {
    let mut t = Tape::new();
    let a = t.param(Tensor::vector(vec![1.0, 2.0]));
    let b = t.param(Tensor::scalar(3.0));
    let s = t.sum(a).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(b).unwrap().data(), &[0.0]);
}

#[test]
fn one_rule_per_differentiable_node() {
    let mut t = Tape::new();
    let a = t.param(Tensor::vector(vec![1.0, 2.0]));
    let c = t.constant(Tensor::vector(vec![5.0, 5.0]));
    let x = t.mul(a, a).unwrap();
    let y = t.add(x, c).unwrap();
    let _unused = t.exp(a).unwrap();
    let l = t.sum(y).unwrap();
    t.backward(l).unwrap();
    // mul, add, sum; the dangling exp is after nothing the loss needs
    assert_eq!(t.rule_invocations(), 3);
}

#[test]
fn soft_mode_matches_sigmoid() {
    let mut t = Tape::with_spike_mode(SpikeMode::Soft);
    let u = t.constant(Tensor::vector(vec![10.0]));
    let s = t.spike(u, SurrogateParams::default()).unwrap();
    assert!((t.value(s).item() - 0.5).abs() < 1e-15);
}

#[test]
fn op_suite_within_tolerance() {
    for seed in 0..4 {
        for r in op_suite(seed).unwrap() {
            assert!(r.passes(1e-6), "{r:?}");
            assert!(r.checked > 0, "{r:?}");
        }
    }
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mat_vec_gradients(m in vec_strategy(9), v in vec_strategy(3), p in vec_strategy(3)) {
        let inputs = [Tensor::matrix(3, 3, m), Tensor::vector(v)];
        let probe = Tensor::vector(p);
        let res = check_fn("mat-vec", &inputs, 1e-5, 1e-8, |t, x| {
            let y = t.mat_vec(x[0], x[1])?;
            let c = t.constant(probe.clone());
            let y = t.mul(y, c)?;
            Ok(t.sum(y)?)
        }).unwrap();
        for r in res {
            prop_assert!(r.passes(1e-6), "{:?}", r);
        }
    }

    #[test]
    fn composite_smooth_gradients(a in vec_strategy(4), b in vec_strategy(4)) {
        let inputs = [Tensor::vector(a), Tensor::vector(b)];
        let res = check_fn("composite", &inputs, 1e-5, 1e-8, |t, x| {
            let s = t.sigmoid(x[0])?;
            let e = t.mul(s, x[1])?;
            let o = t.outer(e, x[0])?;
            let m = t.mean(o)?;
            let w = t.weighted_sum(&[(m, 0.5)])?;
            let ex = t.exp(x[1])?;
            let ex = t.sum(ex)?;
            let lg = t.log(ex)?;
            let out = t.add(w, lg)?;
            Ok(t.sum(out)?)
        }).unwrap();
        for r in res {
            prop_assert!(r.passes(1e-6), "{:?}", r);
        }
    }

    #[test]
    fn soft_spike_gradients(u in prop::collection::vec(6.0f64..14.0, 3)) {
        let res = check_fn("soft-spike", &[Tensor::vector(u)], 1e-5, 1e-8, |t, x| {
            t.set_spike_mode(SpikeMode::Soft);
            let s = t.spike(x[0], SurrogateParams::default())?;
            let s2 = t.mul(s, s)?;
            Ok(t.sum(s2)?)
        }).unwrap();
        for r in res {
            prop_assert!(r.passes(1e-6), "{:?}", r);
        }
    }
}
