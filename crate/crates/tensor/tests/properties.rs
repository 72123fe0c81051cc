use hopa_tensor::serialize::{encode, read_tensor};
use hopa_tensor::{ops, Array4, BatchNormParams, ConvGeometry, Shape4, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], seed: u64) -> Array4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_fn(shape, |_, _, _, _| rng.gen_range(-2.0..2.0))
}

proptest! {
    #[test]
    fn concat_then_slice_recovers_inputs(
        n in 1usize..3, h in 1usize..5, w in 1usize..5,
        widths in prop::collection::vec(1usize..4, 1..4),
        seed in any::<u64>(),
    ) {
        let parts: Vec<Tensor4> = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| Tensor4::constant(random([n, c, h, w], seed ^ i as u64)))
            .collect();
        let cat = ops::concat_channels(&parts).unwrap();
        let mut start = 0;
        for p in &parts {
            let c = p.shape().c;
            let back = ops::slice_channels(&cat, start, c).unwrap();
            prop_assert_eq!(&*back.value(), &*p.value());
            start += c;
        }
        prop_assert_eq!(start, cat.shape().c);
    }

    /// Eval-mode batch norm is y = a·x + b per channel, so it commutes with
    /// affine maps of its input in the obvious way.
    #[test]
    fn eval_batch_norm_is_affine(seed in any::<u64>(), s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let bn = BatchNormParams::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in bn.gamma.value_mut().data_mut() { *v = rng.gen_range(-2.0..2.0); }
        for v in bn.beta.value_mut().data_mut() { *v = rng.gen_range(-2.0..2.0); }
        for v in bn.running_mean.value_mut().data_mut() { *v = rng.gen_range(-1.0..1.0); }
        for v in bn.running_var.value_mut().data_mut() { *v = rng.gen_range(0.1..3.0); }
        let x = random([2, 3, 2, 3], seed.wrapping_add(1));
        let f = |a: &Array4| bn.forward(&Tensor4::constant(a.clone()), false).unwrap().to_array();
        let fx = f(&x);
        let f0 = f(&Array4::zeros(x.shape()));
        let fsx = f(&x.map(|v| s * v + t));
        let ft = f(&Array4::full(x.shape(), t));
        // f(s·x + t) − f(t) == s·(f(x) − f(0))
        let lhs = fsx.zip_map(&ft, |a, b| a - b).unwrap();
        let rhs = fx.zip_map(&f0, |a, b| s * (a - b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn hot4_round_trip(n in 1usize..3, c in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        let a = random([n, c, h, w], seed);
        let back = read_tensor(&encode(&a)[..]).unwrap();
        prop_assert_eq!(back, a);
    }

    /// Output shapes depend only on input shapes and parameters.
    #[test]
    fn shapes_are_data_independent(
        h in 3usize..9, w in 3usize..9, dil in 1usize..3, stride in 1usize..3,
        seed_a in any::<u64>(), seed_b in any::<u64>(),
    ) {
        let geom = ConvGeometry::new(stride, dil, dil);
        let wt = Tensor4::constant(random([2, 2, 3, 3], 0));
        let run = |seed| {
            let x = Tensor4::constant(random([1, 2, h, w], seed));
            let y = ops::conv2d(&x, &wt, None, geom).unwrap();
            let p = ops::max_pool(&y, 2, 1, 0).ok().map(|p| p.shape());
            let r = ops::bilinear_resize(&y, h + 1, w + 2).unwrap().shape();
            (y.shape(), p, r, ops::global_avg_pool(&y).shape())
        };
        let (a, b) = (run(seed_a), run(seed_b));
        prop_assert_eq!(a, b);
        let expected = ops::conv2d_output_shape(Shape4::new(1, 2, h, w), wt.shape(), geom).unwrap();
        prop_assert_eq!(a.0, expected);
    }
}

#[test]
fn ops_keep_finite_values_finite() {
    let x = Tensor4::constant(random([2, 3, 6, 6], 4));
    let w = Tensor4::constant(random([3, 3, 3, 3], 5));
    let bn = BatchNormParams::new(3);
    let y = ops::conv2d(&x, &w, None, ConvGeometry::same(3, 2)).unwrap();
    let y = ops::relu(&bn.forward(&y, true).unwrap());
    let y = ops::bilinear_resize(&ops::max_pool(&y, 3, 2, 1).unwrap(), 6, 6).unwrap();
    assert!(y.value().is_finite());
    // constant input: zero batch variance must not divide by zero
    let flat = Tensor4::constant(Array4::full([1, 3, 2, 2], 7.0));
    assert!(bn.forward(&flat, true).unwrap().value().is_finite());
}
