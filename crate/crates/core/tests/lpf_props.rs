use flowguard::freq::{apply_lpf, build_mask, LowPassFilter};
use flowguard::Tensor;
use proptest::collection::vec;
use proptest::prelude::*;

fn image() -> impl Strategy<Value = Tensor> {
    (1usize..4, 2usize..12, 2usize..12).prop_flat_map(|(c, h, w)| {
        vec(-10.0f32..10.0, c * h * w).prop_map(move |d| Tensor::new(vec![c, h, w], d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn idempotent(x in image(), r in 0.05f64..1.0) {
        let once = apply_lpf(&x, r).unwrap();
        prop_assert!(apply_lpf(&once, r).unwrap().max_abs_diff(&once) < 1e-4);
    }

    #[test]
    fn linear(x in image(), a in -3.0f32..3.0, b in -3.0f32..3.0, r in 0.05f64..1.0) {
        let y = x.map(|v| (v * 1.7).sin()).unwrap();
        let lhs = apply_lpf(&x.scale(a).unwrap().add(&y.scale(b).unwrap()).unwrap(), r).unwrap();
        let rhs = apply_lpf(&x, r).unwrap().scale(a).unwrap().add(&apply_lpf(&y, r).unwrap().scale(b).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-3);
    }

    #[test]
    fn energy_monotone_and_bounded(x in image(), r1 in 0.05f64..1.0, r2 in 0.05f64..1.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let e_lo = apply_lpf(&x, lo).unwrap().l2_norm();
        let e_hi = apply_lpf(&x, hi).unwrap().l2_norm();
        prop_assert!(e_lo <= e_hi + 1e-4 * (1.0 + e_hi));
        prop_assert!(e_hi <= x.l2_norm() + 1e-4 * (1.0 + e_hi));
    }

    #[test]
    fn constant_images_pass(h in 2usize..12, w in 2usize..12, v in -5.0f32..5.0, r in 0.05f64..1.0) {
        let x = Tensor::filled(&[1, h, w], v).unwrap();
        prop_assert!(apply_lpf(&x, r).unwrap().max_abs_diff(&x) < 1e-5);
    }
}

#[test]
fn mask_shape_and_extremes() {
    let m = build_mask(9, 7, 0.2).unwrap();
    assert_eq!(m.dims(), &[9, 7]);
    // radius 0.7 keeps only the centre bin
    assert_eq!(m.data().iter().sum::<f32>(), 1.0);
    assert_eq!(m.data()[4 * 7 + 3], 1.0);
    assert!(build_mask(8, 8, 0.0).is_err());
    assert!(build_mask(8, 8, 1.5).is_err());
}

#[test]
fn all_pass_mask_is_identity() {
    let x = Tensor::new(vec![2, 6, 5], (0..60).map(|i| (i as f32 * 0.37).cos()).collect()).unwrap();
    let lpf = LowPassFilter::with_mask(6, 5, &Tensor::filled(&[6, 5], 1.0).unwrap()).unwrap();
    assert!(lpf.apply(&x).unwrap().max_abs_diff(&x) < 1e-6);
}
