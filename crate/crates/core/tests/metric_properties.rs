use fmsr_core::metrics::{
    classification_metrics, kneedle, psnr, ssim, ConfusionMatrix, Curvature, Direction, SsimParams,
};
use fmsr_core::{ImageTensor, Shape};
use proptest::prelude::*;

proptest! {
    #[test]
    fn psnr_decreases_with_error(
        base in prop::collection::vec(-1.0f64..1.0, 16),
        noise in prop::collection::vec(-1.0f64..1.0, 16),
        a in 0.01f64..1.0,
        extra in 0.01f64..1.0,
    ) {
        prop_assume!(noise.iter().any(|v| v.abs() > 1e-3));
        let s = Shape::new(1, 4, 4);
        let y = ImageTensor::new(s, base.clone()).unwrap();
        let n = ImageTensor::new(s, noise).unwrap();
        let near = y.add_scaled(&n, a).unwrap();
        let far = y.add_scaled(&n, a + extra).unwrap();
        prop_assert!(psnr(&y, &near, 2.0).unwrap() > psnr(&y, &far, 2.0).unwrap());
    }

    #[test]
    fn ssim_is_symmetric(
        x in prop::collection::vec(-1.0f64..1.0, 2 * 13 * 12),
        y in prop::collection::vec(-1.0f64..1.0, 2 * 13 * 12),
    ) {
        let s = Shape::new(2, 13, 12);
        let (x, y) = (ImageTensor::new(s, x).unwrap(), ImageTensor::new(s, y).unwrap());
        let p = SsimParams::default();
        let (a, b) = (ssim(&x, &y, &p).unwrap(), ssim(&y, &x, &p).unwrap());
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn macro_f1_invariant_to_relabeling(
        counts in prop::collection::vec(0u64..50, 16),
        perm_seed in 0usize..24,
    ) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let mut perm: Vec<usize> = (0..4).collect();
        // Enumerate the 24 permutations of four labels via the factorial number system.
        let mut k = perm_seed;
        let mut pool: Vec<usize> = (0..4).collect();
        for (i, slot) in perm.iter_mut().enumerate() {
            let f = [6, 2, 1, 1][i];
            *slot = pool.remove(k / f);
            k %= f;
        }
        let rows: Vec<Vec<u64>> = counts.chunks(4).map(<[u64]>::to_vec).collect();
        let permuted: Vec<Vec<u64>> = (0..4).map(|i| (0..4).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
        let a = classification_metrics(&ConfusionMatrix::from_rows(&rows).unwrap()).unwrap();
        let b = classification_metrics(&ConfusionMatrix::from_rows(&permuted).unwrap()).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert_eq!(a.overall_accuracy, b.overall_accuracy);
    }

    #[test]
    fn overall_accuracy_within_class_recall_range(counts in prop::collection::vec(0u64..50, 25)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let rows: Vec<Vec<u64>> = counts.chunks(5).map(<[u64]>::to_vec).collect();
        let r = classification_metrics(&ConfusionMatrix::from_rows(&rows).unwrap()).unwrap();
        let pas: Vec<f64> = r.per_class.iter().filter_map(|m| m.producers_accuracy).collect();
        let lo = pas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.overall_accuracy >= lo - 1e-12 && r.overall_accuracy <= hi + 1e-12);
    }

    #[test]
    fn knee_invariant_to_affine_y(c in -5.0f64..5.0, scale in 0.01f64..100.0, offset in -100.0f64..100.0) {
        let ts: Vec<f64> = (1..=40).map(f64::from).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 1.0 / t + c).collect();
        let scaled: Vec<f64> = ys.iter().map(|y| scale * y + offset).collect();
        let a = kneedle(&ts, &ys, 1.0, Curvature::Convex, Direction::Decreasing).unwrap();
        let b = kneedle(&ts, &scaled, 1.0, Curvature::Convex, Direction::Decreasing).unwrap();
        prop_assert!(a.knee_index.is_some());
        prop_assert_eq!(a.knee_index, b.knee_index);
    }
}
