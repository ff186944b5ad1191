mod common;

use common::{apply_filter, filter_instance, hull_violations, one_hot_center, rng};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn outputs_stay_in_the_neighbourhood_hull(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5]), c in 1usize..=3) {
        let (frame, filters) = filter_instance(&mut rng(seed), 2, c, 7, 9, k);
        let out = apply_filter(&frame, &filters);
        prop_assert_eq!(hull_violations(&frame, &out, k), 0);
    }

    #[test]
    fn centre_tap_filters_copy_the_frame(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let (frame, _) = filter_instance(&mut rng(seed), 2, 3, 6, 5, 1);
        let out = apply_filter(&frame, &one_hot_center(2, 6, 5, k));
        prop_assert_eq!(out.data(), frame.data());
    }
}

#[test]
fn uniform_filters_average_the_neighbourhood() {
    let (frame, _) = filter_instance(&mut rng(3), 1, 1, 5, 5, 1);
    let out = apply_filter(&frame, &lmvp::numerics::Tensor::full(vec![1, 9, 5, 5], 1.0 / 9.0));
    let at = |i: usize, j: usize| frame.data()[i * 5 + j] as f64;
    let expect: f64 = (1..4).flat_map(|i| (1..4).map(move |j| (i, j))).map(|(i, j)| at(i, j)).sum::<f64>() / 9.0;
    assert!((out.data()[2 * 5 + 2] as f64 - expect).abs() < 1e-6);
}
