mod common;

use cnnrec::complexity::complexity_from_features;
use cnnrec::descriptor::{extract_global_descriptor, IntegralImage};
use cnnrec::GrayImage;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn descriptor_matches_direct_oracle(w in 8usize..48, h in 8usize..48, seed in any::<u64>()) {
        let img = common::random_image(w, h, 1.0, seed);
        let fast = extract_global_descriptor(&img).unwrap();
        let slow = common::direct_descriptor(&img);
        for (a, b) in fast.values().iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn area_sum_matches_pixel_overlap(seed in any::<u64>(), x0 in 0.0f64..10.0, y0 in 0.0f64..10.0,
                                      dw in 0.0f64..6.0, dh in 0.0f64..6.0) {
        let img = common::random_image(17, 17, 1.0, seed);
        let ii = IntegralImage::new(&img);
        let (x1, y1) = (x0 + dw, y0 + dh);
        let mut want = 0.0;
        for py in 0..17 {
            for px in 0..17 {
                let ox = (x1.min(px as f64 + 1.0) - x0.max(px as f64)).max(0.0);
                let oy = (y1.min(py as f64 + 1.0) - y0.max(py as f64)).max(0.0);
                want += ox * oy * img.get(px, py);
            }
        }
        prop_assert!((ii.area_sum(x0, y0, x1, y1) - want).abs() < 1e-9);
    }

    #[test]
    fn complexity_is_invariant_to_sample_order(classes in 2usize..6, l in 20usize..80, seed in any::<u64>()) {
        let (vectors, labels) = common::random_feature_task(classes, l, seed);
        let a = complexity_from_features("a", &vectors, &labels, classes).unwrap();
        let (rv, rl): (Vec<_>, Vec<_>) = vectors.iter().cloned().zip(labels.iter().copied()).rev().unzip();
        let b = complexity_from_features("b", &rv, &rl, classes).unwrap();
        prop_assert!((a.c_all - b.c_all).abs() < 1e-12);
        prop_assert!(a.c_all > 0.0 && a.c_all < 1.0);
    }
}

#[test]
fn flat_image_gives_zero_descriptor() {
    let img = GrayImage::new(20, 20, vec![0.3; 400]).unwrap();
    assert!(extract_global_descriptor(&img).unwrap().is_zero());
}

#[test]
fn horizontal_ramp_has_positive_dx_only() {
    let px = (0..32 * 32).map(|i| (i % 32) as f64 / 31.0).collect();
    let d = extract_global_descriptor(&GrayImage::new(32, 32, px).unwrap()).unwrap();
    for cell in d.values().chunks(4) {
        assert!(cell[0] > 0.0);
        assert!(cell[1].abs() < 1e-12);
        assert!((cell[0] - cell[2]).abs() < 1e-12);
    }
}
