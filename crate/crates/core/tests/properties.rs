//! Property-based invariants over randomized inputs.

use ndarray::Array3;
use proptest::prelude::*;

use hsripe_core::cube::{calibrate, HyperCube, RawFrame, WavelengthAxis};
use hsripe_core::dataset::{flip, rotate90};
use hsripe_core::preprocess::resize;

fn sorted_pixels(cube: &HyperCube) -> Vec<u32> {
    let mut v: Vec<u32> = cube.data.iter().map(|f| f.to_bits()).collect();
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// calibrate is the per-element affine map (raw - dark) / (white - dark):
    /// a raw frame mixed as a·white + (1-a)·dark calibrates to a everywhere.
    #[test]
    fn calibration_inverts_affine_mixtures(
        a in 0.0f64..1.0,
        dark_level in 1.0f32..100.0,
        span in 50.0f32..900.0,
        h in 2usize..6,
        w in 2usize..6,
        b in 1usize..5,
    ) {
        let axis = WavelengthAxis::linspace(400.0, 1000.0, b).unwrap();
        let dark = RawFrame::new(Array3::from_elem((h, w, b), dark_level), axis.clone()).unwrap();
        let white =
            RawFrame::new(Array3::from_elem((h, w, b), dark_level + span), axis.clone()).unwrap();
        let mixed = RawFrame::new(
            Array3::from_elem((h, w, b), dark_level + a as f32 * span),
            axis,
        )
        .unwrap();
        let cal = calibrate(&mixed, &white, &dark).unwrap();
        for &v in cal.data.iter() {
            prop_assert!((v as f64 - a).abs() < 1e-5, "calibrated {v} vs mix {a}");
        }
    }

    /// 90-degree rotations and flips permute pixels without changing values.
    #[test]
    fn geometric_transforms_preserve_the_pixel_multiset(
        seed in 0u64..1000,
        k in 0usize..4,
        horizontal in any::<bool>(),
        n in 2usize..8,
        b in 1usize..5,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let axis = WavelengthAxis::linspace(400.0, 1000.0, b).unwrap();
        let data = Array3::from_shape_fn((n, n, b), |_| rng.gen_range(0.0f32..1.0));
        let cube = HyperCube::new(data, axis).unwrap();
        let rotated = rotate90(&cube, k);
        prop_assert_eq!(sorted_pixels(&cube), sorted_pixels(&rotated));
        let flipped = flip(&cube, horizontal);
        prop_assert_eq!(sorted_pixels(&cube), sorted_pixels(&flipped));
    }

    /// Resizing to the source dimensions is the identity.
    #[test]
    fn resize_to_same_shape_is_identity(
        seed in 0u64..1000,
        h in 1usize..8,
        w in 1usize..8,
        b in 1usize..4,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let axis = WavelengthAxis::linspace(400.0, 1000.0, b).unwrap();
        let data = Array3::from_shape_fn((h, w, b), |_| rng.gen_range(0.0f32..1.0));
        let cube = HyperCube::new(data, axis).unwrap();
        let same = resize(&cube, h, w).unwrap();
        prop_assert_eq!(&cube.data, &same.data);
    }
}
