//! Property tests for the fusion algebra and augmentation isolation laws.

use proptest::prelude::*;

use pvrbench_core::pretrain::augment::{augment_one, AugmentationPolicy};
use pvrbench_core::pvr::{flare_fuse, goal_concat};
use pvrbench_core::ImageFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_f32(len: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-100.0f32..100.0, len)
}

proptest! {
    #[test]
    fn flare_constant_shift_moves_only_first_block(
        (a, b, c, shift) in (1usize..16).prop_flat_map(|d| {
            (vec_f32(d), vec_f32(d), vec_f32(d), -50.0f32..50.0)
        })
    ) {
        let base = flare_fuse(&a, &b, &c).unwrap();
        let sa: Vec<f32> = a.iter().map(|v| v + shift).collect();
        let sb: Vec<f32> = b.iter().map(|v| v + shift).collect();
        let sc: Vec<f32> = c.iter().map(|v| v + shift).collect();
        let shifted = flare_fuse(&sa, &sb, &sc).unwrap();
        let d = a.len();
        for i in 0..d {
            prop_assert!((shifted[i] - (base[i] + shift)).abs() < 1e-3);
        }
        for i in d..3 * d {
            prop_assert!((shifted[i] - base[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn flare_length_law(d in 1usize..32) {
        let z = vec![0.5f32; d];
        prop_assert_eq!(flare_fuse(&z, &z, &z).unwrap().len(), 3 * d);
        prop_assert_eq!(goal_concat(&z, &z).unwrap().len(), 2 * d);
    }

    #[test]
    fn goal_concat_order_is_normative((a, b) in (1usize..16).prop_flat_map(|d| (vec_f32(d), vec_f32(d)))) {
        let ab = goal_concat(&a, &b).unwrap();
        let ba = goal_concat(&b, &a).unwrap();
        if a != b {
            prop_assert_ne!(ab, ba);
        } else {
            prop_assert_eq!(ab, ba);
        }
    }

    #[test]
    fn crop_preserves_constant_color(seed in 0u64..500, rgb in [0u8..=255, 0u8..=255, 0u8..=255]) {
        let mut f = ImageFrame::new(64, 64);
        f.fill(rgb);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = augment_one(&f, AugmentationPolicy::CropOnly, &mut rng);
        for p in v.data.chunks_exact(3) {
            prop_assert_eq!(p, &rgb);
        }
    }

    #[test]
    fn color_only_keeps_bright_pixel_position(seed in 0u64..200, y in 0usize..64, x in 0usize..64) {
        let mut f = ImageFrame::new(64, 64);
        f.fill([30, 30, 30]);
        f.set(y, x, [255, 255, 255]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = augment_one(&f, AugmentationPolicy::ColorOnly, &mut rng);
        let here: i32 = v.get(y, x).iter().map(|&c| c as i32).sum();
        for yy in 0..64 {
            for xx in 0..64 {
                if (yy, xx) != (y, x) {
                    let s: i32 = v.get(yy, xx).iter().map(|&c| c as i32).sum();
                    prop_assert!(s <= here);
                }
            }
        }
    }
}
