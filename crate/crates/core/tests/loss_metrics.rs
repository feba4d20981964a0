use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vesselseg::loss::{bce_loss, combined_loss, dice_loss, LossWeights};
use vesselseg::mask::{binarize, largest_component, Connectivity};
use vesselseg::metrics::{boundary_band, boundary_iou, dice_score, iou_score};
use vesselseg::nn::gradcheck::finite_diff_check;
use vesselseg::nn::Tensor;
use vesselseg::BinaryMask;

/// Band by direct enumeration: a foreground pixel is on the band if any pixel
/// in its (2d+1)² window is background or lies outside the image.
fn brute_band(m: &BinaryMask, d: usize) -> BinaryMask {
    let (h, w) = m.shape();
    let d = d as isize;
    BinaryMask::from_fn(h, w, |y, x| {
        if !m.get(y, x) {
            return false;
        }
        for dy in -d..=d {
            for dx in -d..=d {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    return true;
                }
                if !m.get(yy as usize, xx as usize) {
                    return true;
                }
            }
        }
        false
    })
}

fn brute_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut i, mut u) = (0, 0);
    for (x, y) in a.data().iter().zip(b.data()) {
        i += (x & y) as usize;
        u += (x | y) as usize;
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

#[test]
fn offset_squares_boundary_iou_matches_enumeration() {
    let a = BinaryMask::from_fn(12, 12, |y, x| (3..8).contains(&y) && (3..8).contains(&x));
    let b = BinaryMask::from_fn(12, 12, |y, x| (3..8).contains(&y) && (4..9).contains(&x));
    let got = boundary_iou(&a, &b, 1).unwrap();
    let want = brute_iou(&brute_band(&a, 1), &brute_band(&b, 1));
    // each band is the 16-pixel ring of a 5×5 square; the rings share the
    // 4 overlapping pixels of the top row and of the bottom row
    assert_eq!(want, 8.0 / 24.0);
    assert_eq!(got, want);
}

#[test]
fn largest_component_matches_flood_fill_sizes() {
    // 5-pixel plus, 3-pixel bar, isolated pixel
    let m = BinaryMask::from_fn(7, 7, |y, x| {
        matches!(
            (y, x),
            (1, 2) | (2, 1) | (2, 2) | (2, 3) | (3, 2) | (5, 4) | (5, 5) | (5, 6) | (0, 6)
        )
    });
    let out = largest_component(&m, Connectivity::Four);
    assert_eq!(out.count(), 5);
    assert!(out.get(2, 2) && !out.get(5, 5) && !out.get(0, 6));
}

#[test]
fn combined_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let target: Vec<BinaryMask> = (0..2)
            .map(|_| BinaryMask::from_fn(4, 5, |_, _| rng.random_bool(0.4)))
            .collect();
        let pred = Tensor::from_fn(&[2, 1, 4, 5], |_| rng.random_range(0.05..0.95));
        let weights = LossWeights::default();
        let err = finite_diff_check(&[pred], 1e-4, &|x: &[Tensor<f64>]| {
            let l = combined_loss(&x[0], &target, &weights)?;
            Ok((l.total, vec![l.grad]))
        })
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }
}

#[test]
fn combined_equals_hand_composed_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target: Vec<BinaryMask> = (0..3)
        .map(|_| BinaryMask::from_fn(6, 6, |_, _| rng.random_bool(0.3)))
        .collect();
    let pred = Tensor::from_fn(&[3, 1, 6, 6], |_| rng.random::<f64>());
    let w = LossWeights::default();
    let c = combined_loss(&pred, &target, &w).unwrap();
    let d = dice_loss(&pred, &target, w.dice_smooth).unwrap();
    let b = bce_loss(&pred, &target).unwrap();
    assert!((c.total - (1.0 * d.value + 0.1 * b.value)).abs() < 1e-12);
    assert_eq!((c.dice, c.bce), (d.value, b.value));
    assert_eq!((w.lambda1, w.lambda2), (1.0, 0.1));
}

fn mask_pair(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0u8..=1, h * w),
            proptest::collection::vec(0u8..=1, h * w),
        )
            .prop_map(move |(a, b)| {
                (
                    BinaryMask::from_vec(h, w, a).unwrap(),
                    BinaryMask::from_vec(h, w, b).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn scores_symmetric_bounded_and_related((a, b) in mask_pair(9), d in 1usize..4) {
        let dice = dice_score(&a, &b).unwrap();
        let iou = iou_score(&a, &b).unwrap();
        let biou = boundary_iou(&a, &b, d).unwrap();
        prop_assert_eq!(dice, dice_score(&b, &a).unwrap());
        prop_assert_eq!(iou, iou_score(&b, &a).unwrap());
        prop_assert_eq!(biou, boundary_iou(&b, &a, d).unwrap());
        for v in [dice, iou, biou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-12);
    }

    #[test]
    fn band_matches_brute_force((a, _) in mask_pair(10), d in 1usize..5) {
        prop_assert_eq!(boundary_band(&a, d), brute_band(&a, d));
    }

    #[test]
    fn wide_band_reduces_to_iou((a, b) in mask_pair(6)) {
        let diag = 9;
        prop_assert_eq!(boundary_iou(&a, &b, diag).unwrap(), iou_score(&a, &b).unwrap());
    }

    #[test]
    fn binarize_complement_is_mirrored_threshold(
        v in proptest::collection::vec(0.0f64..1.0, 1..40), theta in 0.05f64..0.95,
    ) {
        prop_assume!(v.iter().all(|&p| p != theta && (1.0 - p) != 1.0 - theta));
        let p = Tensor::from_vec(&[1, v.len()], v.clone()).unwrap();
        let q = Tensor::from_vec(&[1, v.len()], v.iter().map(|x| 1.0 - x).collect()).unwrap();
        let flipped_theta = f64::from_bits((1.0 - theta).to_bits() + 1);
        prop_assert_eq!(binarize(&p, theta).unwrap().complement(), binarize(&q, flipped_theta).unwrap());
    }
}
