use std::cell::Cell;

use vesselseg::data::GrayImage;
use vesselseg::harness::{
    run_consistency, run_robustness, run_subcumulative, RobustnessOptions, Section, Segmenter, Transform, DEFAULT_GATES,
};
use vesselseg::mask::BinaryMask;
use vesselseg::metrics::Summary;
use vesselseg::phantom::{gen_phantom, gen_stream, MotionModel, PhantomParams, StreamParams};
use vesselseg::Result;

/// Pixelwise threshold: commutes with rotation, so it acts as a perfect
/// equivariant model.
struct Threshold(f32);

impl Segmenter for Threshold {
    fn segment(&self, image: &GrayImage) -> Result<BinaryMask> {
        Ok(BinaryMask::from_fn(image.height(), image.width(), |y, x| {
            image.get(y, x) < self.0
        }))
    }
}

fn phantoms(n: u64) -> Vec<GrayImage> {
    (0..n)
        .map(|seed| {
            gen_phantom(&PhantomParams {
                size: 64,
                seed,
                ..PhantomParams::default()
            })
            .unwrap()
            .image
        })
        .collect()
}

#[test]
fn geometric_transforms_are_exact_for_equivariant_model() {
    let imgs = phantoms(4);
    for img in &imgs {
        assert_eq!(&img.rot90(1).rot90(3), img);
    }
    let opts = RobustnessOptions {
        transforms: vec![
            Transform::Identity,
            Transform::Rot90(1),
            Transform::Rot90(2),
            Transform::Rot90(3),
        ],
        ..RobustnessOptions::default()
    };
    let report = run_robustness(&Threshold(0.6), &imgs, &opts).unwrap();
    for t in ["identity", "rot90", "rot180", "rot270"] {
        let v = report.case_values(t, "dice");
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|&d| d == 1.0), "{t}: {v:?}");
    }
}

#[test]
fn robustness_report_is_reproducible_and_recomputable() {
    let imgs = phantoms(5);
    let opts = RobustnessOptions {
        seed: 11,
        ..RobustnessOptions::default()
    };
    let a = run_robustness(&Threshold(0.6), &imgs, &opts).unwrap();
    assert_eq!(
        a.to_csv_string().unwrap(),
        run_robustness(&Threshold(0.6), &imgs, &opts)
            .unwrap()
            .to_csv_string()
            .unwrap()
    );
    let noisy = a.case_values("noise0.1", "dice");
    assert!(noisy.iter().any(|&d| d < 1.0));
    let s = Summary::of(&noisy);
    assert_eq!(a.summary_value("noise0.1", "dice_mean"), Some(s.mean));
    assert_eq!(a.summary_value("noise0.1", "dice_std"), Some(s.std));
    let other = run_robustness(&Threshold(0.6), &imgs, &RobustnessOptions { seed: 12, ..opts }).unwrap();
    assert_ne!(other.case_values("noise0.1", "dice"), noisy);
}

#[test]
fn consistency_of_deterministic_pipeline() {
    let imgs = phantoms(2);
    let r = run_consistency(|| Ok(Threshold(0.6)), &imgs, 3, 0).unwrap();
    let dice = r.case_values("pairwise", "dice");
    assert_eq!(dice.len(), 2 * 3);
    assert!(dice
        .iter()
        .chain(&r.case_values("pairwise", "boundary_iou"))
        .all(|&v| v == 1.0));
    assert_eq!(r.rows.iter().filter(|row| row.section == Section::Timing).count(), 6);

    let single = run_consistency(|| Ok(Threshold(0.6)), &imgs, 1, 0).unwrap();
    assert!(single.case_values("pairwise", "dice").is_empty());
    assert!(run_consistency(|| Ok(Threshold(0.6)), &imgs, 0, 0).is_err());
}

#[test]
fn consistency_mean_is_average_of_pairs() {
    let imgs = phantoms(1);
    let loads = Cell::new(0);
    let thresholds = [0.5f32, 0.6, 0.7, 0.8];
    let load = || {
        let t = thresholds[loads.get()];
        loads.set(loads.get() + 1);
        Ok(Threshold(t))
    };
    let r = run_consistency(load, &imgs, 4, 0).unwrap();
    let masks: Vec<BinaryMask> = thresholds
        .iter()
        .map(|&t| Threshold(t).segment(&imgs[0]).unwrap())
        .collect();
    let mut pairs = Vec::new();
    for a in 0..4 {
        for b in a + 1..4 {
            let inter = masks[a]
                .data()
                .iter()
                .zip(masks[b].data())
                .filter(|(x, y)| **x & **y == 1)
                .count();
            pairs.push(2.0 * inter as f64 / (masks[a].count() + masks[b].count()) as f64);
        }
    }
    assert_eq!(pairs.len(), 6);
    let mean = pairs.iter().sum::<f64>() / 6.0;
    assert!((r.summary_value("pairwise", "dice_mean").unwrap() - mean).abs() < 1e-12);
}

fn phantom_stream(noise: f64, motion: MotionModel, n_frames: usize, seed: u64) -> vesselseg::stream::FrameStream {
    let img = gen_phantom(&PhantomParams {
        size: 64,
        seed,
        ..PhantomParams::default()
    })
    .unwrap()
    .image;
    gen_stream(
        &img,
        &StreamParams {
            n_frames,
            noise_scale: noise,
            motion,
            seed,
            ..StreamParams::default()
        },
    )
    .unwrap()
}

#[test]
fn noiseless_static_stream_is_exact_at_every_gate() {
    let s = phantom_stream(0.0, MotionModel::still(), 120, 1);
    let r = run_subcumulative(&Threshold(0.5), &[("static", &s)], &DEFAULT_GATES, 0).unwrap();
    for g in DEFAULT_GATES {
        let v = r.case_values(&format!("static/g{g}"), "dice");
        assert_eq!(v.len(), 120 / g);
        assert!(v.iter().all(|&d| d == 1.0), "gate {g}: {v:?}");
    }
    let dur = |g: usize| r.summary_value(&format!("static/g{g}"), "duration_s").unwrap();
    assert_eq!(format!("{:.2} {:.2}", dur(10), dur(120)), "0.51 6.12");
}

#[test]
fn noisy_static_dice_rises_with_gate_and_motion_hurts() {
    for seed in 0..3 {
        let fixed = phantom_stream(0.08, MotionModel::still(), 120, seed);
        let moving = phantom_stream(0.08, MotionModel::sinusoidal(3.0, 4.0), 240, seed);
        let r = run_subcumulative(
            &Threshold(0.5),
            &[("static", &fixed), ("motion", &moving)],
            &DEFAULT_GATES,
            seed,
        )
        .unwrap();
        assert_eq!(r.case_values("static/g120", "dice"), vec![1.0]);
        let rho = r.summary_value("static", "spearman_gate_dice").unwrap();
        assert!(rho >= 0.8, "seed {seed}: rho {rho}");
        let m = r.summary_value("motion/g120", "dice_mean").unwrap();
        assert!(m < 1.0, "seed {seed}: motion {m}");
    }
}
