mod common;

use common::invariants::tiny_dataset;
use lungssl::augment::{apply_traced, make_pair, AugmentationPolicy};
use lungssl::data::{
    export_manifest, load_manifest, preprocess, subsample_labels, Image, Task,
};
use lungssl::rng;
use lungssl::FRAME_SIZE;
use proptest::prelude::*;

#[test]
fn transforms_fire_at_their_configured_rates() {
    let policy = AugmentationPolicy::default();
    let image = tiny_dataset(3, 0.0, 0).records()[0].pixels.clone();
    let mut r = rng::stream(7, &[]);
    let trials = 10_000;
    let mut counts = [0usize; 6];
    for _ in 0..trials {
        let (_, t) = apply_traced(&policy, &image, &mut r);
        let fired = [
            t.crop.is_some(),
            t.flip,
            t.noise_sigma.is_some(),
            t.brightness.is_some(),
            t.contrast.is_some(),
            t.contrast_first,
        ];
        for (c, f) in counts.iter_mut().zip(fired) {
            *c += usize::from(f);
        }
    }
    let expected = [
        policy.crop_prob,
        policy.flip_prob,
        policy.noise_prob,
        policy.brightness_prob,
        policy.contrast_prob,
        policy.contrast_first_prob,
    ];
    for (i, (&c, p)) in counts.iter().zip(expected).enumerate() {
        let rate = c as f64 / trials as f64;
        assert!((rate - p).abs() <= 0.03, "transform {i}: rate {rate}, expected {p}");
    }
}

#[test]
fn sampled_parameters_stay_in_range() {
    let policy = AugmentationPolicy::default();
    let image = tiny_dataset(3, 0.0, 1).records()[0].pixels.clone();
    let mut r = rng::stream(8, &[]);
    for _ in 0..500 {
        let (out, t) = apply_traced(&policy, &image, &mut r);
        assert!(out.is_frame() && out.in_unit_range());
        if let Some(c) = t.crop {
            let area = (c.side * c.side) as f64 / (FRAME_SIZE * FRAME_SIZE) as f64;
            assert!(area > 0.49 && area <= 1.0, "crop area {area}");
            assert!(c.x + c.side <= FRAME_SIZE && c.y + c.side <= FRAME_SIZE);
        }
        for (v, (lo, hi)) in [
            (t.noise_sigma, policy.noise_sigma_range),
            (t.brightness, policy.brightness_range),
            (t.contrast, policy.contrast_range),
        ] {
            if let Some(v) = v {
                assert!(v >= lo && v <= hi);
            }
        }
    }
}

#[test]
fn pair_views_differ_but_replay_with_seed() {
    let image = tiny_dataset(3, 0.0, 2).records()[0].pixels.clone();
    let policy = AugmentationPolicy::default();
    let (a, b) = make_pair(&policy, &image, &mut rng::stream(3, &[]));
    let (c, d) = make_pair(&policy, &image, &mut rng::stream(3, &[]));
    assert_eq!(a, c);
    assert_eq!(b, d);
    assert_ne!(a, b);
}

#[test]
fn manifest_export_round_trips_to_8_bit_precision() {
    let data = tiny_dataset(3, 0.3, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = export_manifest(&data, dir.path()).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.records().iter().zip(back.records()) {
        assert_eq!(a.patient_id, b.patient_id);
        assert_eq!(a.video_id, b.video_id);
        assert_eq!(a.frame_index, b.frame_index);
        assert_eq!(a.labels, b.labels);
        let worst = a
            .pixels
            .data
            .iter()
            .zip(&b.pixels.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6, "pixel error {worst}");
    }
}

fn arbitrary_image() -> impl Strategy<Value = Image> {
    (1usize..40, 1usize..40).prop_flat_map(|(w, h)| {
        prop::collection::vec(-0.5f32..1.5, w * h).prop_map(move |d| Image::new(w, h, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocess_is_idempotent(img in arbitrary_image()) {
        let once = preprocess(&img).unwrap();
        prop_assert!(once.is_frame() && once.in_unit_range());
        prop_assert_eq!(preprocess(&once).unwrap(), once);
    }

    #[test]
    fn subsampling_keeps_whole_videos_and_reaches_target(
        fraction in 0.01f64..=1.0,
        seed in any::<u64>(),
        task in prop_oneof![Just(Task::View), Just(Task::Ab), Just(Task::Pe)],
    ) {
        let train = tiny_dataset(12, 0.0, seed);
        let total = train.labelled(task).len();
        prop_assume!(total > 0);
        let sub = subsample_labels(&train, fraction, task, seed).unwrap();
        prop_assert!(sub.records().iter().all(|r| r.label(task).is_some()));
        prop_assert!(sub.len() as f64 >= fraction * total as f64);
        // Whole videos: every labelled frame of a chosen video is kept.
        for r in sub.records() {
            let in_video = train.labelled(task).iter().filter(|x| x.video_id == r.video_id).count();
            let kept = sub.records().iter().filter(|x| x.video_id == r.video_id).count();
            prop_assert_eq!(in_video, kept);
        }
        // Growing the fraction only adds videos.
        let bigger = subsample_labels(&train, (fraction * 2.0).min(1.0), task, seed).unwrap();
        let ids: std::collections::BTreeSet<_> = bigger.records().iter().map(|r| &r.image_id).collect();
        prop_assert!(sub.records().iter().all(|r| ids.contains(&r.image_id)));
        // Same seed, same subset.
        let again = subsample_labels(&train, fraction, task, seed).unwrap();
        prop_assert_eq!(
            again.records().iter().map(|r| &r.image_id).collect::<Vec<_>>(),
            sub.records().iter().map(|r| &r.image_id).collect::<Vec<_>>()
        );
    }
}
