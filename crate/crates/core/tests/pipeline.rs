use std::sync::OnceLock;

use minescan::mlp::{self, Network, TrainParams};
use minescan::pipeline::{annotate, build_training_set, classify_scene, Detection, PipelineParams};
use minescan::raster::RgbImage;
use minescan::roi::Rect;
use minescan::synth::{evaluation_scenes, gen_synthetic_scene, training_scenes, Scene, SUITE_SLOPE};
use proptest::prelude::*;

fn training_images() -> Vec<(RgbImage, usize)> {
    training_scenes()
        .into_iter()
        .map(|(_, spec, seed)| {
            let class = spec.objects[0].archetype.class_index;
            (gen_synthetic_scene(&spec, seed).unwrap().image, class)
        })
        .collect()
}

/// A briefly trained network shared by every test in this file.
fn trained() -> &'static Network {
    static NET: OnceLock<Network> = OnceLock::new();
    NET.get_or_init(|| {
        let params = PipelineParams::default();
        let samples = build_training_set(&training_images(), 2, &params).unwrap();
        let mut net = Network::init(&[4097, 90, 2], SUITE_SLOPE, 1).unwrap();
        let train = TrainParams {
            max_epochs: 800,
            ..TrainParams::default()
        };
        mlp::train(&mut net, &samples, &train).unwrap();
        net
    })
}

fn two_objects() -> Scene {
    let (_, spec, seed) = evaluation_scenes().into_iter().find(|(n, ..)| n == "two_objects").unwrap();
    gen_synthetic_scene(&spec, seed).unwrap()
}

fn by_rect(detections: &[Detection], rect: Rect) -> &Detection {
    detections
        .iter()
        .max_by(|a, b| a.rect.iou(&rect).total_cmp(&b.rect.iou(&rect)))
        .filter(|d| d.rect.iou(&rect) >= 0.5)
        .unwrap_or_else(|| panic!("no detection for {rect:?} in {detections:?}"))
}

#[test]
fn training_images_are_memorized() {
    let params = PipelineParams::default();
    for (i, (image, class)) in training_images().iter().enumerate() {
        let detections = classify_scene(trained(), image, &params).unwrap();
        assert_eq!(detections.len(), 1, "image {i}: {detections:?}");
        assert_eq!(detections[0].class_index, *class, "image {i}");
    }
}

#[test]
fn evaluation_scene_objects_are_recognized() {
    let scene = two_objects();
    let detections = classify_scene(trained(), &scene.image, &PipelineParams::default()).unwrap();
    assert_eq!(detections.len(), scene.objects.len());
    for truth in &scene.objects {
        assert_eq!(by_rect(&detections, truth.rect).class_index, truth.class_index, "{}", truth.name);
    }
}

fn scale_brightness(image: &RgbImage, factor: f64) -> RgbImage {
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        image.get(x, y).map(|v| (v as f64 * factor).round().clamp(0.0, 255.0) as u8)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mild_brightness_changes_keep_classes(factor in 0.9f64..1.1) {
        let scene = two_objects();
        let params = PipelineParams::default();
        let base = classify_scene(trained(), &scene.image, &params).unwrap();
        let shifted = classify_scene(trained(), &scale_brightness(&scene.image, factor), &params).unwrap();
        for truth in &scene.objects {
            let a = by_rect(&base, truth.rect);
            let b = by_rect(&shifted, truth.rect);
            prop_assert_eq!(a.class_index, b.class_index);
            prop_assert!((a.correlation_factor - b.correlation_factor).abs() <= 5.0,
                "{} factor {} -> {}", truth.name, a.correlation_factor, b.correlation_factor);
        }
    }

    #[test]
    fn annotation_only_touches_rectangle_borders(
        rects in prop::collection::vec((0usize..30, 0usize..20, 0usize..30, 0usize..20), 0..4),
        seed in any::<u64>(),
    ) {
        let image = RgbImage::from_fn(30, 20, |x, y| {
            let v = (x as u64 * 31 + y as u64 * 17).wrapping_add(seed) % 251;
            [v as u8, (v / 2) as u8, 7]
        });
        let detections: Vec<Detection> = rects
            .iter()
            .map(|&(a, b, c, d)| Detection::from_output(vec![0.3, 0.7], Rect::new(a.min(c), b.min(d), a.max(c), b.max(d))))
            .collect();
        let out = annotate(&image, &detections);
        for y in 0..20 {
            for x in 0..30 {
                let on_border = detections.iter().any(|d| {
                    let r = d.rect;
                    r.contains(x, y) && (x == r.x1 || x == r.x2 || y == r.y1 || y == r.y2)
                });
                if on_border {
                    prop_assert_eq!(out.get(x, y), [255, 0, 0]);
                } else {
                    prop_assert_eq!(out.get(x, y), image.get(x, y));
                }
            }
        }
    }
}
