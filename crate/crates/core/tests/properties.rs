use proptest::prelude::*;

use rim_inspect::ellipsefit::{fit_ellipse, raycast_contour, raycast_hits, RaycastConfig};
use rim_inspect::eval::{map_range, GroundTruth};
use rim_inspect::features::{hog_features, svm_predict, FeatureSpace, HogConfig, SvmModel};
use rim_inspect::geom::{axis_angle_difference, conic_to_parametric, iou, parametric_to_conic, BBox, Ellipse, Label, RimClass};
use rim_inspect::imgproc::{otsu_from_histogram, CropTransform};
use rim_inspect::providers::{write_detections, ExternalDetections};
use rim_inspect::tracking::{aggregate_class, judge_wheels, ClassVote, Position, WheelEntry, WheelVerdict};
use rim_inspect::{Detection, Image};

fn bbox() -> impl Strategy<Value = BBox> {
    (-500.0..500.0f64, -500.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
}

fn ellipse() -> impl Strategy<Value = Ellipse> {
    (-300.0..300.0f64, -300.0..300.0f64, 5.0..300.0f64, 1.0..20.0f64, 0.0..std::f64::consts::PI)
        .prop_map(|(cx, cy, a, ratio, t)| Ellipse::new(cx, cy, a, a / ratio, t).unwrap())
}

fn close(a: &Ellipse, b: &Ellipse, tol: f64) -> bool {
    let s = a.a;
    (a.cx - b.cx).hypot(a.cy - b.cy) <= tol * s
        && (a.a - b.a).abs() <= tol * s
        && (a.b - b.b).abs() <= tol * s
        && axis_angle_difference(a.theta, b.theta) * (a.a - a.b) <= tol * s
}

fn samples(e: &Ellipse, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|k| e.point_at(k as f64 * std::f64::consts::TAU / n as f64 + 0.1)).collect()
}

fn entry(class: u8) -> WheelEntry {
    WheelEntry {
        frame: 0,
        bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        class: Some(RimClass::new(class).unwrap()),
        scores: Vec::new(),
        diameter_mm: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conic_round_trip(e in ellipse()) {
        let back = conic_to_parametric(&parametric_to_conic(&e)).unwrap();
        prop_assert!(close(&back, &e, 1e-9), "{:?} vs {:?}", back, e);
    }

    #[test]
    fn fit_is_equivariant(e in ellipse(), dx in -100.0..100.0f64, dy in -100.0..100.0f64, rot in 0.0..std::f64::consts::TAU) {
        let pts = samples(&e, 12);
        let (s, c) = rot.sin_cos();
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (c * x - s * y + dx, s * x + c * y + dy)).collect();
        let fit = fit_ellipse(&moved).unwrap();
        let (cx, cy) = (c * e.cx - s * e.cy + dx, s * e.cx + c * e.cy + dy);
        let want = Ellipse::new(cx, cy, e.a, e.b, e.theta + rot).unwrap();
        prop_assert!(close(&fit, &want, 1e-6), "{:?} vs {:?}", fit, want);
    }

    #[test]
    fn crop_maps_box_center_to_crop_center(b in bbox(), out in 8usize..512) {
        let t = CropTransform::for_box(&b, out);
        let (cx, cy) = b.center();
        let (u, v) = t.to_crop(cx - 0.5, cy - 0.5);
        let mid = (out as f64 - 1.0) / 2.0;
        prop_assert!((u - mid).abs() < 1e-9 && (v - mid).abs() < 1e-9);
        let (x, y) = t.to_source(u, v);
        prop_assert!((x - (cx - 0.5)).abs() < 1e-9 && (y - (cy - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn hog_ignores_constant_shift(seed in any::<u64>(), shift in 0u8..=55) {
        let img = Image::from_fn(48, 48, |x, y| {
            let h = (x as u64 * 31 + y as u64 * 17 + seed).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            (h >> 56) as u8 % 200
        }).unwrap();
        let shifted = Image::from_fn(48, 48, |x, y| img.get(x, y) + shift).unwrap();
        let cfg = HogConfig::new(9, 8);
        prop_assert_eq!(hog_features(&img, &cfg).unwrap(), hog_features(&shifted, &cfg).unwrap());
    }

    #[test]
    fn svm_decision_ignores_positive_rescaling(
        w in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 3),
        b in prop::collection::vec(-1.0..1.0f64, 3),
        x in prop::collection::vec(-5.0..5.0f64, 6),
        k in 0.01..100.0f64,
    ) {
        let classes: Vec<RimClass> = (1..=3).map(|c| RimClass::new(c).unwrap()).collect();
        let model = SvmModel { classes: classes.clone(), weights: w.clone(), biases: b.clone(), space: FeatureSpace::Raw { dims: 6 } };
        let scaled = SvmModel {
            classes,
            weights: w.iter().map(|r| r.iter().map(|v| v * k).collect()).collect(),
            biases: b.iter().map(|v| v * k).collect(),
            space: FeatureSpace::Raw { dims: 6 },
        };
        let (c1, m1) = svm_predict(&model, &x).unwrap();
        let (c2, _) = svm_predict(&scaled, &x).unwrap();
        let mut sorted = m1.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        // a near-tie can flip under rounding
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(c1, c2);
    }

    #[test]
    fn map_ignores_monotone_score_maps(
        offsets in prop::collection::vec((0usize..3, -12.0..12.0f64, -12.0..12.0f64, 0.0..1.0f64), 1..20),
        gain in 0.1..10.0f64,
    ) {
        let gts: Vec<GroundTruth> = (0..3)
            .map(|f| GroundTruth { frame: f, label: Label::Wheel, bbox: BBox::new(50.0, 50.0, 40.0, 40.0).unwrap() })
            .collect();
        let dets: Vec<Detection> = offsets
            .iter()
            .map(|&(f, dx, dy, s)| Detection::new(f, Label::Wheel, BBox::new(50.0 + dx, 50.0 + dy, 40.0, 40.0).unwrap(), s).unwrap())
            .collect();
        let mapped: Vec<Detection> = dets.iter().map(|d| Detection { score: (gain * d.score).exp(), ..*d }).collect();
        let a = map_range(&dets, &gts, 0.5, 0.95, 0.05).unwrap();
        let b = map_range(&mapped, &gts, 0.5, 0.95, 0.05).unwrap();
        prop_assert_eq!(a.aps, b.aps);
    }

    #[test]
    fn verdict_ignores_uniform_scaling(
        d in prop::collection::vec(300.0..600.0f64, 4),
        classes in prop::collection::vec(1u8..=3, 4),
        k in 0.05..20.0f64,
    ) {
        let wheels = |scale: f64| -> Vec<WheelVerdict> {
            Position::ALL.iter().zip(&d).zip(&classes).map(|((&position, &dm), &c)| WheelVerdict {
                position,
                class: Some(RimClass::new(c).unwrap()),
                diameter_mm: Some(dm * scale),
            }).collect()
        };
        let a = judge_wheels(1, wheels(1.0), 0.05);
        let b = judge_wheels(1, wheels(k), 0.05);
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert_eq!(a.reasons, b.reasons);
    }

    #[test]
    fn median_and_mode_agree_under_majority(
        winner in 1u8..=21,
        others in prop::collection::vec(1u8..=21, 0..8),
        extra in 1usize..4,
    ) {
        let mut entries: Vec<WheelEntry> = others.iter().map(|&c| entry(c)).collect();
        for _ in 0..others.len() + extra {
            entries.push(entry(winner));
        }
        let want = Some(RimClass::new(winner).unwrap());
        prop_assert_eq!(aggregate_class(&entries, ClassVote::Median), want);
        prop_assert_eq!(aggregate_class(&entries, ClassVote::Mode), want);
    }

    #[test]
    fn otsu_splits_two_levels_between_them(lo in 0u8..=254, gap in 1u8..=255, n_lo in 1u64..5000, n_hi in 1u64..5000) {
        let hi = lo.saturating_add(gap);
        prop_assume!(hi > lo);
        let mut h = [0u64; 256];
        h[lo as usize] = n_lo;
        h[hi as usize] = n_hi;
        // every threshold in [lo, hi) separates the two levels equally well;
        // ties go to the smallest
        prop_assert_eq!(otsu_from_histogram(&h), (lo, false));
    }

    #[test]
    fn raycast_points_are_white_with_black_predecessors(e in (60.0..200.0f64, 20.0..120.0f64, 20.0..120.0f64, 0.0..std::f64::consts::PI)) {
        let (cx, cy, r, t) = (e.0, 128.0 + (e.1 - 70.0) / 2.0, e.2, e.3);
        let el = Ellipse::new(cx, cy, r, r * 0.7, t).unwrap();
        let conic = parametric_to_conic(&el);
        let img = Image::from_fn(256, 256, |x, y| if conic.eval(x as f64, y as f64) <= 0.0 { 255 } else { 0 }).unwrap();
        let cfg = RaycastConfig::default();
        let hits = raycast_hits(&img, &cfg).unwrap();
        prop_assert!(hits.len() <= 4 * cfg.rays_per_edge);
        let entries: Vec<(f64, f64)> = hits.iter().map(|h| h.entry()).collect();
        prop_assert_eq!(raycast_contour(&img, &cfg).unwrap(), entries);
        for h in hits {
            prop_assert_eq!(img.get(h.pixel.0, h.pixel.1), 255);
            let bx = h.pixel.0 as isize - h.step.0;
            let by = h.pixel.1 as isize - h.step.1;
            let inside = bx >= 0 && by >= 0 && bx < 256 && by < 256;
            prop_assert!(!inside || img.get(bx as usize, by as usize) == 0);
        }
    }

    #[test]
    fn detections_round_trip_exactly(
        boxes in prop::collection::vec((0usize..50, bbox(), 0.0..1.0f64), 1..30),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let dets: Vec<Detection> = boxes.iter().map(|&(f, b, s)| Detection::new(f, Label::Wheel, b, s).unwrap()).collect();
        write_detections(&path, &dets).unwrap();
        let back = ExternalDetections::load(&path).unwrap().all();
        let mut want = dets.clone();
        want.sort_by_key(|d| d.frame);
        let mut got = back;
        got.sort_by_key(|d| d.frame);
        prop_assert_eq!(got, want);
    }
}
