//! Wheel detection with the gradient Hough transform on synthetic scenes.

use rim_inspect::geom::iou;
use rim_inspect::providers::HoughWheelDetector;
use rim_inspect::synth::{render_scene_set, SceneSetSpec};

fn main() -> rim_inspect::Result<()> {
    let scenes = render_scene_set(&SceneSetSpec {
        count: 5,
        seed: 3,
        ..SceneSetSpec::default()
    })?;
    let detector = HoughWheelDetector::default();
    for (i, (img, truth)) in scenes.iter().enumerate() {
        let t = std::time::Instant::now();
        let dets = detector.detect_wheels(i, img)?;
        println!("scene {i}: {} wheels, {} detections in {:.1} ms", truth.wheels.len(), dets.len(), t.elapsed().as_secs_f64() * 1e3);
        for w in &truth.wheels {
            let best = dets.iter().map(|d| iou(&d.bbox, &w.bbox)).fold(0.0, f64::max);
            println!("  wheel at ({:.0}, {:.0}) r {:.0}: best IoU {best:.3}", w.tire.cx, w.tire.cy, w.tire.a);
        }
    }
    Ok(())
}
