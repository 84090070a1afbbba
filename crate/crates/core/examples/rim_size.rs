//! Rim diameter from a tilted wheel crop via the 112 mm pitch circle.
//!
//! `cargo run --example rim_size -- [TILT_DEG] [OVERLAY.png]`

use rim_inspect::ellipsefit::{draw_overlay, measure_crop, SizeConfig};
use rim_inspect::imgproc::to_grayscale;
use rim_inspect::synth::{render_wheel, SceneSpec, SpokePattern, WheelSpec};

fn main() -> rim_inspect::Result<()> {
    let mut args = std::env::args().skip(1);
    let tilt: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(25.0);
    let overlay = args.next().unwrap_or_else(|| "rim_size_overlay.png".into());
    let rim_mm = 400.0;
    let spec = SceneSpec {
        width: 256,
        height: 256,
        wheels: vec![WheelSpec {
            center: (127.5, 127.5),
            px_per_mm: 0.4,
            rim_mm,
            tilt_deg: tilt,
            pattern: SpokePattern::Spokes7,
            ..WheelSpec::default()
        }],
        noise_sigma: 4.0,
        ..SceneSpec::default()
    };
    let (img, truth) = render_wheel(&spec)?;
    let gray = to_grayscale(&img);
    let m = measure_crop(&gray, None, &SizeConfig::default())?;
    let e = &m.estimate;
    println!("tilt {tilt} deg, true rim {rim_mm} mm");
    println!("rim ellipse   a {:.2} b {:.2} (truth {:.2} / {:.2})", e.rim.a, e.rim.b, truth.wheels[0].rim.a, truth.wheels[0].rim.b);
    println!("pitch ellipse a {:.2} b {:.2} (truth {:.2} / {:.2})", e.pitch.a, e.pitch.b, truth.wheels[0].pitch.a, truth.wheels[0].pitch.b);
    println!("diameter {:.1} mm, confidence {:.3}", e.diameter_mm, e.confidence);
    draw_overlay(&gray, &m).save(&overlay)?;
    println!("overlay written to {overlay}");
    Ok(())
}
