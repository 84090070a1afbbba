//! Otsu binarization of a rendered wheel crop.
//!
//! `cargo run --example otsu -- [OUT_DIR]`

use rim_inspect::imgproc::{gaussian_blur, otsu_threshold, to_grayscale};
use rim_inspect::synth::{render_wheel, SceneSpec, WheelSpec};

fn main() -> rim_inspect::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "otsu_out".into());
    std::fs::create_dir_all(&out).map_err(|source| rim_inspect::Error::Io { path: out.clone().into(), source })?;
    let spec = SceneSpec {
        width: 256,
        height: 256,
        wheels: vec![WheelSpec {
            center: (127.5, 127.5),
            px_per_mm: 0.4,
            tilt_deg: 25.0,
            ..WheelSpec::default()
        }],
        noise_sigma: 6.0,
        ..SceneSpec::default()
    };
    let (img, _) = render_wheel(&spec)?;
    let gray = gaussian_blur(&to_grayscale(&img), 1.0)?;
    let otsu = otsu_threshold(&gray)?;
    let white = otsu.binary.data().iter().filter(|&&v| v > 0).count();
    println!("threshold {} ({white} of {} pixels above it)", otsu.threshold, 256 * 256);
    img.save(format!("{out}/wheel.png"))?;
    otsu.binary.save(format!("{out}/binary.png"))?;
    println!("wrote {out}/wheel.png and {out}/binary.png");
    Ok(())
}
