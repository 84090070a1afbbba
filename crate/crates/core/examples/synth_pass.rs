//! Writes a two-camera synthetic car pass with a ready-to-run config.
//!
//! `cargo run --example synth_pass -- [OUT_DIR]`

use rim_inspect::commands::write_car_pass;
use rim_inspect::synth::CarPass;

fn main() -> rim_inspect::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_pass_out".into()));
    let pass = CarPass {
        frames: 20,
        tilt_deg: 10.0,
        ..CarPass::default()
    };
    let cfg = write_car_pass(&pass, &out, None)?;
    println!("wrote {} frames per camera to {}", pass.frames, out.display());
    println!("run: rim-inspect --config {} inspect", out.join("pipeline.toml").display());
    println!("output would go to {}", cfg.output.dir.display());
    Ok(())
}
