//! End to end: train a classifier, render a car pass, inspect it.
//!
//! `cargo run --release --example full_pipeline -- [OUT_DIR]`

use rim_inspect::commands::{train_hog_svm, write_car_pass};
use rim_inspect::pipeline::{run_pipeline, verdicts_jsonl, write_outputs, SvmTrainConfig};
use rim_inspect::synth::{render_crop_set, CarPass, CropSetSpec, SpokePattern};

fn main() -> rim_inspect::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "full_pipeline_out".into()));
    std::fs::create_dir_all(&out).map_err(|source| rim_inspect::Error::Io { path: out.clone().into(), source })?;

    let crops = render_crop_set(&CropSetSpec::default())?;
    let (model, report) = train_hog_svm(&crops, &SvmTrainConfig::default(), 256, 0)?;
    println!("classifier held-out accuracy {:.3}", report.row.test_accuracy);
    let model_path = out.join("model.bin");
    model.save(&model_path)?;

    for (name, rr) in [("matching", SpokePattern::Spokes5), ("odd_rr", SpokePattern::Spokes10)] {
        let mut pass = CarPass::default();
        pass.patterns[3] = rr;
        let cfg = write_car_pass(&pass, &out.join(name), Some(&model_path))?;
        let result = run_pipeline(&cfg)?;
        write_outputs(&cfg, &result)?;
        print!("{name}: {}", verdicts_jsonl(&result.verdicts)?);
        let t = &result.summary.totals;
        println!(
            "  detect {:.0} ms, classify {:.0} ms, fit {:.0} ms over {} frames",
            t.detect_ms, t.classify_ms, t.fit_ms, result.summary.frames
        );
    }
    Ok(())
}
