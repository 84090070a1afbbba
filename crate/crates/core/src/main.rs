use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rim_inspect::commands::{
    eval_detections, format_report_row, train_svm_dir, write_car_pass, write_crop_set, write_scene_set,
    EvalOptions,
};
use rim_inspect::ellipsefit::{draw_overlay, measure_crop};
use rim_inspect::eval::Interpolation;
use rim_inspect::geom::Label;
use rim_inspect::image::Image;
use rim_inspect::pipeline::{
    cmd_classify, cmd_detect, cmd_fit, cmd_track, cmd_verdicts, run_pipeline, write_outputs, ClassProvider,
    PipelineConfig,
};
use rim_inspect::synth::{CarPass, CropSetSpec, SceneSetSpec, SpokePattern};
use rim_inspect::{Error, Result};

#[derive(Parser)]
#[command(name = "rim-inspect", version, about = "Car-wheel rim inspection")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write annotated crops (rim and pitch ellipses, rays, bolts).
    #[arg(long, global = true)]
    debug_overlay: bool,
    /// Output directory (or file, for eval and train-svm).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct InputArgs {
    #[arg(long)]
    camera_a: Option<PathBuf>,
    #[arg(long)]
    camera_b: Option<PathBuf>,
    /// Car (and optionally wheel) detections, JSON lines.
    #[arg(long)]
    detections: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full pipeline, or only the verdict step with --from.
    Inspect {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory holding the step files of detect/track/classify/fit.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Detect cars and wheels in every frame.
    Detect {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Track the detections written by `detect`.
    Track {
        #[arg(long)]
        from: PathBuf,
    },
    /// Classify the tracked car wheels.
    Classify {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// External class-score file instead of the SVM.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Estimate rim diameters of the tracked car wheels, or of one crop.
    Fit {
        #[arg(long, required_unless_present = "crop")]
        from: Option<PathBuf>,
        #[arg(long)]
        crop: Option<PathBuf>,
    },
    /// Score detections against YOLO annotations.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "wheel")]
        label: Label,
        #[arg(long, value_enum, default_value = "all-point")]
        interpolation: InterpArg,
        /// Image size WxH when images are not next to the annotations.
        #[arg(long, value_parser = parse_size)]
        image_size: Option<(usize, usize)>,
    },
    /// Train HOG+SVM on class-named image directories.
    TrainSvm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        orientations: Option<usize>,
        #[arg(long)]
        cell: Option<usize>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate synthetic fixtures.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InterpArg {
    AllPoint,
    ElevenPoint,
}

#[derive(Subcommand)]
enum SynthKind {
    /// Two-camera car pass with car boxes and a pipeline config.
    Pass {
        #[arg(long)]
        frames: Option<usize>,
        /// Patterns for FL,FR,RL,RR (spokes3, spokes5, spokes7, spokes10, solid).
        #[arg(long, value_delimiter = ',')]
        patterns: Option<Vec<String>>,
        /// Rim diameters in mm for FL,FR,RL,RR.
        #[arg(long, value_delimiter = ',')]
        rim_mm: Option<Vec<f64>>,
        #[arg(long)]
        tilt: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Labeled wheel crops in class directories.
    Crops {
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Still multi-wheel scenes with YOLO labels.
    Scenes {
        #[arg(long)]
        count: Option<usize>,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    Ok((
        w.parse().map_err(|_| "bad width")?,
        h.parse().map_err(|_| "bad height")?,
    ))
}

fn parse_pattern(s: &str) -> Result<SpokePattern> {
    let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
    SpokePattern::ALL
        .into_iter()
        .find(|p| format!("{p:?}").to_ascii_lowercase() == norm)
        .ok_or_else(|| Error::Config(format!("unknown pattern '{s}'")))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.debug_overlay {
        cfg.output.debug_overlay = true;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn apply_input(cfg: &mut PipelineConfig, input: &InputArgs) {
    if let Some(p) = &input.camera_a {
        cfg.input.camera_a = Some(p.clone());
    }
    if let Some(p) = &input.camera_b {
        cfg.input.camera_b = Some(p.clone());
    }
    if let Some(p) = &input.detections {
        cfg.providers.detections = Some(p.clone());
    }
}

fn use_model(cfg: &mut PipelineConfig, model: &Option<PathBuf>) {
    if let Some(m) = model {
        cfg.providers.classes = ClassProvider::Svm;
        cfg.providers.svm_model = Some(m.clone());
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| Error::Internal(e.to_string()))?);
    Ok(())
}

fn write_json_file<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Inspect { input, model, from } => {
            apply_input(&mut cfg, input);
            use_model(&mut cfg, model);
            if let Some(from) = from {
                let v = cmd_verdicts(&cfg, from)?;
                eprintln!("{} car(s) judged", v.len());
                return Ok(());
            }
            let out = run_pipeline(&cfg)?;
            write_outputs(&cfg, &out)?;
            let s = &out.summary;
            eprintln!(
                "{} frames, {} car(s): {} pass, {} fail, {} inconclusive -> {}",
                s.frames,
                s.cars,
                s.pass,
                s.fail,
                s.inconclusive,
                cfg.output.dir.display()
            );
        }
        Cmd::Detect { input } => {
            apply_input(&mut cfg, input);
            let d = cmd_detect(&cfg)?;
            eprintln!("{} frames detected", d.len());
        }
        Cmd::Track { from } => {
            let e = cmd_track(&cfg, from)?;
            eprintln!("{} track events", e.len());
        }
        Cmd::Classify { from, model, scores } => {
            use_model(&mut cfg, model);
            if let Some(s) = scores {
                cfg.providers.classes = ClassProvider::External;
                cfg.providers.class_scores = Some(s.clone());
            }
            let c = cmd_classify(&cfg, from)?;
            eprintln!("{} wheel crops classified", c.len());
        }
        Cmd::Fit { from, crop } => match (crop, from) {
            (Some(crop), _) => {
                let img = rim_inspect::imgproc::to_grayscale(&Image::load(crop)?);
                let m = measure_crop(&img, None, &cfg.size)?;
                print_json(&m.estimate)?;
                if cfg.output.debug_overlay {
                    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::Io {
                        path: cfg.output.dir.clone(),
                        source: e,
                    })?;
                    let stem = crop.file_stem().unwrap_or_default().to_string_lossy();
                    draw_overlay(&img, &m).save(cfg.output.dir.join(format!("{stem}_overlay.png")))?;
                }
            }
            (None, Some(from)) => {
                let s = cmd_fit(&cfg, from)?;
                eprintln!("{} wheel crops measured", s.len());
            }
            (None, None) => unreachable!("clap requires --from or --crop"),
        },
        Cmd::Eval {
            dets,
            gt,
            label,
            interpolation,
            image_size,
        } => {
            let opts = EvalOptions {
                interpolation: match interpolation {
                    InterpArg::AllPoint => Interpolation::AllPoint,
                    InterpArg::ElevenPoint => Interpolation::ElevenPoint,
                },
                image_size: *image_size,
            };
            let report = eval_detections(dets, gt, *label, opts)?;
            match &cli.out {
                Some(p) => write_json_file(p, &report)?,
                None => print_json(&report)?,
            }
            eprintln!(
                "P={:.3} R={:.3} mAP@.5={:.3} mAP@.5:.95={:.3}",
                report.precision, report.recall, report.map50, report.map50_95
            );
        }
        Cmd::TrainSvm {
            data,
            orientations,
            cell,
            c,
            epochs,
        } => {
            let mut t = cfg.svm;
            t.orientations = orientations.unwrap_or(t.orientations);
            t.pixels_per_cell = cell.unwrap_or(t.pixels_per_cell);
            t.c = c.unwrap_or(t.c);
            t.epochs = epochs.unwrap_or(t.epochs);
            let (model, report) = train_svm_dir(data, &t, cfg.preprocess.crop_side, cfg.seed)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("svm.model"));
            model.save(&out)?;
            write_json_file(&out.with_extension("report.json"), &report)?;
            println!("{}", format_report_row(&report.row));
        }
        Cmd::Synth { kind } => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
            let seed = cfg.seed;
            match kind {
                SynthKind::Pass {
                    frames,
                    patterns,
                    rim_mm,
                    tilt,
                    noise,
                    model,
                } => {
                    let mut pass = CarPass {
                        seed,
                        ..CarPass::default()
                    };
                    pass.frames = frames.unwrap_or(pass.frames);
                    pass.tilt_deg = tilt.unwrap_or(pass.tilt_deg);
                    pass.noise_sigma = noise.unwrap_or(pass.noise_sigma);
                    let four = |n: usize, what: &str| {
                        if n == 4 {
                            Ok(())
                        } else {
                            Err(Error::Config(format!("--{what} needs 4 values (FL,FR,RL,RR), got {n}")))
                        }
                    };
                    if let Some(p) = patterns {
                        four(p.len(), "patterns")?;
                        for (slot, s) in pass.patterns.iter_mut().zip(p) {
                            *slot = parse_pattern(s)?;
                        }
                    }
                    if let Some(r) = rim_mm {
                        four(r.len(), "rim-mm")?;
                        pass.rim_mm.copy_from_slice(r);
                    }
                    let model = model.as_ref().map(|m| std::path::absolute(m).unwrap_or(m.clone()));
                    write_car_pass(&pass, &dir, model.as_deref())?;
                }
                SynthKind::Crops { per_class } => {
                    let mut spec = CropSetSpec {
                        seed,
                        ..CropSetSpec::default()
                    };
                    spec.per_class = per_class.unwrap_or(spec.per_class);
                    write_crop_set(&spec, &dir)?;
                }
                SynthKind::Scenes { count } => {
                    let mut spec = SceneSetSpec {
                        seed,
                        ..SceneSetSpec::default()
                    };
                    spec.count = count.unwrap_or(spec.count);
                    write_scene_set(&spec, &dir)?;
                }
            }
            eprintln!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
