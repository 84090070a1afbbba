//! HOG + linear SVM on the synthetic spoke-pattern classes.

use rim_inspect::commands::{format_report_row, train_hog_svm};
use rim_inspect::pipeline::SvmTrainConfig;
use rim_inspect::synth::{render_crop_set, CropSetSpec};

fn main() -> rim_inspect::Result<()> {
    let crops = render_crop_set(&CropSetSpec {
        per_class: 40,
        ..CropSetSpec::default()
    })?;
    for (orientations, cell) in [(13, 24), (16, 24)] {
        let cfg = SvmTrainConfig {
            orientations,
            pixels_per_cell: cell,
            ..SvmTrainConfig::default()
        };
        let (_, report) = train_hog_svm(&crops, &cfg, 256, 0)?;
        println!("{}", format_report_row(&report.row));
        for (t, row) in report.confusion.counts.iter().enumerate().filter(|(_, r)| r.iter().any(|&n| n > 0)) {
            let cells: Vec<String> = report.classes.iter().map(|c| row[c.id() as usize].to_string()).collect();
            println!("  C{t:02}: {}", cells.join(" "));
        }
    }
    Ok(())
}
