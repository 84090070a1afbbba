//! Precision, recall and mAP of a detection set against ground truth.

use rim_inspect::eval::{average_precision, confusion_matrix, evaluate_label, GroundTruth, Interpolation};
use rim_inspect::{BBox, Detection, Label, RimClass};

fn main() -> rim_inspect::Result<()> {
    println!("AP [TP, FP] = {}", average_precision(&[true, false], 1)?.ap);
    println!("AP [FP, TP] = {}", average_precision(&[false, true], 1)?.ap);

    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for f in 0..5 {
        let g = BBox::new(100.0, 100.0, 50.0, 50.0)?;
        gts.push(GroundTruth { frame: f, label: Label::Wheel, bbox: g });
        // shifted by f pixels, so IoU falls frame by frame
        dets.push(Detection::new(f, Label::Wheel, g.translate(3.0 * f as f64, 0.0), 0.9 - 0.1 * f as f64)?);
    }
    dets.push(Detection::new(0, Label::Wheel, BBox::new(400.0, 50.0, 40.0, 40.0)?, 0.95)?);
    for interp in [Interpolation::AllPoint, Interpolation::ElevenPoint] {
        let r = evaluate_label(&dets, &gts, Label::Wheel, interp)?;
        println!(
            "{interp:?}: P {:.3} R {:.3} mAP@.5 {:.3} mAP@.5:.95 {:.3}",
            r.precision, r.recall, r.map50, r.map50_95
        );
    }

    let class = |c| RimClass::new(c).expect("class id");
    let truth: Vec<RimClass> = (0..550).map(|i| class(1 + (i % 22) as u8 % 21)).collect();
    let mut pred = truth.clone();
    for i in [7, 29, 51, 73, 95, 117, 139] {
        pred[i] = class(1);
    }
    println!("accuracy with 7 errors in 550: {:.4}", confusion_matrix(&pred, &truth)?.accuracy);
    Ok(())
}
