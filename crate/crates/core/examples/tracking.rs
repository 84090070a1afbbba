//! IoU tracking of two cars and their wheels, then the four-wheel verdict.

use rim_inspect::tracking::{inspect_car, CarRecord, CarWheel, Camera, Position, TrackEvent, Tracker, TrackerConfig, WheelEntry};
use rim_inspect::{BBox, Detection, Label, RimClass};

fn det(frame: usize, label: Label, x: f64, y: f64, w: f64, h: f64) -> Detection {
    Detection::new(frame, label, BBox::new(x, y, w, h).expect("positive size"), 0.9).expect("valid")
}

fn main() -> rim_inspect::Result<()> {
    let mut tracker = Tracker::new(TrackerConfig::default())?;
    let mut events = Vec::new();
    for f in 0..12 {
        let dx = 10.0 * f as f64;
        let cars = [det(f, Label::Car, 40.0 + dx, 100.0, 300.0, 120.0), det(f, Label::Car, 500.0 + dx, 100.0, 300.0, 120.0)];
        let wheels = [
            det(f, Label::Wheel, 70.0 + dx, 160.0, 60.0, 60.0),
            det(f, Label::Wheel, 250.0 + dx, 160.0, 60.0, 60.0),
            det(f, Label::Wheel, 530.0 + dx, 160.0, 60.0, 60.0),
        ];
        events.extend(tracker.update(f, &cars, &wheels, None)?);
    }
    events.extend(tracker.finish());
    for e in &events {
        if let TrackEvent::Assign { frame: 0, label, track, car, .. } = e {
            println!("frame 0: {label} track {track}, car {car:?}");
        }
        if let TrackEvent::CarComplete { frame, car } = e {
            println!("car {car} complete at frame {frame}");
        }
    }

    // a finished car whose rear-right rim differs
    let class = |c| Some(RimClass::new(c).expect("class id"));
    let wheel = |position, c, d| CarWheel {
        position,
        track_id: 0,
        camera: Camera::A,
        entries: (0..11)
            .map(|frame| WheelEntry {
                frame,
                bbox: BBox::new(0.0, 0.0, 60.0, 60.0).expect("positive size"),
                class: class(c),
                scores: Vec::new(),
                diameter_mm: Some(d),
            })
            .collect(),
    };
    let car = CarRecord {
        car_track_id: 1,
        wheels: vec![
            wheel(Position::FL, 5, 447.0),
            wheel(Position::FR, 5, 449.0),
            wheel(Position::RL, 5, 450.0),
            wheel(Position::RR, 9, 452.0),
        ],
        complete: true,
    };
    let v = inspect_car(&car, &TrackerConfig::default());
    println!("{}", serde_json::to_string(&v).expect("serializable"));
    Ok(())
}
