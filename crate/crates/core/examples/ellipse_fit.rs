//! Direct least-squares ellipse fit on noisy samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rim_inspect::ellipsefit::fit_ellipse;
use rim_inspect::Ellipse;

fn main() -> rim_inspect::Result<()> {
    let truth = Ellipse::new(3.0, -2.0, 50.0, 20.0, 30f64.to_radians())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.5).expect("valid sigma");
    let points: Vec<(f64, f64)> = (0..100)
        .map(|k| {
            let (x, y) = truth.point_at(k as f64 * std::f64::consts::TAU / 100.0);
            (x + noise.sample(&mut rng), y + noise.sample(&mut rng))
        })
        .collect();

    let fit = fit_ellipse(&points)?;
    println!("truth: {truth:?}");
    println!("fit:   {fit:?}");
    println!(
        "center error {:.3} px, axis errors {:.3}% / {:.3}%",
        (fit.cx - truth.cx).hypot(fit.cy - truth.cy),
        100.0 * (fit.a - truth.a).abs() / truth.a,
        100.0 * (fit.b - truth.b).abs() / truth.b
    );
    Ok(())
}
