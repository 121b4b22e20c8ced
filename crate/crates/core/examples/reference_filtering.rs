//! Low-pass reference labels, the fluctuation band they leave behind, and
//! the six-sample median applied to a noisy estimate stream.

use vibroflow::signal::{fluctuation_band, lowpass_reference, sliding_median, MedianMode, TimeSeries};
use vibroflow::simgen::{default_campaign, synthesize_run, ArraySpec, ExcitationParams};

fn main() -> vibroflow::Result<()> {
    let specs = default_campaign();
    let array = ArraySpec::desk();
    for label in ["Z-1", "Z-4", "Z-7"] {
        let spec = specs.iter().find(|s| s.label == label).unwrap();
        let rec = synthesize_run(spec, &array, &ExcitationParams::default())?;
        let raw = rec.ref_speed_series();
        for window_s in [0.25, 0.5, 1.0] {
            let f = lowpass_reference(&raw, window_s)?;
            let b = fluctuation_band(&raw, &f)?;
            println!("{label} low-pass {window_s:.2} s: residual mean {:+.4} m/s, 90% band ±{:.3} m/s", b.mean, b.band90);
        }
    }

    // Estimates at 62.5 Hz (16 ms windows) with two gross outliers.
    let mut est: Vec<f64> = (0..36).map(|i| 1081.0 + ((i * 7 % 5) as f64 - 2.0)).collect();
    est[4] += 90.0;
    est[20] -= 60.0;
    let s = TimeSeries::new(0.008, 0.016, est)?;
    let m = sliding_median(&s, 6, MedianMode::NonOverlapping)?;
    println!("median stream: {} values every {:.0} ms ({:.4} Hz)", m.len(), m.dt * 1e3, 1.0 / m.dt);
    for (i, v) in m.values.iter().enumerate() {
        println!("  t = {:.3} s  {:.1}", m.time(i), v);
    }
    Ok(())
}
