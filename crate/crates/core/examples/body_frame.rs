//! Body-frame velocity components for a few flow states, and back.

use vibroflow::domain::{aoa_from_components, body_components, speed_from_components, FlowState};

fn main() -> vibroflow::Result<()> {
    println!("{:>8} {:>7} {:>10} {:>9} {:>8} {:>9}", "speed", "aoa", "vx", "vy", "aoa'", "speed'");
    for (speed, aoa) in [(1081.0, 0.0), (1081.0, 8.5), (1081.0, -8.5), (800.0, 6.0), (800.0, -3.0)] {
        let v = body_components(FlowState::new(speed, aoa)?)?;
        println!(
            "{speed:>8.1} {aoa:>7.2} {:>10.3} {:>9.3} {:>8.4} {:>9.3}",
            v.vx,
            v.vy,
            aoa_from_components(v)?,
            speed_from_components(v)
        );
    }
    Ok(())
}
