use super::{MachClass, Profile, ReynoldsLevel, RunSpec};
use crate::io_util::mix_seed;

/// Dwell angles visited, in order, by the angle-of-attack sweep runs.
pub const AOA_SWEEP_PLATEAUS: [f64; 7] = [0.0, 8.5, -8.5, 6.0, -6.0, 3.0, -3.0];
/// Duration of each linear transition between sweep plateaus.
pub const AOA_SWEEP_RAMP_S: f64 = 0.25;

const HOLD_AOA: f64 = 9.0;
const DEFAULT_DURATION_S: f64 = 16.0;
const DEFAULT_CAMPAIGN_SEED: u64 = 20_260_101;

#[derive(Clone, Copy)]
enum Attitude {
    Zero,
    Sweep,
    Hold,
}

const TABLE: [(&str, MachClass, ReynoldsLevel, Attitude); 16] = [
    ("Z-1", MachClass::M8, ReynoldsLevel::Low, Attitude::Zero),
    ("Z-2", MachClass::M8, ReynoldsLevel::High, Attitude::Zero),
    ("Z-3", MachClass::M8, ReynoldsLevel::Low, Attitude::Zero),
    ("Z-4", MachClass::M8, ReynoldsLevel::HighToMid, Attitude::Zero),
    ("Z-5", MachClass::M8, ReynoldsLevel::MidToLow, Attitude::Zero),
    ("Z-6", MachClass::M5, ReynoldsLevel::Low, Attitude::Zero),
    ("Z-7", MachClass::M5, ReynoldsLevel::MidToLow, Attitude::Zero),
    ("NZ-1", MachClass::M8, ReynoldsLevel::Mid, Attitude::Sweep),
    ("NZ-2", MachClass::M8, ReynoldsLevel::Mid, Attitude::Sweep),
    ("NZ-3", MachClass::M8, ReynoldsLevel::High, Attitude::Sweep),
    ("NZ-4", MachClass::M8, ReynoldsLevel::Low, Attitude::Hold),
    ("NZ-5", MachClass::M8, ReynoldsLevel::High, Attitude::Hold),
    ("NZ-6", MachClass::M5, ReynoldsLevel::Low, Attitude::Sweep),
    ("NZ-7", MachClass::M5, ReynoldsLevel::Mid, Attitude::Sweep),
    ("NZ-8", MachClass::M5, ReynoldsLevel::High, Attitude::Sweep),
    ("NZ-9", MachClass::M5, ReynoldsLevel::High, Attitude::Hold),
];

/// The sixteen-run campaign at full duration with the default seed.
pub fn default_campaign() -> Vec<RunSpec> {
    campaign(DEFAULT_DURATION_S, DEFAULT_CAMPAIGN_SEED)
}

/// Sixteen runs (seven zero angle-of-attack, nine nonzero) of the given
/// duration. Run seeds are derived from `seed` and the run's table position.
pub fn campaign(duration: f64, seed: u64) -> Vec<RunSpec> {
    TABLE
        .iter()
        .enumerate()
        .map(|(i, &(label, mach, level, attitude))| {
            let nominal = mach.nominal_speed();
            let (f0, f1) = level.speed_factors();
            let speed_profile = if f0 == f1 {
                Profile::constant(nominal * f0)
            } else {
                Profile::linear(0.0, nominal * f0, duration, nominal * f1)
            };
            let aoa_profile = match attitude {
                Attitude::Zero => Profile::constant(0.0),
                Attitude::Hold => Profile::constant(HOLD_AOA),
                Attitude::Sweep => sweep_profile(duration),
            };
            RunSpec {
                label: label.to_string(),
                mach_class: mach,
                duration,
                speed_profile,
                aoa_profile,
                reynolds_level: level,
                seed: mix_seed(seed, i as u64),
            }
        })
        .collect()
}

/// Equal dwells at each plateau joined by fixed-duration linear ramps.
fn sweep_profile(duration: f64) -> Profile {
    let n = AOA_SWEEP_PLATEAUS.len();
    let ramp = AOA_SWEEP_RAMP_S.min(duration / (2 * n) as f64);
    let dwell = (duration - (n - 1) as f64 * ramp) / n as f64;
    let mut points = Vec::with_capacity(2 * n);
    let mut t = 0.0;
    for (i, &a) in AOA_SWEEP_PLATEAUS.iter().enumerate() {
        if i > 0 {
            t += ramp;
        }
        points.push((t, a));
        t += dwell;
        points.push((t, a));
    }
    // Pin the final breakpoint to the run end against accumulated rounding.
    points.last_mut().unwrap().0 = duration;
    Profile { points }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn find<'a>(c: &'a [RunSpec], label: &str) -> &'a RunSpec {
        c.iter().find(|s| s.label == label).unwrap()
    }

    #[test]
    fn sixteen_valid_runs() {
        let c = default_campaign();
        assert_eq!(c.len(), 16);
        for s in &c {
            s.validate().unwrap();
            assert_eq!(s.duration, 16.0);
        }
        assert_eq!(c.iter().filter(|s| s.is_zero_aoa()).count(), 7);
        let mut seeds: Vec<u64> = c.iter().map(|s| s.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 16);
    }

    #[test]
    fn z4_decreasing_at_mach8() {
        let c = default_campaign();
        let z4 = find(&c, "Z-4");
        assert_eq!(z4.mach_class, MachClass::M8);
        let v: Vec<f64> = (0..=16).map(|t| z4.speed_profile.eval(t as f64)).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
        assert!(((v[0] - v[16]) / 1081.0 - 0.03).abs() < 1e-12);
        assert!(z4.is_time_varying());
    }

    #[test]
    fn nz9_holds_nine_degrees_at_mach5() {
        let c = default_campaign();
        let nz9 = find(&c, "NZ-9");
        assert_eq!(nz9.mach_class, MachClass::M5);
        assert!(nz9.aoa_profile.is_constant_over(16.0));
        assert_eq!(nz9.aoa_profile.eval(7.3), 9.0);
        assert!(!nz9.is_time_varying());
    }

    #[test]
    fn mach8_nominal_matches_error_ratio() {
        // 2.27 m/s mean error reported as 0.21% relative error.
        let implied = 2.27 / 0.0021;
        assert!((implied - MachClass::M8.nominal_speed()).abs() / implied < 0.005);
        let mid = find(&default_campaign(), "NZ-1").speed_profile.eval(3.0);
        assert_eq!(mid, 1081.0);
    }

    #[test]
    fn sweep_visits_plateaus_in_order() {
        for duration in [16.0, 4.0] {
            let p = sweep_profile(duration);
            assert_eq!(p.points.len(), 14);
            let dwell = (duration - 6.0 * AOA_SWEEP_RAMP_S) / 7.0;
            for (i, &a) in AOA_SWEEP_PLATEAUS.iter().enumerate() {
                let mid = i as f64 * (dwell + AOA_SWEEP_RAMP_S) + dwell / 2.0;
                assert!((p.eval(mid) - a).abs() < 1e-12);
            }
            assert_eq!(p.points.last().unwrap().0, duration);
            assert!(p.validate().is_ok());
        }
    }
}
