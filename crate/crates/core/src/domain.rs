//! Flow-state types and the body-frame velocity conventions.
//!
//! The body frame has `x_b` along the cone axis (nose to base) and `y_b`
//! perpendicular to it in the pitch plane. A positive angle of attack tilts the
//! incoming flow toward `+y_b`, so
//!
//! ```text
//! vx = V cos(aoa)      vy = V sin(aoa)      aoa = atan(vy / vx)
//! ```
//!
//! Angles are stored and reported in degrees. The single-argument arctangent
//! cannot tell quadrants apart, so the valid range is `|aoa| < 90°` (`vx > 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Freestream speed (m/s) and angle of attack (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub speed: f64,
    pub aoa: f64,
}

impl FlowState {
    pub fn new(speed: f64, aoa: f64) -> Result<Self> {
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(Error::invalid(format!("speed must be finite and >= 0, got {speed}")));
        }
        if !(aoa.is_finite() && aoa.abs() < 90.0) {
            return Err(Error::invalid(format!("aoa must lie in (-90, 90) degrees, got {aoa}")));
        }
        Ok(Self { speed, aoa })
    }
}

/// In-plane body-referenced velocity components, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimationTarget {
    /// Freestream speed only (zero angle-of-attack study), one output.
    ScalarSpeed,
    /// Body components `(vx, vy)`, two outputs.
    BodyComponents,
}

impl EstimationTarget {
    pub fn dim(self) -> usize {
        match self {
            EstimationTarget::ScalarSpeed => 1,
            EstimationTarget::BodyComponents => 2,
        }
    }

    pub fn from_dim(k: usize) -> Result<Self> {
        match k {
            1 => Ok(EstimationTarget::ScalarSpeed),
            2 => Ok(EstimationTarget::BodyComponents),
            _ => Err(Error::Shape(format!("estimation target must have 1 or 2 outputs, got {k}"))),
        }
    }
}

pub fn body_components(state: FlowState) -> Result<BodyVelocity> {
    if !(state.aoa.abs() < 90.0) {
        return Err(Error::invalid(format!(
            "aoa {} outside the (-90, 90) degree convention",
            state.aoa
        )));
    }
    let (s, c) = state.aoa.to_radians().sin_cos();
    Ok(BodyVelocity { vx: state.speed * c, vy: state.speed * s })
}

/// Angle of attack in degrees, `atan(vy / vx)`. Requires `vx > 0`.
pub fn aoa_from_components(v: BodyVelocity) -> Result<f64> {
    if !(v.vx > 0.0) {
        return Err(Error::invalid(format!(
            "vx = {} is outside the body-frame convention (vx must be > 0)",
            v.vx
        )));
    }
    Ok((v.vy / v.vx).atan().to_degrees())
}

pub fn speed_from_components(v: BodyVelocity) -> f64 {
    v.vx.hypot(v.vy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_angle_and_zero_speed() {
        let v = body_components(FlowState::new(1000.0, 0.0).unwrap()).unwrap();
        assert_eq!(v, BodyVelocity { vx: 1000.0, vy: 0.0 });
        let v = body_components(FlowState::new(0.0, 30.0).unwrap()).unwrap();
        assert_eq!(v.vx, 0.0);
        assert_eq!(v.vy, 0.0);
    }

    #[test]
    fn mach8_at_8_5_degrees() {
        // Oracle: 1081 cos(8.5 deg), 1081 sin(8.5 deg) evaluated independently.
        let v = body_components(FlowState { speed: 1081.0, aoa: 8.5 }).unwrap();
        assert!((v.vx - 1069.126148294232).abs() < 1e-9, "{}", v.vx);
        assert!((v.vy - 159.7819734311091).abs() < 1e-9, "{}", v.vy);
        assert!((aoa_from_components(v).unwrap() - 8.5).abs() < 1e-9);
    }

    #[test]
    fn aoa_examples() {
        assert_eq!(aoa_from_components(BodyVelocity { vx: 1.0, vy: 0.0 }).unwrap(), 0.0);
        let a = aoa_from_components(BodyVelocity { vx: 1.0, vy: 1.0 }).unwrap();
        assert!((a - 45.0).abs() < 1e-12);
        let a = aoa_from_components(BodyVelocity { vx: 1069.13, vy: 159.79 }).unwrap();
        assert!((a - 8.5).abs() < 1e-3);
    }

    #[test]
    fn speed_examples() {
        assert_eq!(speed_from_components(BodyVelocity { vx: 3.0, vy: 4.0 }), 5.0);
        assert_eq!(speed_from_components(BodyVelocity { vx: 1000.0, vy: 0.0 }), 1000.0);
    }

    #[test]
    fn rejects_out_of_convention() {
        assert!(body_components(FlowState { speed: 1.0, aoa: 90.0 }).is_err());
        assert!(body_components(FlowState { speed: 1.0, aoa: -95.0 }).is_err());
        assert!(aoa_from_components(BodyVelocity { vx: 0.0, vy: 1.0 }).is_err());
        assert!(aoa_from_components(BodyVelocity { vx: -1.0, vy: 1.0 }).is_err());
        assert!(FlowState::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn target_dimension() {
        assert_eq!(EstimationTarget::ScalarSpeed.dim(), 1);
        assert_eq!(EstimationTarget::BodyComponents.dim(), 2);
        assert_eq!(EstimationTarget::from_dim(2).unwrap(), EstimationTarget::BodyComponents);
        assert!(EstimationTarget::from_dim(3).is_err());
    }
}
