use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

/// Direction of arrival in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Doa {
    azimuth: f64,
    elevation: f64,
}

impl Doa {
    /// Wraps azimuth into (−π, π]; elevation must lie in [−π/2, π/2].
    pub fn new(azimuth: f64, elevation: f64) -> Option<Self> {
        if !(azimuth.is_finite() && (-FRAC_PI_2..=FRAC_PI_2).contains(&elevation)) {
            return None;
        }
        let mut az = azimuth.rem_euclid(2.0 * PI);
        if az > PI {
            az -= 2.0 * PI;
        }
        Some(Doa {
            azimuth: az,
            elevation,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    /// Direction of the vector `(x, y, z)`; `None` for the zero vector.
    pub fn from_vector(x: f64, y: f64, z: f64) -> Option<Self> {
        let r = (x * x + y * y + z * z).sqrt();
        if r == 0.0 {
            return None;
        }
        Doa::new(y.atan2(x), (z / r).clamp(-1.0, 1.0).asin())
    }
}

/// N3D first-order gains `[W, X, Y, Z]` for a plane wave from `doa`.
pub fn foa_gains(doa: Doa) -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let (st, ct) = doa.azimuth.sin_cos();
    let (sp, cp) = doa.elevation.sin_cos();
    [1.0, s3 * ct * cp, s3 * st * cp, s3 * sp]
}

/// Same gains from a unit-normalised direction vector, avoiding trig.
pub fn foa_gains_from_vector(x: f64, y: f64, z: f64) -> [f64; 4] {
    let r = (x * x + y * y + z * z).sqrt();
    let s3 = 3f64.sqrt() / r;
    [1.0, s3 * x, s3 * y, s3 * z]
}
