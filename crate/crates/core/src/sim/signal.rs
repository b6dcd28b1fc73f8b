use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Measurement;

/// Minimum robot-node distance used by the propagation terms (meters).
pub const MIN_DISTANCE: f64 = 0.1;

/// Log-distance RSSI plus a point-dipole magnetic signature; inertial channels
/// carry noise only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    /// dBm at 1 m
    pub rssi_ref: f64,
    pub path_loss_exp: f64,
    /// dB
    pub rssi_noise_sd: f64,
    /// µT
    pub mag_baseline: [f64; 3],
    /// µT·m³
    pub dipole_strength: f64,
    /// µT
    pub mag_noise_sd: f64,
    /// m/s²
    pub accel_noise_sd: f64,
    /// °/s
    pub gyro_noise_sd: f64,
}

impl Default for SignalModel {
    fn default() -> Self {
        Self {
            rssi_ref: -40.0,
            path_loss_exp: 2.2,
            rssi_noise_sd: 2.0,
            mag_baseline: [20.0, 0.0, 44.0],
            dipole_strength: 5.0,
            mag_noise_sd: 0.3,
            accel_noise_sd: 0.02,
            gyro_noise_sd: 0.1,
        }
    }
}

impl SignalModel {
    pub fn noiseless() -> Self {
        Self {
            rssi_noise_sd: 0.0,
            mag_noise_sd: 0.0,
            accel_noise_sd: 0.0,
            gyro_noise_sd: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_exp > 0.0) {
            return Err(Error::Config("path_loss_exp must be positive".into()));
        }
        let sds = [self.rssi_noise_sd, self.mag_noise_sd, self.accel_noise_sd, self.gyro_noise_sd];
        if sds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("noise standard deviations must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Noise-free RSSI at distance `d` meters (clamped to [`MIN_DISTANCE`]).
    pub fn rssi_at(&self, d: f64) -> f64 {
        self.rssi_ref - 10.0 * self.path_loss_exp * d.max(MIN_DISTANCE).log10()
    }

    /// One sample at `node_pos` with the robot at `robot_pos`.
    pub fn sense<R: Rng + ?Sized>(&self, node_pos: (f64, f64), robot_pos: (f64, f64), rng: &mut R) -> Measurement {
        let (dx, dy) = (robot_pos.0 - node_pos.0, robot_pos.1 - node_pos.1);
        let raw = dx.hypot(dy);
        let d = raw.max(MIN_DISTANCE);
        // direction node -> robot; undefined when co-located, so fall back to +x
        let (ux, uy) = if raw > 0.0 { (dx / raw, dy / raw) } else { (1.0, 0.0) };
        let field = self.dipole_strength / (d * d * d);

        let mut noise = |sd: f64| -> f64 {
            if sd > 0.0 {
                Normal::new(0.0, sd).expect("sd validated").sample(rng)
            } else {
                0.0
            }
        };
        let accel = [noise(self.accel_noise_sd), noise(self.accel_noise_sd), noise(self.accel_noise_sd)];
        let gyro = [noise(self.gyro_noise_sd), noise(self.gyro_noise_sd), noise(self.gyro_noise_sd)];
        let mag = [
            self.mag_baseline[0] + field * ux + noise(self.mag_noise_sd),
            self.mag_baseline[1] + field * uy + noise(self.mag_noise_sd),
            self.mag_baseline[2] + noise(self.mag_noise_sd),
        ];
        let rssi = self.rssi_at(d) + noise(self.rssi_noise_sd);
        Measurement { accel, gyro, mag, rssi }
    }
}

pub fn sense<R: Rng + ?Sized>(model: &SignalModel, node_pos: (f64, f64), robot_pos: (f64, f64), rng: &mut R) -> Measurement {
    model.sense(node_pos, robot_pos, rng)
}
