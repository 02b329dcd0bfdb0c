//! Odometry drift and compass bias models.
//!
//! Odometry is reported in the body frame: the true world displacement is
//! rotated by `R(-heading)`, scaled by `1 + scale_error` and perturbed by
//! isotropic noise whose variance grows linearly with the distance moved.
//! The compass reads the true heading plus a bounded sinusoidal bias and
//! white noise. Feeding the biased compass back into the odometry rotation
//! is what makes "compass-aligned odometry" drift sideways.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::OdometryDelta;

/// Largest compass bias amplitude accepted by [`ErrorModel::validate`].
pub const MAX_COMPASS_BIAS: f64 = std::f64::consts::PI / 6.0;

const ODOMETRY_STREAM: u64 = 1;
const COMPASS_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModel {
    /// Relative odometry scale error; 0.02 reports 2 % too much distance.
    pub odometry_scale_error: f64,
    /// Odometry noise in m per √m travelled.
    pub odometry_noise: f64,
    /// Compass bias amplitude (rad).
    pub compass_bias_amplitude: f64,
    /// Largest rate of change of the bias (rad/s).
    pub compass_bias_rate: f64,
    /// Bias phase (rad); drawn from the seed when absent.
    pub compass_bias_phase: Option<f64>,
    /// Compass white noise (rad).
    pub compass_noise: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl ErrorModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("odometry_noise", self.odometry_noise),
            ("compass_bias_amplitude", self.compass_bias_amplitude),
            ("compass_bias_rate", self.compass_bias_rate),
            ("compass_noise", self.compass_noise),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.odometry_scale_error > -1.0 && self.odometry_scale_error.is_finite()) {
            return Err(Error::Config(format!("odometry_scale_error must exceed -1, got {}", self.odometry_scale_error)));
        }
        if self.compass_bias_amplitude > MAX_COMPASS_BIAS + 1e-12 {
            return Err(Error::Config(format!(
                "compass_bias_amplitude {} rad exceeds the {} rad cap",
                self.compass_bias_amplitude, MAX_COMPASS_BIAS
            )));
        }
        if self.compass_bias_phase.is_some_and(|p| !p.is_finite()) {
            return Err(Error::Config("compass_bias_phase must be finite".into()));
        }
        Ok(())
    }
}

/// Compass bias at time `t`: `A·sin(ω t + φ)` with `ω = rate / A`, so the
/// bias never changes faster than `rate` and never exceeds `A`.
pub fn compass_bias(model: &ErrorModel, phase: f64, t: f64) -> f64 {
    let a = model.compass_bias_amplitude;
    if a == 0.0 {
        return 0.0;
    }
    a * (model.compass_bias_rate / a * t + phase).sin()
}

/// One body-frame odometry increment for a true world displacement.
pub fn emit_odometry(
    displacement: Vector2<f64>,
    heading: f64,
    model: &ErrorModel,
    rng: &mut impl Rng,
) -> OdometryDelta {
    let (s, c) = heading.sin_cos();
    let body = Vector2::new(c * displacement.x + s * displacement.y, -s * displacement.x + c * displacement.y);
    let mut d = body * (1.0 + model.odometry_scale_error);
    if model.odometry_noise > 0.0 {
        let sd = model.odometry_noise * displacement.norm().sqrt();
        d.x += sd * rng.sample::<f64, _>(StandardNormal);
        d.y += sd * rng.sample::<f64, _>(StandardNormal);
    }
    OdometryDelta::new(d.x, d.y)
}

/// One compass reading, wrapped to `(-π, π]`.
pub fn emit_compass(heading: f64, t: f64, model: &ErrorModel, phase: f64, rng: &mut impl Rng) -> f64 {
    let mut v = heading + compass_bias(model, phase, t);
    if model.compass_noise > 0.0 {
        v += model.compass_noise * rng.sample::<f64, _>(StandardNormal);
    }
    wrap_angle(v)
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Seeded odometry stream.
#[derive(Clone, Debug)]
pub struct OdometrySource {
    model: ErrorModel,
    rng: ChaCha8Rng,
}

impl OdometrySource {
    pub fn new(model: ErrorModel) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(ODOMETRY_STREAM);
        Self { model, rng }
    }

    pub fn emit(&mut self, displacement: Vector2<f64>, heading: f64) -> OdometryDelta {
        emit_odometry(displacement, heading, &self.model, &mut self.rng)
    }
}

/// Seeded compass stream with a fixed bias phase.
#[derive(Clone, Debug)]
pub struct CompassSource {
    model: ErrorModel,
    phase: f64,
    rng: ChaCha8Rng,
}

impl CompassSource {
    pub fn new(model: ErrorModel) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(COMPASS_STREAM);
        let phase = model.compass_bias_phase.unwrap_or_else(|| rng.random_range(0.0..std::f64::consts::TAU));
        Self { model, phase, rng }
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn bias(&self, t: f64) -> f64 {
        compass_bias(&self.model, self.phase, t)
    }

    pub fn read(&mut self, heading: f64, t: f64) -> f64 {
        emit_compass(heading, t, &self.model, self.phase, &mut self.rng)
    }
}
