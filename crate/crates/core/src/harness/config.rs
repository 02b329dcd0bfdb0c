//! Scenario configuration and named presets.
//!
//! A config file is TOML. It may name a `preset` to start from; its own
//! tables are then merged over the preset key by key (arrays and scalars
//! replace, tables merge).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterParams;
use crate::geodata::DEFAULT_EDGE_THRESHOLD;
use crate::matcher::{MatchParams, DEFAULT_BLUR_SIGMA};
use crate::mission::{DetectionParams, MissionEvent, MissionParams, Waypoint};
use crate::simworld::{ErrorModel, SensorConfig, WorldSpec, DEFAULT_MAX_SPEED};

const PRESETS: [(&str, &str); 4] = [
    ("urban_1km", include_str!("../../presets/urban_1km.toml")),
    ("forest_1_4km", include_str!("../../presets/forest_1_4km.toml")),
    ("openfield", include_str!("../../presets/openfield.toml")),
    ("recovery_32m", include_str!("../../presets/recovery_32m.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizerKind {
    /// Heightmap matching with the particle filter.
    Matcher,
    /// The estimate is the true position.
    Oracle,
    /// Particle filter fed by odometry only.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    /// Goals placed through the corrected estimate.
    VirtualGoal,
    /// Waypoints flown directly in the odometry frame.
    Odometry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub localizer: LocalizerKind,
    pub particles: usize,
    pub clusters: usize,
    pub resample_distance: f64,
    /// Resampling jitter covariance (m²).
    pub odometry_cov: [[f64; 2]; 2],
    /// Spread of the initial particle cloud (m).
    pub init_stddev: f64,
    /// Offset of the initial cloud center from the true start (m).
    pub init_offset: [f64; 2],
    pub edge_threshold: f64,
    pub blur_sigma: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let p = FilterParams::default();
        Self {
            localizer: LocalizerKind::Matcher,
            particles: p.particles,
            clusters: p.clusters,
            resample_distance: p.resample_distance,
            odometry_cov: p.odometry_cov,
            init_stddev: 1.0,
            init_offset: [0.0, 0.0],
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
            blur_sigma: DEFAULT_BLUR_SIGMA,
        }
    }
}

impl FilterConfig {
    pub fn params(&self) -> FilterParams {
        FilterParams {
            particles: self.particles,
            clusters: self.clusters,
            resample_distance: self.resample_distance,
            odometry_cov: self.odometry_cov,
        }
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams { edge_threshold: self.edge_threshold, blur_sigma: self.blur_sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// Known takeoff position (world m).
    pub start: [f64; 2],
    pub waypoints: Vec<Waypoint>,
    pub guidance: Guidance,
    pub max_speed: f64,
    pub goal_step: f64,
    pub trigger_radius: f64,
    pub detector_range: f64,
    pub dwell: f64,
    pub search_size: f64,
    pub search_spacing: f64,
    pub search_timeout: f64,
    pub arrival_radius: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        let p = MissionParams::default();
        Self {
            start: [0.0, 0.0],
            waypoints: Vec::new(),
            guidance: Guidance::VirtualGoal,
            max_speed: DEFAULT_MAX_SPEED,
            goal_step: p.goal_step,
            trigger_radius: p.detection.trigger_radius,
            detector_range: p.detection.detector_range,
            dwell: p.detection.dwell,
            search_size: p.search_size,
            search_spacing: p.search_spacing,
            search_timeout: p.search_timeout,
            arrival_radius: p.arrival_radius,
        }
    }
}

impl MissionConfig {
    pub fn params(&self) -> MissionParams {
        MissionParams {
            detection: DetectionParams {
                trigger_radius: self.trigger_radius,
                detector_range: self.detector_range,
                dwell: self.dwell,
            },
            goal_step: self.goal_step,
            search_size: self.search_size,
            search_spacing: self.search_spacing,
            search_timeout: self.search_timeout,
            arrival_radius: self.arrival_radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    /// Simulation step (s).
    pub dt: f64,
    /// Odometry distance between localization updates (m).
    pub localization_distance: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { dt: 0.5, localization_distance: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ComputeRestart,
    SoftwareFault,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureInjection {
    pub kind: FailureKind,
    /// Mission time of the failure (s).
    pub at: f64,
}

/// An event pushed into the state machine at a given time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledEvent {
    pub at: f64,
    pub event: String,
}

impl ScheduledEvent {
    pub fn parse_event(&self) -> Result<MissionEvent> {
        self.event.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunLimits {
    /// Hard stop on mission time (s).
    pub max_time: f64,
    /// Flight time the battery allows (s).
    pub battery_budget: Option<f64>,
    pub failure: Option<FailureInjection>,
    pub events: Vec<ScheduledEvent>,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self { max_time: 3600.0, battery_budget: None, failure: None, events: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Base preset, already merged in once the config is loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Every random stream of the run derives from this seed.
    #[serde(default)]
    pub seed: u64,
    pub world: WorldSpec,
    #[serde(default)]
    pub errors: ErrorModel,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub run: RunLimits,
}

/// Seed of one named random stream of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) const WORLD_STREAM: u64 = 1;
pub(crate) const ERROR_STREAM: u64 = 2;
pub(crate) const SENSOR_STREAM: u64 = 3;
pub(crate) const FILTER_STREAM: u64 = 4;

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let (_, text) = PRESETS.iter().find(|p| p.0 == name).ok_or_else(|| {
        let known: Vec<_> = preset_names().collect();
        Error::Config(format!("unknown preset {name:?}; known presets: {}", known.join(", ")))
    })?;
    text.parse::<toml::Table>().map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

impl ScenarioConfig {
    /// A named preset as is.
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_table(preset_table(name)?, None)
    }

    /// Parses TOML text; `preset_override` replaces any `preset` key.
    pub fn from_toml_str(text: &str, preset_override: Option<&str>) -> Result<Self> {
        let table = text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table, preset_override)
    }

    pub fn load(path: &Path, preset_override: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, preset_override).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn from_table(mut table: toml::Table, preset_override: Option<&str>) -> Result<Self> {
        let name = match preset_override {
            Some(p) => Some(p.to_string()),
            None => match table.get("preset") {
                Some(toml::Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(Error::Config("preset must be a string".into())),
                None => None,
            },
        };
        if let Some(name) = &name {
            let mut base = preset_table(name)?;
            table.remove("preset");
            merge(&mut base, table);
            table = base;
        }
        let mut cfg: ScenarioConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if cfg.name.is_empty() {
            cfg.name = name.clone().unwrap_or_else(|| "scenario".into());
        }
        cfg.preset = name;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.world.extent.is_degenerate() {
            return Err(Error::Config("world extent has zero area".into()));
        }
        if !(self.world.resolution > 0.0) {
            return Err(Error::Config("world resolution must be positive".into()));
        }
        self.errors.validate()?;
        self.sensor.validate()?;
        if (self.sensor.resolution - self.world.resolution).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sensor resolution {} differs from world resolution {}",
                self.sensor.resolution, self.world.resolution
            )));
        }
        let f = &self.filter;
        if f.particles == 0 || f.clusters == 0 || f.clusters > f.particles {
            return Err(Error::Config("filter needs particles >= clusters >= 1".into()));
        }
        crate::filter::Covariance2::new(f.odometry_cov).map_err(|e| Error::Config(format!("filter.odometry_cov: {e}")))?;
        if !(f.init_stddev >= 0.0) || !(f.edge_threshold > 0.0) || !(f.blur_sigma >= 0.0) || !(f.resample_distance > 0.0) {
            return Err(Error::Config(
                "filter init_stddev and blur_sigma must be >= 0, edge_threshold and resample_distance > 0".into(),
            ));
        }
        self.mission.params().validate()?;
        if !(self.mission.max_speed > 0.0) {
            return Err(Error::Config("mission max_speed must be positive".into()));
        }
        let e = self.world.extent;
        let inside = |p: [f64; 2]| e.contains(p[0], p[1]);
        if !inside(self.mission.start) {
            return Err(Error::Config(format!("mission start {:?} lies outside the world", self.mission.start)));
        }
        for (k, w) in self.mission.waypoints.iter().enumerate() {
            w.validate()?;
            if !inside(w.position) || !w.flag.is_none_or(inside) {
                return Err(Error::Config(format!("waypoint {k} lies outside the world")));
            }
        }
        if !(self.rates.dt > 0.0 && self.rates.localization_distance > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if !(self.run.max_time > 0.0) || self.run.battery_budget.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("run time limits must be positive".into()));
        }
        for ev in &self.run.events {
            ev.parse_event()?;
        }
        Ok(())
    }
}
