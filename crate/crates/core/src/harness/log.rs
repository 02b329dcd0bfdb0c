//! Run logs, error metrics and export.

use std::io::{Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::mission::{MissionState, Transition, Waypoint};

/// One time step of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub true_x: f64,
    pub true_y: f64,
    pub odom_x: f64,
    pub odom_y: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub state: MissionState,
    /// Events handled at this step, `;`-separated; ignored ones carry a
    /// `:ignored` suffix.
    pub event: String,
}

impl LogRow {
    pub fn truth(&self) -> Vector2<f64> {
        Vector2::new(self.true_x, self.true_y)
    }

    pub fn odometry(&self) -> Vector2<f64> {
        Vector2::new(self.odom_x, self.odom_y)
    }

    pub fn estimate(&self) -> Vector2<f64> {
        Vector2::new(self.est_x, self.est_y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Landed,
    BatteryDepleted,
    ComputeRestart,
    SoftwareFault,
    TimeLimit,
}

impl Termination {
    pub fn completed(self) -> bool {
        self == Termination::Landed
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Landed => "landed",
            Termination::BatteryDepleted => "battery_depleted",
            Termination::ComputeRestart => "compute_restart",
            Termination::SoftwareFault => "software_fault",
            Termination::TimeLimit => "time_limit",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rmse_odom: f64,
    pub rmse_method: f64,
    pub waypoints_detected: usize,
    pub waypoints_total: usize,
    pub termination: Termination,
    pub duration: f64,
    /// Estimate error at the last step (m).
    pub final_error: f64,
    /// Odometry error at the last step (m).
    pub final_odom_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub name: String,
    pub seed: u64,
    /// Mission plan with the detection outcome of each waypoint.
    pub waypoints: Vec<Waypoint>,
    pub rows: Vec<LogRow>,
    pub transitions: Vec<Transition>,
    pub summary: RunSummary,
}

/// `sqrt(mean |a_i - b_i|²)` over two time-aligned series.
pub fn compute_rmse(estimates: &[Vector2<f64>], truths: &[Vector2<f64>]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} estimates, {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::EmptySeries);
    }
    let sum: f64 = estimates.iter().zip(truths).map(|(e, t)| (e - t).norm_squared()).sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// `(RMSE_odom, RMSE_method)` of a series of rows.
pub fn rmse_of_rows(rows: &[LogRow]) -> Result<(f64, f64)> {
    let truth: Vec<_> = rows.iter().map(LogRow::truth).collect();
    let odom: Vec<_> = rows.iter().map(LogRow::odometry).collect();
    let est: Vec<_> = rows.iter().map(LogRow::estimate).collect();
    Ok((compute_rmse(&odom, &truth)?, compute_rmse(&est, &truth)?))
}

pub fn summarize(rows: &[LogRow], waypoints: &[Waypoint], termination: Termination) -> Result<RunSummary> {
    let (rmse_odom, rmse_method) = rmse_of_rows(rows)?;
    let last = rows.last().ok_or(Error::EmptySeries)?;
    Ok(RunSummary {
        rmse_odom,
        rmse_method,
        waypoints_detected: waypoints.iter().filter(|w| w.detected).count(),
        waypoints_total: waypoints.len(),
        termination,
        duration: last.t,
        final_error: (last.estimate() - last.truth()).norm(),
        final_odom_error: (last.odometry() - last.truth()).norm(),
    })
}

impl RunLog {
    /// Summary rebuilt from the rows alone.
    pub fn recompute_summary(&self) -> Result<RunSummary> {
        summarize(&self.rows, &self.waypoints, self.summary.termination)
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read_json(input: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        write_rows_csv(&self.rows, out)
    }

    /// Three trajectories as LineStrings plus one Point per waypoint.
    /// Coordinates are the world frame in meters.
    pub fn to_geojson(&self) -> serde_json::Value {
        let line = |name: &str, pick: fn(&LogRow) -> Vector2<f64>| {
            let coords: Vec<[f64; 2]> = self.rows.iter().map(|r| {
                let p = pick(r);
                [p.x, p.y]
            }).collect();
            json!({
                "type": "Feature",
                "properties": { "name": name },
                "geometry": { "type": "LineString", "coordinates": coords },
            })
        };
        let mut features = vec![
            line("true", LogRow::truth),
            line("odometry", LogRow::odometry),
            line("estimate", LogRow::estimate),
        ];
        for (k, w) in self.waypoints.iter().enumerate() {
            features.push(json!({
                "type": "Feature",
                "properties": { "name": format!("waypoint_{k}"), "radius": w.radius, "detected": w.detected },
                "geometry": { "type": "Point", "coordinates": w.position },
            }));
        }
        json!({ "type": "FeatureCollection", "features": features })
    }
}

pub fn write_rows_csv(rows: &[LogRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(input: impl Read) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
    Ok(rows)
}
