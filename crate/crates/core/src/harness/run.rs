//! The closed-loop scenario driver.

use nalgebra::{Isometry2, Vector2};
use rayon::prelude::*;

use super::config::{
    derive_seed, FailureKind, Guidance, LocalizerKind, ScenarioConfig, ERROR_STREAM, FILTER_STREAM, SENSOR_STREAM,
    WORLD_STREAM,
};
use super::log::{summarize, LogRow, RunLog, RunSummary, Termination};
use crate::error::Result;
use crate::filter::ParticleFilter;
use crate::matcher::Localizer;
use crate::mission::{virtual_goal, FrameSet, MissionController, MissionEvent, MissionState, Transition};
use crate::simworld::{build_world, sample_prior_dem, sense_local, step_motion, CompassSource, OdometrySource, TruePose};

fn event_column(transitions: &[Transition]) -> String {
    transitions
        .iter()
        .map(|t| if t.accepted { t.event.name().to_string() } else { format!("{}:ignored", t.event.name()) })
        .collect::<Vec<_>>()
        .join(";")
}

fn rotate(v: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Runs one scenario to completion.
///
/// Each step of `rates.dt`: the state machine consumes the events due, the
/// vehicle is commanded toward its goal in the odometry frame, the true pose
/// advances, odometry and compass are emitted and the filter propagates.
/// Every `localization_distance` meters of odometry the vehicle senses a
/// local map and the filter is weighted with the match against the prior.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut world_spec = cfg.world.clone();
    world_spec.seed = derive_seed(seed, WORLD_STREAM);
    let world = build_world(&world_spec)?;
    let mut errors = cfg.errors;
    errors.seed = derive_seed(seed, ERROR_STREAM);
    let mut sensor = cfg.sensor;
    sensor.seed = derive_seed(seed, SENSOR_STREAM);

    let localizer = match cfg.filter.localizer {
        LocalizerKind::Matcher => {
            let dem = sample_prior_dem(&world, cfg.world.resolution)?;
            Some(Localizer::from_dem(&dem, cfg.filter.match_params()))
        }
        _ => None,
    };

    let start = Vector2::new(cfg.mission.start[0], cfg.mission.start[1]);
    let init_center = start + Vector2::new(cfg.filter.init_offset[0], cfg.filter.init_offset[1]);
    let mut filter = ParticleFilter::new(
        init_center,
        cfg.filter.init_stddev,
        &cfg.filter.params(),
        derive_seed(seed, FILTER_STREAM),
    )?;
    let mut odometry = OdometrySource::new(errors);
    let mut compass = CompassSource::new(errors);
    let mut mission = MissionController::new(cfg.mission.waypoints.clone(), start, cfg.mission.params())?;
    let mut scheduled: Vec<(f64, MissionEvent)> =
        cfg.run.events.iter().map(|e| Ok((e.at, e.parse_event()?))).collect::<Result<_>>()?;
    scheduled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut scheduled = scheduled.into_iter().peekable();

    let oracle = cfg.filter.localizer == LocalizerKind::Oracle;
    let mut pose = TruePose::new(start.x, start.y, 0.0);
    let mut frames = FrameSet::at_takeoff(start, 0.0);
    let mut est = if oracle { start } else { filter.estimate().position };
    frames.t_w_b_correct = Isometry2::new(est, 0.0);

    let dt = cfg.rates.dt;
    let mut rows = Vec::new();
    let mut transitions = Vec::new();
    let mut since_localization = 0.0;
    let mut step: u64 = 0;
    let termination = loop {
        let t = step as f64 * dt;
        let mut handled = Vec::new();
        while let Some(&(at, ev)) = scheduled.peek() {
            if at > t {
                break;
            }
            handled.push(mission.handle(t, ev));
            scheduled.next();
        }
        handled.extend(mission.tick(t, est, pose.position));
        let odom_world = frames.odometry_world().translation.vector;
        rows.push(LogRow {
            t,
            true_x: pose.position.x,
            true_y: pose.position.y,
            odom_x: odom_world.x,
            odom_y: odom_world.y,
            est_x: est.x,
            est_y: est.y,
            state: mission.state(),
            event: event_column(&handled),
        });
        transitions.extend(handled);

        if mission.state() == MissionState::Land {
            break Termination::Landed;
        }
        if let Some(f) = cfg.run.failure.filter(|f| t >= f.at) {
            break match f.kind {
                FailureKind::ComputeRestart => Termination::ComputeRestart,
                FailureKind::SoftwareFault => Termination::SoftwareFault,
            };
        }
        if cfg.run.battery_budget.is_some_and(|b| t >= b) {
            break Termination::BatteryDepleted;
        }
        if t >= cfg.run.max_time {
            break Termination::TimeLimit;
        }

        // Command in the odometry frame.
        let p_o_b = frames.t_o_b.translation.vector;
        let goal = mission.target().map(|target| match cfg.mission.guidance {
            Guidance::VirtualGoal => virtual_goal(&frames, target, cfg.mission.goal_step).coords,
            Guidance::Odometry => (frames.t_w_o.inverse() * nalgebra::Point2::from(target)).coords,
        });
        let v_o = match goal {
            Some(g) if (g - p_o_b).norm() > 0.0 => {
                let off = g - p_o_b;
                off * (cfg.mission.max_speed.min(off.norm() / dt) / off.norm())
            }
            _ => Vector2::zeros(),
        };
        // The vehicle tracks its own odometry, which is scaled and turned
        // by the compass bias: undo both to get the true velocity.
        let v_world = rotate(v_o, -compass.bias(t)) / (1.0 + errors.odometry_scale_error);
        let next = step_motion(pose, v_world, dt, cfg.mission.max_speed);
        let delta = odometry.emit(next.position - pose.position, next.heading);
        pose = next;
        let t_next = (step + 1) as f64 * dt;
        let heading = compass.read(pose.heading, t_next);
        let shift = delta.rotated(heading);
        frames.t_o_b = Isometry2::new(p_o_b + frames.t_w_o.rotation.inverse() * shift, heading);
        since_localization += delta.norm();

        let sim = match &localizer {
            Some(loc) if since_localization >= cfg.rates.localization_distance => {
                since_localization = 0.0;
                let local = sense_local(&world, &pose, &sensor)?;
                Some(loc.localize(&local, heading)?)
            }
            _ => None,
        };
        est = if oracle { pose.position } else { filter.step(delta, heading, sim.as_ref()).position };
        frames.t_w_b_correct = Isometry2::new(est, heading);
        step += 1;
    };

    let waypoints = mission.waypoints().to_vec();
    let summary = summarize(&rows, &waypoints, termination)?;
    Ok(RunLog { name: cfg.name.clone(), seed, waypoints, rows, transitions, summary })
}

/// Runs the scenario once per seed, in parallel.
pub fn sweep(cfg: &ScenarioConfig, seeds: impl IntoIterator<Item = u64>) -> Vec<(u64, Result<RunSummary>)> {
    let seeds: Vec<u64> = seeds.into_iter().collect();
    seeds
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seed = s;
            (s, run_scenario(&c).map(|log| log.summary))
        })
        .collect()
}
