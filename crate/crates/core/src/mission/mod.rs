//! Mission control: state machine, frame bookkeeping, virtual goals,
//! waypoint detection and the search pattern.
//!
//! Frames: `W` is the georeferenced world, `O` the odometry frame fixed at
//! takeoff, `B` the body. The vehicle controller only knows `O`, so every
//! world-frame target is turned into an odometry-frame goal through the
//! latest filter estimate of where the body really is.

mod fsm;

pub use fsm::{fsm_step, MissionEvent, MissionState, TRANSITIONS};

use nalgebra::{Isometry2, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected waypoint position uncertainty (m).
pub const DEFAULT_WAYPOINT_RADIUS: f64 = 20.0;
/// Estimated distance at which navigation hands over to detection (m).
pub const DEFAULT_TRIGGER_RADIUS: f64 = 15.0;
pub const DEFAULT_DETECTOR_RANGE: f64 = 10.0;
pub const DEFAULT_GOAL_STEP: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    /// Expected position (world m).
    pub position: [f64; 2],
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Where the flag really is; defaults to the expected position.
    #[serde(default)]
    pub flag: Option<[f64; 2]>,
    /// Outcome of the flight; cleared when a mission starts.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub detected: bool,
}

fn default_radius() -> f64 {
    DEFAULT_WAYPOINT_RADIUS
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { position: [x, y], radius: DEFAULT_WAYPOINT_RADIUS, flag: None, detected: false }
    }

    pub fn expected(&self) -> Vector2<f64> {
        Vector2::new(self.position[0], self.position[1])
    }

    pub fn flag_position(&self) -> Vector2<f64> {
        let f = self.flag.unwrap_or(self.position);
        Vector2::new(f[0], f[1])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("waypoint radius must be positive, got {}", self.radius)));
        }
        Ok(())
    }
}

/// `T_W_O` (fixed at takeoff), `T_O_B` (odometry pose) and `T_W_Bcorrect`
/// (latest filter estimate).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameSet {
    pub t_w_o: Isometry2<f64>,
    pub t_o_b: Isometry2<f64>,
    pub t_w_b_correct: Isometry2<f64>,
}

impl FrameSet {
    /// Odometry frame anchored at the known takeoff pose.
    pub fn at_takeoff(position: Vector2<f64>, heading: f64) -> Self {
        let t_w_o = Isometry2::new(position, heading);
        Self { t_w_o, t_o_b: Isometry2::identity(), t_w_b_correct: t_w_o }
    }

    /// Where odometry alone places the body in the world.
    pub fn odometry_world(&self) -> Isometry2<f64> {
        self.t_w_o * self.t_o_b
    }

    /// Accumulated odometry drift, `T_W_Bcorrect · (T_W_O · T_O_B)⁻¹`.
    pub fn drift(&self) -> Isometry2<f64> {
        self.t_w_b_correct * self.odometry_world().inverse()
    }
}

/// Odometry-frame goal a fixed step from the body, in the direction the
/// estimate says the target lies.
///
/// The direction is computed in the world from the corrected position and
/// then rotated into `O`; attaching it to the odometry body position makes
/// the controller move the real vehicle toward the real target whatever
/// the drift. Closer than `step`, the goal lands on the target.
pub fn virtual_goal(frames: &FrameSet, target: Vector2<f64>, step: f64) -> Point2<f64> {
    assert!(step > 0.0, "goal step must be positive, got {step}");
    let est = frames.t_w_b_correct.translation.vector;
    let to_target = target - est;
    let dist = to_target.norm();
    let body = Point2::from(frames.t_o_b.translation.vector);
    if dist == 0.0 {
        return body;
    }
    let world_step = if dist < step { to_target } else { to_target * (step / dist) };
    body + frames.t_w_o.rotation.inverse() * world_step
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    pub trigger_radius: f64,
    pub detector_range: f64,
    /// Time spent looking before giving up on a waypoint (s).
    pub dwell: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self { trigger_radius: DEFAULT_TRIGGER_RADIUS, detector_range: DEFAULT_DETECTOR_RANGE, dwell: 10.0 }
    }
}

/// Detection stub. In navigation, fires `waypoint_reached` once the
/// estimate is within the trigger radius; in detection, fires `detection`
/// when the flag is truly within detector range and
/// `detection_too_far_or_none` after the dwell time.
pub fn detection_check(
    state: MissionState,
    est_distance: f64,
    true_distance: f64,
    dwell_elapsed: f64,
    params: &DetectionParams,
) -> Option<MissionEvent> {
    match state {
        MissionState::WaypointNavigation if est_distance <= params.trigger_radius => Some(MissionEvent::WaypointReached),
        MissionState::WaypointDetection if true_distance <= params.detector_range => Some(MissionEvent::Detection),
        MissionState::WaypointDetection if dwell_elapsed >= params.dwell => Some(MissionEvent::DetectionTooFarOrNone),
        _ => None,
    }
}

/// Square lawnmower over `size × size` centered on `center`.
///
/// Lanes run along x at `n + 1` evenly spaced rows, `n = ⌈size / spacing⌉`,
/// alternating direction, so no point of the square is farther than
/// `spacing / 2` from the path. `size == spacing` gives the four corners.
pub fn search_pattern(center: Vector2<f64>, size: f64, spacing: f64) -> Result<Vec<Vector2<f64>>> {
    if !(spacing > 0.0 && size >= spacing && size.is_finite()) {
        return Err(Error::invalid(format!("search pattern needs size >= spacing > 0, got {size} and {spacing}")));
    }
    let n = (size / spacing - 1e-9).ceil() as usize;
    let half = size / 2.0;
    let mut goals = Vec::with_capacity(2 * (n + 1));
    for k in 0..=n {
        let y = center.y - half + size * k as f64 / n as f64;
        let (a, b) = if k % 2 == 0 { (-half, half) } else { (half, -half) };
        goals.push(Vector2::new(center.x + a, y));
        goals.push(Vector2::new(center.x + b, y));
    }
    Ok(goals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionParams {
    pub detection: DetectionParams,
    /// Virtual-goal step (m).
    pub goal_step: f64,
    pub search_size: f64,
    pub search_spacing: f64,
    /// Search timeout (s).
    pub search_timeout: f64,
    /// Estimated distance at which a search leg or home counts as reached (m).
    pub arrival_radius: f64,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            detection: DetectionParams::default(),
            goal_step: DEFAULT_GOAL_STEP,
            search_size: 2.0 * DEFAULT_WAYPOINT_RADIUS,
            search_spacing: 10.0,
            search_timeout: 120.0,
            arrival_radius: 3.0,
        }
    }
}

impl MissionParams {
    pub fn validate(&self) -> Result<()> {
        let d = &self.detection;
        let positive = [
            ("goal_step", self.goal_step),
            ("search_spacing", self.search_spacing),
            ("search_timeout", self.search_timeout),
            ("arrival_radius", self.arrival_radius),
            ("trigger_radius", d.trigger_radius),
            ("detector_range", d.detector_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("mission {name} must be positive, got {v}")));
            }
        }
        if !(d.dwell >= 0.0) || self.search_size < self.search_spacing {
            return Err(Error::Config("mission dwell must be >= 0 and search_size >= search_spacing".into()));
        }
        Ok(())
    }
}

/// One processed event; `to == from` with `accepted == false` records an
/// event the state machine ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: f64,
    pub from: MissionState,
    pub event: MissionEvent,
    pub to: MissionState,
    pub accepted: bool,
}

/// Drives the state machine from estimates and ground truth.
#[derive(Clone, Debug)]
pub struct MissionController {
    state: MissionState,
    waypoints: Vec<Waypoint>,
    current: usize,
    home: Vector2<f64>,
    params: MissionParams,
    entered_at: f64,
    search: Vec<Vector2<f64>>,
    search_leg: usize,
}

impl MissionController {
    pub fn new(mut waypoints: Vec<Waypoint>, home: Vector2<f64>, params: MissionParams) -> Result<Self> {
        params.validate()?;
        for w in &mut waypoints {
            w.validate()?;
            w.detected = false;
        }
        Ok(Self {
            state: MissionState::PrepareTakeoff,
            waypoints,
            current: 0,
            home,
            params,
            entered_at: 0.0,
            search: Vec::new(),
            search_leg: 0,
        })
    }

    pub fn state(&self) -> MissionState {
        self.state
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn current_waypoint(&self) -> Option<&Waypoint> {
        self.waypoints.get(self.current)
    }

    pub fn detected_count(&self) -> usize {
        self.waypoints.iter().filter(|w| w.detected).count()
    }

    /// Applies one event, logging it whether or not the machine moves.
    pub fn handle(&mut self, t: f64, event: MissionEvent) -> Transition {
        let from = self.state;
        let next = fsm_step(from, event);
        if let Some(to) = next {
            self.enter(t, from, event, to);
        }
        Transition { t, from, event, to: self.state, accepted: next.is_some() }
    }

    fn enter(&mut self, t: f64, from: MissionState, event: MissionEvent, to: MissionState) {
        match (from, event) {
            // Overflight is part of navigation: the flag is passed and the
            // next waypoint becomes current.
            (MissionState::WaypointDetection, MissionEvent::Detection) => {
                self.waypoints[self.current].detected = true;
                self.current += 1;
            }
            (MissionState::SearchPattern, MissionEvent::SearchCompleteOrTimeout) => self.current += 1,
            _ => {}
        }
        if to == MissionState::SearchPattern {
            let center = self.waypoints[self.current].expected();
            // validated in `new`
            self.search = search_pattern(center, self.params.search_size, self.params.search_spacing)
                .expect("validated search parameters");
            self.search_leg = 0;
        }
        self.state = to;
        self.entered_at = t;
    }

    /// World-frame position the vehicle should head for, if any.
    pub fn target(&self) -> Option<Vector2<f64>> {
        match self.state {
            MissionState::WaypointNavigation | MissionState::WaypointDetection => {
                self.current_waypoint().map(Waypoint::expected)
            }
            MissionState::SearchPattern => self.search.get(self.search_leg).copied(),
            MissionState::ReturnHome => Some(self.home),
            _ => None,
        }
    }

    /// Generates and applies the events due at time `t` given the estimated
    /// and true vehicle positions.
    pub fn tick(&mut self, t: f64, est: Vector2<f64>, truth: Vector2<f64>) -> Vec<Transition> {
        let mut out = Vec::new();
        // A few passes so chains such as detection -> all cleared resolve
        // within one tick.
        for _ in 0..4 {
            let Some(event) = self.next_event(t, est, truth) else { break };
            out.push(self.handle(t, event));
        }
        out
    }

    fn next_event(&mut self, t: f64, est: Vector2<f64>, truth: Vector2<f64>) -> Option<MissionEvent> {
        let p = &self.params;
        match self.state {
            MissionState::PrepareTakeoff => Some(MissionEvent::TakeoffSuccess),
            MissionState::WaitForStart => Some(MissionEvent::StartMission),
            MissionState::WaypointNavigation | MissionState::WaypointDetection => {
                let Some(w) = self.current_waypoint() else {
                    return (self.state == MissionState::WaypointNavigation)
                        .then_some(MissionEvent::AllWaypointsCleared);
                };
                let est_d = (w.expected() - est).norm();
                let true_d = (w.flag_position() - truth).norm();
                detection_check(self.state, est_d, true_d, t - self.entered_at, &p.detection)
            }
            MissionState::SearchPattern => {
                let w = self.waypoints[self.current];
                if (w.flag_position() - truth).norm() <= p.detection.detector_range {
                    // Detection interrupts the search; the flag counts.
                    self.waypoints[self.current].detected = true;
                    return Some(MissionEvent::SearchCompleteOrTimeout);
                }
                while self.search.get(self.search_leg).is_some_and(|g| (g - est).norm() <= p.arrival_radius) {
                    self.search_leg += 1;
                }
                (self.search_leg >= self.search.len() || t - self.entered_at >= p.search_timeout)
                    .then_some(MissionEvent::SearchCompleteOrTimeout)
            }
            MissionState::ReturnHome => {
                ((self.home - est).norm() <= p.arrival_radius).then_some(MissionEvent::HomeReached)
            }
            MissionState::Land => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    #[test]
    fn drift_free_goal_is_on_the_line() {
        let mut f = FrameSet::at_takeoff(v(10.0, 5.0), 0.3);
        f.t_o_b = Isometry2::new(v(20.0, -4.0), 0.0);
        f.t_w_b_correct = f.odometry_world();
        let target = v(300.0, 200.0);
        let goal = f.t_w_o * virtual_goal(&f, target, 15.0);
        let est = f.t_w_b_correct.translation.vector;
        let along = (goal.coords - est).dot(&(target - est).normalize());
        let across = (goal.coords - est).perp(&(target - est).normalize());
        assert!((along - 15.0).abs() < 1e-9 && across.abs() < 1e-9);
    }

    #[test]
    fn translation_drift_shifts_goal_back() {
        // T_W_O rotated a quarter turn; the body really is d away from
        // where odometry puts it.
        let mut f = FrameSet::at_takeoff(v(0.0, 0.0), FRAC_PI_2);
        f.t_o_b = Isometry2::new(v(50.0, 0.0), 0.0);
        let d = v(7.0, -3.0);
        let odo = f.odometry_world().translation.vector; // (0, 50)
        f.t_w_b_correct = Isometry2::new(odo + d, 0.0);
        let target = v(400.0, 500.0);
        let goal = virtual_goal(&f, target, 15.0);
        // naive: the corrected world goal mapped straight into O
        let est = odo + d;
        let world_goal = est + (target - est).normalize() * 15.0;
        let naive = f.t_w_o.inverse() * Point2::from(world_goal);
        // -d expressed in O is R(-π/2)(-d) = (3, 7)
        let expect = naive.coords + v(3.0, 7.0);
        assert!((goal.coords - expect).norm() < 1e-9, "{goal} vs {expect}");
    }

    #[test]
    fn goal_clamps_at_target() {
        let mut f = FrameSet::at_takeoff(v(0.0, 0.0), 0.0);
        f.t_o_b = Isometry2::new(v(1.0, 1.0), 0.0);
        f.t_w_b_correct = Isometry2::new(v(3.0, 1.0), 0.0);
        assert_eq!(virtual_goal(&f, v(8.0, 1.0), 15.0), Point2::new(6.0, 1.0));
        assert_eq!(virtual_goal(&f, v(3.0, 1.0), 15.0), Point2::new(1.0, 1.0));
    }

    #[test]
    fn detection_rules() {
        let p = DetectionParams::default();
        use MissionEvent as E;
        use MissionState as S;
        assert_eq!(detection_check(S::WaypointNavigation, 14.9, 99.0, 0.0, &p), Some(E::WaypointReached));
        assert_eq!(detection_check(S::WaypointNavigation, 15.1, 0.0, 0.0, &p), None);
        assert_eq!(detection_check(S::WaypointDetection, 0.0, 10.0, 0.0, &p), Some(E::Detection));
        assert_eq!(detection_check(S::WaypointDetection, 0.0, 10.5, 9.9, &p), None);
        assert_eq!(detection_check(S::WaypointDetection, 0.0, 10.5, 10.0, &p), Some(E::DetectionTooFarOrNone));
    }

    #[test]
    fn minimal_search_is_four_corners() {
        let g = search_pattern(v(0.0, 0.0), 10.0, 10.0).unwrap();
        assert_eq!(g, vec![v(-5.0, -5.0), v(5.0, -5.0), v(5.0, 5.0), v(-5.0, 5.0)]);
        assert!(search_pattern(v(0.0, 0.0), 5.0, 10.0).is_err());
        assert!(search_pattern(v(0.0, 0.0), 5.0, 0.0).is_err());
    }

    #[test]
    fn search_is_deterministic() {
        let a = search_pattern(v(3.0, 4.0), 40.0, 10.0).unwrap();
        assert_eq!(a, search_pattern(v(3.0, 4.0), 40.0, 10.0).unwrap());
        assert_eq!(a.len(), 10);
    }

    fn runner(flag_offset: Vector2<f64>) -> (MissionController, Vec<Transition>) {
        let mut wps = vec![Waypoint::new(100.0, 0.0), Waypoint::new(100.0, 100.0)];
        let f = wps[1].position;
        wps[1].flag = Some([f[0] + flag_offset.x, f[1] + flag_offset.y]);
        let mut m = MissionController::new(wps, v(0.0, 0.0), MissionParams::default()).unwrap();
        let mut pos = v(0.0, 0.0);
        let mut log = Vec::new();
        let dt = 0.5;
        for k in 0..5000 {
            let t = k as f64 * dt;
            log.extend(m.tick(t, pos, pos));
            if m.state() == MissionState::Land {
                break;
            }
            if let Some(target) = m.target() {
                let d = target - pos;
                pos += if d.norm() > 1.0 { d.normalize() } else { d };
            }
        }
        (m, log)
    }

    #[test]
    fn nominal_mission_lands() {
        let (m, log) = runner(v(0.0, 0.0));
        assert_eq!(m.state(), MissionState::Land);
        assert_eq!(m.detected_count(), 2);
        assert!(log.iter().all(|t| t.accepted));
        assert!(!log.iter().any(|t| t.to == MissionState::SearchPattern));
    }

    #[test]
    fn misplaced_flag_is_found_by_search() {
        let (m, log) = runner(v(12.0, -14.0));
        assert_eq!(m.state(), MissionState::Land);
        assert!(log.iter().any(|t| t.to == MissionState::SearchPattern));
        assert_eq!(m.detected_count(), 2);
    }

    #[test]
    fn flag_out_of_the_search_area_times_out() {
        let (m, log) = runner(v(60.0, 0.0));
        assert_eq!(m.state(), MissionState::Land);
        assert_eq!(m.detected_count(), 1);
        assert!(log.iter().any(|t| t.event == MissionEvent::SearchCompleteOrTimeout));
    }

    #[test]
    fn ignored_events_are_logged() {
        let mut m = MissionController::new(vec![Waypoint::new(1.0, 0.0)], v(0.0, 0.0), MissionParams::default()).unwrap();
        let t = m.handle(0.0, MissionEvent::HomeReached);
        assert!(!t.accepted);
        assert_eq!((t.from, t.to), (MissionState::PrepareTakeoff, MissionState::PrepareTakeoff));
    }

    #[test]
    fn return_home_service_aborts_navigation() {
        let mut m = MissionController::new(vec![Waypoint::new(500.0, 0.0)], v(0.0, 0.0), MissionParams::default()).unwrap();
        m.tick(0.0, v(0.0, 0.0), v(0.0, 0.0));
        assert_eq!(m.state(), MissionState::WaypointNavigation);
        let t = m.handle(1.0, MissionEvent::ReturnHomeService);
        assert!(t.accepted);
        assert_eq!(m.target(), Some(v(0.0, 0.0)));
    }
}
