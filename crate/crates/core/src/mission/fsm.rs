//! The mission control state machine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MissionState {
    PrepareTakeoff,
    WaitForStart,
    WaypointNavigation,
    WaypointDetection,
    SearchPattern,
    ReturnHome,
    Land,
}

impl MissionState {
    pub const ALL: [MissionState; 7] = [
        MissionState::PrepareTakeoff,
        MissionState::WaitForStart,
        MissionState::WaypointNavigation,
        MissionState::WaypointDetection,
        MissionState::SearchPattern,
        MissionState::ReturnHome,
        MissionState::Land,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MissionState::PrepareTakeoff => "PrepareTakeoff",
            MissionState::WaitForStart => "WaitForStart",
            MissionState::WaypointNavigation => "WaypointNavigation",
            MissionState::WaypointDetection => "WaypointDetection",
            MissionState::SearchPattern => "SearchPattern",
            MissionState::ReturnHome => "ReturnHome",
            MissionState::Land => "Land",
        }
    }
}

impl fmt::Display for MissionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MissionState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        MissionState::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mission state {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionEvent {
    TakeoffSuccess,
    StartMission,
    WaypointReached,
    Detection,
    DetectionTooFarOrNone,
    SearchCompleteOrTimeout,
    AllWaypointsCleared,
    HomeReached,
    ReturnHomeService,
}

impl MissionEvent {
    pub const ALL: [MissionEvent; 9] = [
        MissionEvent::TakeoffSuccess,
        MissionEvent::StartMission,
        MissionEvent::WaypointReached,
        MissionEvent::Detection,
        MissionEvent::DetectionTooFarOrNone,
        MissionEvent::SearchCompleteOrTimeout,
        MissionEvent::AllWaypointsCleared,
        MissionEvent::HomeReached,
        MissionEvent::ReturnHomeService,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MissionEvent::TakeoffSuccess => "takeoff_success",
            MissionEvent::StartMission => "start_mission",
            MissionEvent::WaypointReached => "waypoint_reached",
            MissionEvent::Detection => "detection",
            MissionEvent::DetectionTooFarOrNone => "detection_too_far_or_none",
            MissionEvent::SearchCompleteOrTimeout => "search_complete_or_timeout",
            MissionEvent::AllWaypointsCleared => "all_waypoints_cleared",
            MissionEvent::HomeReached => "home_reached",
            MissionEvent::ReturnHomeService => "return_home_service",
        }
    }
}

impl fmt::Display for MissionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MissionEvent {
    type Err = Error;

    /// Accepts the snake_case names and `returnHomeSrv`.
    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "returnHomeSrv" {
            return Ok(MissionEvent::ReturnHomeService);
        }
        MissionEvent::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::UnknownEvent(s.to_string()))
    }
}

use MissionEvent as E;
use MissionState as S;

/// Every edge of the state machine as `(from, event, to)`.
pub const TRANSITIONS: [(MissionState, MissionEvent, MissionState); 10] = [
    (S::PrepareTakeoff, E::TakeoffSuccess, S::WaitForStart),
    (S::WaitForStart, E::StartMission, S::WaypointNavigation),
    (S::WaypointNavigation, E::WaypointReached, S::WaypointDetection),
    (S::WaypointDetection, E::Detection, S::WaypointNavigation),
    (S::WaypointDetection, E::DetectionTooFarOrNone, S::SearchPattern),
    (S::SearchPattern, E::SearchCompleteOrTimeout, S::WaypointNavigation),
    (S::WaypointNavigation, E::AllWaypointsCleared, S::ReturnHome),
    (S::ReturnHome, E::HomeReached, S::Land),
    (S::WaypointNavigation, E::ReturnHomeService, S::ReturnHome),
    (S::SearchPattern, E::ReturnHomeService, S::ReturnHome),
];

/// Next state, or `None` when the machine has no such edge (the event is
/// then ignored and the state kept).
pub fn fsm_step(state: MissionState, event: MissionEvent) -> Option<MissionState> {
    match (state, event) {
        (S::PrepareTakeoff, E::TakeoffSuccess) => Some(S::WaitForStart),
        (S::WaitForStart, E::StartMission) => Some(S::WaypointNavigation),
        (S::WaypointNavigation, E::WaypointReached) => Some(S::WaypointDetection),
        (S::WaypointDetection, E::Detection) => Some(S::WaypointNavigation),
        (S::WaypointDetection, E::DetectionTooFarOrNone) => Some(S::SearchPattern),
        (S::SearchPattern, E::SearchCompleteOrTimeout) => Some(S::WaypointNavigation),
        (S::WaypointNavigation, E::AllWaypointsCleared) => Some(S::ReturnHome),
        (S::ReturnHome, E::HomeReached) => Some(S::Land),
        (S::WaypointNavigation | S::SearchPattern, E::ReturnHomeService) => Some(S::ReturnHome),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_names_parse() {
        for e in MissionEvent::ALL {
            assert_eq!(e.name().parse::<MissionEvent>().unwrap(), e);
        }
        assert_eq!("returnHomeSrv".parse::<MissionEvent>().unwrap(), E::ReturnHomeService);
        assert!(matches!("fly_away".parse::<MissionEvent>(), Err(Error::UnknownEvent(_))));
        for s in MissionState::ALL {
            assert_eq!(s.name().parse::<MissionState>().unwrap(), s);
        }
    }

    #[test]
    fn figure_edges() {
        assert_eq!(fsm_step(S::WaypointNavigation, E::AllWaypointsCleared), Some(S::ReturnHome));
        assert_eq!(fsm_step(S::WaypointDetection, E::Detection), Some(S::WaypointNavigation));
        assert_eq!(fsm_step(S::Land, E::StartMission), None);
    }
}
