use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::link::Mobility;
use crate::message::Telemetry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FlightMode {
    Stabilize,
    Guided,
    Auto,
    Land,
}

impl fmt::Display for FlightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlightMode::Stabilize => "STABILIZE",
            FlightMode::Guided => "GUIDED",
            FlightMode::Auto => "AUTO",
            FlightMode::Land => "LAND",
        })
    }
}

impl FromStr for FlightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "STABILIZE" => Ok(FlightMode::Stabilize),
            "GUIDED" => Ok(FlightMode::Guided),
            "AUTO" => Ok(FlightMode::Auto),
            "LAND" => Ok(FlightMode::Land),
            other => Err(format!("unknown flight mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutopilotConfig {
    pub battery_drain_v_per_min: f64,
    /// Time for the flight controller to apply and confirm a command.
    pub state_change_ms: u64,
    pub takeoff_altitude_m: f64,
    pub climb_rate_mps: f64,
    pub descent_rate_mps: f64,
    /// Geodetic origin of the local ENU frame.
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
}

impl Default for AutopilotConfig {
    fn default() -> Self {
        Self {
            battery_drain_v_per_min: 0.05,
            state_change_ms: 30,
            takeoff_altitude_m: 10.0,
            climb_rate_mps: 2.0,
            descent_rate_mps: 1.5,
            origin_lat_deg: 26.5123,
            origin_lon_deg: 80.2329,
        }
    }
}

/// Coarse autopilot state. The flight controller itself is not modelled;
/// motion is waypoint following at constant speed.
#[derive(Clone, Debug, PartialEq)]
pub struct FlightState {
    pub armed: bool,
    pub mode: FlightMode,
    pub airborne: bool,
    pub battery_voltage: f64,
    pub mobility: Mobility,
    pub yaw_rad: f64,
    pub target_altitude_m: f64,
}

const EARTH_RADIUS_M: f64 = 6_371_000.0;

impl FlightState {
    pub fn on_ground(position: [f64; 3], battery_voltage: f64) -> Self {
        Self {
            armed: false,
            mode: FlightMode::Stabilize,
            airborne: false,
            battery_voltage,
            mobility: Mobility::fixed(position),
            yaw_rad: 0.0,
            target_altitude_m: 0.0,
        }
    }

    /// Armed, airborne and following `mobility`.
    pub fn flying(mobility: Mobility, battery_voltage: f64) -> Self {
        let target_altitude_m = mobility.position[2];
        Self {
            armed: true,
            mode: FlightMode::Auto,
            airborne: true,
            battery_voltage,
            mobility,
            yaw_rad: 0.0,
            target_altitude_m,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        self.mobility.position
    }

    pub fn orientation(&self) -> [f64; 4] {
        let half = self.yaw_rad / 2.0;
        [half.cos(), 0.0, 0.0, half.sin()]
    }

    /// Advances motion and battery by `dt_s` seconds.
    pub fn step(&mut self, dt_s: f64, cfg: &AutopilotConfig) {
        debug_assert!(dt_s >= 0.0);
        self.battery_voltage = (self.battery_voltage - cfg.battery_drain_v_per_min * dt_s / 60.0).max(0.0);
        if !(self.armed && self.airborne) {
            return;
        }
        let alt = self.mobility.position[2];
        if self.mode == FlightMode::Land {
            let next = (alt - cfg.descent_rate_mps * dt_s).max(0.0);
            self.mobility.position[2] = next;
            if next == 0.0 {
                self.airborne = false;
            }
            return;
        }
        if alt < self.target_altitude_m {
            self.mobility.position[2] = (alt + cfg.climb_rate_mps * dt_s).min(self.target_altitude_m);
            return;
        }
        let before = self.mobility.position;
        self.mobility.step(dt_s);
        let (de, dn) = (self.mobility.position[0] - before[0], self.mobility.position[1] - before[1]);
        if de != 0.0 || dn != 0.0 {
            self.yaw_rad = de.atan2(dn);
        }
    }

    pub fn telemetry(&self, timestamp_ms: u64, cfg: &AutopilotConfig) -> Telemetry {
        let [east, north, up] = self.mobility.position;
        let lat0 = cfg.origin_lat_deg.to_radians();
        let lat = cfg.origin_lat_deg + (north / EARTH_RADIUS_M).to_degrees();
        let lon = cfg.origin_lon_deg + (east / (EARTH_RADIUS_M * lat0.cos())).to_degrees();
        Telemetry {
            position: [lat, lon, up.max(0.0)],
            orientation: self.orientation(),
            battery_voltage: self.battery_voltage,
            timestamp: timestamp_ms,
        }
    }
}
