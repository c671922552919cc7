//! Scenario files.
//!
//! ```toml
//! name = "patrol"
//! seed = 7
//! duration_s = 120.0
//! mesh_profile = "Microhard pMDDL2450"
//!
//! [[gateway]]
//! id = "GW-1"
//! position = [0.0, 0.0, 2.0]
//!
//! [[uav]]
//! id = "UAV-1"
//! position = [150.0, 0.0, 20.0]
//! join_at_s = 5.0
//!
//! [[event]]
//! at_s = 30.0
//! kind = "command"
//! target = "UAV-1"
//! service = "ARM_THROTTLE"
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::link::{load_profiles, LinkProfile, ProfileSet};
use crate::message::{NodeId, NodeKind, ServiceName};
use crate::time::{from_secs, Nanos};

fn default_mesh() -> String {
    "Microhard pMDDL2450".into()
}

fn default_lan() -> String {
    "LAN".into()
}

fn default_hz() -> f64 {
    3.0
}

fn default_battery() -> f64 {
    12.6
}

fn default_speed() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub id: NodeId,
    pub position: [f64; 3],
    /// Radio towards the swarm; the scenario mesh profile when absent.
    #[serde(default)]
    pub profile: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSpec {
    pub id: NodeId,
    pub position: [f64; 3],
    #[serde(default)]
    pub waypoints: Vec<[f64; 3]>,
    #[serde(default = "default_speed")]
    pub speed_mps: f64,
    #[serde(default)]
    pub join_at_s: f64,
    #[serde(default = "default_battery")]
    pub battery_v: f64,
    /// Telemetry rate for the standard topics; the scenario rate when absent.
    #[serde(default)]
    pub topic_hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    /// A GCS client issues a command through the service layer.
    Command {
        target: NodeId,
        service: ServiceName,
        #[serde(default)]
        args: Option<String>,
    },
    /// All links of the node go down.
    FailNode {
        node: NodeId,
    },
    RecoverNode {
        node: NodeId,
    },
    FailLink {
        a: NodeId,
        b: NodeId,
    },
    RecoverLink {
        a: NodeId,
        b: NodeId,
    },
    /// Appends waypoints to a UAV's path.
    Waypoints {
        uav: NodeId,
        points: Vec<[f64; 3]>,
        #[serde(default)]
        speed_mps: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_mesh")]
    pub mesh_profile: String,
    #[serde(default = "default_lan")]
    pub lan_profile: String,
    #[serde(default = "default_hz")]
    pub topic_hz: f64,
    #[serde(default, rename = "gateway")]
    pub gateways: Vec<GatewaySpec>,
    #[serde(default, rename = "uav")]
    pub uavs: Vec<UavSpec>,
    #[serde(default, rename = "event")]
    pub events: Vec<EventSpec>,
    /// Extra `[[profile]]` tables, merged over the built-in ones.
    #[serde(default, rename = "profile", skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<toml::Value>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn duration(&self) -> Nanos {
        from_secs(self.duration_s)
    }

    /// Built-in profiles plus the scenario's own.
    pub fn profile_set(&self) -> Result<ProfileSet, ScenarioError> {
        let mut doc = toml::Table::new();
        doc.insert("profile".into(), toml::Value::Array(self.profiles.clone()));
        load_profiles(&toml::to_string(&doc).expect("table serializes"))
            .map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn profile(&self, name: &str) -> Result<LinkProfile, ScenarioError> {
        self.profile_set()?.get(name).cloned().ok_or_else(|| ScenarioError::UnknownProfile(name.to_string()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.topic_hz.is_finite() && self.topic_hz > 0.0) {
            return bad("topic_hz must be positive".into());
        }
        let profiles = self.profile_set()?;
        let need = |name: &str| {
            if profiles.contains_key(name) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownProfile(name.to_string()))
            }
        };
        need(&self.mesh_profile)?;
        need(&self.lan_profile)?;
        if self.gateways.is_empty() {
            return bad("at least one gateway is required".into());
        }
        let mut ids = BTreeSet::new();
        for g in &self.gateways {
            if g.id.kind != NodeKind::Gateway {
                return bad(format!("{} is not a gateway id", g.id));
            }
            if let Some(p) = &g.profile {
                need(p)?;
            }
            if !ids.insert(g.id) {
                return bad(format!("duplicate node {}", g.id));
            }
        }
        for u in &self.uavs {
            if u.id.kind != NodeKind::Uav {
                return bad(format!("{} is not a UAV id", u.id));
            }
            if !ids.insert(u.id) {
                return bad(format!("duplicate node {}", u.id));
            }
            if u.join_at_s < 0.0 || u.speed_mps <= 0.0 || u.topic_hz.is_some_and(|h| !(h > 0.0)) {
                return bad(format!("{}: join time, speed and rate must be positive", u.id));
            }
        }
        let uav_ids: BTreeSet<NodeId> = self.uavs.iter().map(|u| u.id).collect();
        for (i, e) in self.events.iter().enumerate() {
            if !(e.at_s >= 0.0 && e.at_s.is_finite()) {
                return bad(format!("event[{i}]: negative time"));
            }
            let known = |n: &NodeId| ids.contains(n);
            let ok = match &e.kind {
                EventKind::Command { target, .. } => uav_ids.contains(target),
                EventKind::FailNode { node } | EventKind::RecoverNode { node } => known(node),
                EventKind::FailLink { a, b } | EventKind::RecoverLink { a, b } => known(a) && known(b) && a != b,
                EventKind::Waypoints { uav, .. } => uav_ids.contains(uav),
            };
            if !ok {
                return bad(format!("event[{i}] refers to an unknown node"));
            }
        }
        Ok(())
    }
}
