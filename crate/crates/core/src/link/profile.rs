use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::time::{Nanos, MS};

const BUILTIN_PROFILES: &str = include_str!("../../config/profiles-calibrated.toml");

const REQUIRED_FIELDS: &[&str] = &[
    "name",
    "standard",
    "data_rate_mbps",
    "base_latency_ms",
    "loss_prob",
    "retx_timeout_ms",
    "retx_limit",
    "topology",
];

/// Upper bound on the distance-scaling factor applied to `loss_prob`.
pub const LOSS_SCALE_CAP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Standard {
    WifiBgn,
    WifiNAc,
    Private,
    #[serde(rename = "CELL_4G")]
    Cell4g,
    Lan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Topology {
    P2p,
    P2m,
    Mesh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub name: String,
    pub standard: Standard,
    pub data_rate_mbps: f64,
    /// `None` means unlimited (wired backhaul, cellular).
    #[serde(default)]
    pub max_range_m: Option<f64>,
    pub base_latency_ms: f64,
    pub loss_prob: f64,
    pub retx_timeout_ms: f64,
    pub retx_limit: u32,
    pub topology: BTreeSet<Topology>,
    /// Mesh works out of the box rather than through third-party firmware.
    #[serde(default)]
    pub native_mesh: bool,
    /// Window for re-association with a new access point during handover.
    #[serde(default)]
    pub assoc_min_ms: f64,
    #[serde(default)]
    pub assoc_max_ms: f64,
    #[serde(default)]
    pub loss_distance_scaling: bool,
    #[serde(default)]
    pub range_is_estimate: bool,
}

impl LinkProfile {
    /// A lossless, zero-latency link with the given rate and unlimited range.
    pub fn ideal(name: &str, data_rate_mbps: f64) -> Self {
        Self {
            name: name.to_string(),
            standard: Standard::Lan,
            data_rate_mbps,
            max_range_m: None,
            base_latency_ms: 0.0,
            loss_prob: 0.0,
            retx_timeout_ms: 0.0,
            retx_limit: 0,
            topology: [Topology::P2p, Topology::P2m, Topology::Mesh].into_iter().collect(),
            native_mesh: true,
            assoc_min_ms: 0.0,
            assoc_max_ms: 0.0,
            loss_distance_scaling: false,
            range_is_estimate: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(format!("loss_prob {} outside [0, 1]", self.loss_prob));
        }
        if !(self.data_rate_mbps > 0.0) || !self.data_rate_mbps.is_finite() {
            return Err(format!("data_rate_mbps must be positive, got {}", self.data_rate_mbps));
        }
        if let Some(r) = self.max_range_m {
            if !(r >= 0.0) {
                return Err(format!("max_range_m must be non-negative, got {r}"));
            }
        }
        for (field, v) in [
            ("base_latency_ms", self.base_latency_ms),
            ("retx_timeout_ms", self.retx_timeout_ms),
            ("assoc_min_ms", self.assoc_min_ms),
            ("assoc_max_ms", self.assoc_max_ms),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{field} must be a non-negative number, got {v}"));
            }
        }
        if self.assoc_max_ms < self.assoc_min_ms {
            return Err("assoc_max_ms is below assoc_min_ms".into());
        }
        Ok(())
    }

    pub fn supports(&self, topology: Topology) -> bool {
        self.topology.contains(&topology)
    }

    pub fn in_range(&self, distance_m: f64) -> bool {
        self.max_range_m.map_or(true, |r| distance_m <= r)
    }

    /// Time to clock `bytes` onto the medium, rounded up to whole nanoseconds.
    pub fn serialization_ns(&self, bytes: usize) -> Nanos {
        ((bytes as f64) * 8.0 * 1000.0 / self.data_rate_mbps).ceil() as Nanos
    }

    pub fn base_latency_ns(&self) -> Nanos {
        (self.base_latency_ms * MS as f64).round() as Nanos
    }

    pub fn retx_timeout_ns(&self) -> Nanos {
        (self.retx_timeout_ms * MS as f64).round() as Nanos
    }

    /// Per-attempt loss probability at `distance_m`.
    pub fn loss_at(&self, distance_m: f64) -> f64 {
        match (self.loss_distance_scaling, self.max_range_m) {
            (true, Some(range)) if range > 0.0 => {
                let scale = (distance_m / range).powi(2).min(LOSS_SCALE_CAP);
                (self.loss_prob * scale).min(1.0)
            }
            _ => self.loss_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("missing required field `{path}`")]
    MissingField { path: String },
    #[error("invalid value at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
}

pub type ProfileSet = BTreeMap<String, LinkProfile>;

fn parse_profiles(text: &str) -> Result<Vec<LinkProfile>, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let Some(entries) = table.get("profile") else {
        return Ok(Vec::new());
    };
    let entries = entries
        .as_array()
        .ok_or_else(|| ConfigError::Invalid { path: "profile".into(), reason: "expected an array of tables".into() })?;
    let mut out = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let tbl = entry
            .as_table()
            .ok_or_else(|| ConfigError::Invalid { path: format!("profile[{i}]"), reason: "expected a table".into() })?;
        for field in REQUIRED_FIELDS {
            if !tbl.contains_key(*field) {
                return Err(ConfigError::MissingField { path: format!("profile[{i}].{field}") });
            }
        }
        let profile: LinkProfile = entry.clone().try_into().map_err(|e: toml::de::Error| ConfigError::Invalid {
            path: format!("profile[{i}]"),
            reason: e.message().to_string(),
        })?;
        profile.validate().map_err(|reason| ConfigError::Invalid { path: format!("profile[{i}]"), reason })?;
        out.push(profile);
    }
    Ok(out)
}

/// The shipped, calibrated profiles.
pub fn builtin_profiles() -> ProfileSet {
    parse_profiles(BUILTIN_PROFILES)
        .expect("built-in profile file is valid")
        .into_iter()
        .map(|p| (p.name.clone(), p))
        .collect()
}

/// Built-in profiles plus the entries of a user profile file. A user entry
/// with a built-in name replaces the built-in.
pub fn load_profiles(text: &str) -> Result<ProfileSet, ConfigError> {
    let mut set = builtin_profiles();
    for p in parse_profiles(text)? {
        set.insert(p.name.clone(), p);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasheet_values() {
        let set = load_profiles("").unwrap();
        let tp = &set["TPLink WR902AC"];
        assert_eq!(tp.data_rate_mbps, 300.0);
        assert_eq!(tp.max_range_m, Some(433.0));
        let mh = &set["Microhard pMDDL2450"];
        assert_eq!(mh.data_rate_mbps, 25.0);
        assert!(mh.supports(Topology::Mesh) && mh.native_mesh);
        assert!(!set["AlfaTube 2H"].native_mesh);
        assert!(set["AlfaTube 2H"].range_is_estimate);
        assert_eq!(set["Ubiquiti Bullet M2"].data_rate_mbps, 100.0);
        assert_eq!(set["JioFi JMR540"].max_range_m, None);
        assert_eq!(set["JioFi JMR540"].standard, Standard::Cell4g);
    }

    #[test]
    fn alfatube_is_the_conservative_retransmitter() {
        let set = builtin_profiles();
        let alfa = &set["AlfaTube 2H"];
        for other in ["Ubiquiti Bullet M2", "TPLink WR902AC"] {
            assert!(alfa.retx_timeout_ms > set[other].retx_timeout_ms);
            assert!(alfa.retx_limit > set[other].retx_limit);
        }
        assert!(alfa.base_latency_ms > set["Ubiquiti Bullet M2"].base_latency_ms);
    }

    #[test]
    fn missing_field_reports_path() {
        let text = r#"
[[profile]]
name = "custom"
standard = "WIFI_BGN"
base_latency_ms = 1.0
loss_prob = 0.0
retx_timeout_ms = 1.0
retx_limit = 0
topology = ["P2P"]
"#;
        assert_eq!(load_profiles(text), Err(ConfigError::MissingField { path: "profile[0].data_rate_mbps".into() }));
    }

    #[test]
    fn user_additions_and_invariants() {
        let text = r#"
[[profile]]
name = "custom"
standard = "PRIVATE"
data_rate_mbps = 10
base_latency_ms = 1.0
loss_prob = 0.2
retx_timeout_ms = 1.0
retx_limit = 2
topology = ["P2P", "MESH"]
"#;
        let set = load_profiles(text).unwrap();
        assert_eq!(set.len(), builtin_profiles().len() + 1);
        assert_eq!(set["custom"].max_range_m, None);

        let bad = text.replace("loss_prob = 0.2", "loss_prob = 1.5");
        assert!(matches!(load_profiles(&bad), Err(ConfigError::Invalid { .. })));
        assert!(matches!(load_profiles("[[profile"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn serialization_time_is_exact() {
        let p = LinkProfile::ideal("x", 300.0);
        // 1500 B * 8 / 300e6 s = 40 us
        assert_eq!(p.serialization_ns(1500), 40_000);
        let p = LinkProfile::ideal("x", 100.0);
        assert_eq!(p.serialization_ns(16384), 1_310_720);
    }

    #[test]
    fn distance_scaled_loss_is_capped() {
        let mut p = LinkProfile::ideal("x", 10.0);
        p.max_range_m = Some(100.0);
        p.loss_prob = 0.1;
        assert_eq!(p.loss_at(500.0), 0.1);
        p.loss_distance_scaling = true;
        assert!((p.loss_at(50.0) - 0.025).abs() < 1e-12);
        assert!((p.loss_at(1000.0) - 0.4).abs() < 1e-12);
    }
}
