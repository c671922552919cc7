use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GatewayState {
    Unconfigured,
    Addressed,
    Forwarding,
    Restarted,
    Masquerading,
    Running,
}

impl fmt::Display for GatewayState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GatewayState::Unconfigured => "UNCONFIGURED",
            GatewayState::Addressed => "ADDRESSED",
            GatewayState::Forwarding => "FORWARDING",
            GatewayState::Restarted => "RESTARTED",
            GatewayState::Masquerading => "MASQUERADING",
            GatewayState::Running => "RUNNING",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UplinkKind {
    Lan,
    #[serde(rename = "CELL_4G")]
    Cell4g,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterfaceConfig {
    pub name: String,
    /// Name of the link profile of the attached radio module.
    pub profile: String,
    pub address: Ipv4Addr,
    pub netmask: Ipv4Addr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dns: Option<Ipv4Addr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UplinkConfig {
    pub kind: UplinkKind,
    pub address: Ipv4Addr,
    pub netmask: Ipv4Addr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub interfaces: Vec<InterfaceConfig>,
    pub uplink: UplinkConfig,
    #[serde(default)]
    pub forwarding_enabled: bool,
    #[serde(default)]
    pub masquerade_enabled: bool,
    #[serde(default)]
    pub rules_persisted: bool,
    #[serde(default = "unconfigured")]
    pub state: GatewayState,
}

fn unconfigured() -> GatewayState {
    GatewayState::Unconfigured
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("configuration step {step} failed: {reason}")]
    Config { step: u8, reason: String },
    #[error("gateway is {0}, not RUNNING")]
    NotRunning(GatewayState),
}

/// Host operations behind the configuration procedure.
pub trait SystemOps {
    fn assign_address(&mut self, iface: &InterfaceConfig) -> Result<(), String>;
    fn enable_forwarding(&mut self) -> Result<(), String>;
    /// Bounces every ingress interface; pending frames are discarded.
    fn restart_interfaces(&mut self) -> Result<(), String>;
    fn enable_masquerade(&mut self, uplink: &UplinkConfig) -> Result<(), String>;
    fn persist_rules(&mut self) -> Result<(), String>;
}

/// In-memory host: records the operations it saw and can be told to fail one step.
#[derive(Clone, Debug, Default)]
pub struct RecordingOps {
    pub calls: Vec<String>,
    pub fail_step: Option<u8>,
}

impl RecordingOps {
    fn step(&mut self, n: u8, what: String) -> Result<(), String> {
        if self.fail_step == Some(n) {
            return Err(format!("{what}: injected failure"));
        }
        self.calls.push(what);
        Ok(())
    }
}

impl SystemOps for RecordingOps {
    fn assign_address(&mut self, iface: &InterfaceConfig) -> Result<(), String> {
        self.step(1, format!("addr {} {}/{}", iface.name, iface.address, iface.netmask))
    }
    fn enable_forwarding(&mut self) -> Result<(), String> {
        self.step(2, "ip_forward=1".into())
    }
    fn restart_interfaces(&mut self) -> Result<(), String> {
        self.step(3, "restart".into())
    }
    fn enable_masquerade(&mut self, uplink: &UplinkConfig) -> Result<(), String> {
        self.step(4, format!("masquerade via {}", uplink.address))
    }
    fn persist_rules(&mut self) -> Result<(), String> {
        self.step(5, "persist".into())
    }
}

fn mask_ok(mask: Ipv4Addr) -> bool {
    let m = u32::from(mask);
    m.leading_ones() + m.trailing_zeros() == 32
}

fn same_subnet(a: Ipv4Addr, b: Ipv4Addr, mask: Ipv4Addr) -> bool {
    let m = u32::from(mask);
    u32::from(a) & m == u32::from(b) & m
}

impl GatewayConfig {
    pub fn new(interfaces: Vec<InterfaceConfig>, uplink: UplinkConfig) -> Self {
        Self {
            interfaces,
            uplink,
            forwarding_enabled: false,
            masquerade_enabled: false,
            rules_persisted: false,
            state: GatewayState::Unconfigured,
        }
    }

    /// Addressing pre-checks: unique names and addresses, valid masks, and no
    /// interface inside the uplink subnet.
    pub fn check_addresses(&self) -> Result<(), String> {
        if self.interfaces.is_empty() {
            return Err("no ingress interfaces".into());
        }
        if !mask_ok(self.uplink.netmask) {
            return Err(format!("uplink netmask {} is not contiguous", self.uplink.netmask));
        }
        let mut names = BTreeSet::new();
        let mut addrs = BTreeSet::from([self.uplink.address]);
        for i in &self.interfaces {
            if !names.insert(i.name.as_str()) {
                return Err(format!("duplicate interface name {}", i.name));
            }
            if !mask_ok(i.netmask) {
                return Err(format!("{}: netmask {} is not contiguous", i.name, i.netmask));
            }
            if !addrs.insert(i.address) {
                return Err(format!("{}: duplicate address {}", i.name, i.address));
            }
            if same_subnet(i.address, self.uplink.address, self.uplink.netmask) {
                return Err(format!("{}: address {} lies in the uplink subnet", i.name, i.address));
            }
        }
        Ok(())
    }

    pub fn is_running(&self) -> bool {
        self.state == GatewayState::Running
    }

    /// Runs the five configuration steps in order, skipping those already
    /// done. On failure the state stays at the last completed step.
    pub fn configure(&mut self, ops: &mut dyn SystemOps) -> Result<(), GatewayError> {
        use GatewayState::*;
        let fail = |step: u8| move |reason: String| GatewayError::Config { step, reason };
        if self.state < Addressed {
            self.check_addresses().map_err(fail(1))?;
            for i in &self.interfaces {
                ops.assign_address(i).map_err(fail(1))?;
            }
            self.state = Addressed;
        }
        if self.state < Forwarding {
            ops.enable_forwarding().map_err(fail(2))?;
            self.forwarding_enabled = true;
            self.state = Forwarding;
        }
        if self.state < Restarted {
            ops.restart_interfaces().map_err(fail(3))?;
            self.state = Restarted;
        }
        if self.state < Masquerading {
            ops.enable_masquerade(&self.uplink).map_err(fail(4))?;
            self.masquerade_enabled = true;
            self.state = Masquerading;
        }
        if self.state < Running {
            ops.persist_rules().map_err(fail(5))?;
            self.rules_persisted = true;
            self.state = Running;
        }
        debug_assert!(self.forwarding_enabled && self.masquerade_enabled && self.rules_persisted);
        Ok(())
    }

    /// The four-module testbed gateway with a 4G uplink.
    pub fn testbed() -> Self {
        let iface = |n: u8, name: &str, profile: &str| InterfaceConfig {
            name: name.into(),
            profile: profile.into(),
            address: Ipv4Addr::new(10, 0, n, 1),
            netmask: Ipv4Addr::new(255, 255, 255, 0),
            dns: Some(Ipv4Addr::new(10, 0, n, 1)),
        };
        Self::new(
            vec![
                iface(1, "wlan0", "AlfaTube 2H"),
                iface(2, "wlan1", "Ubiquiti Bullet M2"),
                iface(3, "wlan2", "TPLink WR902AC"),
                iface(4, "mesh0", "Microhard pMDDL2450"),
            ],
            UplinkConfig {
                kind: UplinkKind::Cell4g,
                address: Ipv4Addr::new(192, 168, 225, 2),
                netmask: Ipv4Addr::new(255, 255, 255, 0),
            },
        )
    }
}
