//! Topology description files: switches, hosts, and links, loaded from
//! JSON and validated before a network is built from them.
//!
//! Link endpoints are written as `s<switch>:<port>` for a switch port or
//! as a bare host id. Port 0 is reserved for the CPU port on every
//! switch and may not be cabled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::dataplane::IntRole;
use crate::packet::MacAddr;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse topology: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid topology: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
pub struct SwitchDecl {
    pub id: u32,
    pub proc_latency_us: u32,
    pub int_role: IntRole,
}

#[derive(Debug, Clone, Deserialize)]
pub struct HostDecl {
    pub id: String,
    pub mac: String,
    pub ip: String,
    pub switch: u32,
    pub port: u16,
    pub swarm_id: String,
    pub capabilities: u16,
    pub cpu_load_pct: u8,
    pub loc_x: i16,
    pub loc_y: i16,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LinkDecl {
    pub a: String,
    pub b: String,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TopologyFile {
    pub switches: Vec<SwitchDecl>,
    pub hosts: Vec<HostDecl>,
    pub links: Vec<LinkDecl>,
}

/// One end of a link.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Endpoint {
    Host(String),
    SwitchPort { switch_id: u32, port: u16 },
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Host(h) => write!(f, "{h}"),
            Endpoint::SwitchPort { switch_id, port } => write!(f, "s{switch_id}:{port}"),
        }
    }
}

/// Validated host record with parsed addresses and its stable numeric
/// node id (1-based position in the hosts list), used when the host
/// embeds node metadata as an INT source.
#[derive(Debug, Clone)]
pub struct Host {
    pub id: String,
    pub node_id: u32,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub switch: u32,
    pub port: u16,
    pub swarm_id: String,
    pub capabilities: u16,
    pub cpu_load_pct: u8,
    pub loc_x: i16,
    pub loc_y: i16,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub a: Endpoint,
    pub b: Endpoint,
    pub latency_us: u64,
}

impl Link {
    /// Canonical `a-b` form used by scenario directives.
    pub fn label(&self) -> String {
        format!("{}-{}", self.a, self.b)
    }
}

/// A validated topology, the input to both the simulator and the
/// controller bootstrap.
#[derive(Debug, Clone)]
pub struct Topology {
    pub switches: Vec<SwitchDecl>,
    pub hosts: Vec<Host>,
    pub links: Vec<Link>,
}

impl Topology {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let file: TopologyFile = serde_json::from_str(text)?;
        Self::from_decls(file)
    }

    pub fn from_decls(file: TopologyFile) -> Result<Self, TopologyError> {
        let invalid = |msg: String| TopologyError::Invalid(msg);

        let mut switch_ids = BTreeSet::new();
        for sw in &file.switches {
            if !switch_ids.insert(sw.id) {
                return Err(invalid(format!("duplicate switch id {}", sw.id)));
            }
            if sw.proc_latency_us == 0 {
                return Err(invalid(format!("switch {} needs proc_latency_us >= 1", sw.id)));
            }
        }

        let mut hosts = Vec::with_capacity(file.hosts.len());
        let mut host_ids = BTreeSet::new();
        let mut ips = BTreeSet::new();
        let mut macs = BTreeSet::new();
        for (idx, h) in file.hosts.iter().enumerate() {
            if h.id.is_empty() {
                return Err(invalid("empty host id".into()));
            }
            if !host_ids.insert(h.id.clone()) {
                return Err(invalid(format!("duplicate host id {}", h.id)));
            }
            let mac = MacAddr::from_str(&h.mac)
                .map_err(|e| invalid(format!("host {}: {e}", h.id)))?;
            let ip: Ipv4Addr = h
                .ip
                .parse()
                .map_err(|_| invalid(format!("host {}: bad ip {:?}", h.id, h.ip)))?;
            if !ips.insert(ip) {
                return Err(invalid(format!("duplicate host ip {ip}")));
            }
            if !macs.insert(mac) {
                return Err(invalid(format!("duplicate host mac {mac}")));
            }
            if !switch_ids.contains(&h.switch) {
                return Err(invalid(format!("host {} attaches to unknown switch {}", h.id, h.switch)));
            }
            if h.port == 0 {
                return Err(invalid(format!("host {} uses reserved port 0", h.id)));
            }
            if h.cpu_load_pct > 100 {
                return Err(invalid(format!("host {}: cpu_load_pct above 100", h.id)));
            }
            if h.swarm_id.is_empty() {
                return Err(invalid(format!("host {}: empty swarm_id", h.id)));
            }
            hosts.push(Host {
                id: h.id.clone(),
                node_id: (idx + 1) as u32,
                mac,
                ip,
                switch: h.switch,
                port: h.port,
                swarm_id: h.swarm_id.clone(),
                capabilities: h.capabilities,
                cpu_load_pct: h.cpu_load_pct,
                loc_x: h.loc_x,
                loc_y: h.loc_y,
            });
        }

        let mut links = Vec::with_capacity(file.links.len());
        let mut used_ports: BTreeSet<(u32, u16)> = BTreeSet::new();
        let mut linked_hosts: BTreeSet<String> = BTreeSet::new();
        for l in &file.links {
            let a = parse_endpoint(&l.a, &switch_ids, &host_ids)?;
            let b = parse_endpoint(&l.b, &switch_ids, &host_ids)?;
            for ep in [&a, &b] {
                if let Endpoint::SwitchPort { switch_id, port } = ep {
                    if *port == 0 {
                        return Err(invalid(format!("link uses reserved port 0 on switch {switch_id}")));
                    }
                    if !used_ports.insert((*switch_id, *port)) {
                        return Err(invalid(format!("switch {switch_id} port {port} has two links")));
                    }
                }
            }
            match (&a, &b) {
                (Endpoint::Host(_), Endpoint::Host(_)) => {
                    return Err(invalid(format!("link {}-{} connects two hosts", l.a, l.b)));
                }
                (
                    Endpoint::SwitchPort { switch_id: sa, .. },
                    Endpoint::SwitchPort { switch_id: sb, .. },
                ) if sa == sb => {
                    return Err(invalid(format!("link {}-{} loops on switch {sa}", l.a, l.b)));
                }
                _ => {}
            }
            for (host_ep, sw_ep) in [(&a, &b), (&b, &a)] {
                if let (Endpoint::Host(hid), Endpoint::SwitchPort { switch_id, port }) =
                    (host_ep, sw_ep)
                {
                    let host = hosts.iter().find(|h| &h.id == hid).unwrap();
                    if host.switch != *switch_id || host.port != *port {
                        return Err(invalid(format!(
                            "host {hid} is declared on s{}:{} but linked to s{switch_id}:{port}",
                            host.switch, host.port
                        )));
                    }
                    if !linked_hosts.insert(hid.clone()) {
                        return Err(invalid(format!("host {hid} has two links")));
                    }
                }
            }
            links.push(Link { a, b, latency_us: l.latency_us });
        }
        for h in &hosts {
            if !linked_hosts.contains(&h.id) {
                return Err(invalid(format!("host {} has no link to its switch", h.id)));
            }
        }

        Ok(Topology { switches: file.switches, hosts, links })
    }

    pub fn host(&self, id: &str) -> Option<&Host> {
        self.hosts.iter().find(|h| h.id == id)
    }

    pub fn host_by_ip(&self, ip: Ipv4Addr) -> Option<&Host> {
        self.hosts.iter().find(|h| h.ip == ip)
    }

    pub fn switch(&self, id: u32) -> Option<&SwitchDecl> {
        self.switches.iter().find(|s| s.id == id)
    }

    /// Directed switch-to-switch adjacency: `(from, to) -> (egress port
    /// on from, static latency)`.
    pub fn switch_adjacency(&self) -> BTreeMap<(u32, u32), (u16, u64)> {
        let mut adj = BTreeMap::new();
        for l in &self.links {
            if let (
                Endpoint::SwitchPort { switch_id: sa, port: pa },
                Endpoint::SwitchPort { switch_id: sb, port: pb },
            ) = (&l.a, &l.b)
            {
                adj.insert((*sa, *sb), (*pa, l.latency_us));
                adj.insert((*sb, *sa), (*pb, l.latency_us));
            }
        }
        adj
    }

    /// Finds a link by its `a-b` label, in either endpoint order.
    pub fn link_index_by_label(&self, label: &str) -> Option<usize> {
        let (x, y) = label.split_once('-')?;
        self.links.iter().position(|l| {
            let (a, b) = (l.a.to_string(), l.b.to_string());
            (a == x && b == y) || (a == y && b == x)
        })
    }
}

fn parse_endpoint(
    token: &str,
    switches: &BTreeSet<u32>,
    hosts: &BTreeSet<String>,
) -> Result<Endpoint, TopologyError> {
    if let Some(rest) = token.strip_prefix('s') {
        if let Some((id, port)) = rest.split_once(':') {
            if let (Ok(id), Ok(port)) = (id.parse::<u32>(), port.parse::<u16>()) {
                if switches.contains(&id) {
                    return Ok(Endpoint::SwitchPort { switch_id: id, port });
                }
                return Err(TopologyError::Invalid(format!("endpoint {token}: unknown switch {id}")));
            }
        }
    }
    if hosts.contains(token) {
        return Ok(Endpoint::Host(token.to_string()));
    }
    Err(TopologyError::Invalid(format!("unknown endpoint {token:?}")))
}
