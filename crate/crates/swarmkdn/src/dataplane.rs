//! P4-style switch state: match-action tables, multicast groups, the
//! ingress pipeline, and INT source/transit/sink processing.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::packet::{
    emit_packet, HeaderStack, IntHopMetadata, IntStack, MacAddr, NodeMetadata, CPU_REASON_RTPS,
    INT_HOP_CAP,
};

/// A ternary match: the packet field matches when `field & mask == value`.
/// Values are normalised (`value & mask`) at construction so that entries
/// with the same match semantics compare byte-equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Ternary<const N: usize> {
    value: [u8; N],
    mask: [u8; N],
}

impl<const N: usize> Ternary<N> {
    pub fn new(value: [u8; N], mask: [u8; N]) -> Self {
        let mut v = value;
        for i in 0..N {
            v[i] &= mask[i];
        }
        Ternary { value: v, mask }
    }

    pub fn exact(value: [u8; N]) -> Self {
        Ternary { value, mask: [0xff; N] }
    }

    pub fn wildcard() -> Self {
        Ternary { value: [0; N], mask: [0; N] }
    }

    pub fn matches(&self, field: [u8; N]) -> bool {
        (0..N).all(|i| field[i] & self.mask[i] == self.value[i])
    }

    pub fn value(&self) -> [u8; N] {
        self.value
    }

    pub fn mask(&self) -> [u8; N] {
        self.mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TableId {
    Acl,
    L2,
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableId::Acl => write!(f, "acl"),
            TableId::L2 => write!(f, "l2"),
        }
    }
}

/// Ternary key of the ACL table over source IP, destination IP, and UDP
/// destination port. Packets without IPv4 never match; the port matches
/// as zero when the packet has no UDP header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AclKey {
    pub src_ip: Ternary<4>,
    pub dst_ip: Ternary<4>,
    pub udp_dst_port: Ternary<2>,
}

impl AclKey {
    /// Canonical byte form: src value/mask, dst value/mask, port value/mask.
    /// Used for tie-breaking, deterministic ordering, and the wire codec.
    pub fn key_bytes(&self) -> [u8; 20] {
        let mut out = [0u8; 20];
        out[0..4].copy_from_slice(&self.src_ip.value());
        out[4..8].copy_from_slice(&self.src_ip.mask());
        out[8..12].copy_from_slice(&self.dst_ip.value());
        out[12..16].copy_from_slice(&self.dst_ip.mask());
        out[16..18].copy_from_slice(&self.udp_dst_port.value());
        out[18..20].copy_from_slice(&self.udp_dst_port.mask());
        out
    }

    pub fn from_key_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 20 {
            return None;
        }
        Some(AclKey {
            src_ip: Ternary::new(bytes[0..4].try_into().unwrap(), bytes[4..8].try_into().unwrap()),
            dst_ip: Ternary::new(bytes[8..12].try_into().unwrap(), bytes[12..16].try_into().unwrap()),
            udp_dst_port: Ternary::new(
                bytes[16..18].try_into().unwrap(),
                bytes[18..20].try_into().unwrap(),
            ),
        })
    }

    pub fn matches(&self, pkt: &HeaderStack) -> bool {
        let Some(ipv4) = &pkt.ipv4 else { return false };
        let port = pkt.udp.as_ref().map_or(0, |u| u.dst_port);
        self.src_ip.matches(ipv4.src_ip.octets())
            && self.dst_ip.matches(ipv4.dst_ip.octets())
            && self.udp_dst_port.matches(port.to_be_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Action {
    Forward(u16),
    Drop,
    SendToCpu(u8),
    Multicast(u16),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Forward(p) => write!(f, "forward({p})"),
            Action::Drop => write!(f, "drop"),
            Action::SendToCpu(r) => write!(f, "send_to_cpu({r:#04x})"),
            Action::Multicast(g) => write!(f, "multicast({g})"),
        }
    }
}

/// One match-action entry. ACL entries carry a priority; L2 entries are
/// exact-match on destination MAC and have none.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TableEntry {
    Acl { key: AclKey, priority: u32, action: Action },
    L2 { dst_mac: MacAddr, action: Action },
}

impl TableEntry {
    pub fn table_id(&self) -> TableId {
        match self {
            TableEntry::Acl { .. } => TableId::Acl,
            TableEntry::L2 { .. } => TableId::L2,
        }
    }

    pub fn action(&self) -> Action {
        match self {
            TableEntry::Acl { action, .. } | TableEntry::L2 { action, .. } => *action,
        }
    }

    pub fn key_bytes(&self) -> Vec<u8> {
        match self {
            TableEntry::Acl { key, .. } => key.key_bytes().to_vec(),
            TableEntry::L2 { dst_mac, .. } => dst_mac.0.to_vec(),
        }
    }
}

/// Packet replication group: a set of egress ports under one id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulticastGroup {
    pub group_id: u16,
    pub egress_ports: BTreeSet<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOp {
    Insert,
    Modify,
    Delete,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableWriteError {
    #[error("entry already exists")]
    AlreadyExists,
    #[error("entry not found")]
    NotFound,
    #[error("multicast group {0} does not exist")]
    UnknownGroup(u16),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("action references unknown multicast group {0}")]
    UnknownGroup(u16),
}

/// Where the packet goes after the ingress pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardingDecision {
    Forward(u16),
    Drop,
    SendToCpu(u8),
    Multicast(u16),
}

/// Role a switch plays in the telemetry path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntRole {
    None,
    Transit,
    Sink,
}

/// Telemetry extracted at an INT sink, addressed by the flow's source IP
/// so the controller can attribute node metadata to the right host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntReport {
    pub sink_switch: u32,
    pub src_ip: Ipv4Addr,
    pub hops: Vec<IntHopMetadata>,
    pub node_meta: Option<NodeMetadata>,
}

impl IntReport {
    /// Builds a report from a parsed frame that still carries its INT
    /// stack, e.g. the pre-strip frame a sink punts to the controller.
    pub fn from_stack(sink_switch: u32, pkt: &HeaderStack) -> Option<IntReport> {
        let int = pkt.int_stack.as_ref()?;
        let ipv4 = pkt.ipv4.as_ref()?;
        Some(IntReport {
            sink_switch,
            src_ip: ipv4.src_ip,
            hops: int.hops.clone(),
            node_meta: int.node_meta,
        })
    }
}

/// Sink-side byproduct of INT processing: the structured report plus the
/// pre-strip frame bytes that go to the controller as a packet-in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkOutput {
    pub report: IntReport,
    pub frame: Vec<u8>,
}

/// What a switch port is cabled to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PortPeer {
    Host(String),
    Switch { switch_id: u32, port: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortLink {
    pub peer: PortPeer,
    pub latency_us: u64,
}

/// One simulated switch: ports, tables, replication groups, and its INT
/// role. Table contents are only ever mutated through [`SwitchState::table_write`]
/// and [`SwitchState::group_write`].
#[derive(Debug, Clone)]
pub struct SwitchState {
    pub switch_id: u32,
    pub int_role: IntRole,
    pub proc_latency_us: u32,
    ports: BTreeMap<u16, PortLink>,
    // Keyed so iteration order is priority-descending, key-bytes-ascending,
    // which is both the read order and the match tie-break order.
    acl: BTreeMap<(Reverse<u32>, [u8; 20]), Action>,
    l2: BTreeMap<MacAddr, Action>,
    groups: BTreeMap<u16, BTreeSet<u16>>,
    hop_cap_events: u64,
}

impl SwitchState {
    pub fn new(switch_id: u32, int_role: IntRole, proc_latency_us: u32) -> Self {
        SwitchState {
            switch_id,
            int_role,
            proc_latency_us,
            ports: BTreeMap::new(),
            acl: BTreeMap::new(),
            l2: BTreeMap::new(),
            groups: BTreeMap::new(),
            hop_cap_events: 0,
        }
    }

    pub fn attach_port(&mut self, port: u16, link: PortLink) {
        self.ports.insert(port, link);
    }

    pub fn port(&self, port: u16) -> Option<&PortLink> {
        self.ports.get(&port)
    }

    pub fn port_mut(&mut self, port: u16) -> Option<&mut PortLink> {
        self.ports.get_mut(&port)
    }

    pub fn ports(&self) -> impl Iterator<Item = (u16, &PortLink)> {
        self.ports.iter().map(|(p, l)| (*p, l))
    }

    /// Times the hop cap stopped a telemetry append on this switch.
    pub fn hop_cap_events(&self) -> u64 {
        self.hop_cap_events
    }

    fn validate_action(&self, action: Action) -> Result<(), TableWriteError> {
        match action {
            Action::Forward(port) => {
                if !self.ports.contains_key(&port) {
                    return Err(TableWriteError::InvalidEntry(format!(
                        "port {port} does not exist on switch {}",
                        self.switch_id
                    )));
                }
            }
            Action::Multicast(group) => {
                if !self.groups.contains_key(&group) {
                    return Err(TableWriteError::UnknownGroup(group));
                }
            }
            Action::Drop | Action::SendToCpu(_) => {}
        }
        Ok(())
    }

    /// Applies one insert/modify/delete to a match-action table and
    /// returns the resulting table size. Insert of an existing key fails
    /// with `AlreadyExists`; modify/delete of an absent key with `NotFound`.
    pub fn table_write(&mut self, op: WriteOp, entry: TableEntry) -> Result<usize, TableWriteError> {
        if !matches!(op, WriteOp::Delete) {
            self.validate_action(entry.action())?;
        }
        match entry {
            TableEntry::Acl { key, priority, action } => {
                let map_key = (Reverse(priority), key.key_bytes());
                match op {
                    WriteOp::Insert => {
                        if self.acl.contains_key(&map_key) {
                            return Err(TableWriteError::AlreadyExists);
                        }
                        self.acl.insert(map_key, action);
                    }
                    WriteOp::Modify => {
                        let slot = self.acl.get_mut(&map_key).ok_or(TableWriteError::NotFound)?;
                        *slot = action;
                    }
                    WriteOp::Delete => {
                        self.acl.remove(&map_key).ok_or(TableWriteError::NotFound)?;
                    }
                }
                Ok(self.acl.len())
            }
            TableEntry::L2 { dst_mac, action } => {
                match op {
                    WriteOp::Insert => {
                        if self.l2.contains_key(&dst_mac) {
                            return Err(TableWriteError::AlreadyExists);
                        }
                        self.l2.insert(dst_mac, action);
                    }
                    WriteOp::Modify => {
                        let slot = self.l2.get_mut(&dst_mac).ok_or(TableWriteError::NotFound)?;
                        *slot = action;
                    }
                    WriteOp::Delete => {
                        self.l2.remove(&dst_mac).ok_or(TableWriteError::NotFound)?;
                    }
                }
                Ok(self.l2.len())
            }
        }
    }

    /// Insert/modify/delete on the replication-group table. Group ids must
    /// be non-zero and port sets non-empty.
    pub fn group_write(&mut self, op: WriteOp, group: MulticastGroup) -> Result<usize, TableWriteError> {
        if group.group_id == 0 {
            return Err(TableWriteError::InvalidEntry("group id 0 is reserved".into()));
        }
        if !matches!(op, WriteOp::Delete) && group.egress_ports.is_empty() {
            return Err(TableWriteError::InvalidEntry(format!(
                "group {} has no egress ports",
                group.group_id
            )));
        }
        match op {
            WriteOp::Insert => {
                if self.groups.contains_key(&group.group_id) {
                    return Err(TableWriteError::AlreadyExists);
                }
                self.groups.insert(group.group_id, group.egress_ports);
            }
            WriteOp::Modify => {
                let slot = self.groups.get_mut(&group.group_id).ok_or(TableWriteError::NotFound)?;
                *slot = group.egress_ports;
            }
            WriteOp::Delete => {
                self.groups.remove(&group.group_id).ok_or(TableWriteError::NotFound)?;
            }
        }
        Ok(self.groups.len())
    }

    /// Snapshot of a table, ACL first by descending priority then
    /// ascending key bytes, L2 by ascending MAC.
    pub fn table_read(&self, table_id: TableId) -> Vec<TableEntry> {
        match table_id {
            TableId::Acl => self
                .acl
                .iter()
                .map(|((Reverse(priority), key), action)| TableEntry::Acl {
                    key: AclKey::from_key_bytes(key).unwrap(),
                    priority: *priority,
                    action: *action,
                })
                .collect(),
            TableId::L2 => self
                .l2
                .iter()
                .map(|(dst_mac, action)| TableEntry::L2 { dst_mac: *dst_mac, action: *action })
                .collect(),
        }
    }

    pub fn groups_read(&self) -> Vec<MulticastGroup> {
        self.groups
            .iter()
            .map(|(id, ports)| MulticastGroup { group_id: *id, egress_ports: ports.clone() })
            .collect()
    }

    pub fn group(&self, group_id: u16) -> Option<&BTreeSet<u16>> {
        self.groups.get(&group_id)
    }

    /// Runs the ingress pipeline: ACL first (highest priority wins, ties
    /// by ascending key bytes), then the RTPS punt-to-CPU default, then
    /// L2 exact match, then drop.
    pub fn apply_pipeline(
        &self,
        pkt: &HeaderStack,
        _ingress_port: u16,
    ) -> Result<ForwardingDecision, PipelineError> {
        for ((_, key_bytes), action) in &self.acl {
            let key = AclKey::from_key_bytes(key_bytes).unwrap();
            if key.matches(pkt) {
                return self.decision_for(*action);
            }
        }
        if pkt.rtps.is_some() {
            return Ok(ForwardingDecision::SendToCpu(CPU_REASON_RTPS));
        }
        if let Some(action) = self.l2.get(&pkt.eth.dst_mac) {
            return self.decision_for(*action);
        }
        Ok(ForwardingDecision::Drop)
    }

    fn decision_for(&self, action: Action) -> Result<ForwardingDecision, PipelineError> {
        Ok(match action {
            Action::Forward(p) => ForwardingDecision::Forward(p),
            Action::Drop => ForwardingDecision::Drop,
            Action::SendToCpu(r) => ForwardingDecision::SendToCpu(r),
            Action::Multicast(g) => {
                if self.group(g).is_none() {
                    return Err(PipelineError::UnknownGroup(g));
                }
                ForwardingDecision::Multicast(g)
            }
        })
    }

    /// Telemetry step, applied after the pipeline decision and before
    /// egress. A transit appends its hop record; a sink appends its own
    /// hop, extracts the full stack into a report (the returned frame is
    /// the pre-strip serialization), then strips the shim and zeroes the
    /// DSCP so hosts receive a clean packet. When the hop cap would be
    /// exceeded the append is skipped and counted instead.
    pub fn process_int(&mut self, pkt: HeaderStack) -> (HeaderStack, Option<SinkOutput>) {
        if matches!(self.int_role, IntRole::None) || pkt.int_stack.is_none() {
            return (pkt, None);
        }
        let mut pkt = pkt;
        {
            let int = pkt.int_stack.as_mut().unwrap();
            if int.hops.len() < INT_HOP_CAP {
                int.hops.push(IntHopMetadata {
                    switch_id: self.switch_id,
                    hop_latency_us: self.proc_latency_us,
                });
            } else {
                self.hop_cap_events += 1;
            }
        }
        pkt.finalize_lengths();
        if matches!(self.int_role, IntRole::Transit) {
            return (pkt, None);
        }
        let report = IntReport::from_stack(self.switch_id, &pkt)
            .expect("sink packet carries int stack and ipv4");
        let frame = emit_packet(&pkt).expect("pre-strip frame is well-formed");
        pkt.int_stack = None;
        if let Some(ipv4) = pkt.ipv4.as_mut() {
            ipv4.dscp = 0;
        }
        pkt.finalize_lengths();
        (pkt, Some(SinkOutput { report, frame }))
    }

    /// Replicates a packet to every egress port of a group except the
    /// ingress port; copies are byte-identical.
    pub fn multicast_replicate(
        &self,
        group_id: u16,
        pkt: &HeaderStack,
        ingress_port: u16,
    ) -> Result<Vec<(u16, HeaderStack)>, PipelineError> {
        let ports = self.group(group_id).ok_or(PipelineError::UnknownGroup(group_id))?;
        Ok(ports
            .iter()
            .filter(|p| **p != ingress_port)
            .map(|p| (*p, pkt.clone()))
            .collect())
    }

    /// Empty INT stack for a source host attached to this module's world;
    /// kept here so frame builders share one definition.
    pub fn int_source_stack(meta: Option<NodeMetadata>) -> IntStack {
        IntStack { node_meta: meta, hops: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{EthHeader, Ipv4Header, RtpsHeader, UdpHeader};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap as RefMap;

    fn test_switch() -> SwitchState {
        let mut sw = SwitchState::new(1, IntRole::None, 50);
        for port in 1..=4 {
            sw.attach_port(
                port,
                PortLink { peer: PortPeer::Host(format!("h{port}")), latency_us: 100 },
            );
        }
        sw
    }

    fn mac(last: u8) -> MacAddr {
        MacAddr([0, 0, 0, 0, 0, last])
    }

    fn l2_entry(last: u8, action: Action) -> TableEntry {
        TableEntry::L2 { dst_mac: mac(last), action }
    }

    fn acl_entry(priority: u32, src: [u8; 4], action: Action) -> TableEntry {
        TableEntry::Acl {
            key: AclKey {
                src_ip: Ternary::exact(src),
                dst_ip: Ternary::wildcard(),
                udp_dst_port: Ternary::wildcard(),
            },
            priority,
            action,
        }
    }

    fn udp_pkt(src: [u8; 4], dst: [u8; 4], dst_mac: MacAddr, rtps: bool) -> HeaderStack {
        let mut stack = HeaderStack {
            eth: EthHeader { dst_mac, src_mac: mac(0xee), ethertype: 0x0800 },
            ipv4: Some(Ipv4Header {
                dscp: 0,
                total_length: 0,
                ttl: 64,
                protocol: 17,
                src_ip: src.into(),
                dst_ip: dst.into(),
            }),
            udp: Some(UdpHeader { src_port: 49152, dst_port: 7400, length: 0 }),
            rtps: rtps.then_some(RtpsHeader {
                protocol_version: 0x0203,
                vendor_id: 0x0101,
                guid_prefix: [0; 12],
            }),
            int_stack: None,
            payload: vec![],
        };
        stack.finalize_lengths();
        stack
    }

    #[test]
    fn insert_into_empty_table_acks_size_one() {
        let mut sw = test_switch();
        let size = sw.table_write(WriteOp::Insert, l2_entry(0xaa, Action::Forward(2))).unwrap();
        assert_eq!(size, 1);
    }

    #[test]
    fn double_insert_already_exists() {
        let mut sw = test_switch();
        sw.table_write(WriteOp::Insert, l2_entry(0xaa, Action::Forward(2))).unwrap();
        assert_eq!(
            sw.table_write(WriteOp::Insert, l2_entry(0xaa, Action::Forward(3))),
            Err(TableWriteError::AlreadyExists)
        );
    }

    #[test]
    fn modify_absent_acl_key_not_found() {
        let mut sw = test_switch();
        assert_eq!(
            sw.table_write(WriteOp::Modify, acl_entry(5, [10, 0, 0, 1], Action::Drop)),
            Err(TableWriteError::NotFound)
        );
    }

    #[test]
    fn forward_to_missing_port_invalid() {
        let mut sw = test_switch();
        assert!(matches!(
            sw.table_write(WriteOp::Insert, l2_entry(0xaa, Action::Forward(9))),
            Err(TableWriteError::InvalidEntry(_))
        ));
    }

    #[test]
    fn table_read_reflects_inserts_and_deletes() {
        let mut sw = test_switch();
        assert!(sw.table_read(TableId::Acl).is_empty());
        for (p, src) in [(10u32, [10, 0, 0, 1]), (20, [10, 0, 0, 2]), (10, [10, 0, 0, 0])] {
            sw.table_write(WriteOp::Insert, acl_entry(p, src, Action::Drop)).unwrap();
        }
        let entries = sw.table_read(TableId::Acl);
        assert_eq!(entries.len(), 3);
        // Priority descending, then ascending key bytes.
        let prios: Vec<u32> = entries
            .iter()
            .map(|e| match e {
                TableEntry::Acl { priority, .. } => *priority,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(prios, vec![20, 10, 10]);
        assert!(entries[1].key_bytes() < entries[2].key_bytes());

        let mut sw2 = test_switch();
        sw2.table_write(WriteOp::Insert, l2_entry(1, Action::Drop)).unwrap();
        sw2.table_write(WriteOp::Delete, l2_entry(1, Action::Drop)).unwrap();
        assert!(sw2.table_read(TableId::L2).is_empty());
    }

    /// Oracle equivalence: replay random write sequences against a plain
    /// reference map and compare the final table contents.
    #[test]
    fn random_write_sequences_match_reference_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut sw = test_switch();
            let mut reference: RefMap<(u32, Vec<u8>), Action> = RefMap::new();
            for _ in 0..200 {
                let op = match rng.gen_range(0..3) {
                    0 => WriteOp::Insert,
                    1 => WriteOp::Modify,
                    _ => WriteOp::Delete,
                };
                let priority = rng.gen_range(0..4u32);
                let src = [10, 0, 0, rng.gen_range(0..6u8)];
                let action = if rng.gen_bool(0.5) {
                    Action::Drop
                } else {
                    Action::Forward(rng.gen_range(1..5u16))
                };
                let entry = acl_entry(priority, src, action);
                let key = (priority, entry.key_bytes());
                let expect = match op {
                    WriteOp::Insert => {
                        if reference.contains_key(&key) {
                            Err(TableWriteError::AlreadyExists)
                        } else {
                            reference.insert(key.clone(), action);
                            Ok(())
                        }
                    }
                    WriteOp::Modify => {
                        if let Some(slot) = reference.get_mut(&key) {
                            *slot = action;
                            Ok(())
                        } else {
                            Err(TableWriteError::NotFound)
                        }
                    }
                    WriteOp::Delete => {
                        if reference.remove(&key).is_some() {
                            Ok(())
                        } else {
                            Err(TableWriteError::NotFound)
                        }
                    }
                };
                let got = sw.table_write(op, entry).map(|_| ());
                assert_eq!(got, expect);
            }
            let read: Vec<(u32, Vec<u8>, Action)> = sw
                .table_read(TableId::Acl)
                .into_iter()
                .map(|e| match &e {
                    TableEntry::Acl { priority, action, .. } => (*priority, e.key_bytes(), *action),
                    _ => unreachable!(),
                })
                .collect();
            let mut want: Vec<(u32, Vec<u8>, Action)> =
                reference.iter().map(|((p, k), a)| (*p, k.clone(), *a)).collect();
            want.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            assert_eq!(read, want);
        }
    }

    #[test]
    fn rtps_miss_goes_to_cpu() {
        let sw = test_switch();
        let pkt = udp_pkt([10, 0, 0, 1], [10, 0, 0, 2], mac(0xaa), true);
        assert_eq!(
            sw.apply_pipeline(&pkt, 1).unwrap(),
            ForwardingDecision::SendToCpu(CPU_REASON_RTPS)
        );
    }

    #[test]
    fn l2_hit_forwards_and_miss_drops() {
        let mut sw = test_switch();
        sw.table_write(WriteOp::Insert, l2_entry(0xaa, Action::Forward(2))).unwrap();
        let hit = udp_pkt([10, 0, 0, 1], [10, 0, 0, 2], mac(0xaa), false);
        assert_eq!(sw.apply_pipeline(&hit, 1).unwrap(), ForwardingDecision::Forward(2));
        let miss = udp_pkt([10, 0, 0, 1], [10, 0, 0, 2], mac(0xbb), false);
        assert_eq!(sw.apply_pipeline(&miss, 1).unwrap(), ForwardingDecision::Drop);
    }

    #[test]
    fn higher_priority_acl_wins() {
        let mut sw = test_switch();
        sw.table_write(WriteOp::Insert, acl_entry(10, [10, 0, 0, 1], Action::Drop)).unwrap();
        sw.table_write(WriteOp::Insert, acl_entry(20, [10, 0, 0, 1], Action::Forward(3))).unwrap();
        let pkt = udp_pkt([10, 0, 0, 1], [10, 0, 0, 2], mac(0xaa), false);
        assert_eq!(sw.apply_pipeline(&pkt, 1).unwrap(), ForwardingDecision::Forward(3));
    }

    /// Priority semantics against brute force: the pipeline's choice must
    /// equal the argmax over all matching entries under (priority desc,
    /// key bytes asc).
    #[test]
    fn acl_choice_matches_brute_force_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut sw = test_switch();
            let mut entries = Vec::new();
            for _ in 0..rng.gen_range(1..12) {
                let key = AclKey {
                    src_ip: if rng.gen_bool(0.3) {
                        Ternary::wildcard()
                    } else {
                        Ternary::exact([10, 0, 0, rng.gen_range(0..4u8)])
                    },
                    dst_ip: if rng.gen_bool(0.5) {
                        Ternary::wildcard()
                    } else {
                        Ternary::exact([10, 0, 0, rng.gen_range(0..4u8)])
                    },
                    udp_dst_port: Ternary::wildcard(),
                };
                let priority = rng.gen_range(0..4u32);
                let action = Action::Forward(rng.gen_range(1..5u16));
                if sw
                    .table_write(WriteOp::Insert, TableEntry::Acl { key, priority, action })
                    .is_ok()
                {
                    entries.push((key, priority, action));
                }
            }
            let pkt = udp_pkt(
                [10, 0, 0, rng.gen_range(0..4u8)],
                [10, 0, 0, rng.gen_range(0..4u8)],
                mac(0xff),
                false,
            );
            let best = entries
                .iter()
                .filter(|(k, _, _)| k.matches(&pkt))
                .min_by(|(ka, pa, _), (kb, pb, _)| {
                    pb.cmp(pa).then(ka.key_bytes().cmp(&kb.key_bytes()))
                });
            let got = sw.apply_pipeline(&pkt, 1).unwrap();
            match best {
                Some((_, _, Action::Forward(p))) => {
                    assert_eq!(got, ForwardingDecision::Forward(*p))
                }
                Some(_) => unreachable!(),
                None => assert_eq!(got, ForwardingDecision::Drop),
            }
        }
    }

    fn int_pkt(hops: Vec<IntHopMetadata>) -> HeaderStack {
        let mut pkt = udp_pkt([10, 0, 0, 1], [10, 0, 0, 2], mac(0xaa), false);
        pkt.ipv4.as_mut().unwrap().dscp = crate::packet::INT_DSCP;
        pkt.int_stack = Some(IntStack { node_meta: None, hops });
        pkt.finalize_lengths();
        pkt
    }

    #[test]
    fn transit_appends_hop() {
        let mut sw = test_switch();
        sw.int_role = IntRole::Transit;
        sw.proc_latency_us = 50;
        let pkt = int_pkt(vec![IntHopMetadata { switch_id: 9, hop_latency_us: 10 }]);
        let (out, report) = sw.process_int(pkt);
        assert!(report.is_none());
        let int = out.int_stack.as_ref().unwrap();
        assert_eq!(int.hop_count(), 2);
        assert_eq!(int.hops[1], IntHopMetadata { switch_id: 1, hop_latency_us: 50 });
    }

    #[test]
    fn none_role_is_identity() {
        let mut sw = test_switch();
        let pkt = int_pkt(vec![IntHopMetadata { switch_id: 9, hop_latency_us: 10 }]);
        let (out, report) = sw.process_int(pkt.clone());
        assert_eq!(out, pkt);
        assert!(report.is_none());
    }

    #[test]
    fn sink_appends_extracts_and_strips() {
        let mut sw = test_switch();
        sw.int_role = IntRole::Sink;
        sw.proc_latency_us = 75;
        let pkt = int_pkt(vec![IntHopMetadata { switch_id: 9, hop_latency_us: 10 }]);
        let (out, sink) = sw.process_int(pkt);
        let sink = sink.unwrap();
        assert_eq!(sink.report.hops.len(), 2);
        assert_eq!(sink.report.hops[1], IntHopMetadata { switch_id: 1, hop_latency_us: 75 });
        assert_eq!(sink.report.src_ip, Ipv4Addr::new(10, 0, 0, 1));
        assert!(out.int_stack.is_none());
        assert_eq!(out.ipv4.as_ref().unwrap().dscp, 0);
        // The punted frame still carries the full stack.
        let pre_strip = crate::packet::parse_packet(&sink.frame).unwrap();
        assert_eq!(pre_strip.int_stack.as_ref().unwrap().hop_count(), 2);
    }

    #[test]
    fn hop_cap_skips_append_and_counts() {
        let mut sw = test_switch();
        sw.int_role = IntRole::Transit;
        let hops: Vec<_> =
            (0..16).map(|i| IntHopMetadata { switch_id: i, hop_latency_us: 1 }).collect();
        let (out, _) = sw.process_int(int_pkt(hops.clone()));
        assert_eq!(out.int_stack.as_ref().unwrap().hops, hops);
        assert_eq!(sw.hop_cap_events(), 1);
    }

    #[test]
    fn multicast_excludes_ingress_port() {
        let mut sw = test_switch();
        sw.group_write(
            WriteOp::Insert,
            MulticastGroup { group_id: 7, egress_ports: [2, 3, 4].into() },
        )
        .unwrap();
        let pkt = udp_pkt([10, 0, 0, 1], [10, 0, 0, 2], mac(0xaa), false);
        let copies = sw.multicast_replicate(7, &pkt, 2).unwrap();
        let ports: Vec<u16> = copies.iter().map(|(p, _)| *p).collect();
        assert_eq!(ports, vec![3, 4]);
        assert!(copies.iter().all(|(_, c)| *c == pkt));
    }

    #[test]
    fn singleton_group_and_unknown_group() {
        let mut sw = test_switch();
        sw.group_write(WriteOp::Insert, MulticastGroup { group_id: 5, egress_ports: [3].into() })
            .unwrap();
        let pkt = udp_pkt([10, 0, 0, 1], [10, 0, 0, 2], mac(0xaa), false);
        assert_eq!(sw.multicast_replicate(5, &pkt, 1).unwrap().len(), 1);
        assert_eq!(sw.multicast_replicate(9, &pkt, 1), Err(PipelineError::UnknownGroup(9)));
    }

    #[test]
    fn group_invariants_enforced() {
        let mut sw = test_switch();
        assert!(matches!(
            sw.group_write(WriteOp::Insert, MulticastGroup { group_id: 0, egress_ports: [1].into() }),
            Err(TableWriteError::InvalidEntry(_))
        ));
        assert!(matches!(
            sw.group_write(
                WriteOp::Insert,
                MulticastGroup { group_id: 3, egress_ports: BTreeSet::new() }
            ),
            Err(TableWriteError::InvalidEntry(_))
        ));
        assert_eq!(
            sw.table_write(WriteOp::Insert, acl_entry(1, [10, 0, 0, 1], Action::Multicast(3))),
            Err(TableWriteError::UnknownGroup(3))
        );
    }
}
