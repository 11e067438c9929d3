//! Deterministic discrete-event simulation of the data plane.
//!
//! A [`Network`] owns the switches, hosts, links, and a virtual-clock
//! event queue. Events at the same instant are processed in insertion
//! order, so identical scenarios always produce identical traces.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::dataplane::{
    ForwardingDecision, IntRole, PortLink, PortPeer, SwitchState, TableWriteError, WriteOp,
};
use crate::packet::{
    emit_packet, parse_packet, EthHeader, HeaderStack, Ipv4Header, IntStack, MacAddr, RtpsHeader,
    UdpHeader, CPU_OUT_ALL_PORTS, CPU_OUT_PIPELINE, CPU_REASON_INT_REPORT, ETHERTYPE_IPV4,
    INT_DSCP, IPPROTO_UDP,
};
use crate::topology::{Endpoint, Host, Topology};

/// Source port stamped on frames built by [`Network::inject_from_host`].
pub const INJECT_SRC_PORT: u16 = 49152;
/// Broadcast MAC used when the destination IP resolves to no known host.
pub const BROADCAST_MAC: MacAddr = MacAddr([0xff; 6]);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown host {0:?}")]
    UnknownHost(String),
    #[error("unknown switch {0}")]
    UnknownSwitch(u32),
}

/// Why a frame was dropped inside a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    AclAction,
    L2Miss,
    UnknownGroup,
    DeadPort,
    Malformed,
}

impl std::fmt::Display for DropReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DropReason::AclAction => "acl_action",
            DropReason::L2Miss => "l2_miss",
            DropReason::UnknownGroup => "unknown_group",
            DropReason::DeadPort => "dead_port",
            DropReason::Malformed => "malformed",
        };
        write!(f, "{s}")
    }
}

/// Externally visible outcomes of processing one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObservableEvent {
    /// A frame reached a host NIC.
    Delivery { time: u64, host: String, frame: Vec<u8> },
    /// A switch punted a frame to its CPU port.
    PacketIn { time: u64, switch: u32, ingress_port: u16, reason: u8, frame: Vec<u8> },
    /// A switch discarded a frame.
    Dropped { time: u64, switch: u32, reason: DropReason },
}

impl ObservableEvent {
    pub fn time(&self) -> u64 {
        match self {
            ObservableEvent::Delivery { time, .. }
            | ObservableEvent::PacketIn { time, .. }
            | ObservableEvent::Dropped { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    FrameAtSwitch { switch: u32, ingress_port: u16, frame: Vec<u8> },
    FrameAtHost { host: String, frame: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// The simulated network: switch states, host records, and the event
/// queue with its virtual clock (microseconds).
#[derive(Debug, Clone)]
pub struct Network {
    switches: BTreeMap<u32, SwitchState>,
    hosts: BTreeMap<String, Host>,
    host_by_ip: BTreeMap<Ipv4Addr, String>,
    clock: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
}

impl Network {
    pub fn from_topology(topo: &Topology) -> Self {
        let mut switches: BTreeMap<u32, SwitchState> = topo
            .switches
            .iter()
            .map(|s| (s.id, SwitchState::new(s.id, s.int_role, s.proc_latency_us)))
            .collect();
        for link in &topo.links {
            let ends = [(&link.a, &link.b), (&link.b, &link.a)];
            for (from, to) in ends {
                if let Endpoint::SwitchPort { switch_id, port } = from {
                    let peer = match to {
                        Endpoint::Host(h) => PortPeer::Host(h.clone()),
                        Endpoint::SwitchPort { switch_id, port } => {
                            PortPeer::Switch { switch_id: *switch_id, port: *port }
                        }
                    };
                    switches
                        .get_mut(switch_id)
                        .expect("validated topology")
                        .attach_port(*port, PortLink { peer, latency_us: link.latency_us });
                }
            }
        }
        let hosts: BTreeMap<String, Host> =
            topo.hosts.iter().map(|h| (h.id.clone(), h.clone())).collect();
        let host_by_ip = hosts.values().map(|h| (h.ip, h.id.clone())).collect();
        Network { switches, hosts, host_by_ip, clock: 0, next_seq: 0, queue: BinaryHeap::new() }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn switch(&self, id: u32) -> Option<&SwitchState> {
        self.switches.get(&id)
    }

    pub fn switch_mut(&mut self, id: u32) -> Option<&mut SwitchState> {
        self.switches.get_mut(&id)
    }

    pub fn host(&self, id: &str) -> Option<&Host> {
        self.hosts.get(id)
    }

    pub fn host_mut(&mut self, id: &str) -> Option<&mut Host> {
        self.hosts.get_mut(id)
    }

    pub fn hosts(&self) -> impl Iterator<Item = &Host> {
        self.hosts.values()
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Time of the next queued event, if any.
    pub fn next_event_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(s)| s.time)
    }

    /// Advances the virtual clock without processing anything; used by
    /// scenario directives that act at a given instant.
    pub fn advance_clock_to(&mut self, time: u64) {
        if time > self.clock {
            self.clock = time;
        }
    }

    fn schedule(&mut self, time: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq, event }));
    }

    /// Updates the latency of the link behind `(switch, port)` and of its
    /// reverse direction.
    pub fn set_link_latency(&mut self, a: &Endpoint, b: &Endpoint, latency_us: u64) {
        for (from, to) in [(a, b), (b, a)] {
            if let Endpoint::SwitchPort { switch_id, port } = from {
                let _ = to;
                if let Some(sw) = self.switches.get_mut(switch_id) {
                    if let Some(link) = sw.port_mut(*port) {
                        link.latency_us = latency_us;
                    }
                }
            }
        }
    }

    /// Builds a frame on behalf of a host and schedules its arrival at
    /// the attachment switch after the host link latency.
    ///
    /// When `int_enabled` the frame is marked with DSCP `0x17` and starts
    /// an empty INT stack carrying the host's node metadata; when `rtps`
    /// the UDP payload is prefixed with an RTPS header derived from the
    /// host identity.
    pub fn inject_from_host(
        &mut self,
        host_id: &str,
        dst_ip: Ipv4Addr,
        dst_port: u16,
        rtps: bool,
        int_enabled: bool,
        payload: &[u8],
    ) -> Result<(), SimError> {
        let host = self.hosts.get(host_id).ok_or_else(|| SimError::UnknownHost(host_id.into()))?;
        let dst_mac = self
            .host_by_ip
            .get(&dst_ip)
            .map(|id| self.hosts[id].mac)
            .unwrap_or(BROADCAST_MAC);
        let mut frame = HeaderStack {
            eth: EthHeader { dst_mac, src_mac: host.mac, ethertype: ETHERTYPE_IPV4 },
            ipv4: Some(Ipv4Header {
                dscp: if int_enabled { INT_DSCP } else { 0 },
                total_length: 0,
                ttl: 64,
                protocol: IPPROTO_UDP,
                src_ip: host.ip,
                dst_ip,
            }),
            udp: Some(UdpHeader { src_port: INJECT_SRC_PORT, dst_port, length: 0 }),
            rtps: rtps.then(|| {
                let mut guid = [0u8; 12];
                guid[0..6].copy_from_slice(&host.mac.0);
                guid[6..10].copy_from_slice(&host.node_id.to_be_bytes());
                RtpsHeader { protocol_version: 0x0203, vendor_id: 0x0101, guid_prefix: guid }
            }),
            int_stack: int_enabled.then(|| IntStack {
                node_meta: Some(crate::packet::NodeMetadata {
                    node_id: host.node_id,
                    cpu_load_pct: host.cpu_load_pct,
                    loc_x: host.loc_x,
                    loc_y: host.loc_y,
                    capabilities: host.capabilities,
                }),
                hops: Vec::new(),
            }),
            payload: payload.to_vec(),
        };
        frame.finalize_lengths();
        let bytes = emit_packet(&frame).expect("injected frame is well-formed");
        let (switch, port, latency) = {
            let sw = self.switches.get(&host.switch).expect("validated topology");
            let link = sw.port(host.port).expect("host port is cabled");
            (host.switch, host.port, link.latency_us)
        };
        let time = self.clock + latency;
        self.schedule(time, Event::FrameAtSwitch { switch, ingress_port: port, frame: bytes });
        Ok(())
    }

    /// Controller-to-switch packet-out. Egress [`CPU_OUT_PIPELINE`] (port
    /// 0, the CPU port) submits the frame to the ingress pipeline;
    /// [`CPU_OUT_ALL_PORTS`] replicates it out every cabled port; any
    /// other value emits it directly on that port.
    pub fn packet_out(&mut self, switch_id: u32, egress_port: u16, frame: &[u8]) -> Result<(), SimError> {
        let sw = self.switches.get(&switch_id).ok_or(SimError::UnknownSwitch(switch_id))?;
        match egress_port {
            CPU_OUT_PIPELINE => {
                let time = self.clock;
                self.schedule(
                    time,
                    Event::FrameAtSwitch { switch: switch_id, ingress_port: 0, frame: frame.to_vec() },
                );
            }
            CPU_OUT_ALL_PORTS => {
                let ports: Vec<u16> = sw.ports().map(|(p, _)| p).collect();
                for port in ports {
                    self.egress(switch_id, port, frame.to_vec(), 0);
                }
            }
            port => {
                if sw.port(port).is_none() {
                    return Ok(()); // nothing cabled; silently discarded
                }
                self.egress(switch_id, port, frame.to_vec(), 0);
            }
        }
        Ok(())
    }

    /// Sends `frame` out `(switch, port)`, scheduling the peer arrival at
    /// `clock + extra_latency + link latency`.
    fn egress(&mut self, switch_id: u32, port: u16, frame: Vec<u8>, extra_latency: u64) {
        let Some(link) = self.switches[&switch_id].port(port).cloned() else { return };
        let time = self.clock + extra_latency + link.latency_us;
        match link.peer {
            PortPeer::Host(host) => self.schedule(time, Event::FrameAtHost { host, frame }),
            PortPeer::Switch { switch_id: peer, port: peer_port } => self.schedule(
                time,
                Event::FrameAtSwitch { switch: peer, ingress_port: peer_port, frame },
            ),
        }
    }

    /// Processes the earliest queued event and returns what became
    /// observable. An empty queue returns an empty list.
    pub fn step(&mut self) -> Vec<ObservableEvent> {
        let Some(Reverse(scheduled)) = self.queue.pop() else { return Vec::new() };
        debug_assert!(scheduled.time >= self.clock, "virtual clock must not run backwards");
        self.clock = scheduled.time;
        match scheduled.event {
            Event::FrameAtHost { host, frame } => {
                vec![ObservableEvent::Delivery { time: self.clock, host, frame }]
            }
            Event::FrameAtSwitch { switch, ingress_port, frame } => {
                self.process_switch_arrival(switch, ingress_port, frame)
            }
        }
    }

    fn process_switch_arrival(
        &mut self,
        switch_id: u32,
        ingress_port: u16,
        frame: Vec<u8>,
    ) -> Vec<ObservableEvent> {
        let time = self.clock;
        let mut out = Vec::new();
        let pkt = match parse_packet(&frame) {
            Ok(pkt) => pkt,
            Err(_) => {
                return vec![ObservableEvent::Dropped {
                    time,
                    switch: switch_id,
                    reason: DropReason::Malformed,
                }]
            }
        };
        let sw = self.switches.get(&switch_id).expect("event references a known switch");
        let decision = match sw.apply_pipeline(&pkt, ingress_port) {
            Ok(d) => d,
            Err(_) => {
                return vec![ObservableEvent::Dropped {
                    time,
                    switch: switch_id,
                    reason: DropReason::UnknownGroup,
                }]
            }
        };
        match decision {
            ForwardingDecision::SendToCpu(reason) => {
                out.push(ObservableEvent::PacketIn {
                    time,
                    switch: switch_id,
                    ingress_port,
                    reason,
                    frame,
                });
            }
            ForwardingDecision::Drop => {
                // An ACL deny and an L2 miss both end here; they are told
                // apart for observability only.
                let reason = if pkt.ipv4.is_some()
                    && self.switches[&switch_id]
                        .table_read(crate::dataplane::TableId::Acl)
                        .iter()
                        .any(|e| match e {
                            crate::dataplane::TableEntry::Acl { key, action, .. } => {
                                key.matches(&pkt) && *action == crate::dataplane::Action::Drop
                            }
                            _ => false,
                        }) {
                    DropReason::AclAction
                } else {
                    DropReason::L2Miss
                };
                out.push(ObservableEvent::Dropped { time, switch: switch_id, reason });
            }
            ForwardingDecision::Forward(port) => {
                let proc = u64::from(self.switches[&switch_id].proc_latency_us);
                let (egress_pkt, sink) =
                    self.switches.get_mut(&switch_id).unwrap().process_int(pkt);
                if let Some(sink) = sink {
                    out.push(ObservableEvent::PacketIn {
                        time,
                        switch: switch_id,
                        ingress_port,
                        reason: CPU_REASON_INT_REPORT,
                        frame: sink.frame,
                    });
                }
                if self.switches[&switch_id].port(port).is_none() {
                    out.push(ObservableEvent::Dropped {
                        time,
                        switch: switch_id,
                        reason: DropReason::DeadPort,
                    });
                } else {
                    let bytes = emit_packet(&egress_pkt).expect("forwarded frame is well-formed");
                    self.egress(switch_id, port, bytes, proc);
                }
            }
            ForwardingDecision::Multicast(group) => {
                let proc = u64::from(self.switches[&switch_id].proc_latency_us);
                let (egress_pkt, sink) =
                    self.switches.get_mut(&switch_id).unwrap().process_int(pkt);
                if let Some(sink) = sink {
                    out.push(ObservableEvent::PacketIn {
                        time,
                        switch: switch_id,
                        ingress_port,
                        reason: CPU_REASON_INT_REPORT,
                        frame: sink.frame,
                    });
                }
                let copies = self.switches[&switch_id]
                    .multicast_replicate(group, &egress_pkt, ingress_port)
                    .expect("group checked by the pipeline");
                for (port, copy) in copies {
                    let bytes = emit_packet(&copy).expect("replicated frame is well-formed");
                    self.egress(switch_id, port, bytes, proc);
                }
            }
        }
        out
    }

    /// Runs the queue until it is empty or the next event is later than
    /// `until`, collecting every observable event.
    pub fn run_until(&mut self, until: u64) -> Vec<ObservableEvent> {
        let mut out = Vec::new();
        while let Some(t) = self.next_event_time() {
            if t > until {
                break;
            }
            out.extend(self.step());
        }
        self.advance_clock_to(until);
        out
    }

    /// Convenience used by table management paths.
    pub fn table_write(
        &mut self,
        switch_id: u32,
        op: WriteOp,
        entry: crate::dataplane::TableEntry,
    ) -> Result<usize, TableWriteError> {
        self.switches
            .get_mut(&switch_id)
            .expect("caller validated the switch id")
            .table_write(op, entry)
    }

    /// True when the switch strips telemetry before host delivery.
    pub fn is_sink(&self, switch_id: u32) -> bool {
        self.switches.get(&switch_id).map(|s| matches!(s.int_role, IntRole::Sink)).unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::{Action, TableEntry};
    use crate::topology::Topology;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn two_host_one_switch() -> Topology {
        Topology::from_json(
            r#"{
                "switches": [{"id": 1, "proc_latency_us": 50, "int_role": "none"}],
                "hosts": [
                    {"id": "h1", "mac": "02:00:00:00:00:01", "ip": "10.0.0.1", "switch": 1,
                     "port": 1, "swarm_id": "A", "capabilities": 0, "cpu_load_pct": 0,
                     "loc_x": 0, "loc_y": 0},
                    {"id": "h2", "mac": "02:00:00:00:00:02", "ip": "10.0.0.2", "switch": 1,
                     "port": 2, "swarm_id": "A", "capabilities": 0, "cpu_load_pct": 0,
                     "loc_x": 0, "loc_y": 0}
                ],
                "links": [
                    {"a": "h1", "b": "s1:1", "latency_us": 100},
                    {"a": "h2", "b": "s1:2", "latency_us": 100}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn delivery_time_is_two_links_plus_proc() {
        let topo = two_host_one_switch();
        let mut net = Network::from_topology(&topo);
        let h2_mac = topo.host("h2").unwrap().mac;
        net.table_write(1, WriteOp::Insert, TableEntry::L2 { dst_mac: h2_mac, action: Action::Forward(2) })
            .unwrap();
        net.inject_from_host("h1", "10.0.0.2".parse().unwrap(), 4000, false, false, b"x").unwrap();
        let events = net.run_until(10_000);
        assert_eq!(events.len(), 1);
        match &events[0] {
            ObservableEvent::Delivery { time, host, .. } => {
                assert_eq!(host, "h2");
                assert_eq!(*time, 100 + 50 + 100);
            }
            other => panic!("expected delivery, got {other:?}"),
        }
    }

    #[test]
    fn rtps_frame_without_entries_becomes_packet_in() {
        let topo = two_host_one_switch();
        let mut net = Network::from_topology(&topo);
        net.inject_from_host("h1", "10.0.0.2".parse().unwrap(), 7400, true, false, b"").unwrap();
        let events = net.run_until(10_000);
        assert_eq!(events.len(), 1);
        assert!(matches!(
            &events[0],
            ObservableEvent::PacketIn { switch: 1, ingress_port: 1, reason: 0x01, .. }
        ));
    }

    #[test]
    fn unknown_host_rejected() {
        let topo = two_host_one_switch();
        let mut net = Network::from_topology(&topo);
        let err = net
            .inject_from_host("hX", "10.0.0.2".parse().unwrap(), 1, false, false, b"")
            .unwrap_err();
        assert_eq!(err, SimError::UnknownHost("hX".into()));
    }

    #[test]
    fn injected_int_frame_carries_host_metadata() {
        let topo = two_host_one_switch();
        let mut net = Network::from_topology(&topo);
        net.host_mut("h1").unwrap().cpu_load_pct = 40;
        net.inject_from_host("h1", "10.0.0.2".parse().unwrap(), 4000, false, true, b"").unwrap();
        let events = net.run_until(1_000);
        // No entries: plain UDP frame drops at the switch, but we can
        // still inspect the frame we built by re-parsing the drop path.
        assert!(matches!(events[0], ObservableEvent::Dropped { .. }));

        // Build again and inspect the queued frame directly.
        net.inject_from_host("h1", "10.0.0.2".parse().unwrap(), 4000, false, true, b"").unwrap();
        let Reverse(s) = net.queue.pop().unwrap();
        let Event::FrameAtSwitch { frame, .. } = s.event else { panic!() };
        let pkt = parse_packet(&frame).unwrap();
        let int = pkt.int_stack.unwrap();
        assert_eq!(int.hop_count(), 0);
        let meta = int.node_meta.unwrap();
        assert_eq!(meta.cpu_load_pct, 40);
        assert_eq!(meta.node_id, 1);
        assert_eq!(pkt.ipv4.unwrap().dscp, INT_DSCP);
    }

    #[test]
    fn rtps_flag_prefixes_payload() {
        let topo = two_host_one_switch();
        let mut net = Network::from_topology(&topo);
        net.inject_from_host("h1", "10.0.0.2".parse().unwrap(), 7400, true, false, b"pay").unwrap();
        let Reverse(s) = net.queue.pop().unwrap();
        let Event::FrameAtSwitch { frame, .. } = s.event else { panic!() };
        let pkt = parse_packet(&frame).unwrap();
        assert!(pkt.rtps.is_some());
        assert_eq!(pkt.payload, b"pay");

        net.inject_from_host("h1", "10.0.0.2".parse().unwrap(), 7400, false, false, b"pay").unwrap();
        let Reverse(s) = net.queue.pop().unwrap();
        let Event::FrameAtSwitch { frame, .. } = s.event else { panic!() };
        let pkt = parse_packet(&frame).unwrap();
        assert!(pkt.rtps.is_none());
        assert!(pkt.int_stack.is_none());
    }

    /// Determinism: the same seed must produce byte-identical traces.
    #[test]
    fn replayed_random_injections_produce_identical_traces() {
        let topo = two_host_one_switch();
        let run = |seed: u64| {
            let mut net = Network::from_topology(&topo);
            let macs: Vec<MacAddr> =
                ["h1", "h2"].iter().map(|h| topo.host(h).unwrap().mac).collect();
            net.table_write(1, WriteOp::Insert, TableEntry::L2 { dst_mac: macs[0], action: Action::Forward(1) })
                .unwrap();
            net.table_write(1, WriteOp::Insert, TableEntry::L2 { dst_mac: macs[1], action: Action::Forward(2) })
                .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trace = Vec::new();
            for _ in 0..1000 {
                let src = if rng.gen_bool(0.5) { "h1" } else { "h2" };
                let dst: Ipv4Addr =
                    if rng.gen_bool(0.5) { "10.0.0.1" } else { "10.0.0.2" }.parse().unwrap();
                let payload: Vec<u8> = (0..rng.gen_range(0..32)).map(|_| rng.gen()).collect();
                net.inject_from_host(src, dst, rng.gen_range(1..9000), rng.gen_bool(0.2), false, &payload)
                    .unwrap();
                for _ in 0..rng.gen_range(0..3) {
                    trace.extend(net.step());
                }
            }
            while net.pending_events() > 0 {
                trace.extend(net.step());
            }
            trace
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn packet_out_all_ports_reaches_every_host() {
        let topo = two_host_one_switch();
        let mut net = Network::from_topology(&topo);
        let frame = {
            let mut s = crate::packet::HeaderStack {
                eth: EthHeader {
                    dst_mac: BROADCAST_MAC,
                    src_mac: MacAddr([2, 0, 0, 0, 0, 9]),
                    ethertype: 0x1234,
                },
                ipv4: None,
                udp: None,
                rtps: None,
                int_stack: None,
                payload: b"hi".to_vec(),
            };
            s.finalize_lengths();
            emit_packet(&s).unwrap()
        };
        net.packet_out(1, CPU_OUT_ALL_PORTS, &frame).unwrap();
        let events = net.run_until(1_000);
        let mut hosts: Vec<&str> = events
            .iter()
            .filter_map(|e| match e {
                ObservableEvent::Delivery { host, .. } => Some(host.as_str()),
                _ => None,
            })
            .collect();
        hosts.sort_unstable();
        assert_eq!(hosts, vec!["h1", "h2"]);
    }
}
