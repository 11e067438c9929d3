//! Frame parsing and emission for the simulated data plane.
//!
//! The wire format is a fixed Ethernet/IPv4/UDP stack with two optional
//! extensions: an in-band telemetry shim (signalled by DSCP `0x17`,
//! carried between the UDP header and the UDP payload) and an RTPS
//! header at the start of the UDP payload. All multi-byte integers are
//! big-endian. IP/UDP checksum fields are carried in the layout but are
//! always zero; `parse_packet` does not validate them and `emit_packet`
//! always writes zeros.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

/// Ethertype claiming an IPv4 payload.
pub const ETHERTYPE_IPV4: u16 = 0x0800;
/// IP protocol number for UDP.
pub const IPPROTO_UDP: u8 = 17;
/// DSCP value signalling that an INT shim follows the UDP header.
pub const INT_DSCP: u8 = 0x17;
/// Maximum number of hop records an INT stack may carry.
pub const INT_HOP_CAP: usize = 16;
/// Magic bytes opening an RTPS header.
pub const RTPS_MAGIC: [u8; 4] = *b"RTPS";

const ETH_LEN: usize = 14;
const IPV4_LEN: usize = 20;
const UDP_LEN: usize = 8;
const INT_SHIM_LEN: usize = 4;
const NODE_META_LEN: usize = 11;
const HOP_LEN: usize = 8;
const RTPS_LEN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    /// A declared length field exceeds the bytes actually present.
    #[error("truncated frame: {0}")]
    TruncatedFrame(String),
    /// The INT shim is malformed or inconsistent with the remaining bytes.
    #[error("bad INT stack: {0}")]
    BadIntStack(String),
    /// A `HeaderStack` handed to `emit_packet` violates a layering invariant.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

/// A MAC address, printed and parsed as `aa:bb:cc:dd:ee:ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(format!("bad MAC address {s:?}"));
        }
        let mut b = [0u8; 6];
        for (i, p) in parts.iter().enumerate() {
            b[i] = u8::from_str_radix(p, 16).map_err(|_| format!("bad MAC address {s:?}"))?;
        }
        Ok(MacAddr(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthHeader {
    pub dst_mac: MacAddr,
    pub src_mac: MacAddr,
    pub ethertype: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Header {
    pub dscp: u8,
    /// Length of the IPv4 header plus everything after it.
    pub total_length: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    /// UDP header plus UDP content (INT shim, RTPS header, payload).
    pub length: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtpsHeader {
    pub protocol_version: u16,
    pub vendor_id: u16,
    pub guid_prefix: [u8; 12],
}

/// Swarm-node metadata a host embeds when it acts as an INT source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeMetadata {
    pub node_id: u32,
    /// Percent in `[0, 100]`.
    pub cpu_load_pct: u8,
    pub loc_x: i16,
    pub loc_y: i16,
    pub capabilities: u16,
}

/// One per-switch telemetry record, appended in traversal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntHopMetadata {
    pub switch_id: u32,
    pub hop_latency_us: u32,
}

/// The telemetry shim carried between the UDP header and the UDP payload.
///
/// `hops` is ordered source-to-sink; the hop count on the wire is always
/// `hops.len()`, and the node-metadata presence flag is `node_meta.is_some()`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntStack {
    pub node_meta: Option<NodeMetadata>,
    pub hops: Vec<IntHopMetadata>,
}

impl IntStack {
    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }

    /// Bytes this stack occupies on the wire.
    pub fn wire_len(&self) -> usize {
        INT_SHIM_LEN
            + if self.node_meta.is_some() { NODE_META_LEN } else { 0 }
            + self.hops.len() * HOP_LEN
    }
}

/// Parsed layers of one frame plus the opaque payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderStack {
    pub eth: EthHeader,
    pub ipv4: Option<Ipv4Header>,
    pub udp: Option<UdpHeader>,
    pub rtps: Option<RtpsHeader>,
    pub int_stack: Option<IntStack>,
    pub payload: Vec<u8>,
}

impl HeaderStack {
    /// Recomputes the IPv4 total length and the UDP length from the
    /// layers that are present. Builders call this last.
    pub fn finalize_lengths(&mut self) {
        let int_len = self.int_stack.as_ref().map_or(0, IntStack::wire_len);
        let rtps_len = if self.rtps.is_some() { RTPS_LEN } else { 0 };
        let content = int_len + rtps_len + self.payload.len();
        if let Some(udp) = self.udp.as_mut() {
            udp.length = (UDP_LEN + content) as u16;
        }
        if let Some(ipv4) = self.ipv4.as_mut() {
            let after_ip = if self.udp.is_some() { UDP_LEN + content } else { self.payload.len() };
            ipv4.total_length = (IPV4_LEN + after_ip) as u16;
        }
    }

    fn check_invariants(&self) -> Result<(), PacketError> {
        let fail = |msg: &str| Err(PacketError::InvariantViolation(msg.to_string()));
        if let Some(ipv4) = &self.ipv4 {
            if self.eth.ethertype != ETHERTYPE_IPV4 {
                return fail("ipv4 present but ethertype is not 0x0800");
            }
            if ipv4.protocol == IPPROTO_UDP && self.udp.is_none() {
                return fail("ipv4 protocol is UDP but udp header is absent");
            }
        } else if self.udp.is_some() {
            return fail("udp present without ipv4");
        }
        if let Some(udp) = &self.udp {
            let ipv4 = self.ipv4.as_ref().unwrap();
            if ipv4.protocol != IPPROTO_UDP {
                return fail("udp present but ipv4 protocol is not 17");
            }
            let int_len = self.int_stack.as_ref().map_or(0, IntStack::wire_len);
            let rtps_len = if self.rtps.is_some() { RTPS_LEN } else { 0 };
            let want_udp = UDP_LEN + int_len + rtps_len + self.payload.len();
            if usize::from(udp.length) != want_udp {
                return fail("udp length does not match carried content");
            }
            if usize::from(ipv4.total_length) != IPV4_LEN + want_udp {
                return fail("ipv4 total_length does not match carried content");
            }
        } else if let Some(ipv4) = &self.ipv4 {
            if usize::from(ipv4.total_length) != IPV4_LEN + self.payload.len() {
                return fail("ipv4 total_length does not match payload");
            }
        }
        if self.rtps.is_some() && self.udp.is_none() {
            return fail("rtps present without udp");
        }
        if let Some(int) = &self.int_stack {
            if self.udp.is_none() {
                return fail("int_stack present without udp");
            }
            if self.ipv4.as_ref().map(|h| h.dscp) != Some(INT_DSCP) {
                return fail("int_stack present but dscp is not 0x17");
            }
            if int.hops.len() > INT_HOP_CAP {
                return fail("int_stack exceeds the 16-hop cap");
            }
            if let Some(meta) = &int.node_meta {
                if meta.cpu_load_pct > 100 {
                    return fail("node metadata cpu_load_pct above 100");
                }
            }
        }
        Ok(())
    }
}

/// Parses one frame into its layered headers.
///
/// Parsing is layered and forgiving: an unknown ethertype, an
/// unrecognised IPv4 header form, or a UDP payload without the RTPS
/// magic each leave the remaining bytes as opaque payload. Hard errors
/// are only raised when a declared length exceeds the bytes present or
/// the INT shim is inconsistent.
pub fn parse_packet(bytes: &[u8]) -> Result<HeaderStack, PacketError> {
    if bytes.len() < ETH_LEN {
        return Err(PacketError::TruncatedFrame(format!(
            "frame is {} bytes, need at least {ETH_LEN}",
            bytes.len()
        )));
    }
    let eth = EthHeader {
        dst_mac: MacAddr(bytes[0..6].try_into().unwrap()),
        src_mac: MacAddr(bytes[6..12].try_into().unwrap()),
        ethertype: u16::from_be_bytes([bytes[12], bytes[13]]),
    };
    let rest = &bytes[ETH_LEN..];
    let mut stack = HeaderStack {
        eth,
        ipv4: None,
        udp: None,
        rtps: None,
        int_stack: None,
        payload: Vec::new(),
    };
    if stack.eth.ethertype != ETHERTYPE_IPV4 {
        stack.payload = rest.to_vec();
        return Ok(stack);
    }
    // Anything other than a plain 20-byte header (version 4, IHL 5) is
    // left opaque rather than misread with options shifted.
    if !rest.is_empty() && rest[0] != 0x45 {
        stack.payload = rest.to_vec();
        return Ok(stack);
    }
    if rest.len() < IPV4_LEN {
        return Err(PacketError::TruncatedFrame(format!(
            "ethertype 0x0800 but only {} bytes follow the Ethernet header",
            rest.len()
        )));
    }
    let total_length = u16::from_be_bytes([rest[2], rest[3]]);
    if usize::from(total_length) > rest.len() {
        return Err(PacketError::TruncatedFrame(format!(
            "ipv4 total_length {total_length} exceeds {} available bytes",
            rest.len()
        )));
    }
    if usize::from(total_length) < IPV4_LEN {
        return Err(PacketError::TruncatedFrame(format!(
            "ipv4 total_length {total_length} shorter than the ipv4 header"
        )));
    }
    let ipv4 = Ipv4Header {
        dscp: rest[1],
        total_length,
        ttl: rest[8],
        protocol: rest[9],
        src_ip: Ipv4Addr::new(rest[12], rest[13], rest[14], rest[15]),
        dst_ip: Ipv4Addr::new(rest[16], rest[17], rest[18], rest[19]),
    };
    // Trailing bytes beyond total_length (link padding) are dropped.
    let ip_payload = &rest[IPV4_LEN..usize::from(total_length)];
    let dscp = ipv4.dscp;
    let protocol = ipv4.protocol;
    stack.ipv4 = Some(ipv4);
    if protocol != IPPROTO_UDP {
        stack.payload = ip_payload.to_vec();
        return Ok(stack);
    }
    if ip_payload.len() < UDP_LEN {
        return Err(PacketError::TruncatedFrame(format!(
            "ipv4 protocol 17 but only {} bytes of UDP",
            ip_payload.len()
        )));
    }
    let udp = UdpHeader {
        src_port: u16::from_be_bytes([ip_payload[0], ip_payload[1]]),
        dst_port: u16::from_be_bytes([ip_payload[2], ip_payload[3]]),
        length: u16::from_be_bytes([ip_payload[4], ip_payload[5]]),
    };
    if usize::from(udp.length) > ip_payload.len() {
        return Err(PacketError::TruncatedFrame(format!(
            "udp length {} exceeds {} available bytes",
            udp.length,
            ip_payload.len()
        )));
    }
    if usize::from(udp.length) < UDP_LEN {
        return Err(PacketError::TruncatedFrame(format!(
            "udp length {} shorter than the udp header",
            udp.length
        )));
    }
    let mut content = &ip_payload[UDP_LEN..usize::from(udp.length)];
    stack.udp = Some(udp);
    if dscp == INT_DSCP {
        let (int, after) = parse_int_stack(content)?;
        stack.int_stack = Some(int);
        content = after;
    }
    if content.len() >= RTPS_LEN && content[0..4] == RTPS_MAGIC {
        stack.rtps = Some(RtpsHeader {
            protocol_version: u16::from_be_bytes([content[4], content[5]]),
            vendor_id: u16::from_be_bytes([content[6], content[7]]),
            guid_prefix: content[8..20].try_into().unwrap(),
        });
        content = &content[RTPS_LEN..];
    }
    stack.payload = content.to_vec();
    Ok(stack)
}

fn parse_int_stack(bytes: &[u8]) -> Result<(IntStack, &[u8]), PacketError> {
    if bytes.len() < INT_SHIM_LEN {
        return Err(PacketError::BadIntStack(format!(
            "dscp 0x17 but only {} bytes after the UDP header",
            bytes.len()
        )));
    }
    if bytes[0] != 1 {
        return Err(PacketError::BadIntStack(format!("unknown INT version {}", bytes[0])));
    }
    let hop_count = usize::from(bytes[1]);
    let node_meta_len = usize::from(bytes[2]);
    if node_meta_len != 0 && node_meta_len != NODE_META_LEN {
        return Err(PacketError::BadIntStack(format!("node_meta_len {node_meta_len} not in {{0, 11}}")));
    }
    if hop_count > INT_HOP_CAP {
        return Err(PacketError::BadIntStack(format!("hop_count {hop_count} exceeds the cap of {INT_HOP_CAP}")));
    }
    let need = INT_SHIM_LEN + node_meta_len + hop_count * HOP_LEN;
    if bytes.len() < need {
        return Err(PacketError::BadIntStack(format!(
            "hop_count {hop_count} needs {need} bytes, only {} remain",
            bytes.len()
        )));
    }
    let mut at = INT_SHIM_LEN;
    let node_meta = if node_meta_len == NODE_META_LEN {
        let m = &bytes[at..at + NODE_META_LEN];
        at += NODE_META_LEN;
        Some(NodeMetadata {
            node_id: u32::from_be_bytes(m[0..4].try_into().unwrap()),
            cpu_load_pct: m[4],
            loc_x: i16::from_be_bytes([m[5], m[6]]),
            loc_y: i16::from_be_bytes([m[7], m[8]]),
            capabilities: u16::from_be_bytes([m[9], m[10]]),
        })
    } else {
        None
    };
    let mut hops = Vec::with_capacity(hop_count);
    for _ in 0..hop_count {
        let h = &bytes[at..at + HOP_LEN];
        at += HOP_LEN;
        hops.push(IntHopMetadata {
            switch_id: u32::from_be_bytes(h[0..4].try_into().unwrap()),
            hop_latency_us: u32::from_be_bytes(h[4..8].try_into().unwrap()),
        });
    }
    Ok((IntStack { node_meta, hops }, &bytes[at..]))
}

/// Serializes a header stack to wire bytes; the exact inverse of
/// [`parse_packet`] on well-formed stacks.
pub fn emit_packet(stack: &HeaderStack) -> Result<Vec<u8>, PacketError> {
    stack.check_invariants()?;
    let mut out = Vec::with_capacity(ETH_LEN + stack.payload.len() + 64);
    out.extend_from_slice(&stack.eth.dst_mac.0);
    out.extend_from_slice(&stack.eth.src_mac.0);
    out.extend_from_slice(&stack.eth.ethertype.to_be_bytes());
    let Some(ipv4) = &stack.ipv4 else {
        out.extend_from_slice(&stack.payload);
        return Ok(out);
    };
    out.push(0x45);
    out.push(ipv4.dscp);
    out.extend_from_slice(&ipv4.total_length.to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]); // id, flags/frag
    out.push(ipv4.ttl);
    out.push(ipv4.protocol);
    out.extend_from_slice(&[0, 0]); // checksum, always zero
    out.extend_from_slice(&ipv4.src_ip.octets());
    out.extend_from_slice(&ipv4.dst_ip.octets());
    if let Some(udp) = &stack.udp {
        out.extend_from_slice(&udp.src_port.to_be_bytes());
        out.extend_from_slice(&udp.dst_port.to_be_bytes());
        out.extend_from_slice(&udp.length.to_be_bytes());
        out.extend_from_slice(&[0, 0]); // checksum, always zero
    }
    if let Some(int) = &stack.int_stack {
        out.push(1);
        out.push(int.hops.len() as u8);
        out.push(if int.node_meta.is_some() { NODE_META_LEN as u8 } else { 0 });
        out.push(0);
        if let Some(m) = &int.node_meta {
            out.extend_from_slice(&m.node_id.to_be_bytes());
            out.push(m.cpu_load_pct);
            out.extend_from_slice(&m.loc_x.to_be_bytes());
            out.extend_from_slice(&m.loc_y.to_be_bytes());
            out.extend_from_slice(&m.capabilities.to_be_bytes());
        }
        for h in &int.hops {
            out.extend_from_slice(&h.switch_id.to_be_bytes());
            out.extend_from_slice(&h.hop_latency_us.to_be_bytes());
        }
    }
    if let Some(rtps) = &stack.rtps {
        out.extend_from_slice(&RTPS_MAGIC);
        out.extend_from_slice(&rtps.protocol_version.to_be_bytes());
        out.extend_from_slice(&rtps.vendor_id.to_be_bytes());
        out.extend_from_slice(&rtps.guid_prefix);
    }
    out.extend_from_slice(&stack.payload);
    Ok(out)
}

/// Packet-in reason: an RTPS packet punted for inspection.
pub const CPU_REASON_RTPS: u8 = 0x01;
/// Packet-in reason: a telemetry report extracted at an INT sink.
pub const CPU_REASON_INT_REPORT: u8 = 0x02;
/// Packet-in reason: an explicit table-miss punt.
pub const CPU_REASON_TABLE_MISS: u8 = 0x03;

/// Egress value on a packet-out that replicates the frame to all ports.
pub const CPU_OUT_ALL_PORTS: u16 = 0xFFFF;
/// Egress value on a packet-out that submits the frame to the ingress
/// pipeline. Port 0 is reserved for the CPU on every switch.
pub const CPU_OUT_PIPELINE: u16 = 0;

/// Wraps a frame in the switch-to-controller CPU-port encapsulation:
/// `ingress_port(2) reason(1) pad(1)` then the frame.
pub fn encode_cpu_in(ingress_port: u16, reason: u8, frame: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + frame.len());
    out.extend_from_slice(&ingress_port.to_be_bytes());
    out.push(reason);
    out.push(0);
    out.extend_from_slice(frame);
    out
}

/// Splits a CPU-in encapsulation into `(ingress_port, reason, frame)`.
pub fn decode_cpu_in(bytes: &[u8]) -> Result<(u16, u8, &[u8]), PacketError> {
    if bytes.len() < 4 {
        return Err(PacketError::TruncatedFrame("cpu-in shorter than 4 bytes".into()));
    }
    Ok((u16::from_be_bytes([bytes[0], bytes[1]]), bytes[2], &bytes[4..]))
}

/// Wraps a frame in the controller-to-switch CPU-port encapsulation:
/// `egress_port(2) pad(2)` then the frame.
pub fn encode_cpu_out(egress_port: u16, frame: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + frame.len());
    out.extend_from_slice(&egress_port.to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(frame);
    out
}

/// Splits a CPU-out encapsulation into `(egress_port, frame)`.
pub fn decode_cpu_out(bytes: &[u8]) -> Result<(u16, &[u8]), PacketError> {
    if bytes.len() < 4 {
        return Err(PacketError::TruncatedFrame("cpu-out shorter than 4 bytes".into()));
    }
    Ok((u16::from_be_bytes([bytes[0], bytes[1]]), &bytes[4..]))
}
