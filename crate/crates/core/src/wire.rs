//! IPv6, Fragment Header, ICMPv6 and UDP wire formats (RFC 8200, RFC 4443,
//! RFC 768). Everything here is IPv6-and-up; link-layer framing is the
//! transport's business.

use std::net::Ipv6Addr;

use thiserror::Error;

use crate::checksum::{self, Parity, PayloadPattern, PseudoHeader};
use crate::models::FragmentSpec;

pub const IPV6_HEADER_LEN: usize = 40;
pub const FRAGMENT_HEADER_LEN: usize = 8;
pub const ICMPV6_HEADER_LEN: usize = 8;
pub const UDP_HEADER_LEN: usize = 8;
/// Largest non-jumbogram IPv6 packet.
pub const MAX_PACKET_LEN: usize = IPV6_HEADER_LEN + u16::MAX as usize;
/// Largest value of the 13-bit fragment offset field.
pub const MAX_FRAGMENT_OFFSET: u16 = 0x1FFF;

/// IP protocol numbers used in this crate.
pub mod proto {
    pub const HOP_BY_HOP: u8 = 0;
    pub const UDP: u8 = 17;
    pub const ROUTING: u8 = 43;
    pub const FRAGMENT: u8 = 44;
    pub const ESP: u8 = 50;
    pub const AUTH: u8 = 51;
    pub const ICMPV6: u8 = 58;
    pub const NO_NEXT_HEADER: u8 = 59;
    pub const DESTINATION_OPTIONS: u8 = 60;
    pub const MOBILITY: u8 = 135;
    pub const HIP: u8 = 139;
    pub const SHIM6: u8 = 140;
}

pub mod icmp_type {
    pub const DESTINATION_UNREACHABLE: u8 = 1;
    pub const PACKET_TOO_BIG: u8 = 2;
    pub const TIME_EXCEEDED: u8 = 3;
    pub const PARAMETER_PROBLEM: u8 = 4;
    pub const ECHO_REQUEST: u8 = 128;
    pub const ECHO_REPLY: u8 = 129;
}

/// Parameter Problem code for a first fragment with an incomplete header chain (RFC 7112).
pub const PARAM_PROBLEM_INCOMPLETE_CHAIN: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("extension header chain broken at entry {index}: next_header {found} but successor is {expected}")]
    ChainBroken { index: usize, found: u8, expected: u8 },
    #[error("packet of {0} bytes exceeds the IPv6 maximum")]
    Oversize(usize),
    #[error("fragment offset {units} units overflows the 13-bit field or the 65535-byte limit")]
    OffsetOverflow { units: u32 },
    #[error("non-final fragment carries {0} bytes, not a multiple of 8")]
    NonFinalUnaligned(usize),
    #[error("truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("malformed extension header chain: {0}")]
    MalformedChain(String),
    #[error("not an IPv6 packet (version {0})")]
    NotIpv6(u8),
    #[error(transparent)]
    Checksum(#[from] checksum::ChecksumError),
}

fn need(buf: &[u8], n: usize) -> Result<(), WireError> {
    if buf.len() < n {
        Err(WireError::Truncated {
            needed: n,
            have: buf.len(),
        })
    } else {
        Ok(())
    }
}

/// Fixed 40-byte IPv6 header. `payload_length` and `next_header` are
/// recomputed by [`serialize_packet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv6Header {
    pub traffic_class: u8,
    pub flow_label: u32,
    pub payload_length: u16,
    pub next_header: u8,
    pub hop_limit: u8,
    pub src: Ipv6Addr,
    pub dst: Ipv6Addr,
}

impl Ipv6Header {
    pub fn new(src: Ipv6Addr, dst: Ipv6Addr) -> Self {
        Ipv6Header {
            traffic_class: 0,
            flow_label: 0,
            payload_length: 0,
            next_header: proto::NO_NEXT_HEADER,
            hop_limit: 64,
            src,
            dst,
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        let first = (6u32 << 28) | ((self.traffic_class as u32) << 20) | (self.flow_label & 0x000F_FFFF);
        out.extend_from_slice(&first.to_be_bytes());
        out.extend_from_slice(&self.payload_length.to_be_bytes());
        out.push(self.next_header);
        out.push(self.hop_limit);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
    }

    pub fn parse(buf: &[u8]) -> Result<Self, WireError> {
        need(buf, IPV6_HEADER_LEN)?;
        let first = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
        let version = (first >> 28) as u8;
        if version != 6 {
            return Err(WireError::NotIpv6(version));
        }
        let mut src = [0u8; 16];
        let mut dst = [0u8; 16];
        src.copy_from_slice(&buf[8..24]);
        dst.copy_from_slice(&buf[24..40]);
        Ok(Ipv6Header {
            traffic_class: ((first >> 20) & 0xFF) as u8,
            flow_label: first & 0x000F_FFFF,
            payload_length: u16::from_be_bytes([buf[4], buf[5]]),
            next_header: buf[6],
            hop_limit: buf[7],
            src: Ipv6Addr::from(src),
            dst: Ipv6Addr::from(dst),
        })
    }
}

/// IPv6 Fragment Header:
/// `next_header(8) | reserved(8) | offset(13) | res(2) | M(1) | identification(32)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentHeader {
    pub next_header: u8,
    pub reserved: u8,
    /// Offset in 8-octet units.
    pub fragment_offset: u16,
    pub res: u8,
    pub more_fragments: bool,
    pub identification: u32,
}

impl FragmentHeader {
    pub fn new(next_header: u8, fragment_offset: u16, more_fragments: bool, identification: u32) -> Self {
        FragmentHeader {
            next_header,
            reserved: 0,
            fragment_offset,
            res: 0,
            more_fragments,
            identification,
        }
    }

    pub fn to_bytes(&self) -> [u8; FRAGMENT_HEADER_LEN] {
        let packed = ((self.fragment_offset & MAX_FRAGMENT_OFFSET) << 3) | (((self.res & 0b11) as u16) << 1) | self.more_fragments as u16;
        let mut out = [0u8; FRAGMENT_HEADER_LEN];
        out[0] = self.next_header;
        out[1] = self.reserved;
        out[2..4].copy_from_slice(&packed.to_be_bytes());
        out[4..8].copy_from_slice(&self.identification.to_be_bytes());
        out
    }

    pub fn parse(buf: &[u8]) -> Result<Self, WireError> {
        need(buf, FRAGMENT_HEADER_LEN)?;
        let packed = u16::from_be_bytes([buf[2], buf[3]]);
        Ok(FragmentHeader {
            next_header: buf[0],
            reserved: buf[1],
            fragment_offset: packed >> 3,
            res: ((packed >> 1) & 0b11) as u8,
            more_fragments: packed & 1 == 1,
            identification: u32::from_be_bytes([buf[4], buf[5], buf[6], buf[7]]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeaderKind {
    HopByHop,
    DestinationOptions,
    Routing,
    Fragment,
    /// Any other extension header, skipped generically by length.
    Other(u8),
}

impl HeaderKind {
    pub fn protocol(self) -> u8 {
        match self {
            HeaderKind::HopByHop => proto::HOP_BY_HOP,
            HeaderKind::DestinationOptions => proto::DESTINATION_OPTIONS,
            HeaderKind::Routing => proto::ROUTING,
            HeaderKind::Fragment => proto::FRAGMENT,
            HeaderKind::Other(p) => p,
        }
    }

    /// Maps a next-header value to an extension header kind, or `None` when
    /// the value denotes an upper layer (or No Next Header).
    pub fn from_protocol(p: u8) -> Option<Self> {
        match p {
            proto::HOP_BY_HOP => Some(HeaderKind::HopByHop),
            proto::DESTINATION_OPTIONS => Some(HeaderKind::DestinationOptions),
            proto::ROUTING => Some(HeaderKind::Routing),
            proto::FRAGMENT => Some(HeaderKind::Fragment),
            proto::AUTH | proto::MOBILITY | proto::HIP | proto::SHIM6 | 253 | 254 => Some(HeaderKind::Other(p)),
            _ => None,
        }
    }

    /// RFC 8200 recommended position; lower comes first. Destination Options
    /// may appear twice (before Routing and before the upper layer).
    fn order_rank(self) -> u8 {
        match self {
            HeaderKind::HopByHop => 0,
            HeaderKind::DestinationOptions => 1,
            HeaderKind::Routing => 2,
            HeaderKind::Fragment => 3,
            HeaderKind::Other(proto::AUTH) => 4,
            HeaderKind::Other(_) => 5,
        }
    }
}

/// One extension header as raw bytes, its own next-header byte included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtHeader {
    pub kind: HeaderKind,
    pub bytes: Vec<u8>,
}

impl ExtHeader {
    pub fn fragment(header: FragmentHeader) -> Self {
        ExtHeader {
            kind: HeaderKind::Fragment,
            bytes: header.to_bytes().to_vec(),
        }
    }

    /// An 8-byte options header (Hop-by-Hop or Destination Options) holding a
    /// single PadN option.
    pub fn padded_options(kind: HeaderKind, next_header: u8) -> Self {
        ExtHeader {
            kind,
            bytes: vec![next_header, 0, 0x01, 0x04, 0, 0, 0, 0],
        }
    }

    pub fn next_header(&self) -> u8 {
        self.bytes.first().copied().unwrap_or(proto::NO_NEXT_HEADER)
    }

    fn set_next_header(&mut self, nh: u8) {
        if let Some(b) = self.bytes.first_mut() {
            *b = nh;
        }
    }

    pub fn as_fragment(&self) -> Option<FragmentHeader> {
        match self.kind {
            HeaderKind::Fragment => FragmentHeader::parse(&self.bytes).ok(),
            _ => None,
        }
    }
}

/// Ordered extension headers terminated by an upper-layer protocol (or No
/// Next Header).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtHeaderChain {
    pub headers: Vec<ExtHeader>,
    pub upper: u8,
}

impl ExtHeaderChain {
    pub fn empty(upper: u8) -> Self {
        ExtHeaderChain { headers: Vec::new(), upper }
    }

    /// Builds a chain and rewrites every next-header byte so the links are
    /// consistent.
    pub fn linked(mut headers: Vec<ExtHeader>, upper: u8) -> Self {
        let kinds: Vec<u8> = headers.iter().map(|h| h.kind.protocol()).collect();
        for (i, h) in headers.iter_mut().enumerate() {
            h.set_next_header(kinds.get(i + 1).copied().unwrap_or(upper));
        }
        ExtHeaderChain { headers, upper }
    }

    /// Protocol number the IPv6 header's next-header field must carry.
    pub fn first_protocol(&self) -> u8 {
        self.headers.first().map(|h| h.kind.protocol()).unwrap_or(self.upper)
    }

    pub fn serialized_len(&self) -> usize {
        self.headers.iter().map(|h| h.bytes.len()).sum()
    }

    pub fn validate(&self) -> Result<(), WireError> {
        for (i, h) in self.headers.iter().enumerate() {
            let expected = self.headers.get(i + 1).map(|n| n.kind.protocol()).unwrap_or(self.upper);
            if h.next_header() != expected {
                return Err(WireError::ChainBroken {
                    index: i,
                    found: h.next_header(),
                    expected,
                });
            }
            let expected_len = match h.kind {
                HeaderKind::Fragment => FRAGMENT_HEADER_LEN,
                HeaderKind::Other(proto::AUTH) => (*h.bytes.get(1).unwrap_or(&0) as usize + 2) * 4,
                _ => (*h.bytes.get(1).unwrap_or(&0) as usize + 1) * 8,
            };
            if h.bytes.len() != expected_len {
                return Err(WireError::MalformedChain(format!(
                    "entry {i} is {} bytes but its length field says {expected_len}",
                    h.bytes.len()
                )));
            }
        }
        if HeaderKind::from_protocol(self.upper).is_some() {
            return Err(WireError::MalformedChain(format!(
                "chain terminates at extension header {}",
                self.upper
            )));
        }
        Ok(())
    }

    pub fn fragment(&self) -> Option<FragmentHeader> {
        self.headers.iter().find_map(ExtHeader::as_fragment)
    }

    /// Headers after the Fragment Header (part of the fragmentable part).
    pub fn after_fragment(&self) -> &[ExtHeader] {
        match self.headers.iter().position(|h| h.kind == HeaderKind::Fragment) {
            Some(i) => &self.headers[i + 1..],
            None => &[],
        }
    }

    /// RFC 8200 ordering violations and per-kind repetition violations.
    pub fn order_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut last_rank = 0u8;
        let mut counts = std::collections::HashMap::<HeaderKind, usize>::new();
        for (i, h) in self.headers.iter().enumerate() {
            *counts.entry(h.kind).or_default() += 1;
            if h.kind == HeaderKind::HopByHop && i != 0 {
                out.push(format!("hop-by-hop options at position {i}, must be first"));
            }
            // A trailing Destination Options header sits just before the upper layer.
            let is_final_dest = h.kind == HeaderKind::DestinationOptions && i + 1 == self.headers.len();
            let rank = if is_final_dest { 6 } else { h.kind.order_rank() };
            if rank < last_rank {
                out.push(format!("{:?} at position {i} out of recommended order", h.kind));
            }
            last_rank = last_rank.max(rank);
        }
        for (kind, n) in counts {
            let max = if kind == HeaderKind::DestinationOptions { 2 } else { 1 };
            if n > max {
                out.push(format!("{kind:?} repeated {n} times (max {max})"));
            }
        }
        out.sort();
        out
    }
}

/// One complete IPv6 packet (one fragment), ready for a link.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame(Vec<u8>);

impl Frame {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Frame(bytes)
    }
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl AsRef<[u8]> for Frame {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Serializes header, chain and payload. `payload_length` and the header's
/// `next_header` are derived from the chain and payload.
pub fn serialize_packet(header: &Ipv6Header, chain: &ExtHeaderChain, payload: &[u8]) -> Result<Frame, WireError> {
    chain.validate()?;
    let body_len = chain.serialized_len() + payload.len();
    if body_len > u16::MAX as usize {
        return Err(WireError::Oversize(IPV6_HEADER_LEN + body_len));
    }
    let mut h = *header;
    h.payload_length = body_len as u16;
    h.next_header = chain.first_protocol();

    let mut out = Vec::with_capacity(IPV6_HEADER_LEN + body_len);
    h.write(&mut out);
    for ext in &chain.headers {
        out.extend_from_slice(&ext.bytes);
    }
    out.extend_from_slice(payload);
    Ok(Frame(out))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Icmpv6Echo {
    pub msg_type: u8,
    pub code: u8,
    pub checksum: u16,
    pub identifier: u16,
    pub sequence: u16,
    pub payload: Vec<u8>,
}

impl Icmpv6Echo {
    pub fn request(identifier: u16, sequence: u16, payload: Vec<u8>) -> Self {
        Icmpv6Echo {
            msg_type: icmp_type::ECHO_REQUEST,
            code: 0,
            checksum: 0,
            identifier,
            sequence,
            payload,
        }
    }

    pub fn reply(identifier: u16, sequence: u16, payload: Vec<u8>) -> Self {
        Icmpv6Echo {
            msg_type: icmp_type::ECHO_REPLY,
            ..Icmpv6Echo::request(identifier, sequence, payload)
        }
    }

    /// The 8-byte header with the given checksum.
    pub fn header_bytes(&self, checksum: u16) -> [u8; ICMPV6_HEADER_LEN] {
        let mut out = [0u8; ICMPV6_HEADER_LEN];
        out[0] = self.msg_type;
        out[1] = self.code;
        out[2..4].copy_from_slice(&checksum.to_be_bytes());
        out[4..6].copy_from_slice(&self.identifier.to_be_bytes());
        out[6..8].copy_from_slice(&self.sequence.to_be_bytes());
        out
    }

    /// Computes the checksum for `src`/`dst`, stores it and returns the message bytes.
    pub fn seal(&mut self, src: Ipv6Addr, dst: Ipv6Addr) -> Vec<u8> {
        let mut bytes = self.header_bytes(0).to_vec();
        bytes.extend_from_slice(&self.payload);
        let pseudo = PseudoHeader::new(src, dst, proto::ICMPV6, bytes.len());
        self.checksum = checksum::internet_checksum(&pseudo, &bytes);
        bytes[2..4].copy_from_slice(&self.checksum.to_be_bytes());
        bytes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = self.header_bytes(self.checksum).to_vec();
        bytes.extend_from_slice(&self.payload);
        bytes
    }

    pub fn parse(buf: &[u8]) -> Result<Self, WireError> {
        need(buf, ICMPV6_HEADER_LEN)?;
        Ok(Icmpv6Echo {
            msg_type: buf[0],
            code: buf[1],
            checksum: u16::from_be_bytes([buf[2], buf[3]]),
            identifier: u16::from_be_bytes([buf[4], buf[5]]),
            sequence: u16::from_be_bytes([buf[6], buf[7]]),
            payload: buf[8..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Icmpv6ParamProblem {
    pub code: u8,
    pub checksum: u16,
    pub pointer: u32,
    pub invoking_packet: Vec<u8>,
}

impl Icmpv6ParamProblem {
    pub fn new(code: u8, pointer: u32, invoking_packet: Vec<u8>) -> Self {
        Icmpv6ParamProblem {
            code,
            checksum: 0,
            pointer,
            invoking_packet,
        }
    }

    pub fn seal(&mut self, src: Ipv6Addr, dst: Ipv6Addr) -> Vec<u8> {
        let mut bytes = vec![icmp_type::PARAMETER_PROBLEM, self.code, 0, 0];
        bytes.extend_from_slice(&self.pointer.to_be_bytes());
        bytes.extend_from_slice(&self.invoking_packet);
        let pseudo = PseudoHeader::new(src, dst, proto::ICMPV6, bytes.len());
        self.checksum = checksum::internet_checksum(&pseudo, &bytes);
        bytes[2..4].copy_from_slice(&self.checksum.to_be_bytes());
        bytes
    }

    pub fn parse(buf: &[u8]) -> Result<Self, WireError> {
        need(buf, 8)?;
        Ok(Icmpv6ParamProblem {
            code: buf[1],
            checksum: u16::from_be_bytes([buf[2], buf[3]]),
            pointer: u32::from_be_bytes([buf[4], buf[5], buf[6], buf[7]]),
            invoking_packet: buf[8..].to_vec(),
        })
    }

    /// Fragment identification of the invoking packet, if it had one.
    pub fn invoking_identification(&self) -> Option<u32> {
        parse_frame(&Frame(self.invoking_packet.clone()))
            .ok()
            .and_then(|p| p.chain.fragment())
            .map(|f| f.identification)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpDatagram {
    pub src_port: u16,
    pub dst_port: u16,
    pub length: u16,
    pub checksum: u16,
    pub payload: Vec<u8>,
}

impl UdpDatagram {
    pub fn new(src_port: u16, dst_port: u16, payload: Vec<u8>) -> Self {
        UdpDatagram {
            src_port,
            dst_port,
            length: (UDP_HEADER_LEN + payload.len()) as u16,
            checksum: 0,
            payload,
        }
    }

    pub fn header_bytes(&self, checksum: u16) -> [u8; UDP_HEADER_LEN] {
        let mut out = [0u8; UDP_HEADER_LEN];
        out[0..2].copy_from_slice(&self.src_port.to_be_bytes());
        out[2..4].copy_from_slice(&self.dst_port.to_be_bytes());
        out[4..6].copy_from_slice(&self.length.to_be_bytes());
        out[6..8].copy_from_slice(&checksum.to_be_bytes());
        out
    }

    /// Computes the (mandatory) checksum and returns the datagram bytes. A
    /// computed zero is sent as 0xFFFF.
    pub fn seal(&mut self, src: Ipv6Addr, dst: Ipv6Addr) -> Vec<u8> {
        let mut bytes = self.header_bytes(0).to_vec();
        bytes.extend_from_slice(&self.payload);
        let pseudo = PseudoHeader::new(src, dst, proto::UDP, bytes.len());
        let sum = checksum::internet_checksum(&pseudo, &bytes);
        self.checksum = if sum == 0 { 0xFFFF } else { sum };
        bytes[6..8].copy_from_slice(&self.checksum.to_be_bytes());
        bytes
    }

    pub fn parse(buf: &[u8]) -> Result<Self, WireError> {
        need(buf, UDP_HEADER_LEN)?;
        Ok(UdpDatagram {
            src_port: u16::from_be_bytes([buf[0], buf[1]]),
            dst_port: u16::from_be_bytes([buf[2], buf[3]]),
            length: u16::from_be_bytes([buf[4], buf[5]]),
            checksum: u16::from_be_bytes([buf[6], buf[7]]),
            payload: buf[8..].to_vec(),
        })
    }
}

/// Classification of whatever follows the extension header chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpperLayer {
    EchoRequest(Icmpv6Echo),
    EchoReply(Icmpv6Echo),
    ParamProblem(Icmpv6ParamProblem),
    OtherIcmpv6 { msg_type: u8, code: u8 },
    Udp(UdpDatagram),
    /// Data of a non-first fragment; not interpretable on its own.
    FragmentData,
    NoNextHeader,
    Other(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub header: Ipv6Header,
    pub chain: ExtHeaderChain,
    /// Bytes after the last extension header.
    pub payload: Vec<u8>,
    pub upper: UpperLayer,
}

impl ParsedPacket {
    pub fn fragment(&self) -> Option<FragmentHeader> {
        self.chain.fragment()
    }

    /// Bytes following the Fragment Header: the fragment's data as seen by a
    /// reassembling receiver.
    pub fn fragment_data(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for h in self.chain.after_fragment() {
            out.extend_from_slice(&h.bytes);
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Parses one IPv6 packet. Unknown extension headers are skipped by length.
pub fn parse_frame(frame: &Frame) -> Result<ParsedPacket, WireError> {
    let buf = frame.as_bytes();
    let header = Ipv6Header::parse(buf)?;
    let end = (IPV6_HEADER_LEN + header.payload_length as usize).min(buf.len());
    let mut pos = IPV6_HEADER_LEN;
    let mut next = header.next_header;
    let mut headers = Vec::new();

    while let Some(kind) = HeaderKind::from_protocol(next) {
        let rest = &buf[pos..end];
        need(rest, 2).map_err(|_| WireError::MalformedChain(format!("{kind:?} header truncated at {pos}")))?;
        let len = match kind {
            HeaderKind::Fragment => FRAGMENT_HEADER_LEN,
            HeaderKind::Other(proto::AUTH) => (rest[1] as usize + 2) * 4,
            _ => (rest[1] as usize + 1) * 8,
        };
        if rest.len() < len {
            return Err(WireError::MalformedChain(format!(
                "{kind:?} header claims {len} bytes, {} available",
                rest.len()
            )));
        }
        headers.push(ExtHeader {
            kind,
            bytes: rest[..len].to_vec(),
        });
        next = rest[0];
        pos += len;
        if headers.len() > 64 {
            return Err(WireError::MalformedChain("chain longer than 64 headers".into()));
        }
    }

    let chain = ExtHeaderChain { headers, upper: next };
    let payload = buf[pos..end].to_vec();
    let non_first = chain.fragment().map(|f| f.fragment_offset != 0).unwrap_or(false);
    let upper = if non_first {
        UpperLayer::FragmentData
    } else {
        classify_upper(next, &payload)
    };
    Ok(ParsedPacket {
        header,
        chain,
        payload,
        upper,
    })
}

fn classify_upper(next: u8, payload: &[u8]) -> UpperLayer {
    match next {
        proto::ICMPV6 if payload.len() >= ICMPV6_HEADER_LEN => match payload[0] {
            icmp_type::ECHO_REQUEST => Icmpv6Echo::parse(payload).map(UpperLayer::EchoRequest).unwrap_or(UpperLayer::Other(next)),
            icmp_type::ECHO_REPLY => Icmpv6Echo::parse(payload).map(UpperLayer::EchoReply).unwrap_or(UpperLayer::Other(next)),
            icmp_type::PARAMETER_PROBLEM => Icmpv6ParamProblem::parse(payload)
                .map(UpperLayer::ParamProblem)
                .unwrap_or(UpperLayer::Other(next)),
            t => UpperLayer::OtherIcmpv6 {
                msg_type: t,
                code: payload[1],
            },
        },
        proto::UDP if payload.len() >= UDP_HEADER_LEN => UdpDatagram::parse(payload).map(UpperLayer::Udp).unwrap_or(UpperLayer::Other(next)),
        proto::NO_NEXT_HEADER => UpperLayer::NoNextHeader,
        other => UpperLayer::Other(other),
    }
}

/// Splits into one frame per [`FragmentSpec`]. The fragment carrying the upper
/// header gets `upper_header` followed by its pattern; every other fragment
/// is filled from its own pattern, never sliced from a shared buffer.
///
/// `chain` is the unfragmentable part; its `upper` is the protocol recorded
/// in every Fragment Header.
pub fn fragment_packet(
    header: &Ipv6Header,
    chain: &ExtHeaderChain,
    upper_header: &[u8],
    geometry: &[FragmentSpec],
    parity: Parity,
    identification: u32,
) -> Result<Vec<Frame>, WireError> {
    geometry
        .iter()
        .map(|spec| {
            let data = fragment_data(spec, upper_header, parity);
            fragment_frame(header, chain, spec.offset_units, spec.more_fragments, identification, &data)
        })
        .collect()
}

/// Data bytes for one fragment of a pattern-filled geometry.
pub fn fragment_data(spec: &FragmentSpec, upper_header: &[u8], parity: Parity) -> Vec<u8> {
    let total = spec.length_units as usize * 8;
    let mut data = Vec::with_capacity(total);
    if spec.carries_upper_header {
        data.extend_from_slice(&upper_header[..upper_header.len().min(total)]);
    }
    let remaining_units = (total - data.len()) / 8;
    match spec.pattern {
        Some(label) => data.extend(PayloadPattern::new(label, parity).fill(remaining_units)),
        None => data.resize(total, 0),
    }
    data.resize(total, 0);
    data
}

/// A single fragment frame carrying `data` at `offset_units`.
pub fn fragment_frame(
    header: &Ipv6Header,
    chain: &ExtHeaderChain,
    offset_units: u16,
    more_fragments: bool,
    identification: u32,
    data: &[u8],
) -> Result<Frame, WireError> {
    if offset_units > MAX_FRAGMENT_OFFSET || offset_units as usize * 8 + data.len() > u16::MAX as usize {
        return Err(WireError::OffsetOverflow {
            units: offset_units as u32,
        });
    }
    if more_fragments && !data.len().is_multiple_of(8) {
        return Err(WireError::NonFinalUnaligned(data.len()));
    }
    let mut headers = chain.headers.clone();
    headers.push(ExtHeader::fragment(FragmentHeader::new(
        chain.upper,
        offset_units,
        more_fragments,
        identification,
    )));
    let frag_chain = ExtHeaderChain::linked(headers, chain.upper);
    serialize_packet(header, &frag_chain, data)
}
