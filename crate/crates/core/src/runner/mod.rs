//! Campaign execution against a live target or the simulator.
//!
//! Frames go out through a [`Transport`]. [`live::LiveTransport`] uses raw
//! sockets; [`simulated::SimulatedHost`] feeds them to a reassembly buffer
//! and answers like a target with the chosen policy would.

pub mod live;
pub mod pcap;
pub mod simulated;

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv6Addr;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Endpoints, ModelError, ModelKind, TestCase, TestMode};
use crate::reassembly::{self, CaseExpectation, DropReason, ReassemblyOutcome, ReassemblyPolicy};
use crate::wire::{icmp_type, Frame, Icmpv6Echo, Icmpv6ParamProblem};

pub const DEFAULT_REPLY_TIMEOUT: Duration = Duration::from_secs(35);
pub const DEFAULT_INTER_FRAME_DELAY: Duration = Duration::from_millis(10);

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("send failed: {0}")]
    SendFailure(#[source] std::io::Error),
    #[error("capture failed: {0}")]
    CaptureFailure(String),
    #[error("raw sockets need elevated privileges (CAP_NET_RAW or root): {0}")]
    PrivilegeRequired(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Build(#[from] ModelError),
    #[error("result sink: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Live,
    DryRun(ReassemblyPolicy),
}

#[derive(Debug, Clone)]
pub struct RunnerConfig {
    pub target: Ipv6Addr,
    /// Source address written into frames; discovered from the routing table when absent.
    pub source: Option<Ipv6Addr>,
    pub interface: Option<String>,
    pub inter_frame_delay: Duration,
    pub reply_timeout: Duration,
    pub retries: usize,
    pub mode: RunMode,
    pub hop_limit: u8,
}

impl RunnerConfig {
    pub fn dry_run(policy: ReassemblyPolicy) -> Self {
        let e = Endpoints::default();
        RunnerConfig {
            target: e.dst,
            source: Some(e.src),
            interface: None,
            inter_frame_delay: DEFAULT_INTER_FRAME_DELAY,
            reply_timeout: DEFAULT_REPLY_TIMEOUT,
            retries: 0,
            mode: RunMode::DryRun(policy),
            hop_limit: e.hop_limit,
        }
    }

    pub fn live(target: Ipv6Addr, interface: impl Into<String>) -> Self {
        RunnerConfig {
            target,
            source: None,
            interface: Some(interface.into()),
            inter_frame_delay: DEFAULT_INTER_FRAME_DELAY,
            reply_timeout: DEFAULT_REPLY_TIMEOUT,
            retries: 1,
            mode: RunMode::Live,
            hop_limit: 64,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.reply_timeout.is_zero() {
            return Err(RunnerError::Config("reply timeout must be positive".into()));
        }
        if self.mode == RunMode::Live && self.interface.as_deref().map(str::is_empty).unwrap_or(true) {
            return Err(RunnerError::Config("live mode needs an interface".into()));
        }
        Ok(())
    }

    /// Source and target for frame construction.
    pub fn endpoints(&self) -> Result<Endpoints, RunnerError> {
        let src = match self.source {
            Some(s) => s,
            None => discover_source(self.target)?,
        };
        Ok(Endpoints {
            src,
            dst: self.target,
            hop_limit: self.hop_limit,
        })
    }
}

/// Asks the routing table which local address reaches `target`.
fn discover_source(target: Ipv6Addr) -> Result<Ipv6Addr, RunnerError> {
    if target.is_loopback() {
        return Ok(Ipv6Addr::LOCALHOST);
    }
    let sock = std::net::UdpSocket::bind("[::]:0").map_err(|e| RunnerError::Config(format!("source discovery: {e}")))?;
    sock.connect((target, 9))
        .map_err(|e| RunnerError::Config(format!("no route to {target}: {e}")))?;
    match sock.local_addr() {
        Ok(std::net::SocketAddr::V6(a)) => Ok(*a.ip()),
        Ok(other) => Err(RunnerError::Config(format!("unexpected local address {other}"))),
        Err(e) => Err(RunnerError::Config(format!("source discovery: {e}"))),
    }
}

/// An ICMPv6 message received from the network, without its IPv6 header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Received {
    pub source: Ipv6Addr,
    pub icmp: Vec<u8>,
}

pub trait Transport {
    /// Must not return before the capture path can see replies.
    fn start_capture(&mut self) -> Result<(), RunnerError>;
    fn send(&mut self, frame: &Frame) -> Result<(), RunnerError>;
    /// Called after the last frame of each packet copy.
    fn end_of_burst(&mut self) -> Result<(), RunnerError> {
        Ok(())
    }
    /// Next received ICMPv6 message, or `None` once `timeout` passes with nothing.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Received>, RunnerError>;
    fn pace(&mut self, delay: Duration) {
        std::thread::sleep(delay)
    }
    fn stop_capture(&mut self) {}
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn start_capture(&mut self) -> Result<(), RunnerError> {
        (**self).start_capture()
    }
    fn send(&mut self, frame: &Frame) -> Result<(), RunnerError> {
        (**self).send(frame)
    }
    fn end_of_burst(&mut self) -> Result<(), RunnerError> {
        (**self).end_of_burst()
    }
    fn recv(&mut self, timeout: Duration) -> Result<Option<Received>, RunnerError> {
        (**self).recv(timeout)
    }
    fn pace(&mut self, delay: Duration) {
        (**self).pace(delay)
    }
    fn stop_capture(&mut self) {
        (**self).stop_capture()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Observed {
    EchoReply,
    Silence,
    ParamProblem { code: u8 },
    OtherIcmp { msg_type: u8, code: u8 },
}

impl Observed {
    fn priority(&self) -> u8 {
        match self {
            Observed::EchoReply => 3,
            Observed::ParamProblem { .. } => 2,
            Observed::OtherIcmp { .. } => 1,
            Observed::Silence => 0,
        }
    }

    pub fn replied(&self) -> bool {
        *self == Observed::EchoReply
    }
}

/// Compact oracle entry stored with each result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub replies: usize,
    pub outcomes: Vec<String>,
}

impl From<&CaseExpectation> for OracleEntry {
    fn from(e: &CaseExpectation) -> Self {
        OracleEntry {
            replies: e.replies,
            outcomes: e.outcomes.iter().map(outcome_label).collect(),
        }
    }
}

pub fn outcome_label(o: &ReassemblyOutcome) -> String {
    match o {
        ReassemblyOutcome::Complete { letters, .. } => format!("complete:{letters}"),
        ReassemblyOutcome::Incomplete { .. } => "incomplete".into(),
        ReassemblyOutcome::Dropped { reason } => match reason {
            DropReason::OverlapStrict => "dropped:overlap".into(),
            DropReason::HeaderChain => "dropped:header_chain".into(),
            DropReason::Timeout => "dropped:timeout".into(),
            DropReason::NoHeader => "dropped:no_header".into(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub case_id: String,
    pub model: ModelKind,
    pub mode: TestMode,
    pub arrival_order: Vec<usize>,
    pub overlapping: bool,
    pub observed: Observed,
    pub reply_count: usize,
    pub oracle: BTreeMap<ReassemblyPolicy, OracleEntry>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Draws distinct nonzero identifications for every case: one for single and
/// repeated modes, five for the multi-packet mode.
pub fn allocate_identifications(cases: &[TestCase], seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    cases
        .iter()
        .map(|c| {
            (0..c.mode.identification_count())
                .map(|_| loop {
                    let id: u32 = rng.gen();
                    if id != 0 && used.insert(id) {
                        break id;
                    }
                })
                .collect()
        })
        .collect()
}

/// Sends one case and collects the target's answers.
pub fn run_case<T: Transport + ?Sized>(case: &TestCase, config: &RunnerConfig, transport: &mut T) -> Result<TestResult, RunnerError> {
    let endpoints = config.endpoints()?;
    let plans = case.packets(&endpoints)?;
    let oracle = reassembly::expected_outcomes(case).iter().map(|(p, e)| (*p, OracleEntry::from(e))).collect();
    let ids: HashSet<u32> = plans.iter().map(|p| p.identification).collect();
    let started_unix_ms = unix_ms();

    let mut first = true;
    for plan in &plans {
        for frag in &plan.fragments {
            if !first && !config.inter_frame_delay.is_zero() {
                transport.pace(config.inter_frame_delay);
            }
            first = false;
            transport.send(&frag.frame)?;
        }
        transport.end_of_burst()?;
    }

    let mut observed = Observed::Silence;
    let mut reply_count = 0;
    let deadline = Instant::now() + config.reply_timeout;
    while reply_count < plans.len() {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            break;
        }
        let Some(msg) = transport.recv(remaining)? else {
            break;
        };
        if msg.source != endpoints.dst {
            continue;
        }
        if let Some(class) = classify_reply(&msg.icmp, case.echo_identifier, &ids) {
            if class == Observed::EchoReply {
                reply_count += 1;
            }
            if class.priority() > observed.priority() {
                observed = class;
            }
        }
    }

    Ok(TestResult {
        case_id: case.case_id.clone(),
        model: case.model.kind,
        mode: case.mode,
        arrival_order: case.arrival_order.clone(),
        overlapping: case.has_overlap(),
        observed,
        reply_count,
        oracle,
        started_unix_ms,
        finished_unix_ms: unix_ms(),
    })
}

/// Matches an ICMPv6 message against one case.
pub fn classify_reply(icmp: &[u8], echo_identifier: u16, identifications: &HashSet<u32>) -> Option<Observed> {
    let (&msg_type, &code) = (icmp.first()?, icmp.get(1)?);
    match msg_type {
        icmp_type::ECHO_REPLY => {
            let echo = Icmpv6Echo::parse(icmp).ok()?;
            (echo.identifier == echo_identifier).then_some(Observed::EchoReply)
        }
        icmp_type::PARAMETER_PROBLEM => {
            let pp = Icmpv6ParamProblem::parse(icmp).ok()?;
            identifications
                .contains(&pp.invoking_identification()?)
                .then_some(Observed::ParamProblem { code })
        }
        t if t < 128 => {
            // Other errors quote the invoking packet the same way.
            let quoted = Icmpv6ParamProblem::parse(icmp).ok()?;
            identifications
                .contains(&quoted.invoking_identification()?)
                .then_some(Observed::OtherIcmp { msg_type: t, code })
        }
        _ => None,
    }
}

#[derive(Debug)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: RunnerError,
}

#[derive(Debug, Default)]
pub struct CampaignRun {
    pub results: Vec<TestResult>,
    pub failures: Vec<CaseFailure>,
}

/// Runs cases one after another. Each result goes to `sink` as soon as it
/// exists; a failing case is retried, then recorded and skipped.
pub fn run_campaign<T, F>(cases: &[TestCase], config: &RunnerConfig, transport: &mut T, mut sink: F) -> Result<CampaignRun, RunnerError>
where
    T: Transport + ?Sized,
    F: FnMut(&TestResult) -> Result<(), RunnerError>,
{
    config.validate()?;
    let mut run = CampaignRun::default();
    if cases.is_empty() {
        return Ok(run);
    }
    transport.start_capture()?;
    for case in cases {
        let mut attempt = 0;
        loop {
            match run_case(case, config, transport) {
                Ok(result) => {
                    sink(&result)?;
                    run.results.push(result);
                    break;
                }
                Err(e @ (RunnerError::PrivilegeRequired(_) | RunnerError::Config(_))) => {
                    transport.stop_capture();
                    return Err(e);
                }
                Err(e) if attempt < config.retries => {
                    let _ = e;
                    attempt += 1;
                }
                Err(error) => {
                    run.failures.push(CaseFailure {
                        case_id: case.case_id.clone(),
                        error,
                    });
                    break;
                }
            }
        }
    }
    transport.stop_capture();
    Ok(run)
}

/// True when the observed class is the one the oracle predicts for `policy`.
pub fn matches_oracle(result: &TestResult, policy: ReassemblyPolicy) -> bool {
    let Some(entry) = result.oracle.get(&policy) else {
        return false;
    };
    if entry.replies > 0 {
        result.observed == Observed::EchoReply && result.reply_count == entry.replies
    } else {
        match result.observed {
            Observed::Silence => true,
            Observed::ParamProblem { .. } => result.model == ModelKind::Rfc9099Two,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_campaign, new_model, CampaignSelection, ModelSelector};
    use crate::wire::{ExtHeaderChain, FragmentHeader, Ipv6Header};

    #[test]
    fn identifications_are_unique_and_shaped() {
        let c = build_campaign(&CampaignSelection::all(), 9);
        let mut seen = HashSet::new();
        for case in &c.cases {
            let n = match case.mode {
                TestMode::MultiPacketDistinctIds => 5,
                _ => 1,
            };
            assert_eq!(case.identifications.len(), n);
            for id in &case.identifications {
                assert!(seen.insert(*id));
            }
        }
        assert_eq!(allocate_identifications(&c.cases, 9), allocate_identifications(&c.cases, 9));
        assert_ne!(allocate_identifications(&c.cases, 9), allocate_identifications(&c.cases, 10));
    }

    #[test]
    fn config_validation() {
        let mut c = RunnerConfig::dry_run(ReassemblyPolicy::Linux);
        assert!(c.validate().is_ok());
        c.reply_timeout = Duration::ZERO;
        assert!(matches!(c.validate(), Err(RunnerError::Config(_))));
        let mut l = RunnerConfig::live("::1".parse().unwrap(), "lo");
        assert!(l.validate().is_ok());
        l.interface = None;
        assert!(l.validate().is_err());
    }

    #[test]
    fn classify_messages() {
        let ids: HashSet<u32> = [0xCAFE].into_iter().collect();
        let e = Endpoints::default();
        let mut reply = Icmpv6Echo::reply(7, 0, vec![1, 2]);
        let bytes = reply.seal(e.src, e.dst);
        assert_eq!(classify_reply(&bytes, 7, &ids), Some(Observed::EchoReply));
        assert_eq!(classify_reply(&bytes, 8, &ids), None);

        let mut invoking = Vec::new();
        let mut h = Ipv6Header::new(e.src, e.dst);
        h.next_header = 44;
        h.payload_length = 8;
        h.write(&mut invoking);
        invoking.extend_from_slice(&FragmentHeader::new(59, 0, true, 0xCAFE).to_bytes());
        let mut pp = Icmpv6ParamProblem::new(3, 40, invoking.clone());
        let pp_bytes = pp.seal(e.dst, e.src);
        assert_eq!(classify_reply(&pp_bytes, 7, &ids), Some(Observed::ParamProblem { code: 3 }));
        assert_eq!(classify_reply(&pp_bytes, 7, &HashSet::new()), None);

        let mut te = pp_bytes.clone();
        te[0] = icmp_type::TIME_EXCEEDED;
        te[1] = 1;
        assert_eq!(classify_reply(&te, 7, &ids), Some(Observed::OtherIcmp { msg_type: 3, code: 1 }));
        let mut req = Icmpv6Echo::request(7, 0, vec![]);
        assert_eq!(classify_reply(&req.seal(e.src, e.dst), 7, &ids), None);
        let _ = ExtHeaderChain::empty(58);
    }

    #[test]
    fn empty_campaign() {
        let mut host = simulated::SimulatedHost::new(ReassemblyPolicy::Linux, Endpoints::default().dst);
        let run = run_campaign(&[], &RunnerConfig::dry_run(ReassemblyPolicy::Linux), &mut host, |_| Ok(())).unwrap();
        assert!(run.results.is_empty() && run.failures.is_empty());
    }

    #[test]
    fn dry_run_matches_oracle_on_a_slice() {
        let mut sel = CampaignSelection::only(ModelSelector::NewModel, &TestMode::ALL);
        sel.sp_all_orders = false;
        let campaign = build_campaign(&sel, 3);
        for policy in ReassemblyPolicy::ALL {
            let config = RunnerConfig::dry_run(policy);
            let mut host = simulated::SimulatedHost::new(policy, config.target);
            let slice: Vec<_> = campaign.cases.iter().step_by(37).cloned().collect();
            let run = run_campaign(&slice, &config, &mut host, |_| Ok(())).unwrap();
            assert_eq!(run.results.len(), slice.len());
            for r in &run.results {
                assert!(matches_oracle(r, policy), "{policy} {}: {:?} vs {:?}", r.case_id, r.observed, r.oracle[&policy]);
            }
        }
    }

    #[test]
    fn strict_dry_run_is_silent_on_overlap() {
        let config = RunnerConfig::dry_run(ReassemblyPolicy::Rfc5722Strict);
        let mut host = simulated::SimulatedHost::new(ReassemblyPolicy::Rfc5722Strict, config.target);
        let case = TestCase::new("x".into(), new_model(), (0..6).collect(), TestMode::Single);
        let r = run_case(&case, &config, &mut host).unwrap();
        assert_eq!(r.observed, Observed::Silence);
        assert_eq!(r.reply_count, 0);
    }

    #[test]
    fn repeat_mode_sends_five_copies_under_one_id() {
        let config = RunnerConfig::dry_run(ReassemblyPolicy::FragFirstWins);
        let host = simulated::SimulatedHost::new(ReassemblyPolicy::FragFirstWins, config.target);
        let mut rec = pcap::Recording::new(host);
        let case = TestCase::new("x".into(), new_model(), vec![3, 0, 1, 2, 4, 5], TestMode::RepeatSameId);
        run_case(&case, &config, &mut rec).unwrap();
        assert_eq!(rec.sent().len(), 30);
        let ids: HashSet<u32> = rec
            .sent()
            .iter()
            .map(|f| crate::wire::parse_frame(f).unwrap().fragment().unwrap().identification)
            .collect();
        assert_eq!(ids.len(), 1);
    }
}
