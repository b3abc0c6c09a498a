//! Fragment reassembly simulator.
//!
//! A [`FragmentBuffer`] models one receiver-side reassembly queue under a
//! chosen [`ReassemblyPolicy`]. It never reads a clock; elapsed time is passed
//! to [`FragmentBuffer::reassemble`].

// Hole lists are vectors of ranges; a one-element list is not a mistake.
#![allow(clippy::single_range_in_vec_init)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Endpoints, FragmentSpec, OverlapModel, TestCase, TestMode};
use crate::wire::{self, proto, HeaderKind};

/// Default reassembly window.
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReassemblyPolicy {
    #[serde(rename = "first")]
    First,
    #[serde(rename = "last")]
    Last,
    #[serde(rename = "bsd")]
    Bsd,
    #[serde(rename = "bsd-right")]
    BsdRight,
    #[serde(rename = "linux")]
    Linux,
    #[serde(rename = "frag-first-wins")]
    FragFirstWins,
    #[serde(rename = "frag-last-wins")]
    FragLastWins,
    #[serde(rename = "rfc5722-strict")]
    Rfc5722Strict,
}

impl ReassemblyPolicy {
    pub const ALL: [ReassemblyPolicy; 8] = [
        ReassemblyPolicy::First,
        ReassemblyPolicy::Last,
        ReassemblyPolicy::Bsd,
        ReassemblyPolicy::BsdRight,
        ReassemblyPolicy::Linux,
        ReassemblyPolicy::FragFirstWins,
        ReassemblyPolicy::FragLastWins,
        ReassemblyPolicy::Rfc5722Strict,
    ];
    pub const BYTE_BASED: [ReassemblyPolicy; 5] = [
        ReassemblyPolicy::First,
        ReassemblyPolicy::Last,
        ReassemblyPolicy::Bsd,
        ReassemblyPolicy::BsdRight,
        ReassemblyPolicy::Linux,
    ];
    pub const FRAGMENT_BASED: [ReassemblyPolicy; 2] = [ReassemblyPolicy::FragFirstWins, ReassemblyPolicy::FragLastWins];

    pub fn name(self) -> &'static str {
        match self {
            ReassemblyPolicy::First => "first",
            ReassemblyPolicy::Last => "last",
            ReassemblyPolicy::Bsd => "bsd",
            ReassemblyPolicy::BsdRight => "bsd-right",
            ReassemblyPolicy::Linux => "linux",
            ReassemblyPolicy::FragFirstWins => "frag-first-wins",
            ReassemblyPolicy::FragLastWins => "frag-last-wins",
            ReassemblyPolicy::Rfc5722Strict => "rfc5722-strict",
        }
    }

    pub fn is_byte_based(self) -> bool {
        Self::BYTE_BASED.contains(&self)
    }

    /// For byte-based kinds: does the already-held byte (from a fragment
    /// starting at `original_offset`) survive a newcomer starting at
    /// `subsequent_offset`?
    fn original_wins(self, original_offset: usize, subsequent_offset: usize) -> bool {
        match self {
            ReassemblyPolicy::First => true,
            ReassemblyPolicy::Last => false,
            ReassemblyPolicy::Bsd => original_offset <= subsequent_offset,
            ReassemblyPolicy::BsdRight => original_offset > subsequent_offset,
            ReassemblyPolicy::Linux => original_offset < subsequent_offset,
            _ => unreachable!("not a byte-based policy"),
        }
    }
}

impl fmt::Display for ReassemblyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReassemblyPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
                format!("unknown policy {s:?} (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    OverlapStrict,
    /// Strict receivers also refuse packets whose header chain does not fit
    /// in the first fragment.
    HeaderChain,
    Timeout,
    NoHeader,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReassemblyOutcome {
    Complete {
        #[serde(with = "hex_bytes")]
        payload: Vec<u8>,
        letters: String,
    },
    Incomplete {
        holes: Vec<Range<u16>>,
        missing_last: bool,
    },
    Dropped {
        reason: DropReason,
    },
}

impl ReassemblyOutcome {
    pub fn is_complete(&self) -> bool {
        matches!(self, ReassemblyOutcome::Complete { .. })
    }

    pub fn is_dropped(&self) -> bool {
        matches!(self, ReassemblyOutcome::Dropped { .. })
    }

    pub fn letters(&self) -> Option<&str> {
        match self {
            ReassemblyOutcome::Complete { letters, .. } => Some(letters),
            _ => None,
        }
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
struct Arrival {
    spec: FragmentSpec,
    index: usize,
    data: Vec<u8>,
}

impl Arrival {
    fn start(&self) -> usize {
        self.spec.offset_units as usize * 8
    }

    fn end(&self) -> usize {
        self.start() + self.data.len()
    }
}

/// A contiguous byte range owned by one arrival.
#[derive(Debug, Clone)]
struct Piece {
    arrival: usize,
    range: Range<usize>,
}

/// Receiver-side state for one identification.
#[derive(Debug, Clone)]
pub struct FragmentBuffer {
    identification: u32,
    policy: ReassemblyPolicy,
    deadline: Duration,
    arrivals: Vec<Arrival>,
    pieces: Vec<Piece>,
    extent: Option<usize>,
    first_next_header: Option<u8>,
    poisoned: Option<DropReason>,
    header_arrived: bool,
}

impl FragmentBuffer {
    pub fn new(identification: u32, policy: ReassemblyPolicy) -> Self {
        FragmentBuffer {
            identification,
            policy,
            deadline: DEFAULT_DEADLINE,
            arrivals: Vec::new(),
            pieces: Vec::new(),
            extent: None,
            first_next_header: None,
            poisoned: None,
            header_arrived: false,
        }
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn identification(&self) -> u32 {
        self.identification
    }

    pub fn policy(&self) -> ReassemblyPolicy {
        self.policy
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// Number of fragments received, retained or not.
    pub fn arrival_count(&self) -> usize {
        self.arrivals.len()
    }

    pub fn reset(&mut self) {
        *self = FragmentBuffer::new(self.identification, self.policy).with_deadline(self.deadline);
    }

    /// Inserts fragment data at `spec.offset_units`. The data length is taken
    /// from `payload`, so a short final fragment is allowed.
    pub fn insert(&mut self, spec: &FragmentSpec, payload: &[u8]) {
        self.insert_with_next_header(spec, payload, None)
    }

    /// Like [`insert`](Self::insert), also recording the Fragment Header's
    /// next-header value so the strict policy can check the header chain.
    pub fn insert_with_next_header(&mut self, spec: &FragmentSpec, payload: &[u8], next_header: Option<u8>) {
        let arrival = Arrival {
            spec: spec.clone(),
            index: self.arrivals.len(),
            data: payload.to_vec(),
        };
        self.arrivals.push(arrival.clone());
        let (start, end) = (arrival.start(), arrival.end());

        if self.policy == ReassemblyPolicy::Rfc5722Strict && self.poisoned.is_none() {
            // Every earlier arrival counts, including ones later ignored as inconsistent.
            let earlier = &self.arrivals[..self.arrivals.len() - 1];
            if earlier.iter().any(|a| a.start() < end && start < a.end()) {
                self.poisoned = Some(DropReason::OverlapStrict);
            } else if let Some(nh) = next_header {
                let chain_ok = match self.first_next_header {
                    Some(first) => first == nh,
                    None => true,
                } && !(start == 0 && chain_incomplete(nh));
                if !chain_ok {
                    self.poisoned = Some(DropReason::HeaderChain);
                }
                self.first_next_header.get_or_insert(nh);
            }
        }
        if self.poisoned.is_some() {
            return;
        }
        if !self.consistent(&arrival) {
            return;
        }
        if !arrival.spec.more_fragments {
            self.extent = Some(end);
        }
        if start == 0 && end > 0 {
            self.header_arrived = true;
        }
        if start == end {
            return;
        }

        match self.policy {
            ReassemblyPolicy::FragFirstWins | ReassemblyPolicy::Rfc5722Strict => {
                if !self.overlapping_arrivals(start, end).is_empty() {
                    return;
                }
                self.pieces.push(Piece {
                    arrival: arrival.index,
                    range: start..end,
                });
            }
            ReassemblyPolicy::FragLastWins => {
                let evict: BTreeSet<usize> = self.overlapping_arrivals(start, end).into_iter().collect();
                self.pieces.retain(|p| !evict.contains(&p.arrival));
                self.pieces.push(Piece {
                    arrival: arrival.index,
                    range: start..end,
                });
            }
            policy => self.insert_bytes(policy, &arrival),
        }
        self.pieces.sort_by_key(|p| p.range.start);
    }

    fn overlapping_arrivals(&self, start: usize, end: usize) -> Vec<usize> {
        self.pieces
            .iter()
            .filter(|p| p.range.start < end && start < p.range.end)
            .map(|p| p.arrival)
            .collect()
    }

    /// A fragment contradicting the established extent is ignored.
    fn consistent(&self, a: &Arrival) -> bool {
        let end = a.end();
        match (a.spec.more_fragments, self.extent) {
            (false, Some(extent)) => end == extent,
            (false, None) => self.pieces.iter().all(|p| p.range.end <= end),
            (true, Some(extent)) => end <= extent,
            (true, None) => true,
        }
    }

    fn insert_bytes(&mut self, policy: ReassemblyPolicy, s: &Arrival) {
        let s_off = s.start();
        let mut free = vec![s.start()..s.end()];
        let mut kept = Vec::with_capacity(self.pieces.len() + 2);
        for p in self.pieces.drain(..) {
            let lo = p.range.start.max(s.start());
            let hi = p.range.end.min(s.end());
            if lo >= hi {
                kept.push(p);
                continue;
            }
            let o_off = self.arrivals[p.arrival].start();
            if policy.original_wins(o_off, s_off) {
                free = subtract(free, lo..hi);
                kept.push(p);
            } else {
                if p.range.start < lo {
                    kept.push(Piece {
                        arrival: p.arrival,
                        range: p.range.start..lo,
                    });
                }
                if hi < p.range.end {
                    kept.push(Piece {
                        arrival: p.arrival,
                        range: hi..p.range.end,
                    });
                }
            }
        }
        kept.extend(free.into_iter().filter(|r| !r.is_empty()).map(|range| Piece { arrival: s.index, range }));
        self.pieces = kept;
    }

    /// Byte ranges with the arrival index that supplies them, sorted.
    pub fn ownership(&self) -> Vec<(Range<usize>, usize)> {
        self.pieces.iter().map(|p| (p.range.clone(), p.arrival)).collect()
    }

    pub fn reassemble(&self, elapsed: Duration) -> ReassemblyOutcome {
        if let Some(reason) = self.poisoned {
            return ReassemblyOutcome::Dropped { reason };
        }
        let limit = self
            .extent
            .unwrap_or_else(|| self.pieces.iter().map(|p| p.range.end).max().unwrap_or(0));
        let mut holes = Vec::new();
        let mut cursor = 0usize;
        for p in &self.pieces {
            if p.range.start > cursor {
                holes.push(cursor..p.range.start);
            }
            cursor = cursor.max(p.range.end);
        }
        if cursor < limit {
            holes.push(cursor..limit);
        }
        if let (Some(extent), true) = (self.extent, holes.is_empty()) {
            if extent > 0 {
                return self.complete(extent);
            }
        }
        if elapsed >= self.deadline {
            return ReassemblyOutcome::Dropped {
                reason: DropReason::Timeout,
            };
        }
        let header_held = self.pieces.first().map(|p| p.range.start == 0).unwrap_or(false);
        if self.header_arrived && !header_held {
            return ReassemblyOutcome::Dropped {
                reason: DropReason::NoHeader,
            };
        }
        ReassemblyOutcome::Incomplete {
            holes: holes
                .into_iter()
                .map(|r| (r.start / 8) as u16..r.end.div_ceil(8) as u16)
                .collect(),
            missing_last: self.extent.is_none(),
        }
    }

    fn complete(&self, extent: usize) -> ReassemblyOutcome {
        let mut payload = vec![0u8; extent];
        for p in &self.pieces {
            let a = &self.arrivals[p.arrival];
            payload[p.range.clone()].copy_from_slice(&a.data[p.range.start - a.start()..p.range.end - a.start()]);
        }
        let header_units = self.arrivals[self.pieces[0].arrival].spec.carries_upper_header as usize;
        let letters = (header_units..extent.div_ceil(8))
            .map(|u| {
                let at = u * 8;
                let p = self.pieces.iter().find(|p| p.range.contains(&at)).expect("tiled");
                self.arrivals[p.arrival].spec.label
            })
            .collect();
        ReassemblyOutcome::Complete { payload, letters }
    }
}

fn chain_incomplete(next_header: u8) -> bool {
    next_header == proto::NO_NEXT_HEADER || HeaderKind::from_protocol(next_header).is_some()
}

fn subtract(ranges: Vec<Range<usize>>, cut: Range<usize>) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(ranges.len() + 1);
    for r in ranges {
        if cut.end <= r.start || r.end <= cut.start {
            out.push(r);
            continue;
        }
        if r.start < cut.start {
            out.push(r.start..cut.start);
        }
        if cut.end < r.end {
            out.push(cut.end..r.end);
        }
    }
    out
}

/// Expected behavior of one case under one policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseExpectation {
    /// Echo replies a target with this policy sends.
    pub replies: usize,
    /// Outcomes recorded at each evaluation point.
    pub outcomes: Vec<ReassemblyOutcome>,
}

impl CaseExpectation {
    pub fn any_complete(&self) -> bool {
        self.replies > 0
    }
}

/// One fragment as the simulator sees it.
#[derive(Debug, Clone)]
pub struct SimFragment {
    pub spec: FragmentSpec,
    pub data: Vec<u8>,
    pub next_header: u8,
}

/// Bursts of fragments per identification, extracted from a case's frames.
pub fn case_bursts(case: &TestCase) -> Vec<(u32, Vec<SimFragment>)> {
    let plans = match case.packets(&Endpoints::default()) {
        Ok(p) => p,
        Err(_) => return Vec::new(),
    };
    plans
        .into_iter()
        .map(|plan| {
            let frags = plan
                .fragments
                .into_iter()
                .filter_map(|f| {
                    let parsed = wire::parse_frame(&f.frame).ok()?;
                    let fh = parsed.fragment()?;
                    Some(SimFragment {
                        spec: f.spec,
                        data: parsed.fragment_data(),
                        next_header: fh.next_header,
                    })
                })
                .collect();
            (plan.identification, frags)
        })
        .collect()
}

/// Runs bursts through buffers under `policy`. The same identification shares
/// one buffer across bursts; the buffer is evaluated at the end of every
/// burst and discarded once it completes or is dropped for overlap.
pub fn simulate_bursts(bursts: &[(u32, Vec<SimFragment>)], policy: ReassemblyPolicy) -> CaseExpectation {
    // Buffer plus the upper-layer protocol announced by its offset-0 fragment.
    let mut buffers: BTreeMap<u32, (FragmentBuffer, Option<u8>)> = BTreeMap::new();
    let mut outcomes = Vec::new();
    let mut replies = 0;
    for (id, frags) in bursts {
        let (buf, upper) = buffers.entry(*id).or_insert_with(|| (FragmentBuffer::new(*id, policy), None));
        for f in frags {
            if f.spec.offset_units == 0 && !f.data.is_empty() && upper.is_none() {
                *upper = Some(f.next_header);
            }
            buf.insert_with_next_header(&f.spec, &f.data, Some(f.next_header));
        }
        let outcome = buf.reassemble(Duration::ZERO);
        if matches!(outcome, ReassemblyOutcome::Complete { .. } | ReassemblyOutcome::Dropped { .. })
            && !matches!(outcome, ReassemblyOutcome::Dropped { reason: DropReason::NoHeader })
        {
            if let ReassemblyOutcome::Complete { payload, .. } = &outcome {
                if delivers_echo(*upper, payload) {
                    replies += 1;
                }
            }
            outcomes.push(outcome);
            buf.reset();
            *upper = None;
        }
    }
    for (buf, _) in buffers.values().filter(|(b, _)| !b.is_empty()) {
        outcomes.push(buf.reassemble(Duration::ZERO));
    }
    CaseExpectation { replies, outcomes }
}

/// Whether a reassembled datagram is an echo request a host would answer.
/// Overlaps can put foreign bytes where the ICMPv6 header belongs; those
/// datagrams complete but draw no reply. The checksum is not verified.
pub fn delivers_echo(upper: Option<u8>, payload: &[u8]) -> bool {
    upper == Some(proto::ICMPV6)
        && wire::Icmpv6Echo::parse(payload).is_ok_and(|e| e.msg_type == wire::icmp_type::ECHO_REQUEST)
}

/// Oracle table for one case: its arrival order run through every policy.
/// Copies sharing an identification replay into the same buffer; distinct
/// identifications get independent buffers.
pub fn expected_outcomes(case: &TestCase) -> BTreeMap<ReassemblyPolicy, CaseExpectation> {
    let bursts = case_bursts(case);
    ReassemblyPolicy::ALL
        .into_iter()
        .map(|p| (p, simulate_bursts(&bursts, p)))
        .collect()
}

/// Outcome of every arrival order of `model` as a single packet.
pub fn enumerate_model(model: &OverlapModel, policy: ReassemblyPolicy) -> Vec<(Vec<usize>, ReassemblyOutcome)> {
    let base = TestCase::new("enumerate".into(), model.clone(), (0..model.specs.len()).collect(), TestMode::Single);
    let canonical = case_bursts(&base);
    let Some((id, frags)) = canonical.into_iter().next() else {
        return Vec::new();
    };
    crate::models::permutations(model.specs.len())
        .into_iter()
        .map(|order| {
            let mut buf = FragmentBuffer::new(id, policy);
            for &i in &order {
                buf.insert_with_next_header(&frags[i].spec, &frags[i].data, Some(frags[i].next_header));
            }
            let outcome = buf.reassemble(Duration::ZERO);
            (order, outcome)
        })
        .collect()
}

/// Letter strings of every Complete outcome over all orders and `policies`.
pub fn complete_letter_strings(model: &OverlapModel, policies: &[ReassemblyPolicy]) -> BTreeSet<String> {
    policies
        .iter()
        .flat_map(|&p| enumerate_model(model, p))
        .filter_map(|(_, o)| o.letters().map(str::to_owned))
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("no observations overlap the oracle table")]
    EmptyObservations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    /// Competition rank: tied scores share a rank.
    pub rank: usize,
    pub policy: ReassemblyPolicy,
    pub agreements: usize,
    pub total: usize,
    pub agreement_pct: f64,
}

/// Ranks policies by how many cases agree on replied vs silent.
pub fn fingerprint_policy(
    observed: &BTreeMap<String, bool>,
    oracle: &BTreeMap<String, BTreeMap<ReassemblyPolicy, CaseExpectation>>,
) -> Result<Vec<PolicyScore>, FingerprintError> {
    let joined: Vec<(&bool, &BTreeMap<ReassemblyPolicy, CaseExpectation>)> =
        observed.iter().filter_map(|(id, r)| oracle.get(id).map(|o| (r, o))).collect();
    if joined.is_empty() {
        return Err(FingerprintError::EmptyObservations);
    }
    let total = joined.len();
    let mut scores: Vec<PolicyScore> = ReassemblyPolicy::ALL
        .into_iter()
        .map(|policy| {
            let agreements = joined
                .iter()
                .filter(|(replied, table)| table.get(&policy).map(|e| e.any_complete()) == Some(**replied))
                .count();
            PolicyScore {
                rank: 0,
                policy,
                agreements,
                total,
                agreement_pct: 100.0 * agreements as f64 / total as f64,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.agreements.cmp(&a.agreements).then(a.policy.cmp(&b.policy)));
    for i in 0..scores.len() {
        scores[i].rank = if i > 0 && scores[i].agreements == scores[i - 1].agreements {
            scores[i - 1].rank
        } else {
            i + 1
        };
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{new_model, shankar_paxson_model, three_fragment_model};
    use proptest::prelude::*;

    fn spec(label: char, off: u16, len: u16, m: bool) -> FragmentSpec {
        FragmentSpec::new(label, off, len, m)
    }

    fn run(policy: ReassemblyPolicy, frags: &[FragmentSpec]) -> ReassemblyOutcome {
        let mut b = FragmentBuffer::new(7, policy);
        for (i, s) in frags.iter().enumerate() {
            b.insert(s, &vec![i as u8 + 1; s.length_units as usize * 8]);
        }
        b.reassemble(Duration::ZERO)
    }

    #[test]
    fn disjoint_fragments_complete_everywhere() {
        let frags = [spec('A', 0, 2, true).with_upper_header(), spec('B', 2, 1, false)];
        for p in ReassemblyPolicy::ALL {
            assert_eq!(run(p, &frags).letters(), Some("AB"), "{p}");
        }
    }

    #[test]
    fn identical_duplicate() {
        let frags = [spec('A', 0, 1, true), spec('X', 1, 2, true), spec('Y', 1, 2, true), spec('F', 3, 1, false)];
        assert_eq!(run(ReassemblyPolicy::FragFirstWins, &frags).letters(), Some("AXXF"));
        assert_eq!(run(ReassemblyPolicy::FragLastWins, &frags).letters(), Some("AYYF"));
        assert_eq!(
            run(ReassemblyPolicy::Rfc5722Strict, &frags),
            ReassemblyOutcome::Dropped {
                reason: DropReason::OverlapStrict
            }
        );
    }

    #[test]
    fn sp_canonical_leaves_hole_between_a_and_b() {
        let outcomes = enumerate_model(&shankar_paxson_model(), ReassemblyPolicy::FragFirstWins);
        let (order, outcome) = &outcomes[0];
        assert_eq!(order, &vec![0, 1, 2, 3, 4, 5]);
        match outcome {
            ReassemblyOutcome::Incomplete { holes, missing_last } => {
                assert_eq!(holes, &vec![4..5]);
                assert!(!missing_last);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn new_model_orders() {
        let outcomes: BTreeMap<Vec<usize>, ReassemblyOutcome> =
            enumerate_model(&new_model(), ReassemblyPolicy::FragFirstWins).into_iter().collect();
        assert_eq!(outcomes[&vec![0, 1, 2, 3, 4, 5]].letters(), Some("AAABBCCCFFF"));
        assert_eq!(outcomes[&vec![0, 1, 4, 3, 2, 5]].letters(), Some("AAABBEEEFFF"));
    }

    #[test]
    fn frag_last_wins_evicting_header_is_no_header() {
        // D arrives after A and evicts it.
        let m = new_model();
        let outcomes: BTreeMap<_, _> = enumerate_model(&m, ReassemblyPolicy::FragLastWins).into_iter().collect();
        assert_eq!(
            outcomes[&vec![0, 1, 2, 3, 4, 5]],
            ReassemblyOutcome::Dropped {
                reason: DropReason::NoHeader
            }
        );
    }

    #[test]
    fn timeout_and_missing_last() {
        let mut b = FragmentBuffer::new(1, ReassemblyPolicy::FragFirstWins).with_deadline(Duration::from_secs(5));
        b.insert(&spec('A', 0, 1, true).with_upper_header(), &[0; 8]);
        assert_eq!(
            b.reassemble(Duration::from_secs(1)),
            ReassemblyOutcome::Incomplete {
                holes: vec![],
                missing_last: true
            }
        );
        assert_eq!(
            b.reassemble(Duration::from_secs(5)),
            ReassemblyOutcome::Dropped {
                reason: DropReason::Timeout
            }
        );
        b.insert(&spec('F', 2, 1, false), &[0; 8]);
        assert_eq!(
            b.reassemble(Duration::ZERO),
            ReassemblyOutcome::Incomplete {
                holes: vec![1..2],
                missing_last: false
            }
        );
        b.insert(&spec('B', 1, 1, true), &[0; 8]);
        // Complete wins over the deadline check.
        assert!(b.reassemble(Duration::from_secs(60)).is_complete());
    }

    #[test]
    fn inconsistent_fragments_are_ignored() {
        let frags = [spec('A', 0, 1, true), spec('F', 1, 1, false), spec('G', 1, 2, false), spec('H', 2, 1, true)];
        for p in ReassemblyPolicy::ALL {
            if p == ReassemblyPolicy::Rfc5722Strict {
                assert!(run(p, &frags).is_dropped());
            } else {
                assert_eq!(run(p, &frags).letters(), Some("AF"), "{p}");
            }
        }
        // M=1 data past the extent and a second, different final fragment.
        let frags = [spec('A', 0, 1, true), spec('F', 1, 1, false), spec('H', 2, 1, true), spec('G', 3, 1, false)];
        for p in ReassemblyPolicy::ALL {
            assert_eq!(run(p, &frags).letters(), Some("AF"), "{p}");
        }
    }

    #[test]
    fn short_final_fragment() {
        let mut b = FragmentBuffer::new(1, ReassemblyPolicy::Linux);
        b.insert(&spec('A', 0, 1, true), &[1; 8]);
        b.insert(&spec('B', 1, 1, false), &[2; 5]);
        match b.reassemble(Duration::ZERO) {
            ReassemblyOutcome::Complete { payload, letters } => {
                assert_eq!(payload.len(), 13);
                assert_eq!(letters, "AB");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn strict_header_chain() {
        let mut b = FragmentBuffer::new(1, ReassemblyPolicy::Rfc5722Strict);
        b.insert_with_next_header(&spec('E', 0, 0, true), &[], Some(proto::NO_NEXT_HEADER));
        assert_eq!(
            b.reassemble(Duration::ZERO),
            ReassemblyOutcome::Dropped {
                reason: DropReason::HeaderChain
            }
        );
        let mut b = FragmentBuffer::new(1, ReassemblyPolicy::Rfc5722Strict);
        b.insert_with_next_header(&spec('A', 0, 1, true), &[0; 8], Some(proto::ICMPV6));
        b.insert_with_next_header(&spec('B', 1, 1, false), &[0; 8], Some(proto::DESTINATION_OPTIONS));
        assert_eq!(
            b.reassemble(Duration::ZERO),
            ReassemblyOutcome::Dropped {
                reason: DropReason::HeaderChain
            }
        );
    }

    #[test]
    fn three_fragment_byte_policies() {
        // Fragment 2 sits inside fragment 3's span and arrives between them.
        let m = three_fragment_model(4, 1, true);
        let order = [0usize, 1, 2];
        let frags: Vec<_> = order.iter().map(|&i| m.specs[i].clone()).collect();
        assert_eq!(run(ReassemblyPolicy::First, &frags).letters(), Some("AACBC"));
        assert_eq!(run(ReassemblyPolicy::Last, &frags).letters(), Some("AACCC"));
        // O=B(off 4), S=C(off 3): BSD keeps O only if O.off <= S.off.
        assert_eq!(run(ReassemblyPolicy::Bsd, &frags).letters(), Some("AACCC"));
        assert_eq!(run(ReassemblyPolicy::BsdRight, &frags).letters(), Some("AACBC"));
        assert_eq!(run(ReassemblyPolicy::Linux, &frags).letters(), Some("AACCC"));
    }

    #[test]
    fn fingerprint_ranks_and_ties() {
        let m = new_model();
        let mut oracle = BTreeMap::new();
        let mut observed = BTreeMap::new();
        for (i, order) in crate::models::permutations(6).into_iter().enumerate().take(120) {
            let case = TestCase::new(format!("c{i}"), m.clone(), order, TestMode::Single);
            let table = expected_outcomes(&case);
            observed.insert(case.case_id.clone(), table[&ReassemblyPolicy::FragLastWins].any_complete());
            oracle.insert(case.case_id, table);
        }
        let ranked = fingerprint_policy(&observed, &oracle).unwrap();
        let top: Vec<_> = ranked.iter().filter(|s| s.rank == 1).collect();
        assert!(top.iter().any(|s| s.policy == ReassemblyPolicy::FragLastWins));
        assert!(top.iter().all(|s| s.agreement_pct == 100.0));

        let silent: BTreeMap<_, _> = observed.keys().map(|k| (k.clone(), false)).collect();
        let ranked = fingerprint_policy(&silent, &oracle).unwrap();
        assert_eq!(ranked[0].rank, 1);
        assert!(ranked.iter().any(|s| s.rank == 1 && s.policy == ReassemblyPolicy::Rfc5722Strict));

        assert_eq!(
            fingerprint_policy(&BTreeMap::new(), &oracle),
            Err(FingerprintError::EmptyObservations)
        );
    }

    #[test]
    fn outcome_serde_round_trip() {
        let o = ReassemblyOutcome::Complete {
            payload: vec![0xde, 0xad],
            letters: "AB".into(),
        };
        let s = serde_json::to_string(&o).unwrap();
        assert!(s.contains("\"dead\""), "{s}");
        assert_eq!(serde_json::from_str::<ReassemblyOutcome>(&s).unwrap(), o);
        let i = ReassemblyOutcome::Incomplete {
            holes: vec![4..5],
            missing_last: false,
        };
        assert_eq!(serde_json::from_str::<ReassemblyOutcome>(&serde_json::to_string(&i).unwrap()).unwrap(), i);
    }

    /// Naive oracle: a byte array of owners folded in arrival order.
    fn per_byte_owner(policy: ReassemblyPolicy, frags: &[(usize, usize)]) -> Vec<Option<usize>> {
        let size = frags.iter().map(|&(o, l)| (o + l) * 8).max().unwrap_or(0);
        let mut owner: Vec<Option<usize>> = vec![None; size];
        for (i, &(off, len)) in frags.iter().enumerate() {
            let s_off = off * 8;
            for slot in &mut owner[s_off..(off + len) * 8] {
                let take = match *slot {
                    None => true,
                    Some(o) => {
                        let o_off = frags[o].0 * 8;
                        // row: policy, column: (O < S, O == S, O > S); true = S takes the byte
                        let table: [bool; 3] = match policy {
                            ReassemblyPolicy::First => [false, false, false],
                            ReassemblyPolicy::Last => [true, true, true],
                            ReassemblyPolicy::Bsd => [false, false, true],
                            ReassemblyPolicy::BsdRight => [true, true, false],
                            ReassemblyPolicy::Linux => [false, true, true],
                            _ => unreachable!(),
                        };
                        table[match o_off.cmp(&s_off) {
                            std::cmp::Ordering::Less => 0,
                            std::cmp::Ordering::Equal => 1,
                            std::cmp::Ordering::Greater => 2,
                        }]
                    }
                };
                if take {
                    *slot = Some(i);
                }
            }
        }
        owner
    }

    fn geometry() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..12, 1usize..=4), 1..=6)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn byte_policies_match_naive_oracle(frags in geometry(), pi in 0usize..5) {
            let policy = ReassemblyPolicy::BYTE_BASED[pi];
            let mut b = FragmentBuffer::new(1, policy);
            for &(off, len) in &frags {
                b.insert(&spec('X', off as u16, len as u16, true), &vec![0; len * 8]);
            }
            let expected = per_byte_owner(policy, &frags);
            let mut got = vec![None; expected.len()];
            for (r, a) in b.ownership() {
                for byte in r {
                    prop_assert!(got[byte].is_none());
                    got[byte] = Some(a);
                }
            }
            prop_assert_eq!(got, expected);
        }
    }

    fn tiled_geometry() -> impl Strategy<Value = (Vec<FragmentSpec>, Vec<usize>)> {
        prop::collection::vec(1u16..=4, 1..=6).prop_flat_map(|lens| {
            let mut off = 0;
            let n = lens.len();
            let specs: Vec<FragmentSpec> = lens
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let s = spec((b'A' + i as u8) as char, off, l, i + 1 < n);
                    off += l;
                    s
                })
                .collect();
            (Just(specs), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    }

    proptest! {
        #[test]
        fn non_overlapping_inputs_agree((specs, order) in tiled_geometry()) {
            let mut results = Vec::new();
            for p in ReassemblyPolicy::ALL {
                let mut b = FragmentBuffer::new(1, p);
                for &i in &order {
                    b.insert(&specs[i], &vec![i as u8; specs[i].length_units as usize * 8]);
                }
                results.push(b.reassemble(Duration::ZERO));
            }
            prop_assert!(results[0].is_complete());
            prop_assert!(results.windows(2).all(|w| w[0] == w[1]));
        }

        #[test]
        fn strict_implies_frag_first(frags in geometry(), last in 0usize..6) {
            let specs: Vec<FragmentSpec> = frags.iter().enumerate().map(|(i, &(o, l))| {
                spec('X', o as u16, l as u16, i != last % frags.len())
            }).collect();
            let strict = run(ReassemblyPolicy::Rfc5722Strict, &specs);
            let first = run(ReassemblyPolicy::FragFirstWins, &specs);
            prop_assert!(!strict.is_complete() || first.is_complete());
            let overlap = specs.iter().enumerate().any(|(i, a)| specs[i + 1..].iter().any(|b| a.overlaps(b)));
            let incomplete = matches!(strict, ReassemblyOutcome::Incomplete { .. });
            prop_assert!(!(overlap && incomplete));
        }

        #[test]
        fn complete_payload_is_tiled(frags in geometry(), pi in 0usize..8) {
            let policy = ReassemblyPolicy::ALL[pi];
            let n = frags.len();
            let specs: Vec<FragmentSpec> = frags.iter().enumerate().map(|(i, &(o, l))| spec('X', o as u16, l as u16, i + 1 != n)).collect();
            let mut b = FragmentBuffer::new(1, policy);
            for s in &specs {
                b.insert(s, &vec![0; s.length_units as usize * 8]);
            }
            if let ReassemblyOutcome::Complete { payload, .. } = b.reassemble(Duration::ZERO) {
                let own = b.ownership();
                prop_assert_eq!(own.iter().map(|(r, _)| r.len()).sum::<usize>(), payload.len());
                prop_assert_eq!(own[0].0.start, 0);
                prop_assert!(own.windows(2).all(|w| w[0].0.end == w[1].0.start));
                prop_assert_eq!(own.last().unwrap().0.end, payload.len());
            }
        }
    }
}
