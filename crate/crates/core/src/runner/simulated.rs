//! A fake target: reassembles what it is sent under one policy and answers
//! completed echo requests. Time never advances, so nothing sleeps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv6Addr;
use std::time::Duration;

use super::{Received, RunnerError, Transport};
use crate::models::FragmentSpec;
use crate::reassembly::{delivers_echo, DropReason, FragmentBuffer, ReassemblyOutcome, ReassemblyPolicy};
use crate::wire::{self, Frame, Icmpv6Echo, UpperLayer};

pub struct SimulatedHost {
    policy: ReassemblyPolicy,
    address: Ipv6Addr,
    buffers: BTreeMap<u32, Held>,
    touched: BTreeSet<u32>,
    outbox: VecDeque<Received>,
    capturing: bool,
}

struct Held {
    buffer: FragmentBuffer,
    /// Peer and upper-layer protocol announced by the offset-0 fragment.
    peer: Ipv6Addr,
    upper: Option<u8>,
}

impl SimulatedHost {
    pub fn new(policy: ReassemblyPolicy, address: Ipv6Addr) -> Self {
        SimulatedHost {
            policy,
            address,
            buffers: BTreeMap::new(),
            touched: BTreeSet::new(),
            outbox: VecDeque::new(),
            capturing: false,
        }
    }

    pub fn policy(&self) -> ReassemblyPolicy {
        self.policy
    }

    /// Reassembly buffers still open.
    pub fn pending(&self) -> usize {
        self.buffers.len()
    }

    fn deliver(&mut self, peer: Ipv6Addr, upper: u8, payload: &[u8]) {
        if !delivers_echo(Some(upper), payload) {
            return;
        }
        if let Ok(req) = Icmpv6Echo::parse(payload) {
            if req.msg_type == wire::icmp_type::ECHO_REQUEST {
                let mut reply = Icmpv6Echo::reply(req.identifier, req.sequence, req.payload);
                let icmp = reply.seal(self.address, peer);
                if self.capturing {
                    self.outbox.push_back(Received {
                        source: self.address,
                        icmp,
                    });
                }
            }
        }
    }
}

impl Transport for SimulatedHost {
    fn start_capture(&mut self) -> Result<(), RunnerError> {
        self.capturing = true;
        Ok(())
    }

    fn send(&mut self, frame: &Frame) -> Result<(), RunnerError> {
        let parsed = wire::parse_frame(frame).map_err(|e| RunnerError::SendFailure(std::io::Error::other(e)))?;
        if parsed.header.dst != self.address {
            return Ok(());
        }
        let Some(fh) = parsed.fragment() else {
            if let UpperLayer::EchoRequest(_) = parsed.upper {
                self.deliver(parsed.header.src, parsed.chain.upper, &parsed.payload);
            }
            return Ok(());
        };
        let data = parsed.fragment_data();
        let units = data.len().div_ceil(8) as u16;
        let mut spec = FragmentSpec::new('?', fh.fragment_offset, units, fh.more_fragments);
        if fh.fragment_offset == 0 && !data.is_empty() {
            spec = spec.with_upper_header();
        }
        let policy = self.policy;
        let held = self.buffers.entry(fh.identification).or_insert_with(|| Held {
            buffer: FragmentBuffer::new(fh.identification, policy),
            peer: parsed.header.src,
            upper: None,
        });
        if fh.fragment_offset == 0 && !data.is_empty() && held.upper.is_none() {
            held.upper = Some(fh.next_header);
        }
        held.buffer.insert_with_next_header(&spec, &data, Some(fh.next_header));
        self.touched.insert(fh.identification);
        Ok(())
    }

    fn end_of_burst(&mut self) -> Result<(), RunnerError> {
        for id in std::mem::take(&mut self.touched) {
            let Some(held) = self.buffers.get(&id) else { continue };
            match held.buffer.reassemble(Duration::ZERO) {
                ReassemblyOutcome::Complete { payload, .. } => {
                    let held = self.buffers.remove(&id).expect("present");
                    if let Some(upper) = held.upper {
                        self.deliver(held.peer, upper, &payload);
                    }
                }
                ReassemblyOutcome::Dropped { reason } if reason != DropReason::NoHeader => {
                    self.buffers.remove(&id);
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<Option<Received>, RunnerError> {
        Ok(self.outbox.pop_front())
    }

    fn pace(&mut self, _delay: Duration) {}

    fn stop_capture(&mut self) {
        self.capturing = false;
        self.outbox.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{new_model, Endpoints, TestCase, TestMode};

    #[test]
    fn replies_once_complete() {
        let e = Endpoints::default();
        let mut host = SimulatedHost::new(ReassemblyPolicy::FragFirstWins, e.dst);
        host.start_capture().unwrap();
        let case = TestCase::new("x".into(), new_model(), (0..6).collect(), TestMode::Single);
        let plan = &case.packets(&e).unwrap()[0];
        for f in &plan.fragments {
            host.send(&f.frame).unwrap();
        }
        assert!(host.recv(Duration::ZERO).unwrap().is_none());
        host.end_of_burst().unwrap();
        let got = host.recv(Duration::ZERO).unwrap().unwrap();
        assert_eq!(got.source, e.dst);
        let reply = Icmpv6Echo::parse(&got.icmp).unwrap();
        assert_eq!(reply.msg_type, wire::icmp_type::ECHO_REPLY);
        assert_eq!(host.pending(), 0);
    }

    #[test]
    fn other_destinations_ignored() {
        let e = Endpoints::default();
        let mut host = SimulatedHost::new(ReassemblyPolicy::Last, "2001:db8::99".parse().unwrap());
        host.start_capture().unwrap();
        let case = TestCase::new("x".into(), new_model(), (0..6).collect(), TestMode::Single);
        for f in &case.packets(&e).unwrap()[0].fragments {
            host.send(&f.frame).unwrap();
        }
        host.end_of_burst().unwrap();
        assert_eq!(host.pending(), 0);
        assert!(host.recv(Duration::ZERO).unwrap().is_none());
    }
}
