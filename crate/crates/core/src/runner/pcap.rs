//! Transport wrapper that keeps a copy of everything sent and received, and
//! optionally writes it to a raw-IPv6 pcap file.

use std::fs::File;
use std::io::BufWriter;
use std::net::Ipv6Addr;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use pcap_file::pcap::{PcapHeader, PcapPacket, PcapWriter};
use pcap_file::DataLink;

use super::{Received, RunnerError, Transport};
use crate::wire::{proto, Frame, Ipv6Header};

pub struct Recording<T> {
    inner: T,
    sent: Vec<Frame>,
    received: Vec<Received>,
    writer: Option<PcapWriter<BufWriter<File>>>,
    /// Destination written into the synthesized header of captured replies.
    local: Ipv6Addr,
}

impl<T: Transport> Recording<T> {
    pub fn new(inner: T) -> Self {
        Recording {
            inner,
            sent: Vec::new(),
            received: Vec::new(),
            writer: None,
            local: Ipv6Addr::UNSPECIFIED,
        }
    }

    /// Also writes every packet to `path` (link type raw IPv6).
    pub fn with_pcap(mut self, path: &Path, local: Ipv6Addr) -> Result<Self, RunnerError> {
        let file = File::create(path).map_err(|e| RunnerError::CaptureFailure(format!("{}: {e}", path.display())))?;
        let header = PcapHeader {
            datalink: DataLink::IPV6,
            ..Default::default()
        };
        let writer = PcapWriter::with_header(BufWriter::new(file), header).map_err(|e| RunnerError::CaptureFailure(e.to_string()))?;
        self.writer = Some(writer);
        self.local = local;
        Ok(self)
    }

    pub fn sent(&self) -> &[Frame] {
        &self.sent
    }

    pub fn received(&self) -> &[Received] {
        &self.received
    }

    pub fn into_inner(self) -> T {
        self.inner
    }

    fn write(&mut self, bytes: &[u8]) -> Result<(), RunnerError> {
        if let Some(w) = self.writer.as_mut() {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or(Duration::ZERO);
            w.write_packet(&PcapPacket::new(ts, bytes.len() as u32, bytes))
                .map_err(|e| RunnerError::CaptureFailure(e.to_string()))?;
        }
        Ok(())
    }
}

impl<T: Transport> Transport for Recording<T> {
    fn start_capture(&mut self) -> Result<(), RunnerError> {
        self.inner.start_capture()
    }

    fn send(&mut self, frame: &Frame) -> Result<(), RunnerError> {
        self.inner.send(frame)?;
        self.write(frame.as_bytes())?;
        self.sent.push(frame.clone());
        Ok(())
    }

    fn end_of_burst(&mut self) -> Result<(), RunnerError> {
        self.inner.end_of_burst()
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Received>, RunnerError> {
        let got = self.inner.recv(timeout)?;
        if let Some(r) = &got {
            // Raw ICMPv6 sockets strip the IPv6 header; rebuild one for the capture.
            let mut h = Ipv6Header::new(r.source, self.local);
            h.next_header = proto::ICMPV6;
            h.payload_length = r.icmp.len() as u16;
            let mut bytes = Vec::with_capacity(40 + r.icmp.len());
            h.write(&mut bytes);
            bytes.extend_from_slice(&r.icmp);
            self.write(&bytes)?;
            self.received.push(r.clone());
        }
        Ok(got)
    }

    fn pace(&mut self, delay: Duration) {
        self.inner.pace(delay)
    }

    fn stop_capture(&mut self) {
        self.inner.stop_capture();
        if let Some(w) = self.writer.take() {
            use std::io::Write;
            let _ = w.into_writer().flush();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{new_model, Endpoints, TestCase, TestMode};
    use crate::reassembly::ReassemblyPolicy;
    use crate::runner::{run_case, simulated::SimulatedHost, RunnerConfig};
    use pcap_file::pcap::PcapReader;

    #[test]
    fn pcap_contains_sent_and_received() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cap.pcap");
        let config = RunnerConfig::dry_run(ReassemblyPolicy::FragFirstWins);
        let host = SimulatedHost::new(ReassemblyPolicy::FragFirstWins, config.target);
        let mut rec = Recording::new(host).with_pcap(&path, Endpoints::default().src).unwrap();
        rec.start_capture().unwrap();
        let case = TestCase::new("x".into(), new_model(), (0..6).collect(), TestMode::Single);
        let r = run_case(&case, &config, &mut rec).unwrap();
        rec.stop_capture();
        assert_eq!(r.reply_count, 1);
        let sent: Vec<Frame> = rec.sent().to_vec();
        // Order of transmission equals the arrival order of the plan.
        let plan = &case.packets(&Endpoints::default()).unwrap()[0];
        assert_eq!(sent, plan.fragments.iter().map(|f| f.frame.clone()).collect::<Vec<_>>());
        drop(rec);

        let mut reader = PcapReader::new(File::open(&path).unwrap()).unwrap();
        assert_eq!(reader.header().datalink, DataLink::IPV6);
        let mut n = 0;
        while let Some(p) = reader.next_packet() {
            p.unwrap();
            n += 1;
        }
        assert_eq!(n, 7);
    }
}
