//! Raw-socket transport for live targets (Linux).
//!
//! Frames are written whole through an `IPPROTO_RAW` IPv6 socket, so the
//! kernel sends our IPv6 and Fragment headers untouched. Replies are read from
//! a raw ICMPv6 socket by a background thread.

use std::ffi::CString;
use std::io;
use std::mem::MaybeUninit;
use std::net::{Ipv6Addr, SocketAddrV6};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::{Received, RunnerError, Transport};
use crate::wire::Frame;

const POLL_INTERVAL: Duration = Duration::from_millis(100);

fn map_open_error(what: &str, e: io::Error) -> RunnerError {
    match e.raw_os_error() {
        Some(libc::EPERM) | Some(libc::EACCES) => RunnerError::PrivilegeRequired(format!("{what}: {e}")),
        _ if e.kind() == io::ErrorKind::PermissionDenied => RunnerError::PrivilegeRequired(format!("{what}: {e}")),
        _ => RunnerError::CaptureFailure(format!("{what}: {e}")),
    }
}

/// Interface index for link-local scopes; 0 when unknown.
pub fn interface_index(name: &str) -> u32 {
    let Ok(c) = CString::new(name) else { return 0 };
    // SAFETY: `c` is a valid NUL-terminated string for the duration of the call.
    unsafe { libc::if_nametoindex(c.as_ptr()) }
}

pub struct LiveTransport {
    sender: Socket,
    destination: SockAddr,
    interface: Option<String>,
    rx: Option<Receiver<Received>>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl LiveTransport {
    /// Opens the send socket. Fails with `PrivilegeRequired` when raw
    /// sockets are not permitted.
    pub fn open(target: Ipv6Addr, interface: Option<&str>) -> Result<Self, RunnerError> {
        let sender = Socket::new(Domain::IPV6, Type::RAW, Some(Protocol::from(libc::IPPROTO_RAW)))
            .map_err(|e| map_open_error("raw IPv6 socket", e))?;
        if let Some(name) = interface {
            sender
                .bind_device(Some(name.as_bytes()))
                .map_err(|e| map_open_error(&format!("bind to {name}"), e))?;
        }
        let scope = interface.map(interface_index).unwrap_or(0);
        let destination = SockAddr::from(SocketAddrV6::new(target, 0, 0, scope));
        Ok(LiveTransport {
            sender,
            destination,
            interface: interface.map(str::to_owned),
            rx: None,
            stop: Arc::new(AtomicBool::new(false)),
            worker: None,
        })
    }
}

fn receive_loop(sock: Socket, tx: mpsc::Sender<Received>, ready: mpsc::Sender<()>, stop: Arc<AtomicBool>) {
    let _ = ready.send(());
    let mut buf = [MaybeUninit::<u8>::uninit(); 65536];
    while !stop.load(Ordering::Relaxed) {
        match sock.recv_from(&mut buf) {
            Ok((n, from)) => {
                let Some(src) = from.as_socket_ipv6() else { continue };
                // SAFETY: recv_from initialized the first `n` bytes.
                let icmp: Vec<u8> = buf[..n].iter().map(|b| unsafe { b.assume_init() }).collect();
                if tx.send(Received { source: *src.ip(), icmp }).is_err() {
                    return;
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted) => {}
            Err(_) => return,
        }
    }
}

impl Transport for LiveTransport {
    fn start_capture(&mut self) -> Result<(), RunnerError> {
        if self.rx.is_some() {
            return Ok(());
        }
        let sock = Socket::new(Domain::IPV6, Type::RAW, Some(Protocol::ICMPV6)).map_err(|e| map_open_error("raw ICMPv6 socket", e))?;
        if let Some(name) = &self.interface {
            sock.bind_device(Some(name.as_bytes()))
                .map_err(|e| map_open_error(&format!("bind capture to {name}"), e))?;
        }
        sock.set_read_timeout(Some(POLL_INTERVAL))
            .map_err(|e| RunnerError::CaptureFailure(e.to_string()))?;
        let (tx, rx) = mpsc::channel();
        let (ready_tx, ready_rx) = mpsc::channel();
        self.stop.store(false, Ordering::Relaxed);
        let stop = Arc::clone(&self.stop);
        let worker = std::thread::Builder::new()
            .name("v6frag-capture".into())
            .spawn(move || receive_loop(sock, tx, ready_tx, stop))
            .map_err(|e| RunnerError::CaptureFailure(e.to_string()))?;
        ready_rx
            .recv_timeout(Duration::from_secs(5))
            .map_err(|_| RunnerError::CaptureFailure("capture thread did not start".into()))?;
        self.rx = Some(rx);
        self.worker = Some(worker);
        Ok(())
    }

    fn send(&mut self, frame: &Frame) -> Result<(), RunnerError> {
        if self.rx.is_none() {
            return Err(RunnerError::CaptureFailure("send before capture is ready".into()));
        }
        let n = self.sender.send_to(frame.as_bytes(), &self.destination).map_err(|e| match e.raw_os_error() {
            Some(libc::EPERM) | Some(libc::EACCES) => RunnerError::PrivilegeRequired(e.to_string()),
            _ => RunnerError::SendFailure(e),
        })?;
        if n != frame.len() {
            return Err(RunnerError::SendFailure(io::Error::other(format!("short write: {n} of {}", frame.len()))));
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Received>, RunnerError> {
        let rx = self.rx.as_ref().ok_or_else(|| RunnerError::CaptureFailure("capture not started".into()))?;
        match rx.recv_timeout(timeout) {
            Ok(r) => Ok(Some(r)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(RunnerError::CaptureFailure("capture thread stopped".into())),
        }
    }

    fn stop_capture(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.rx = None;
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for LiveTransport {
    fn drop(&mut self) {
        self.stop_capture();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_index_is_known() {
        assert_ne!(interface_index("lo"), 0);
        assert_eq!(interface_index("definitely-not-an-interface0"), 0);
        assert_eq!(interface_index("bad\0name"), 0);
    }

    #[test]
    fn open_either_works_or_reports_privilege() {
        match LiveTransport::open(Ipv6Addr::LOCALHOST, None) {
            Ok(mut t) => {
                assert!(matches!(t.send(&Frame::from_bytes(vec![0x60; 40])), Err(RunnerError::CaptureFailure(_))));
            }
            Err(e) => assert!(matches!(e, RunnerError::PrivilegeRequired(_) | RunnerError::CaptureFailure(_)), "{e}"),
        }
    }
}
