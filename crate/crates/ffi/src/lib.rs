//! C ABI for campaign generation, the reassembly oracle and checksum helpers.
//!
//! Every fallible call returns a [`V6fStatus`]; on failure a message is
//! available from [`v6f_last_error_message`] on the same thread. Campaigns are
//! opaque handles released with [`v6f_campaign_free`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr};
use std::net::Ipv6Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use v6frag::checksum::{self, Parity, PseudoHeader};
use v6frag::models::{build_campaign, Campaign, CampaignSelection, ModelSelector, TestMode};
use v6frag::reassembly::{expected_outcomes, ReassemblyPolicy};

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V6fStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    BufferTooSmall = 4,
    Internal = 5,
}

/// Reassembly policies, for `v6f_campaign_expected_replies`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V6fPolicy {
    First = 0,
    Last = 1,
    Bsd = 2,
    BsdRight = 3,
    Linux = 4,
    FragFirstWins = 5,
    FragLastWins = 6,
    Rfc5722Strict = 7,
}

/// Pattern tables, for `v6f_pattern_fill`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V6fParity {
    Odd = 0,
    Even = 1,
}

pub const V6F_MODEL_SP: u32 = 1;
pub const V6F_MODEL_THREE_FRAGMENT: u32 = 2;
pub const V6F_MODEL_NEW: u32 = 4;
pub const V6F_MODEL_RFC9099: u32 = 8;
pub const V6F_MODEL_ALL: u32 = 15;

pub const V6F_MODE_SINGLE: u32 = 1;
pub const V6F_MODE_REPEAT: u32 = 2;
pub const V6F_MODE_MULTI: u32 = 4;
pub const V6F_MODE_ALL: u32 = 7;

/// Opaque campaign handle.
pub struct V6fCampaign {
    inner: Campaign,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: V6fStatus, msg: impl Into<String>) -> V6fStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> V6fStatus) -> V6fStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(V6fStatus::Internal, "internal panic"),
    }
}

fn policy_from(raw: u32) -> Option<ReassemblyPolicy> {
    ReassemblyPolicy::ALL.get(raw as usize).copied()
}

/// Builds a campaign from model and mode bit masks.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn v6f_campaign_build(models: u32, modes: u32, seed: u64, out: *mut *mut V6fCampaign) -> V6fStatus {
    guard(|| {
        if out.is_null() {
            return fail(V6fStatus::NullPointer, "out is null");
        }
        if models == 0 || models & !V6F_MODEL_ALL != 0 {
            return fail(V6fStatus::InvalidArgument, format!("bad model mask {models:#x}"));
        }
        if modes == 0 || modes & !V6F_MODE_ALL != 0 {
            return fail(V6fStatus::InvalidArgument, format!("bad mode mask {modes:#x}"));
        }
        let mut set = BTreeSet::new();
        for (bit, sel) in [
            (V6F_MODEL_SP, ModelSelector::ShankarPaxson),
            (V6F_MODEL_THREE_FRAGMENT, ModelSelector::ThreeFragment),
            (V6F_MODEL_NEW, ModelSelector::NewModel),
            (V6F_MODEL_RFC9099, ModelSelector::Rfc9099),
        ] {
            if models & bit != 0 {
                set.insert(sel);
            }
        }
        let mode_set = TestMode::ALL
            .into_iter()
            .enumerate()
            .filter(|(i, _)| modes & (1 << i) != 0)
            .map(|(_, m)| m)
            .collect();
        let selection = CampaignSelection {
            models: set,
            modes: mode_set,
            sp_all_orders: false,
        };
        let handle = Box::new(V6fCampaign {
            inner: build_campaign(&selection, seed),
        });
        // SAFETY: checked non-null above; caller guarantees validity.
        unsafe { *out = Box::into_raw(handle) };
        V6fStatus::Ok
    })
}

/// Number of cases.
///
/// # Safety
/// `campaign` must come from `v6f_campaign_build`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v6f_campaign_len(campaign: *const V6fCampaign, out: *mut usize) -> V6fStatus {
    guard(|| {
        // SAFETY: caller contract.
        let (Some(c), false) = (unsafe { campaign.as_ref() }, out.is_null()) else {
            return fail(V6fStatus::NullPointer, "null argument");
        };
        unsafe { *out = c.inner.cases.len() };
        V6fStatus::Ok
    })
}

/// Copies the NUL-terminated case id into `buf`. `needed` (optional)
/// receives the required size including the terminator.
///
/// # Safety
/// `campaign` must come from `v6f_campaign_build`; `buf` must hold `buf_len`
/// writable bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn v6f_campaign_case_id(
    campaign: *const V6fCampaign,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> V6fStatus {
    guard(|| {
        let Some(c) = (unsafe { campaign.as_ref() }) else {
            return fail(V6fStatus::NullPointer, "campaign is null");
        };
        let Some(case) = c.inner.cases.get(index) else {
            return fail(V6fStatus::OutOfRange, format!("index {index} out of range"));
        };
        let id = case.case_id.as_bytes();
        if !needed.is_null() {
            unsafe { *needed = id.len() + 1 };
        }
        if buf.is_null() {
            return fail(V6fStatus::NullPointer, "buf is null");
        }
        if buf_len < id.len() + 1 {
            return fail(V6fStatus::BufferTooSmall, format!("need {} bytes", id.len() + 1));
        }
        // SAFETY: buf holds at least id.len() + 1 bytes.
        unsafe {
            ptr::copy_nonoverlapping(id.as_ptr(), buf as *mut u8, id.len());
            *buf.add(id.len()) = 0;
        }
        V6fStatus::Ok
    })
}

/// Echo replies the oracle predicts for case `index` under `policy`
/// (a `V6fPolicy` value).
///
/// # Safety
/// `campaign` must come from `v6f_campaign_build`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v6f_campaign_expected_replies(
    campaign: *const V6fCampaign,
    index: usize,
    policy: u32,
    out: *mut usize,
) -> V6fStatus {
    guard(|| {
        let (Some(c), false) = (unsafe { campaign.as_ref() }, out.is_null()) else {
            return fail(V6fStatus::NullPointer, "null argument");
        };
        let Some(policy) = policy_from(policy) else {
            return fail(V6fStatus::InvalidArgument, format!("unknown policy {policy}"));
        };
        let Some(case) = c.inner.cases.get(index) else {
            return fail(V6fStatus::OutOfRange, format!("index {index} out of range"));
        };
        let replies = expected_outcomes(case).get(&policy).map(|e| e.replies).unwrap_or(0);
        unsafe { *out = replies };
        V6fStatus::Ok
    })
}

/// Releases a campaign. Null is ignored.
///
/// # Safety
/// `campaign` must come from `v6f_campaign_build` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn v6f_campaign_free(campaign: *mut V6fCampaign) {
    if !campaign.is_null() {
        // SAFETY: allocated by Box::into_raw in v6f_campaign_build.
        drop(unsafe { Box::from_raw(campaign) });
    }
}

/// Upper-layer checksum of `data` over the IPv6 pseudo-header.
///
/// # Safety
/// `src` and `dst` must point to 16 bytes each; `data` to `len` bytes (may be
/// null when `len` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v6f_internet_checksum(
    src: *const u8,
    dst: *const u8,
    next_header: u8,
    data: *const u8,
    len: usize,
    out: *mut u16,
) -> V6fStatus {
    guard(|| {
        if src.is_null() || dst.is_null() || out.is_null() || (data.is_null() && len > 0) {
            return fail(V6fStatus::NullPointer, "null argument");
        }
        let addr = |p: *const u8| {
            let mut b = [0u8; 16];
            // SAFETY: caller provides 16 readable bytes.
            unsafe { ptr::copy_nonoverlapping(p, b.as_mut_ptr(), 16) };
            Ipv6Addr::from(b)
        };
        let bytes = if len == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(data, len) } };
        let pseudo = PseudoHeader::new(addr(src), addr(dst), next_header, len);
        unsafe { *out = checksum::internet_checksum(&pseudo, bytes) };
        V6fStatus::Ok
    })
}

/// Fills `units` 8-byte units of pattern `label` ('A'..'F') into `buf`.
///
/// # Safety
/// `buf` must hold `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn v6f_pattern_fill(label: c_char, parity: u32, units: usize, buf: *mut u8, buf_len: usize) -> V6fStatus {
    guard(|| {
        if buf.is_null() {
            return fail(V6fStatus::NullPointer, "buf is null");
        }
        let parity = match parity {
            0 => Parity::Odd,
            1 => Parity::Even,
            p => return fail(V6fStatus::InvalidArgument, format!("unknown parity {p}")),
        };
        let Some(needed) = units.checked_mul(8) else {
            return fail(V6fStatus::OutOfRange, "units overflow");
        };
        if buf_len < needed {
            return fail(V6fStatus::BufferTooSmall, format!("need {needed} bytes"));
        }
        match checksum::pattern_fill(label as u8 as char, parity, units) {
            Ok(bytes) => {
                unsafe { ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len()) };
                V6fStatus::Ok
            }
            Err(e) => fail(V6fStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `buf_len > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must hold `buf_len` writable bytes, or be null.
#[no_mangle]
pub unsafe extern "C" fn v6f_last_error_message(buf: *mut c_char, buf_len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && buf_len > 0 {
            let n = msg.len().min(buf_len - 1);
            // SAFETY: n + 1 <= buf_len.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn v6f_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_values_line_up() {
        for (i, p) in ReassemblyPolicy::ALL.iter().enumerate() {
            assert_eq!(policy_from(i as u32), Some(*p));
        }
        assert_eq!(V6fPolicy::Rfc5722Strict as u32, 7);
        assert_eq!(policy_from(V6fPolicy::FragLastWins as u32), Some(ReassemblyPolicy::FragLastWins));
        assert_eq!(policy_from(8), None);
    }
}
