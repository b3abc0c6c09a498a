use std::ffi::{c_char, CStr};
use std::net::Ipv6Addr;
use std::ptr;

use v6frag::reassembly::{expected_outcomes, ReassemblyPolicy};
use v6frag_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { v6f_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn build(models: u32, modes: u32) -> *mut V6fCampaign {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { v6f_campaign_build(models, modes, 42, &mut handle) }, V6fStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn len(c: *const V6fCampaign) -> usize {
    let mut n = 0;
    assert_eq!(unsafe { v6f_campaign_len(c, &mut n) }, V6fStatus::Ok);
    n
}

#[test]
fn campaign_sizes_through_the_abi() {
    let all = build(V6F_MODEL_ALL, V6F_MODE_ALL);
    assert_eq!(len(all), 2209);
    let new = build(V6F_MODEL_NEW, V6F_MODE_ALL);
    assert_eq!(len(new), 2160);
    let legacy = build(V6F_MODEL_THREE_FRAGMENT, V6F_MODE_SINGLE);
    assert_eq!(len(legacy), 44);
    unsafe {
        v6f_campaign_free(all);
        v6f_campaign_free(new);
        v6f_campaign_free(legacy);
        v6f_campaign_free(ptr::null_mut());
    }
}

#[test]
fn case_ids_and_buffer_sizing() {
    let c = build(V6F_MODEL_NEW, V6F_MODE_SINGLE);
    let mut needed = 0;
    let mut tiny = [0 as c_char; 4];
    let st = unsafe { v6f_campaign_case_id(c, 0, tiny.as_mut_ptr(), tiny.len(), &mut needed) };
    assert_eq!(st, V6fStatus::BufferTooSmall);
    assert_eq!(needed, "new-m1-p000".len() + 1);
    assert!(last_error().contains("need"));

    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { v6f_campaign_case_id(c, 719, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, V6fStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "new-m1-p719");

    assert_eq!(unsafe { v6f_campaign_case_id(c, 720, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, V6fStatus::OutOfRange);
    unsafe { v6f_campaign_free(c) };
}

#[test]
fn expected_replies_agree_with_the_library() {
    let c = build(V6F_MODEL_THREE_FRAGMENT, V6F_MODE_SINGLE);
    let cases = v6frag::models::three_fragment_model_suite();
    for (i, case) in cases.iter().enumerate() {
        for (code, policy) in ReassemblyPolicy::ALL.into_iter().enumerate() {
            let mut got = usize::MAX;
            assert_eq!(unsafe { v6f_campaign_expected_replies(c, i, code as u32, &mut got) }, V6fStatus::Ok);
            assert_eq!(got, expected_outcomes(case)[&policy].replies, "{} {policy}", case.case_id);
        }
    }
    let mut out = 0;
    assert_eq!(unsafe { v6f_campaign_expected_replies(c, 0, 8, &mut out) }, V6fStatus::InvalidArgument);
    assert_eq!(
        unsafe { v6f_campaign_expected_replies(c, 0, V6fPolicy::Linux as u32, ptr::null_mut()) },
        V6fStatus::NullPointer
    );
    unsafe { v6f_campaign_free(c) };
}

#[test]
fn invalid_masks_rejected() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { v6f_campaign_build(0, V6F_MODE_ALL, 1, &mut h) }, V6fStatus::InvalidArgument);
    assert_eq!(unsafe { v6f_campaign_build(V6F_MODEL_ALL, 8, 1, &mut h) }, V6fStatus::InvalidArgument);
    assert_eq!(unsafe { v6f_campaign_build(V6F_MODEL_ALL, V6F_MODE_ALL, 1, ptr::null_mut()) }, V6fStatus::NullPointer);
    assert!(h.is_null());
}

#[test]
fn checksum_matches_a_reference_sum() {
    let src: Ipv6Addr = "2001:db8::1".parse().unwrap();
    let dst: Ipv6Addr = "2001:db8::2".parse().unwrap();
    let data = [0x80u8, 0, 0, 0, 0x12, 0x34, 0, 1, 0xde, 0xad, 0xbe];
    let mut got = 0;
    let st = unsafe { v6f_internet_checksum(src.octets().as_ptr(), dst.octets().as_ptr(), 58, data.as_ptr(), data.len(), &mut got) };
    assert_eq!(st, V6fStatus::Ok);

    let mut bytes = Vec::new();
    bytes.extend_from_slice(&src.octets());
    bytes.extend_from_slice(&dst.octets());
    bytes.extend_from_slice(&(data.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&[0, 0, 0, 58]);
    bytes.extend_from_slice(&data);
    bytes.push(0);
    let mut sum: u32 = bytes.chunks(2).map(|w| u32::from(w[0]) << 8 | u32::from(w[1])).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    assert_eq!(got, !(sum as u16));
}

#[test]
fn pattern_fill_through_the_abi() {
    let mut buf = [0u8; 16];
    assert_eq!(unsafe { v6f_pattern_fill(b'A' as c_char, V6fParity::Odd as u32, 2, buf.as_mut_ptr(), buf.len()) }, V6fStatus::Ok);
    assert_eq!(&buf[..4], &[0x11, 0x22, 0x33, 0x44]);
    assert_eq!(&buf[..8], &buf[8..]);
    assert_eq!(unsafe { v6f_pattern_fill(b'Z' as c_char, 0, 1, buf.as_mut_ptr(), buf.len()) }, V6fStatus::InvalidArgument);
    assert_eq!(unsafe { v6f_pattern_fill(b'A' as c_char, 0, 3, buf.as_mut_ptr(), buf.len()) }, V6fStatus::BufferTooSmall);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(v6f_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/v6frag.h")).unwrap();
    for symbol in [
        "v6f_campaign_build",
        "v6f_campaign_len",
        "v6f_campaign_case_id",
        "v6f_campaign_expected_replies",
        "v6f_campaign_free",
        "v6f_internet_checksum",
        "v6f_pattern_fill",
        "v6f_last_error_message",
        "v6f_version",
        "typedef struct V6fCampaign V6fCampaign",
        "V6F_STATUS_BUFFER_TOO_SMALL",
        "V6F_POLICY_RFC5722_STRICT",
        "#define V6F_MODEL_ALL 15",
        "#define V6FRAG_H",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"v6frag.h\"\nint main(void) { V6fCampaign *c = 0; uintptr_t n = 0;\n\
         if (v6f_campaign_build(V6F_MODEL_ALL, V6F_MODE_ALL, 1, &c) != V6F_STATUS_OK) return 1;\n\
         v6f_campaign_len(c, &n); v6f_campaign_free(c); return n == 0 && V6F_POLICY_LINUX == 4; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("v6frag-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
