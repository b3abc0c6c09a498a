use std::collections::BTreeSet;

use pcap_file::pcap::PcapReader;
use v6frag::models::{build_campaign, CampaignSelection, ModelKind, ModelSelector, TestMode};
use v6frag::reassembly::ReassemblyPolicy;
use v6frag::report::{self, Rfc5722Verdict, Rfc9099Class, ResultsHeader};
use v6frag::runner::pcap::Recording;
use v6frag::runner::simulated::SimulatedHost;
use v6frag::runner::{run_campaign, RunnerConfig};
use v6frag::scenarios;

#[test]
fn campaign_ids_are_unique_and_nonzero() {
    let c = build_campaign(&CampaignSelection::all(), 1234);
    let mut seen = BTreeSet::new();
    for case in &c.cases {
        assert_eq!(case.identifications.len(), case.mode.identification_count());
        for &id in &case.identifications {
            assert_ne!(id, 0);
            assert!(seen.insert(id), "identification {id:#x} reused");
        }
    }
    let again = build_campaign(&CampaignSelection::all(), 1234);
    assert_eq!(c.cases, again.cases);
    assert_ne!(build_campaign(&CampaignSelection::all(), 1235).cases, c.cases);
}

#[test]
fn strict_target_is_compliant_end_to_end() {
    let campaign = build_campaign(&CampaignSelection::all(), 3);
    let policy = ReassemblyPolicy::Rfc5722Strict;
    let config = RunnerConfig::dry_run(policy);
    let mut host = SimulatedHost::new(policy, config.target);
    let run = run_campaign(&campaign.cases, &config, &mut host, |_| Ok(())).unwrap();

    let mut buf = Vec::new();
    report::write_jsonl(&mut buf, &ResultsHeader::new("strict"), &run.results).unwrap();
    let (header, back) = report::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(header.target, "strict");
    assert_eq!(back, run.results);

    let r = report::aggregate("strict", &back).unwrap();
    assert!(matches!(r.rfc5722, Rfc5722Verdict::Compliant), "{:?}", r.rfc5722);
    assert_eq!(r.rfc9099.len(), 2);
    assert!(r.rfc9099.values().all(|v| v.class == Rfc9099Class::Compliant));
    assert_eq!(r.model_replies(ModelKind::NewModel), 0);
    assert_eq!(r.fingerprint[0].policy, policy);
}

#[test]
fn first_wins_target_reply_counts() {
    let campaign = build_campaign(&CampaignSelection::only(ModelSelector::NewModel, &TestMode::ALL), 3);
    let policy = ReassemblyPolicy::FragFirstWins;
    let config = RunnerConfig::dry_run(policy);
    let mut host = SimulatedHost::new(policy, config.target);
    let run = run_campaign(&campaign.cases, &config, &mut host, |_| Ok(())).unwrap();
    let r = report::aggregate("ffw", &run.results).unwrap();
    // Exhaustive count of hole-free orders; modes 2 and 3 send five copies each.
    assert_eq!(r.replies(ModelKind::NewModel, TestMode::Single), 576);
    assert_eq!(r.replies(ModelKind::NewModel, TestMode::RepeatSameId), 5 * 576);
    assert_eq!(r.replies(ModelKind::NewModel, TestMode::MultiPacketDistinctIds), 5 * 576);

    let mut csv = Vec::new();
    report::write_csv(&mut csv, &[r]).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), "target,shankar_paxson,new_model_1,new_model_2,new_model_3\nffw,0,576,2880,2880\n");
}

#[test]
fn pcap_holds_every_frame_and_reply() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.pcap");
    let campaign = build_campaign(&CampaignSelection::only(ModelSelector::Rfc9099, &[TestMode::Single]), 1);
    let policy = ReassemblyPolicy::Linux;
    let config = RunnerConfig::dry_run(policy);
    let host = SimulatedHost::new(policy, config.target);
    let mut rec = Recording::new(host).with_pcap(&path, config.endpoints().unwrap().src).unwrap();
    let run = run_campaign(&campaign.cases, &config, &mut rec, |_| Ok(())).unwrap();
    let replies: usize = run.results.iter().map(|r| r.reply_count).sum();
    let frames = rec.sent().len();
    assert_eq!(frames, 6);
    drop(rec);

    let mut reader = PcapReader::new(std::fs::File::open(&path).unwrap()).unwrap();
    let mut n = 0;
    while let Some(p) = reader.next_packet() {
        assert_eq!(p.unwrap().data[0] >> 4, 6);
        n += 1;
    }
    assert_eq!(n, frames + replies);
}

#[test]
fn golden_files_match_builders() {
    let dir = tempfile::tempdir().unwrap();
    let written = scenarios::export_golden(dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let one = std::fs::read_to_string(dir.path().join("rfc9099-e1.hex")).unwrap();
    assert_eq!(one, scenarios::frames_to_hex(&scenarios::rfc9099_experiment_one().frames));
    let two = std::fs::read_to_string(dir.path().join("rfc9099-e2.hex")).unwrap();
    assert_eq!(two, scenarios::frames_to_hex(&scenarios::rfc9099_experiment_two().frames));
    let first = hex::decode(two.lines().next().unwrap()).unwrap();
    // Empty first fragment: fixed header plus the fragment header only.
    assert_eq!(first.len(), 48);
    assert_eq!(first[40], 59);
}
