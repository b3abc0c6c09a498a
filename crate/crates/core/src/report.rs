//! Compliance verdicts, reply-count matrices and dataset files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelKind, TestMode};
use crate::reassembly::{self, CaseExpectation, PolicyScore};
use crate::runner::{Observed, TestResult};
use crate::scenarios::Rfc9099Experiment;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const RESULT_FIELDS: [&str; 7] = ["case_id", "model", "mode", "arrival_order", "observed", "reply_count", "oracle"];
pub const CSV_COLUMNS: [&str; 5] = ["target", "shankar_paxson", "new_model_1", "new_model_2", "new_model_3"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("i/o: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCell {
    pub cases: usize,
    pub replied_cases: usize,
    pub replies: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Rfc5722Verdict {
    Compliant,
    NonCompliant { evidence: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rfc9099Class {
    /// Silence: the packet was dropped quietly.
    Compliant,
    /// An echo reply came back.
    NonCompliant,
    /// Dropped, but the target answered with an ICMPv6 error.
    NonSilentDrop,
}

pub fn classify_rfc9099(observed: &Observed) -> Rfc9099Class {
    match observed {
        Observed::Silence => Rfc9099Class::Compliant,
        Observed::EchoReply => Rfc9099Class::NonCompliant,
        Observed::ParamProblem { .. } | Observed::OtherIcmp { .. } => Rfc9099Class::NonSilentDrop,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rfc9099Verdict {
    pub case_id: String,
    pub observed: Observed,
    pub class: Rfc9099Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub target: String,
    pub counts: BTreeMap<ModelKind, BTreeMap<TestMode, CountCell>>,
    pub rfc5722: Rfc5722Verdict,
    pub rfc9099: BTreeMap<Rfc9099Experiment, Rfc9099Verdict>,
    pub fingerprint: Vec<PolicyScore>,
}

impl ComplianceReport {
    pub fn replies(&self, model: ModelKind, mode: TestMode) -> usize {
        self.counts.get(&model).and_then(|m| m.get(&mode)).map(|c| c.replies).unwrap_or(0)
    }

    pub fn model_replies(&self, model: ModelKind) -> usize {
        self.counts.get(&model).map(|m| m.values().map(|c| c.replies).sum()).unwrap_or(0)
    }
}

/// Folds results into a report. The order of `results` does not matter.
pub fn aggregate(target: &str, results: &[TestResult]) -> Result<ComplianceReport, ReportError> {
    if results.is_empty() {
        return Err(ReportError::EmptyResults);
    }
    let mut counts: BTreeMap<ModelKind, BTreeMap<TestMode, CountCell>> = BTreeMap::new();
    let mut evidence = BTreeSet::new();
    let mut rfc9099 = BTreeMap::new();
    for r in results {
        let cell = counts.entry(r.model).or_default().entry(r.mode).or_default();
        cell.cases += 1;
        cell.replies += r.reply_count;
        if r.observed.replied() {
            cell.replied_cases += 1;
            if r.overlapping {
                evidence.insert(r.case_id.clone());
            }
        }
        let experiment = match r.model {
            ModelKind::Rfc9099One => Some(Rfc9099Experiment::IncompleteChainWithLateDestOptions),
            ModelKind::Rfc9099Two => Some(Rfc9099Experiment::EmptyFirstFragment),
            _ => None,
        };
        if let Some(exp) = experiment {
            let verdict = Rfc9099Verdict {
                case_id: r.case_id.clone(),
                observed: r.observed,
                class: classify_rfc9099(&r.observed),
            };
            // With repeated runs keep the least compliant observation.
            let worse = |a: &Rfc9099Verdict, b: &Rfc9099Verdict| (a.observed_rank(), &a.case_id) > (b.observed_rank(), &b.case_id);
            match rfc9099.get(&exp) {
                Some(existing) if !worse(&verdict, existing) => {}
                _ => {
                    rfc9099.insert(exp, verdict);
                }
            }
        }
    }
    let rfc5722 = if evidence.is_empty() {
        Rfc5722Verdict::Compliant
    } else {
        Rfc5722Verdict::NonCompliant {
            evidence: evidence.into_iter().collect(),
        }
    };
    Ok(ComplianceReport {
        target: target.to_string(),
        counts,
        rfc5722,
        rfc9099,
        fingerprint: fingerprint_results(results).unwrap_or_default(),
    })
}

impl Rfc9099Verdict {
    fn observed_rank(&self) -> u8 {
        match self.observed {
            Observed::EchoReply => 3,
            Observed::ParamProblem { .. } => 2,
            Observed::OtherIcmp { .. } => 1,
            Observed::Silence => 0,
        }
    }
}

/// Policy ranking from the oracle entries embedded in each result.
pub fn fingerprint_results(results: &[TestResult]) -> Result<Vec<PolicyScore>, reassembly::FingerprintError> {
    let mut observed = BTreeMap::new();
    let mut oracle = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        // Keys keep repeated runs of one case apart.
        let key = format!("{}#{i}", r.case_id);
        observed.insert(key.clone(), r.observed.replied());
        oracle.insert(
            key,
            r.oracle
                .iter()
                .map(|(p, e)| {
                    (
                        *p,
                        CaseExpectation {
                            replies: e.replies,
                            outcomes: Vec::new(),
                        },
                    )
                })
                .collect(),
        );
    }
    reassembly::fingerprint_policy(&observed, &oracle)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub kind: String,
    pub schema_version: u32,
    pub fields: Vec<String>,
    pub target: String,
}

impl ResultsHeader {
    pub fn new(target: &str) -> Self {
        ResultsHeader {
            kind: "v6frag-results".into(),
            schema_version: RESULTS_SCHEMA_VERSION,
            fields: RESULT_FIELDS.iter().map(|s| s.to_string()).collect(),
            target: target.to_string(),
        }
    }
}

/// Streaming json-lines writer: header first, then one line per result.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(mut out: W, header: &ResultsHeader) -> Result<Self, ReportError> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(JsonlSink { out })
    }

    pub fn record(&mut self, result: &TestResult) -> Result<(), ReportError> {
        serde_json::to_writer(&mut self.out, result)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_jsonl<W: Write>(out: W, header: &ResultsHeader, results: &[TestResult]) -> Result<(), ReportError> {
    let mut sink = JsonlSink::new(out, header)?;
    for r in results {
        sink.record(r)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<(ResultsHeader, Vec<TestResult>), ReportError> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| ReportError::Format("missing header record".into()))??;
    let header: ResultsHeader = serde_json::from_str(&first)?;
    if header.kind != "v6frag-results" || header.schema_version != RESULTS_SCHEMA_VERSION {
        return Err(ReportError::Format(format!(
            "unsupported dataset {} v{}",
            header.kind, header.schema_version
        )));
    }
    let mut results = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            results.push(serde_json::from_str(&line)?);
        }
    }
    Ok((header, results))
}

/// One row per target: legacy six-fragment replies, then new-model replies per mode.
pub fn write_csv<W: Write>(out: W, reports: &[ComplianceReport]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.target.clone(),
            r.model_replies(ModelKind::ShankarPaxson).to_string(),
            r.replies(ModelKind::NewModel, TestMode::Single).to_string(),
            r.replies(ModelKind::NewModel, TestMode::RepeatSameId).to_string(),
            r.replies(ModelKind::NewModel, TestMode::MultiPacketDistinctIds).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary(report: &ComplianceReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "target: {}", report.target);
    let _ = writeln!(s, "echo replies (cases replied / cases, total replies):");
    for (model, modes) in &report.counts {
        for (mode, c) in modes {
            let _ = writeln!(s, "  {model:<10} test {}: {}/{} cases, {} replies", mode.number(), c.replied_cases, c.cases, c.replies);
        }
    }
    match &report.rfc5722 {
        Rfc5722Verdict::Compliant => {
            let _ = writeln!(s, "RFC 5722: compliant (no reply to any overlapping case)");
        }
        Rfc5722Verdict::NonCompliant { evidence } => {
            let shown: Vec<_> = evidence.iter().take(5).map(String::as_str).collect();
            let more = evidence.len().saturating_sub(shown.len());
            let _ = write!(s, "RFC 5722: NON-COMPLIANT, {} overlapping cases replied: {}", evidence.len(), shown.join(", "));
            if more > 0 {
                let _ = write!(s, " (+{more} more)");
            }
            let _ = writeln!(s);
        }
    }
    for (exp, v) in &report.rfc9099 {
        let _ = writeln!(s, "RFC 9099 {exp:?}: {:?} ({:?})", v.class, v.observed);
    }
    if !report.fingerprint.is_empty() {
        let _ = writeln!(s, "policy fingerprint:");
        for p in &report.fingerprint {
            let _ = writeln!(s, "  #{} {:<16} {:>6.2}% ({}/{})", p.rank, p.policy.name(), p.agreement_pct, p.agreements, p.total);
        }
    }
    s
}
