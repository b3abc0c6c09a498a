use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::Ipv6Addr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use v6frag::models::{build_campaign, Campaign, CampaignSelection, Endpoints, ModelSelector, TestMode};
use v6frag::reassembly::{FragmentBuffer, ReassemblyOutcome, ReassemblyPolicy};
use v6frag::report::{self, JsonlSink, ResultsHeader};
use v6frag::runner::live::LiveTransport;
use v6frag::runner::pcap::Recording;
use v6frag::runner::simulated::SimulatedHost;
use v6frag::runner::{run_campaign, RunMode, RunnerConfig, RunnerError, Transport};
use v6frag::scenarios::{self, ForgeStrategy, Injection};
use v6frag::wire;

#[derive(Parser)]
#[command(name = "v6frag", version, about = "IPv6 overlapping-fragment test campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and run a campaign against a target or the simulator.
    Campaign(CampaignArgs),
    /// Write the campaign manifest with expected outcomes per policy.
    Oracle(OracleArgs),
    /// Rank reassembly policies from result files and print verdicts.
    Fingerprint(FingerprintArgs),
    /// Emit scenario frames.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Args, Clone)]
struct SelectionArgs {
    /// Models to include (repeatable or comma separated).
    #[arg(long = "model", value_delimiter = ',', default_value = "all")]
    models: Vec<String>,
    /// Test modes: 1 single, 2 repeated with one id, 3 five packets with distinct ids.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    modes: Vec<u8>,
    /// Run every arrival order of the legacy six-fragment model.
    #[arg(long)]
    sp_all_orders: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read cases (geometries included) from a manifest instead of generating them.
    #[arg(long, value_name = "PATH")]
    manifest_in: Option<PathBuf>,
}

impl SelectionArgs {
    fn campaign(&self) -> Result<Campaign> {
        if let Some(path) = &self.manifest_in {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let (campaign, _) = Campaign::read_manifest(BufReader::new(file))?;
            return Ok(campaign);
        }
        let mut models = BTreeSet::new();
        for m in &self.models {
            if m == "all" {
                models.extend(CampaignSelection::all().models);
            } else {
                models.insert(m.parse::<ModelSelector>().map_err(RunnerError::Config)?);
            }
        }
        let mut modes = BTreeSet::new();
        for &n in &self.modes {
            modes.insert(
                TestMode::from_number(n).ok_or_else(|| RunnerError::Config(format!("unknown mode {n} (expected 1, 2 or 3)")))?,
            );
        }
        let selection = CampaignSelection {
            models,
            modes,
            sp_all_orders: self.sp_all_orders,
        };
        Ok(build_campaign(&selection, self.seed))
    }
}

#[derive(Args)]
struct CampaignArgs {
    #[command(flatten)]
    selection: SelectionArgs,
    /// Target address. Defaults to the documentation address in dry-run mode.
    #[arg(long)]
    target: Option<Ipv6Addr>,
    /// Source address written into frames (default: chosen by the routing table).
    #[arg(long)]
    source: Option<Ipv6Addr>,
    /// Interface to send and capture on (required for live runs).
    #[arg(long)]
    iface: Option<String>,
    /// Replace the network with the simulator using this policy.
    #[arg(long, value_name = "POLICY")]
    dry_run: Option<ReassemblyPolicy>,
    /// Results file (json lines). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the manifest of the executed campaign.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Pause between frames.
    #[arg(long, default_value_t = 10)]
    delay_ms: u64,
    /// How long to wait for replies after each case.
    #[arg(long, default_value_t = 35.0)]
    timeout_s: f64,
    /// Extra attempts for a case whose send or capture fails.
    #[arg(long, default_value_t = 1)]
    retries: usize,
    /// Write sent and received packets to a pcap file.
    #[arg(long, value_name = "PATH")]
    pcap: Option<PathBuf>,
    /// Print a summary with verdicts to stderr when done.
    #[arg(long)]
    summary: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    selection: SelectionArgs,
    /// Manifest output. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FingerprintArgs {
    /// Result files written by `campaign`.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Write the reply-count matrix (one row per file) as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// Emit the reports as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Shuffle,
    Delta,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectionArg {
    Before,
    After,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Write golden hex dumps of the RFC 9099 experiments.
    Golden {
        #[arg(long, default_value = "golden")]
        dir: PathBuf,
    },
    /// Print the frames of one RFC 9099 experiment as hex.
    Rfc9099 {
        #[arg(long, default_value_t = 1)]
        experiment: u8,
    },
    /// Print a spoofed overlapping fragment.
    Dos {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        victim: Ipv6Addr,
        #[arg(long)]
        target: Ipv6Addr,
        #[arg(long, default_value_t = 1)]
        start: u16,
        #[arg(long, default_value_t = 3)]
        end: u16,
    },
    /// Build the forged syslog fragment offline and show what a receiver reassembles.
    Modification {
        #[arg(long, value_enum, default_value = "shuffle")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Replacement text for the delta strategy (padded or cut to the fragment size).
        #[arg(long, default_value = "for git from 10.10.10.200 port 49240 ssh2: ED25519 SHA25")]
        text: String,
        /// Byte position inside the fragment that absorbs the checksum difference.
        #[arg(long, default_value_t = 54)]
        slot: usize,
        #[arg(long, value_enum, default_value = "before")]
        inject: InjectionArg,
        #[arg(long, default_value = "frag-first-wins")]
        policy: ReassemblyPolicy,
        #[arg(long, default_value = EXAMPLE_LINE)]
        log_line: String,
    },
}

const EXAMPLE_LINE: &str = scenarios::EXAMPLE_SSH_LOG_LINE;

fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<RunnerError>(),
        Some(RunnerError::PrivilegeRequired(_) | RunnerError::Config(_))
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Campaign(a) => campaign(a),
        Command::Oracle(a) => oracle(a).map(|_| true),
        Command::Fingerprint(a) => fingerprint(a).map(|_| true),
        Command::Scenario(s) => scenario(s).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Returns Ok(false) when some cases failed.
fn campaign(a: CampaignArgs) -> Result<bool> {
    let campaign = a.selection.campaign()?;
    let mut config = match a.dry_run {
        Some(policy) => RunnerConfig::dry_run(policy),
        None => {
            let target = a.target.ok_or_else(|| RunnerError::Config("--target is required for live runs".into()))?;
            let iface = a.iface.clone().ok_or_else(|| RunnerError::Config("--iface is required for live runs".into()))?;
            RunnerConfig::live(target, iface)
        }
    };
    if let Some(t) = a.target {
        config.target = t;
    }
    if a.source.is_some() {
        config.source = a.source;
    }
    if a.iface.is_some() {
        config.interface = a.iface.clone();
    }
    config.inter_frame_delay = Duration::from_millis(a.delay_ms);
    if !(a.timeout_s.is_finite() && a.timeout_s > 0.0) {
        return Err(RunnerError::Config("--timeout-s must be positive".into()).into());
    }
    config.reply_timeout = Duration::from_secs_f64(a.timeout_s);
    config.retries = a.retries;
    config.validate()?;
    let endpoints = config.endpoints()?;

    if let Some(path) = &a.manifest {
        campaign.write_manifest(BufWriter::new(File::create(path)?), true)?;
    }

    let transport: Box<dyn Transport> = match config.mode {
        RunMode::DryRun(policy) => Box::new(SimulatedHost::new(policy, config.target)),
        RunMode::Live => Box::new(LiveTransport::open(config.target, config.interface.as_deref())?),
    };
    let mut recording = Recording::new(transport);
    if let Some(p) = &a.pcap {
        recording = recording.with_pcap(p, endpoints.src)?;
    }

    let target_label = match config.mode {
        RunMode::DryRun(p) => format!("dry-run:{p}"),
        RunMode::Live => config.target.to_string(),
    };
    let mut sink = JsonlSink::new(output(&a.out)?, &ResultsHeader::new(&target_label))?;
    let total = campaign.cases.len();
    let mut done = 0usize;
    let run = run_campaign(&campaign.cases, &config, &mut recording, |r| {
        done += 1;
        if config.mode == RunMode::Live {
            eprintln!("[{done}/{total}] {} {:?} replies={}", r.case_id, r.observed, r.reply_count);
        }
        sink.record(r).map_err(|e| RunnerError::Sink(e.to_string()))
    })?;
    sink.into_inner().flush()?;

    for f in &run.failures {
        eprintln!("case {} failed: {}", f.case_id, f.error);
    }
    if a.summary && !run.results.is_empty() {
        eprint!("{}", report::summary(&report::aggregate(&target_label, &run.results)?));
    }
    Ok(run.failures.is_empty())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let campaign = a.selection.campaign()?;
    campaign.write_manifest(output(&a.out)?, true)?;
    Ok(())
}

fn fingerprint(a: FingerprintArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &a.results {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let (header, results) = report::read_jsonl(BufReader::new(file))?;
        let r = report::aggregate(&header.target, &results).with_context(|| path.display().to_string())?;
        reports.push(r);
    }
    let mut out = io::stdout().lock();
    for r in &reports {
        if a.json {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out)?;
        } else {
            write!(out, "{}", report::summary(r))?;
        }
    }
    if let Some(p) = &a.csv {
        report::write_csv(File::create(p)?, &reports)?;
    }
    Ok(())
}

fn scenario(s: ScenarioCommand) -> Result<()> {
    match s {
        ScenarioCommand::Golden { dir } => {
            for p in scenarios::export_golden(&dir)? {
                println!("{}", p.display());
            }
        }
        ScenarioCommand::Rfc9099 { experiment } => {
            let case = match experiment {
                1 => scenarios::rfc9099_experiment_one(),
                2 => scenarios::rfc9099_experiment_two(),
                n => bail!("experiment must be 1 or 2, got {n}"),
            };
            print!("{}", scenarios::frames_to_hex(&case.frames));
        }
        ScenarioCommand::Dos { id, victim, target, start, end } => {
            if end <= start {
                bail!("--end must be greater than --start");
            }
            let f = scenarios::dos_overlap_fragment(id, victim, target, start..end)?;
            println!("{}", f.frame.to_hex());
        }
        ScenarioCommand::Modification {
            strategy,
            seed,
            text,
            slot,
            inject,
            policy,
            log_line,
        } => modification(strategy, seed, text, slot, inject, policy, log_line)?,
    }
    Ok(())
}

fn modification(
    strategy: StrategyArg,
    seed: u64,
    text: String,
    slot: usize,
    inject: InjectionArg,
    policy: ReassemblyPolicy,
    log_line: String,
) -> Result<()> {
    let e = Endpoints::default();
    let datagram = scenarios::syslog_datagram(&e, 40514, scenarios::SYSLOG_PORT, log_line.as_bytes());
    let spans = scenarios::syslog_split(datagram.len())?;
    let original = &datagram[spans[1].clone()];
    let strategy = match strategy {
        StrategyArg::Shuffle => ForgeStrategy::Shuffle { seed },
        StrategyArg::Delta => {
            let mut t = text.into_bytes();
            t.resize(original.len(), b' ');
            ForgeStrategy::DeltaCompensation { text: t, slot }
        }
    };
    let forged = scenarios::forge_modification_fragment(original, strategy)?;
    let injection = match inject {
        InjectionArg::Before => Injection::BeforeSecond,
        InjectionArg::After => Injection::AfterSecond,
    };
    let attack = scenarios::syslog_attack_frames(&e, 0x5157, log_line.as_bytes(), scenarios::SYSLOG_PORT, &forged, injection)?;
    println!("original second fragment: {}", String::from_utf8_lossy(original));
    println!("forged second fragment:   {}", String::from_utf8_lossy(&forged.forged));
    for (i, f) in attack.frames.iter().enumerate() {
        let tag = if i == attack.forged_index { " (forged)" } else { "" };
        println!("frame {i}{tag}: {}", f.frame.to_hex());
    }
    let mut buf = FragmentBuffer::new(0x5157, policy);
    for f in &attack.frames {
        let parsed = wire::parse_frame(&f.frame)?;
        buf.insert(&f.spec, &parsed.fragment_data());
    }
    match buf.reassemble(Duration::ZERO) {
        ReassemblyOutcome::Complete { payload, .. } => {
            let valid = scenarios::udp_checksum_valid(&e, &payload);
            println!("{policy}: reassembled, UDP checksum {}", if valid { "valid" } else { "INVALID" });
            println!("message: {}", String::from_utf8_lossy(&payload[wire::UDP_HEADER_LEN..]));
        }
        other => println!("{policy}: not delivered ({})", v6frag::runner::outcome_label(&other)),
    }
    Ok(())
}
