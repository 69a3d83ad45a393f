//! Command implementations, separated from argument parsing so tests
//! can drive them directly and check their outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use frontscope_core::candidate_sets::{
    annotate_tls, build_groups, read_sets_jsonl, sample_pairs, write_sets_jsonl, CandidateSet,
    DestinationTuple, GroupKey, GroupingKind, Observations, RankedTuple, ScanPair,
};
use frontscope_core::cdn_simulator::demo::{host_rewrite_demo, DemoError, DemoTranscript, VictimRequest};
use frontscope_core::cdn_simulator::{
    start_attacker_origin, start_scenario, ContentFetcher, PolicyPreset, RunningScenario,
    Scenario, SimulatorError,
};
use frontscope_core::classifier::{
    classify_all, read_verdicts_jsonl, write_verdicts_jsonl, ClassifyError, PairVerdict,
};
use frontscope_core::dns_ingest::{
    parse_cname_records, parse_tls_records, registrable_domain, AsnTable, DnsCnameObservation,
    IngestError, ParseStats, SuffixList, TlsObservation,
};
use frontscope_core::report::{
    aggregate_by_group, popularity_estimate, render, split_outcomes, PopularityEstimate,
    RenderFormat, ReportError,
};
use frontscope_core::scan_engine::{
    execute_all, https_get, plan_all, prefilter_tuples, retry_failed, IndexedOutcome,
    PlannedScan, RetryStats, ScanConfig, ScanError, ScanOutcome,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::Settings;

/// Command failure split by exit code: 2 for bad invocations and bad
/// inputs, 1 for runtime failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> CliError {
        match e {
            IngestError::Io(inner) => CliError::Runtime(format!("io: {inner}")),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimulatorError> for CliError {
    fn from(e: SimulatorError) -> CliError {
        match e {
            SimulatorError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ScanError> for CliError {
    fn from(e: ScanError) -> CliError {
        // The engine refuses disallowed targets before connecting;
        // that is an input problem, not a runtime one.
        CliError::Usage(e.to_string())
    }
}

impl From<ClassifyError> for CliError {
    fn from(e: ClassifyError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<DemoError> for CliError {
    fn from(e: DemoError) -> CliError {
        match e {
            DemoError::Transport(_) | DemoError::LengthChanged { .. } => {
                CliError::Runtime(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = create_output(path)?;
    let fail = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        out.write_all(line.as_bytes()).map_err(fail)?;
        out.write_all(b"\n").map_err(fail)?;
    }
    out.flush().map_err(fail)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let reader = open_input(path)?;
    let mut items = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            CliError::Usage(format!("{} line {}: {e}", path.display(), number + 1))
        })?;
        items.push(item);
    }
    Ok(items)
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let fail = |e: String| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| fail(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| fail(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub cname: ParseStats,
    pub tls: ParseStats,
    pub cname_out: PathBuf,
    pub tls_out: PathBuf,
}

/// Parses and normalizes both observation streams, writing canonical
/// JSONL plus parse statistics into the output directory.
pub fn cmd_ingest(cname: &Path, tls: &Path, out_dir: &Path) -> Result<IngestSummary, CliError> {
    let (cname_records, cname_stats) =
        parse_cname_records(open_input(cname)?, SuffixList::bundled())?;
    let (tls_records, tls_stats) = parse_tls_records(open_input(tls)?)?;

    ensure_dir(out_dir)?;
    let cname_out = out_dir.join("cname.jsonl");
    let tls_out = out_dir.join("tls.jsonl");
    write_jsonl(&cname_out, &cname_records)?;
    write_jsonl(&tls_out, &tls_records)?;
    let summary = IngestSummary { cname: cname_stats, tls: tls_stats, cname_out, tls_out };
    write_json_pretty(&out_dir.join("ingest_stats.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct BuildSetsSummary {
    pub sets: usize,
    pub tuples: usize,
    pub out: PathBuf,
}

fn load_observations(
    cname: &Path,
    tls: &Path,
    asn: Option<&Path>,
    grouping: GroupingKind,
) -> Result<Observations, CliError> {
    let (cname_records, _) = parse_cname_records(open_input(cname)?, SuffixList::bundled())?;
    let (tls_records, _) = parse_tls_records(open_input(tls)?)?;
    let table = match asn {
        Some(path) => AsnTable::from_csv(open_input(path)?)?,
        None if grouping == GroupingKind::AutonomousSystem => {
            return Err(CliError::Usage(
                "grouping autonomous_system needs --asn with a prefix table".to_string(),
            ));
        }
        None => AsnTable::from_entries(Vec::new())?,
    };
    Ok(Observations { cname: cname_records, tls: annotate_tls(tls_records, &table) })
}

/// Groups observations into candidate sets for one grouping kind.
pub fn cmd_build_sets(
    cname: &Path,
    tls: &Path,
    asn: Option<&Path>,
    grouping: GroupingKind,
    out: &Path,
) -> Result<BuildSetsSummary, CliError> {
    let observations = load_observations(cname, tls, asn, grouping)?;
    let sets = build_groups(&observations, grouping);
    let tuples = sets.iter().map(|s| s.tuples.len()).sum();
    let mut writer = create_output(out)?;
    write_sets_jsonl(&mut writer, &sets)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    writer.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    Ok(BuildSetsSummary { sets: sets.len(), tuples, out: out.to_path_buf() })
}

#[derive(Debug, Clone)]
pub struct ScanSummary {
    pub sets: usize,
    pub tuples_total: usize,
    pub tuples_kept: usize,
    pub pairs: usize,
    pub scans: usize,
    pub retries: RetryStats,
    pub pairs_out: PathBuf,
    pub outcomes_out: PathBuf,
}

fn apply_ip_override(sets: &mut [CandidateSet], settings: &Settings) -> Result<(), CliError> {
    if let Some(t) = settings.target_override()? {
        if let Some(ip) = t.ip {
            for set in sets.iter_mut() {
                for ranked in &mut set.tuples {
                    ranked.tuple.ip = ip;
                }
            }
        }
    }
    Ok(())
}

struct ScanPhase {
    tuples_total: usize,
    tuples_kept: usize,
    dropped: Vec<ScanOutcome>,
    pairs: Vec<ScanPair>,
    outcomes: Vec<IndexedOutcome>,
    retries: RetryStats,
}

// Shared by `scan` and `pipeline`: prefilter each set, sample pairs
// from the survivors, execute the five-scan matrix, then retry
// failures sequentially.
fn run_scan_phase(
    sets: &[CandidateSet],
    settings: &Settings,
    cfg: &ScanConfig,
) -> Result<ScanPhase, CliError> {
    let pairs_per_tuple = settings.pairs_per_tuple()?;
    let seed = settings.seed();

    let mut tuples_total = 0;
    let mut tuples_kept = 0;
    let mut dropped = Vec::new();
    let mut pairs: Vec<ScanPair> = Vec::new();
    for set in sets {
        tuples_total += set.tuples.len();
        let tuples: Vec<DestinationTuple> =
            set.tuples.iter().map(|r| r.tuple.clone()).collect();
        let filtered = prefilter_tuples(&tuples, cfg)?;
        let keep: BTreeSet<(String, _)> =
            filtered.kept.iter().map(|t| (t.domain.clone(), t.ip)).collect();
        dropped.extend(filtered.dropped);
        let surviving = CandidateSet {
            key: set.key.clone(),
            tuples: set
                .tuples
                .iter()
                .filter(|r| keep.contains(&(r.tuple.domain.clone(), r.tuple.ip)))
                .cloned()
                .collect(),
        };
        tuples_kept += surviving.tuples.len();
        pairs.extend(sample_pairs(&surviving, pairs_per_tuple, seed));
    }

    let planned: Vec<PlannedScan> = plan_all(&pairs);
    let mut outcomes = execute_all(&planned, cfg)?;
    let retries = retry_failed(outcomes.iter_mut().map(|o| &mut o.outcome), cfg)?;
    Ok(ScanPhase { tuples_total, tuples_kept, dropped, pairs, outcomes, retries })
}

/// Scans candidate sets end to end and persists pairs, outcomes, and
/// the prefilter rejects.
pub fn cmd_scan(sets_path: &Path, out_dir: &Path, settings: &Settings) -> Result<ScanSummary, CliError> {
    let mut sets = read_sets_jsonl(open_input(sets_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", sets_path.display())))?;
    apply_ip_override(&mut sets, settings)?;
    let cfg = settings.scan_config()?;

    ensure_dir(out_dir)?;
    let phase = run_scan_phase(&sets, settings, &cfg)?;
    let pairs_out = out_dir.join("pairs.jsonl");
    let outcomes_out = out_dir.join("outcomes.jsonl");
    write_jsonl(&pairs_out, &phase.pairs)?;
    write_jsonl(&outcomes_out, &phase.outcomes)?;
    write_jsonl(&out_dir.join("prefilter_dropped.jsonl"), &phase.dropped)?;
    Ok(ScanSummary {
        sets: sets.len(),
        tuples_total: phase.tuples_total,
        tuples_kept: phase.tuples_kept,
        pairs: phase.pairs.len(),
        scans: phase.outcomes.len(),
        retries: phase.retries,
        pairs_out,
        outcomes_out,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifySummary {
    pub pairs: usize,
    pub applicable: usize,
    pub pruned: usize,
    pub out: PathBuf,
}

/// Regroups outcomes by pair and writes one verdict per pair.
pub fn cmd_classify(
    pairs_path: &Path,
    outcomes_path: &Path,
    out: &Path,
) -> Result<ClassifySummary, CliError> {
    let pairs: Vec<ScanPair> = read_jsonl(pairs_path)?;
    let outcomes: Vec<IndexedOutcome> = read_jsonl(outcomes_path)?;
    let verdicts = classify_all(&pairs, &outcomes)?;
    let applicable = verdicts.iter().filter(|v| v.applicable).count();
    let mut writer = create_output(out)?;
    write_verdicts_jsonl(&mut writer, &verdicts)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    writer.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    Ok(ClassifySummary {
        pairs: verdicts.len(),
        applicable,
        pruned: verdicts.len() - applicable,
        out: out.to_path_buf(),
    })
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub rendered: String,
    pub popularity: Option<PopularityEstimate>,
}

fn registrable_or_self(name: &str) -> String {
    registrable_domain(name, SuffixList::bundled()).unwrap_or_else(|_| name.to_string())
}

fn popularity_from(
    popular_path: &Path,
    cname_path: &Path,
    verdicts: &[PairVerdict],
) -> Result<PopularityEstimate, CliError> {
    let text = fs::read_to_string(popular_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", popular_path.display())))?;
    let popular: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(registrable_or_self)
        .collect();

    let (records, _) = parse_cname_records(open_input(cname_path)?, SuffixList::bundled())?;
    let mut cname_map: BTreeMap<String, String> = BTreeMap::new();
    for record in records {
        cname_map
            .entry(registrable_or_self(&record.alias_fqdn))
            .or_insert(record.canonical_domain);
    }

    let (groups, _) = split_outcomes(aggregate_by_group(verdicts));
    let support: BTreeMap<String, f64> = groups
        .iter()
        .filter(|g| g.key.kind == GroupingKind::CnameDomain)
        .map(|g| (g.key.value.clone(), g.fronting_pct))
        .collect();
    Ok(popularity_estimate(&popular, &cname_map, &support)?)
}

/// Renders the per-group support report, optionally estimating how
/// much of a popularity list is frontable.
pub fn cmd_report(
    verdicts_path: &Path,
    format: RenderFormat,
    popular: Option<(&Path, &Path)>,
) -> Result<ReportOutput, CliError> {
    let verdicts = read_verdicts_jsonl(open_input(verdicts_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", verdicts_path.display())))?;
    let (groups, suppressed) = split_outcomes(aggregate_by_group(&verdicts));
    let rendered = render(&groups, &suppressed, format);
    let popularity = match popular {
        Some((popular_path, cname_path)) => {
            Some(popularity_from(popular_path, cname_path, &verdicts)?)
        }
        None => None,
    };
    Ok(ReportOutput { rendered, popularity })
}

/// Where a scenario comes from: a file on disk or a generated preset
/// group.
#[derive(Debug, Clone)]
pub enum ScenarioSource {
    File(PathBuf),
    Preset { preset: PolicyPreset, count: u8, zone: String, ip_octet: u8 },
}

pub fn load_scenario(source: &ScenarioSource) -> Result<Scenario, CliError> {
    match source {
        ScenarioSource::Preset { preset, count, zone, ip_octet } => {
            Ok(Scenario::preset_group(preset.as_str(), *preset, zone, *count, *ip_octet))
        }
        ScenarioSource::File(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let is_json = path.extension().is_some_and(|e| e == "json");
            let parsed: Result<Scenario, String> = if is_json {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub name: String,
    pub zone: String,
    pub port: u16,
    pub domains: BTreeMap<String, String>,
    pub ca_cert: Option<PathBuf>,
}

/// Starts a scenario, reports its endpoints, holds for the requested
/// time, and shuts down.
pub fn cmd_simulate(
    source: &ScenarioSource,
    state_dir: Option<&Path>,
    emit_scenario: Option<&Path>,
    hold: std::time::Duration,
) -> Result<Option<SimulateSummary>, CliError> {
    let scenario = load_scenario(source)?;
    if let Some(path) = emit_scenario {
        let text = toml::to_string_pretty(&scenario)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        return Ok(None);
    }
    if let Some(dir) = state_dir {
        ensure_dir(dir)?;
    }
    let running = start_scenario(&scenario, state_dir, None)?;
    let summary = SimulateSummary {
        name: running.name.clone(),
        zone: running.zone.clone(),
        port: running.port,
        domains: running
            .domain_ips
            .iter()
            .map(|(d, ip)| (d.clone(), ip.to_string()))
            .collect(),
        ca_cert: state_dir.map(|d| d.join("ca_cert.pem")),
    };
    std::thread::sleep(hold);
    running.shutdown();
    Ok(Some(summary))
}

/// Demo scenario resolution: the generated two-domain deployment on a
/// chosen preset, or a scenario file that wires one domain to the
/// attacker origin.
#[derive(Debug, Clone)]
pub enum DemoSource {
    Preset(PolicyPreset),
    File(PathBuf),
}

fn demo_roles(scenario: &Scenario) -> Result<(String, String), CliError> {
    let mut victim = None;
    let mut attacker = None;
    for edge in &scenario.edges {
        for domain in &edge.domains {
            if domain.upstream.as_deref() == Some("attacker") {
                if attacker.replace(domain.name.to_ascii_lowercase()).is_some() {
                    return Err(CliError::Usage(
                        "demo scenario wires more than one domain to the attacker".to_string(),
                    ));
                }
            } else if victim.is_none() && domain.ip.is_some() {
                victim = Some(domain.name.to_ascii_lowercase());
            }
        }
    }
    match (victim, attacker) {
        (Some(v), Some(a)) => Ok((v, a)),
        (_, None) => Err(CliError::Usage(
            "demo scenario needs a domain with upstream = \"attacker\"".to_string(),
        )),
        (None, _) => Err(CliError::Usage(
            "demo scenario needs a victim domain with its own address".to_string(),
        )),
    }
}

// The attacker origin fetches victim content back through the edge;
// the edge's port is only known after startup, hence the shared slot.
fn wired_fetcher(cfg: ScanConfig) -> (ContentFetcher, Arc<Mutex<Option<SocketAddr>>>) {
    let slot: Arc<Mutex<Option<SocketAddr>>> = Arc::new(Mutex::new(None));
    let shared = slot.clone();
    let fetcher: ContentFetcher = Arc::new(move |host, _path| {
        let addr = shared
            .lock()
            .expect("edge address slot")
            .ok_or("edge address not wired up yet".to_string())?;
        let exchange = https_get(addr, Some(host), host, &cfg).map_err(|e| e.message)?;
        Ok((exchange.status, exchange.body))
    });
    (fetcher, slot)
}

/// Runs the traffic-hijack demo end to end and returns the transcript.
pub fn cmd_demo(source: &DemoSource, settings: &Settings) -> Result<DemoTranscript, CliError> {
    let scenario = match source {
        DemoSource::Preset(preset) => Scenario::hijack_demo("sim.test", *preset),
        DemoSource::File(path) => load_scenario(&ScenarioSource::File(path.clone()))?,
    };
    let (victim_domain, attacker_domain) = demo_roles(&scenario)?;

    let mut cfg = settings.scan_config()?;
    let (fetcher, addr_slot) = wired_fetcher(cfg.clone());
    let origin = start_attacker_origin(&scenario.zone, fetcher)?;
    let running = start_scenario(&scenario, None, Some(origin.addr))?;
    if settings.target_override()?.is_none() {
        cfg.port = running.port;
    }
    let edge_addr = running.addr_of(&victim_domain).ok_or_else(|| {
        CliError::Usage(format!("victim domain {victim_domain} has no address in the scenario"))
    })?;
    // The fetcher dials the victim's home address with an honest SNI
    // and Host, so it works even on enforcing edges.
    *addr_slot.lock().expect("edge address slot") = Some(edge_addr);

    let victim = VictimRequest { domain: victim_domain, path: "/account".to_string() };
    let zone = scenario.zone.to_ascii_lowercase();
    let transcript = host_rewrite_demo(&victim, &attacker_domain, edge_addr, &origin, &zone, &cfg);
    running.shutdown();
    origin.shutdown();
    Ok(transcript?)
}

/// Where pipeline candidates come from: a simulator scenario or
/// observation files.
#[derive(Debug, Clone)]
pub enum PipelineSource {
    Scenario(ScenarioSource),
    Observations { cname: PathBuf, tls: PathBuf, asn: Option<PathBuf> },
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub sets: usize,
    pub pairs: usize,
    pub scans: usize,
    pub retries: RetryStats,
    pub applicable: usize,
    pub suppressed_groups: usize,
    pub report_path: PathBuf,
}

/// The whole measurement in one command: candidates, prefilter, scan,
/// retry, classify, aggregate, render. Every artifact is persisted and
/// byte-stable for a fixed seed and input.
pub fn cmd_pipeline(
    source: &PipelineSource,
    settings: &Settings,
) -> Result<PipelineSummary, CliError> {
    let out_dir = settings.out_dir();
    ensure_dir(&out_dir)?;
    let mut cfg = settings.scan_config()?;

    // A started scenario must outlive the scan phase.
    let mut running: Option<RunningScenario> = None;
    let mut sets: Vec<CandidateSet> = match source {
        PipelineSource::Scenario(scenario_source) => {
            let scenario = load_scenario(scenario_source)?;
            let started = start_scenario(&scenario, None, None)?;
            if settings.target_override()?.is_none() {
                cfg.port = started.port;
            }
            let key = GroupKey {
                kind: GroupingKind::CnameDomain,
                value: started.zone.clone(),
            };
            let tuples = started
                .tuples
                .iter()
                .map(|t| RankedTuple { tuple: t.clone(), prevalence: 1 })
                .collect();
            running = Some(started);
            vec![CandidateSet { key, tuples }]
        }
        PipelineSource::Observations { cname, tls, asn } => {
            let grouping = settings.grouping();
            let observations = load_observations(cname, tls, asn.as_deref(), grouping)?;
            build_groups(&observations, grouping)
        }
    };
    apply_ip_override(&mut sets, settings)?;

    let mut writer = create_output(&out_dir.join("sets.jsonl"))?;
    write_sets_jsonl(&mut writer, &sets)
        .and_then(|()| writer.flush())
        .map_err(|e| CliError::Runtime(format!("sets.jsonl: {e}")))?;

    let phase = run_scan_phase(&sets, settings, &cfg);
    if let Some(scenario) = running {
        scenario.shutdown();
    }
    let phase = phase?;

    write_jsonl(&out_dir.join("pairs.jsonl"), &phase.pairs)?;
    write_jsonl(&out_dir.join("outcomes.jsonl"), &phase.outcomes)?;
    write_jsonl(&out_dir.join("prefilter_dropped.jsonl"), &phase.dropped)?;

    let verdicts = classify_all(&phase.pairs, &phase.outcomes)?;
    let verdicts_path = out_dir.join("verdicts.jsonl");
    let mut writer = create_output(&verdicts_path)?;
    write_verdicts_jsonl(&mut writer, &verdicts)
        .and_then(|()| writer.flush())
        .map_err(|e| CliError::Runtime(format!("verdicts.jsonl: {e}")))?;

    let format = settings.format();
    let (groups, suppressed) = split_outcomes(aggregate_by_group(&verdicts));
    let rendered = render(&groups, &suppressed, format);
    let report_path = out_dir.join(format!("report.{}", format.file_extension()));
    fs::write(&report_path, rendered)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", report_path.display())))?;

    Ok(PipelineSummary {
        out_dir,
        sets: sets.len(),
        pairs: phase.pairs.len(),
        scans: phase.outcomes.len(),
        retries: phase.retries,
        applicable: verdicts.iter().filter(|v| v.applicable).count(),
        suppressed_groups: suppressed.len(),
        report_path,
    })
}

// Observation types re-exported for integration tests building inputs.
pub type CnameRecord = DnsCnameObservation;
pub type TlsRecord = TlsObservation;
