use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use frontscope_cli::commands::{
    cmd_build_sets, cmd_classify, cmd_demo, cmd_ingest, cmd_pipeline, cmd_report, cmd_scan,
    cmd_simulate, CliError, DemoSource, PipelineSource, ScenarioSource,
};
use frontscope_cli::config::{parse_format, parse_grouping, Settings};
use frontscope_core::cdn_simulator::PolicyPreset;

#[derive(Parser)]
#[command(
    name = "frontscope",
    version,
    about = "Detects domain fronting, faking, and domainless fronting in TLS scans, \
             with a local CDN edge simulator for safe end-to-end runs"
)]
struct Cli {
    /// TOML config file; command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Scan-related knobs shared by the commands that open connections.
#[derive(Args, Clone, Default)]
struct ScanFlags {
    /// Concurrent scan workers.
    #[arg(long)]
    parallelism: Option<usize>,
    /// TCP connect timeout in milliseconds.
    #[arg(long)]
    timeout_connect: Option<u64>,
    /// Whole-exchange timeout in milliseconds.
    #[arg(long)]
    timeout_total: Option<u64>,
    /// User-Agent header sent with every request.
    #[arg(long)]
    user_agent: Option<String>,
    /// Delay before each sequential retry, in milliseconds.
    #[arg(long)]
    retry_delay: Option<u64>,
    /// Response body cap in bytes.
    #[arg(long)]
    max_body: Option<u64>,
    /// Redirect scans at a simulator: `ip:port` replaces every
    /// destination, `:port` keeps tuple IPs and changes the port.
    #[arg(long)]
    target: Option<String>,
    /// File of CIDR prefixes that scans may target (loopback is
    /// always permitted).
    #[arg(long)]
    allowlist: Option<PathBuf>,
    /// Scan arbitrary targets. Only set this for infrastructure you
    /// control; scanning third parties is intrusive.
    #[arg(long)]
    i_own_this_infrastructure: bool,
}

impl ScanFlags {
    fn into_settings(self) -> Settings {
        Settings {
            parallelism: self.parallelism,
            timeout_connect_ms: self.timeout_connect,
            timeout_total_ms: self.timeout_total,
            user_agent: self.user_agent,
            retry_delay_ms: self.retry_delay,
            max_body: self.max_body,
            target: self.target,
            allowlist: self.allowlist,
            i_own_this_infrastructure: self.i_own_this_infrastructure,
            ..Settings::default()
        }
    }
}

/// Scenario selection shared by simulate, demo, and pipeline.
#[derive(Args, Clone, Default)]
struct ScenarioFlags {
    /// Scenario file (TOML, or JSON by extension).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Generate a single-edge scenario with this policy preset
    /// instead of reading a file.
    #[arg(long)]
    preset: Option<String>,
    /// Domains in a generated scenario.
    #[arg(long, default_value_t = 8)]
    count: u8,
    /// Zone for generated domains; must be under .test.
    #[arg(long, default_value = "sim.test")]
    zone: String,
    /// Second loopback octet for generated addresses (127.N.0.x).
    #[arg(long, default_value_t = 60)]
    ip_octet: u8,
}

impl ScenarioFlags {
    fn source(&self) -> Result<ScenarioSource, CliError> {
        match (&self.scenario, &self.preset) {
            (Some(_), Some(_)) => Err(CliError::Usage(
                "--scenario and --preset are mutually exclusive".to_string(),
            )),
            (Some(path), None) => Ok(ScenarioSource::File(path.clone())),
            (None, Some(name)) => {
                let preset = PolicyPreset::parse(name).ok_or_else(|| {
                    CliError::Usage(format!("unknown preset {name:?}; see `simulate --help`"))
                })?;
                Ok(ScenarioSource::Preset {
                    preset,
                    count: self.count,
                    zone: self.zone.clone(),
                    ip_octet: self.ip_octet,
                })
            }
            (None, None) => {
                Err(CliError::Usage("pass --scenario FILE or --preset NAME".to_string()))
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw CNAME and TLS observation streams.
    Ingest {
        /// CNAME observations, JSONL with alias/cname/ip fields.
        #[arg(long)]
        cname: PathBuf,
        /// TLS connection observations, JSONL with sni/dst_ip fields.
        #[arg(long)]
        tls: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Group observations into candidate destination sets.
    BuildSets {
        #[arg(long)]
        cname: PathBuf,
        #[arg(long)]
        tls: PathBuf,
        /// CSV prefix table (prefix,asn,name); required for
        /// autonomous_system grouping.
        #[arg(long)]
        asn: Option<PathBuf>,
        /// autonomous_system, cname_domain, or cname_fqdn.
        #[arg(long)]
        grouping: Option<String>,
        #[arg(long, default_value = "sets.jsonl")]
        out: PathBuf,
    },
    /// Run the five-scan matrix over sampled pairs from candidate sets.
    Scan {
        #[arg(long)]
        sets: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Seed for deterministic pair sampling.
        #[arg(long)]
        seed: Option<u64>,
        /// Fronts sampled per destination tuple.
        #[arg(long)]
        pairs_per_tuple: Option<usize>,
        #[command(flatten)]
        scan: ScanFlags,
    },
    /// Evaluate scan outcomes into per-pair verdicts.
    Classify {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, default_value = "verdicts.jsonl")]
        out: PathBuf,
    },
    /// Aggregate verdicts into a per-group support report.
    Report {
        #[arg(long)]
        verdicts: PathBuf,
        /// markdown, csv, or json.
        #[arg(long)]
        format: Option<String>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Popularity list (one domain per line) to estimate the share
        /// of frontable domains; needs --cname for the mapping.
        #[arg(long)]
        popular: Option<PathBuf>,
        /// CNAME observations mapping popular domains to canonicals.
        #[arg(long)]
        cname: Option<PathBuf>,
        /// Write the popularity estimate JSON here.
        #[arg(long)]
        popularity_out: Option<PathBuf>,
    },
    /// Start a simulated CDN deployment on loopback.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioFlags,
        /// Directory for the test CA certificate.
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Write the resolved scenario file and exit without starting.
        #[arg(long)]
        emit_scenario: Option<PathBuf>,
        /// Keep the deployment up this long before shutting down.
        #[arg(long, default_value_t = 0)]
        hold_seconds: u64,
    },
    /// Run the request-hijack demonstration against the simulator.
    Demo {
        /// Scenario file wiring one domain to upstream = "attacker".
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Edge policy for the generated demo scenario.
        #[arg(long, default_value = "fronting_permissive")]
        preset: String,
        /// Write the transcript JSON here as well as stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        scan: ScanFlags,
    },
    /// Everything in one pass: candidates, scan, classify, report.
    Pipeline {
        #[command(flatten)]
        scenario: ScenarioFlags,
        /// CNAME observations (observation-driven mode).
        #[arg(long)]
        cname: Option<PathBuf>,
        /// TLS observations (observation-driven mode).
        #[arg(long)]
        tls: Option<PathBuf>,
        #[arg(long)]
        asn: Option<PathBuf>,
        #[arg(long)]
        grouping: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pairs_per_tuple: Option<usize>,
        #[command(flatten)]
        scan: ScanFlags,
    },
}

fn resolve_settings(config: Option<&PathBuf>, flags: Settings) -> Result<Settings, CliError> {
    let base = match config {
        Some(path) => Settings::from_config_file(path)?,
        None => Settings::default(),
    };
    Ok(base.overlay(flags))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { cname, tls, out_dir } => {
            let summary = cmd_ingest(&cname, &tls, &out_dir)?;
            println!(
                "ingested {} cname records ({} malformed, {} ipv6 skipped) and {} tls records ({} malformed, {} ipv6 skipped) into {}",
                summary.cname.parsed,
                summary.cname.malformed,
                summary.cname.skipped_ipv6,
                summary.tls.parsed,
                summary.tls.malformed,
                summary.tls.skipped_ipv6,
                out_dir.display()
            );
        }
        Command::BuildSets { cname, tls, asn, grouping, out } => {
            let base = resolve_settings(cli.config.as_ref(), Settings::default())?;
            let kind = match grouping {
                Some(name) => parse_grouping(&name)?,
                None => base.grouping(),
            };
            let summary = cmd_build_sets(&cname, &tls, asn.as_deref(), kind, &out)?;
            println!(
                "built {} candidate sets ({} tuples) into {}",
                summary.sets,
                summary.tuples,
                summary.out.display()
            );
        }
        Command::Scan { sets, out_dir, seed, pairs_per_tuple, scan } => {
            let mut flags = scan.into_settings();
            flags.seed = seed;
            flags.pairs_per_tuple = pairs_per_tuple;
            let settings = resolve_settings(cli.config.as_ref(), flags)?;
            let summary = cmd_scan(&sets, &out_dir, &settings)?;
            println!(
                "scanned {} pairs ({} scans, {} retried, {} replaced) from {}/{} tuples; wrote {} and {}",
                summary.pairs,
                summary.scans,
                summary.retries.attempted,
                summary.retries.replaced,
                summary.tuples_kept,
                summary.tuples_total,
                summary.pairs_out.display(),
                summary.outcomes_out.display()
            );
        }
        Command::Classify { pairs, outcomes, out } => {
            let summary = cmd_classify(&pairs, &outcomes, &out)?;
            println!(
                "classified {} pairs ({} applicable, {} pruned) into {}",
                summary.pairs,
                summary.applicable,
                summary.pruned,
                summary.out.display()
            );
        }
        Command::Report { verdicts, format, out, popular, cname, popularity_out } => {
            let settings = resolve_settings(cli.config.as_ref(), Settings::default())?;
            let format = match format {
                Some(name) => parse_format(&name)?,
                None => settings.format(),
            };
            let popular_pair = match (&popular, &cname) {
                (Some(p), Some(c)) => Some((p.as_path(), c.as_path())),
                (Some(_), None) => {
                    return Err(CliError::Usage(
                        "--popular needs --cname to map domains to canonicals".to_string(),
                    ))
                }
                _ => None,
            };
            let output = cmd_report(&verdicts, format, popular_pair)?;
            match out {
                Some(path) => std::fs::write(&path, &output.rendered)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
                None => print!("{}", output.rendered),
            }
            if let Some(estimate) = &output.popularity {
                let text = serde_json::to_string_pretty(estimate)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                match popularity_out {
                    Some(path) => std::fs::write(&path, format!("{text}\n"))
                        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
                    None => println!("{text}"),
                }
            }
        }
        Command::Simulate { scenario, state_dir, emit_scenario, hold_seconds } => {
            let source = scenario.source()?;
            let summary = cmd_simulate(
                &source,
                state_dir.as_deref(),
                emit_scenario.as_deref(),
                Duration::from_secs(hold_seconds),
            )?;
            match summary {
                Some(summary) => {
                    let text = serde_json::to_string_pretty(&summary)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    println!("{text}");
                }
                None => println!("scenario written, nothing started"),
            }
        }
        Command::Demo { scenario, preset, out, scan } => {
            let source = match scenario {
                Some(path) => DemoSource::File(path),
                None => {
                    let preset = PolicyPreset::parse(&preset).ok_or_else(|| {
                        CliError::Usage(format!("unknown preset {preset:?}"))
                    })?;
                    DemoSource::Preset(preset)
                }
            };
            let settings = resolve_settings(cli.config.as_ref(), scan.into_settings())?;
            let transcript = cmd_demo(&source, &settings)?;
            let text = serde_json::to_string_pretty(&transcript)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            if let Some(path) = out {
                std::fs::write(&path, format!("{text}\n"))
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            }
            println!("{text}");
        }
        Command::Pipeline {
            scenario,
            cname,
            tls,
            asn,
            grouping,
            out_dir,
            format,
            seed,
            pairs_per_tuple,
            scan,
        } => {
            let mut flags = scan.into_settings();
            flags.seed = seed;
            flags.pairs_per_tuple = pairs_per_tuple;
            flags.out_dir = out_dir;
            flags.grouping = grouping.as_deref().map(parse_grouping).transpose()?;
            flags.format = format.as_deref().map(parse_format).transpose()?;
            let settings = resolve_settings(cli.config.as_ref(), flags)?;

            let scenario_requested = scenario.scenario.is_some() || scenario.preset.is_some();
            let source = match (&cname, &tls) {
                (Some(c), Some(t)) if !scenario_requested => PipelineSource::Observations {
                    cname: c.clone(),
                    tls: t.clone(),
                    asn,
                },
                (None, None) => PipelineSource::Scenario(scenario.source()?),
                _ => {
                    return Err(CliError::Usage(
                        "pass either --scenario/--preset or both --cname and --tls".to_string(),
                    ))
                }
            };
            let summary = cmd_pipeline(&source, &settings)?;
            println!(
                "pipeline: {} sets, {} pairs, {} scans ({} retried, {} replaced), {} applicable verdicts, {} suppressed groups; report at {}",
                summary.sets,
                summary.pairs,
                summary.scans,
                summary.retries.attempted,
                summary.retries.replaced,
                summary.applicable,
                summary.suppressed_groups,
                summary.report_path.display()
            );
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
