//! Layered settings: built-in defaults, then a TOML config file, then
//! command-line flags, each layer overriding the one below.

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use frontscope_core::candidate_sets::GroupingKind;
use frontscope_core::report::RenderFormat;
use frontscope_core::scan_engine::{parse_allowlist, ScanConfig, TargetPolicy};

use crate::commands::CliError;

/// Every tunable, each optional so unset fields fall through to the
/// layer below.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub seed: Option<u64>,
    pub pairs_per_tuple: Option<usize>,
    pub grouping: Option<GroupingKind>,
    pub format: Option<RenderFormat>,
    pub parallelism: Option<usize>,
    pub timeout_connect_ms: Option<u64>,
    pub timeout_total_ms: Option<u64>,
    pub user_agent: Option<String>,
    pub retry_delay_ms: Option<u64>,
    pub max_body: Option<u64>,
    /// `ip:port` or `:port`; redirects scans at a simulator.
    pub target: Option<String>,
    pub allowlist: Option<PathBuf>,
    pub i_own_this_infrastructure: bool,
    pub scenario: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

pub fn parse_grouping(name: &str) -> Result<GroupingKind, CliError> {
    match name {
        "autonomous_system" | "as" => Ok(GroupingKind::AutonomousSystem),
        "cname_domain" => Ok(GroupingKind::CnameDomain),
        "cname_fqdn" => Ok(GroupingKind::CnameFqdn),
        other => Err(usage(format!(
            "unknown grouping {other:?}; expected autonomous_system, cname_domain, or cname_fqdn"
        ))),
    }
}

pub fn parse_format(name: &str) -> Result<RenderFormat, CliError> {
    RenderFormat::parse(name)
        .ok_or_else(|| usage(format!("unknown format {name:?}; expected markdown, csv, or json")))
}

/// Destination override for simulator testing: an optional replacement
/// IP and a mandatory port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetOverride {
    pub ip: Option<Ipv4Addr>,
    pub port: u16,
}

pub fn parse_target(value: &str) -> Result<TargetOverride, CliError> {
    let (host, port) = value
        .rsplit_once(':')
        .ok_or_else(|| usage(format!("target {value:?} is not ip:port or :port")))?;
    let port: u16 =
        port.parse().map_err(|_| usage(format!("target port {port:?} is not a number")))?;
    let ip = if host.is_empty() {
        None
    } else {
        let parsed: Ipv4Addr =
            host.parse().map_err(|_| usage(format!("target host {host:?} is not an IPv4 address")))?;
        Some(parsed)
    };
    Ok(TargetOverride { ip, port })
}

impl Settings {
    /// Reads the flat key/value TOML config file. Unknown keys are
    /// errors; silently ignoring a typoed knob would be worse.
    pub fn from_config_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let mut settings = Settings::default();
        for (key, value) in table {
            settings.apply_key(&key, &value)?;
        }
        Ok(settings)
    }

    fn apply_key(&mut self, key: &str, value: &toml::Value) -> Result<(), CliError> {
        let bad_type = |want: &str| usage(format!("config key {key:?} expects {want}"));
        let as_u64 = |v: &toml::Value, want: &str| {
            v.as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .ok_or_else(|| bad_type(want))
        };
        let as_str = |v: &toml::Value, want: &str| {
            v.as_str().map(str::to_string).ok_or_else(|| bad_type(want))
        };
        match key {
            "seed" => self.seed = Some(as_u64(value, "an unsigned integer")?),
            "pairs_per_tuple" => {
                self.pairs_per_tuple = Some(as_u64(value, "an unsigned integer")? as usize)
            }
            "grouping" => {
                self.grouping = Some(parse_grouping(&as_str(value, "a grouping name")?)?)
            }
            "format" => self.format = Some(parse_format(&as_str(value, "a format name")?)?),
            "parallelism" => {
                self.parallelism = Some(as_u64(value, "an unsigned integer")? as usize)
            }
            "timeout_connect_ms" => {
                self.timeout_connect_ms = Some(as_u64(value, "milliseconds")?)
            }
            "timeout_total_ms" => self.timeout_total_ms = Some(as_u64(value, "milliseconds")?),
            "user_agent" => self.user_agent = Some(as_str(value, "a string")?),
            "retry_delay_ms" => self.retry_delay_ms = Some(as_u64(value, "milliseconds")?),
            "max_body" => self.max_body = Some(as_u64(value, "bytes")?),
            "target" => {
                let raw = as_str(value, "ip:port")?;
                parse_target(&raw)?;
                self.target = Some(raw);
            }
            "allowlist" => self.allowlist = Some(PathBuf::from(as_str(value, "a path")?)),
            "i_own_this_infrastructure" => {
                self.i_own_this_infrastructure =
                    value.as_bool().ok_or_else(|| bad_type("a boolean"))?
            }
            "scenario" => self.scenario = Some(PathBuf::from(as_str(value, "a path")?)),
            "out_dir" => self.out_dir = Some(PathBuf::from(as_str(value, "a path")?)),
            other => return Err(usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Returns `self` with every field set in `over` overriding it.
    pub fn overlay(mut self, over: Settings) -> Settings {
        macro_rules! take {
            ($field:ident) => {
                if over.$field.is_some() {
                    self.$field = over.$field;
                }
            };
        }
        take!(seed);
        take!(pairs_per_tuple);
        take!(grouping);
        take!(format);
        take!(parallelism);
        take!(timeout_connect_ms);
        take!(timeout_total_ms);
        take!(user_agent);
        take!(retry_delay_ms);
        take!(max_body);
        take!(target);
        take!(allowlist);
        take!(scenario);
        take!(out_dir);
        if over.i_own_this_infrastructure {
            self.i_own_this_infrastructure = true;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn pairs_per_tuple(&self) -> Result<usize, CliError> {
        let k = self.pairs_per_tuple.unwrap_or(5);
        if k == 0 {
            return Err(usage("pairs_per_tuple must be at least 1".to_string()));
        }
        Ok(k)
    }

    pub fn grouping(&self) -> GroupingKind {
        self.grouping.unwrap_or(GroupingKind::CnameDomain)
    }

    pub fn format(&self) -> RenderFormat {
        self.format.unwrap_or(RenderFormat::Markdown)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn target_override(&self) -> Result<Option<TargetOverride>, CliError> {
        self.target.as_deref().map(parse_target).transpose()
    }

    /// Builds the scan configuration, including the target policy:
    /// loopback-only unless an allowlist widens it or the operator
    /// explicitly claims the infrastructure.
    pub fn scan_config(&self) -> Result<ScanConfig, CliError> {
        let mut cfg = ScanConfig::default();
        if let Some(p) = self.parallelism {
            if p == 0 {
                return Err(usage("parallelism must be at least 1".to_string()));
            }
            cfg.parallelism = p;
        }
        if let Some(ms) = self.timeout_connect_ms {
            cfg.connect_timeout = Duration::from_millis(ms);
        }
        if let Some(ms) = self.timeout_total_ms {
            cfg.total_timeout = Duration::from_millis(ms);
        }
        if let Some(ua) = &self.user_agent {
            cfg.user_agent = ua.clone();
        }
        if let Some(ms) = self.retry_delay_ms {
            cfg.retry_delay = Duration::from_millis(ms);
        }
        if let Some(max) = self.max_body {
            cfg.max_body = max;
        }
        if let Some(t) = self.target_override()? {
            cfg.port = t.port;
        }
        cfg.target_policy = if self.i_own_this_infrastructure {
            TargetPolicy::Unrestricted
        } else if let Some(path) = &self.allowlist {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("allowlist {}: {e}", path.display())))?;
            let prefixes = parse_allowlist(&text)
                .map_err(|e| usage(format!("allowlist {}: {e}", path.display())))?;
            TargetPolicy::Allowlist(prefixes)
        } else {
            TargetPolicy::LoopbackOnly
        };
        Ok(cfg)
    }
}
