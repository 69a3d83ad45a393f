//! Grouping of destination tuples into candidate sets and seeded
//! sampling of (target, front) scan pairs within each set.
//!
//! A fronting attempt only makes sense between destinations that sit
//! behind the same operator, so pairs are drawn within a set, never
//! across sets. Three groupings are supported: by autonomous system of
//! the destination IP, by registrable domain of the CNAME target, and
//! by exact CNAME target FQDN.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dns_ingest::{AsnTable, DnsCnameObservation, TlsObservation};

/// Hard cap on tuples kept per set; the lowest-prevalence tuples are
/// dropped first when a set overflows.
pub const MAX_TUPLES_PER_SET: usize = 100_000;

/// A scannable destination: the domain a client would ask for and the
/// IP it would connect to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DestinationTuple {
    pub domain: String,
    pub ip: Ipv4Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingKind {
    AutonomousSystem,
    CnameDomain,
    CnameFqdn,
}

impl GroupingKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroupingKind::AutonomousSystem => "autonomous_system",
            GroupingKind::CnameDomain => "cname_domain",
            GroupingKind::CnameFqdn => "cname_fqdn",
        }
    }
}

/// Identity of a candidate set: the grouping kind plus the shared value
/// (AS name, registrable domain, or FQDN).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub kind: GroupingKind,
    pub value: String,
}

/// A tuple plus how often it was observed; prevalence decides who
/// survives truncation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedTuple {
    #[serde(flatten)]
    pub tuple: DestinationTuple,
    pub prevalence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub key: GroupKey,
    pub tuples: Vec<RankedTuple>,
}

/// A sampled scan pair. `target` is the destination under test,
/// `front` the unrelated destination from the same set whose identity
/// gets presented in its place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanPair {
    pub target: DestinationTuple,
    pub front: DestinationTuple,
    pub group: GroupKey,
}

/// TLS observation annotated with the AS of its destination IP;
/// `as_name` is `None` for untracked address space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsWithAs {
    pub observation: TlsObservation,
    pub as_name: Option<String>,
}

/// Joins TLS observations against an AS prefix table.
pub fn annotate_tls(observations: Vec<TlsObservation>, table: &AsnTable) -> Vec<TlsWithAs> {
    observations
        .into_iter()
        .map(|observation| {
            let as_name = table.lookup(observation.dst_ip).map(|e| e.as_name.clone());
            TlsWithAs { observation, as_name }
        })
        .collect()
}

/// Combined ingest output; each grouping kind consumes the slice it
/// applies to and ignores the other.
#[derive(Debug, Clone, Default)]
pub struct Observations {
    pub cname: Vec<DnsCnameObservation>,
    pub tls: Vec<TlsWithAs>,
}

/// Builds candidate sets for one grouping kind. Output sets are sorted
/// by key and each set's tuples by prevalence (descending), with ties
/// broken by domain then IP octets; sets beyond [`MAX_TUPLES_PER_SET`]
/// lose their least prevalent tuples.
pub fn build_groups(observations: &Observations, kind: GroupingKind) -> Vec<CandidateSet> {
    let mut counts: BTreeMap<String, BTreeMap<DestinationTuple, u64>> = BTreeMap::new();
    let mut record = |value: String, tuple: DestinationTuple| {
        *counts.entry(value).or_default().entry(tuple).or_insert(0) += 1;
    };
    match kind {
        GroupingKind::AutonomousSystem => {
            for tls in &observations.tls {
                // No SNI means no domain to scan for; untracked IPs have no set.
                let (Some(domain), Some(as_name)) =
                    (&tls.observation.server_name, &tls.as_name)
                else {
                    continue;
                };
                record(
                    as_name.clone(),
                    DestinationTuple { domain: domain.clone(), ip: tls.observation.dst_ip },
                );
            }
        }
        GroupingKind::CnameDomain | GroupingKind::CnameFqdn => {
            for obs in &observations.cname {
                let value = match kind {
                    GroupingKind::CnameDomain => obs.canonical_domain.clone(),
                    _ => obs.canonical_fqdn.clone(),
                };
                record(
                    value,
                    DestinationTuple { domain: obs.alias_fqdn.clone(), ip: obs.resolved_ip },
                );
            }
        }
    }
    counts
        .into_iter()
        .map(|(value, tuples)| {
            let mut tuples: Vec<RankedTuple> = tuples
                .into_iter()
                .map(|(tuple, prevalence)| RankedTuple { tuple, prevalence })
                .collect();
            tuples.sort_by(|a, b| {
                b.prevalence
                    .cmp(&a.prevalence)
                    .then_with(|| a.tuple.domain.cmp(&b.tuple.domain))
                    .then_with(|| a.tuple.ip.octets().cmp(&b.tuple.ip.octets()))
            });
            tuples.truncate(MAX_TUPLES_PER_SET);
            CandidateSet { key: GroupKey { kind, value }, tuples }
        })
        .collect()
}

/// Canonical-name popularity: how many distinct aliases point at each
/// canonical name. Sorted by alias count descending, name ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanonicalLevel {
    Domain,
    Fqdn,
}

pub fn rank_canonicals(
    observations: &[DnsCnameObservation],
    level: CanonicalLevel,
) -> Vec<(String, usize)> {
    let mut aliases: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for obs in observations {
        let canonical = match level {
            CanonicalLevel::Domain => obs.canonical_domain.as_str(),
            CanonicalLevel::Fqdn => obs.canonical_fqdn.as_str(),
        };
        aliases.entry(canonical).or_default().insert(obs.alias_fqdn.as_str());
    }
    let mut ranked: Vec<(String, usize)> =
        aliases.into_iter().map(|(name, set)| (name.to_string(), set.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

// FNV-1a over the group key, mixed with the run seed, so every set
// draws from its own reproducible stream regardless of set iteration
// order.
fn set_seed(global_seed: u64, key: &GroupKey) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in key.kind.as_str().bytes().chain([0xff]).chain(key.value.bytes()) {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    h ^ global_seed
}

// Uniform draw in [0, n) via rejection sampling.
fn rng_below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % n;
        }
    }
}

/// Samples up to `pairs_per_tuple` fronts for every tuple in the set.
/// A front never shares the target's domain; when fewer eligible fronts
/// exist than requested, all of them are used. The same `(set, seed)`
/// always yields the same pairs.
pub fn sample_pairs(set: &CandidateSet, pairs_per_tuple: usize, seed: u64) -> Vec<ScanPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(set_seed(seed, &set.key));
    let mut pairs = Vec::new();
    for target in &set.tuples {
        let mut candidates: Vec<&RankedTuple> = set
            .tuples
            .iter()
            .filter(|other| other.tuple.domain != target.tuple.domain)
            .collect();
        let k = pairs_per_tuple.min(candidates.len());
        for j in 0..k {
            let pick = j + rng_below(&mut rng, (candidates.len() - j) as u64) as usize;
            candidates.swap(j, pick);
            pairs.push(ScanPair {
                target: target.tuple.clone(),
                front: candidates[j].tuple.clone(),
                group: set.key.clone(),
            });
        }
    }
    pairs
}

/// Writes one candidate set per line.
pub fn write_sets_jsonl<W: Write>(mut writer: W, sets: &[CandidateSet]) -> io::Result<()> {
    for set in sets {
        serde_json::to_writer(&mut writer, set)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sets_jsonl<R: BufRead>(reader: R) -> io::Result<Vec<CandidateSet>> {
    let mut sets = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let set: CandidateSet = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        sets.push(set);
    }
    Ok(sets)
}
