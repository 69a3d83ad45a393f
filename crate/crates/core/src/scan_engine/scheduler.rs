//! Bounded-parallelism scan execution with a strictly sequential
//! retry pass. Results always come back in input order, so a run's
//! output is independent of thread scheduling.

use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

use super::client::{execute_scan, ScanConfig};
use super::{ScanError, ScanOutcome, ScanRole, ScanSpec};
use crate::candidate_sets::{DestinationTuple, ScanPair};

/// A spec tied back to the pair it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedScan {
    pub pair_index: usize,
    pub spec: ScanSpec,
}

/// Outcome JSONL line: spec fields inlined plus the pair index that
/// lets the classifier regroup the five roles of each pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedOutcome {
    pub pair_index: usize,
    #[serde(flatten)]
    pub outcome: ScanOutcome,
}

/// Expands pairs into planned scans, five per pair, in pair order.
pub fn plan_all(pairs: &[ScanPair]) -> Vec<PlannedScan> {
    pairs
        .iter()
        .enumerate()
        .flat_map(|(pair_index, pair)| {
            super::plan_scans(pair).into_iter().map(move |spec| PlannedScan { pair_index, spec })
        })
        .collect()
}

fn run_parallel(specs: &[ScanSpec], cfg: &ScanConfig) -> Result<Vec<ScanOutcome>, ScanError> {
    // Refuse the whole run before touching the network if any spec is
    // out of policy.
    for spec in specs {
        if !cfg.target_policy.permits(spec.dst_ip) {
            return Err(ScanError::TargetNotAllowed(spec.dst_ip));
        }
    }
    let workers = cfg.parallelism.clamp(1, specs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<ScanOutcome>>> = specs.iter().map(|_| Mutex::new(None)).collect();
    let ip_locks: Mutex<HashMap<Ipv4Addr, Arc<Mutex<()>>>> = Mutex::new(HashMap::new());

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= specs.len() {
                    break;
                }
                let spec = &specs[index];
                let ip_lock = cfg.serialize_per_ip.then(|| {
                    let mut map = ip_locks.lock().unwrap();
                    map.entry(spec.dst_ip).or_default().clone()
                });
                let _serialized = ip_lock.as_ref().map(|l| l.lock().unwrap());
                let outcome =
                    execute_scan(spec, cfg).expect("target policy checked before dispatch");
                *slots[index].lock().unwrap() = Some(outcome);
            });
        }
    });

    Ok(slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect())
}

/// Executes scans with bounded parallelism; outcomes are returned in
/// the order of `scans`.
pub fn execute_all(
    scans: &[PlannedScan],
    cfg: &ScanConfig,
) -> Result<Vec<IndexedOutcome>, ScanError> {
    let specs: Vec<ScanSpec> = scans.iter().map(|s| s.spec.clone()).collect();
    let outcomes = run_parallel(&specs, cfg)?;
    Ok(scans
        .iter()
        .zip(outcomes)
        .map(|(scan, outcome)| IndexedOutcome { pair_index: scan.pair_index, outcome })
        .collect())
}

/// Result of the reachability prefilter: tuples whose honest baseline
/// returned 200, plus the outcomes of the ones that did not.
#[derive(Debug, Clone)]
pub struct PrefilterOutcome {
    pub kept: Vec<DestinationTuple>,
    pub dropped: Vec<ScanOutcome>,
}

/// Scans every tuple honestly (its own domain as SNI and Host, its own
/// IP) and keeps the ones answering 200. Pairing unreachable or
/// non-serving destinations would only manufacture baseline failures.
pub fn prefilter_tuples(
    tuples: &[DestinationTuple],
    cfg: &ScanConfig,
) -> Result<PrefilterOutcome, ScanError> {
    let specs: Vec<ScanSpec> = tuples
        .iter()
        .map(|tuple| ScanSpec {
            role: ScanRole::Baseline0,
            dst_ip: tuple.ip,
            sni: Some(tuple.domain.clone()),
            host: tuple.domain.clone(),
        })
        .collect();
    let outcomes = run_parallel(&specs, cfg)?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (tuple, outcome) in tuples.iter().zip(outcomes) {
        if outcome.status_code == Some(200) {
            kept.push(tuple.clone());
        } else {
            dropped.push(outcome);
        }
    }
    Ok(PrefilterOutcome { kept, dropped })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RetryStats {
    pub attempted: usize,
    pub replaced: usize,
}

/// Re-runs failures one at a time: every transport error, and every
/// baseline that answered something other than 200. A retry that
/// produces a usable measurement (any response for transport errors, a
/// 200 for sour baselines) replaces the original; otherwise the
/// original stands with the retry attached.
pub fn retry_failed<'a, I>(outcomes: I, cfg: &ScanConfig) -> Result<RetryStats, ScanError>
where
    I: IntoIterator<Item = &'a mut ScanOutcome>,
{
    let mut stats = RetryStats::default();
    for outcome in outcomes {
        let transport_failed = outcome.transport_error.is_some();
        let baseline_soured =
            outcome.spec.role.is_baseline() && outcome.status_code != Some(200);
        if !transport_failed && !baseline_soured {
            continue;
        }
        stats.attempted += 1;
        thread::sleep(cfg.retry_delay);
        let second = execute_scan(&outcome.spec, cfg)?;
        let superseded = if transport_failed {
            second.status_code.is_some()
        } else {
            second.status_code == Some(200)
        };
        if superseded {
            *outcome = second;
            stats.replaced += 1;
        } else {
            outcome.retry = Some(Box::new(second));
        }
    }
    Ok(stats)
}
