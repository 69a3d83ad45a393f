//! Turns the five scan outcomes of a pair into per-technique verdicts.
//!
//! A technique scan succeeded when it demonstrably fetched the
//! *target's* content while presenting the *front's* identity (or none
//! at all). "Demonstrably" means the response looks like baseline-0
//! (the honest target fetch) and unlike baseline-1 (the honest front
//! fetch); a response resembling both proves nothing.
//!
//! Before any technique is judged, pairs whose baselines cannot anchor
//! the comparison are pruned: a baseline certificate covering both
//! domains (sharing one cert is ordinary virtual hosting, not
//! misinformation), a baseline transport error, or a baseline status
//! other than 200.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate_sets::ScanPair;
use crate::scan_engine::{CertSummary, IndexedOutcome, ScanOutcome, ScanRole};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("no outcome with role {0:?} for this pair")]
    MissingRole(ScanRole),
    #[error("more than one outcome with role {0:?} for this pair")]
    DuplicateRole(ScanRole),
    #[error("outcome references pair index {0} but only {1} pairs were given")]
    InvalidPairIndex(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneReason {
    /// A baseline leaf certificate covers both domains.
    CertCoversBoth,
    /// A baseline scan failed at the transport level.
    BaselineError,
    /// A baseline scan answered, but not with 200.
    BaselineNon200,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueStatus {
    Success,
    Failure,
    NotEvaluated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultReason {
    /// Body length equals baseline-0's and differs from baseline-1's.
    ExactLength,
    /// Body length within 5% of baseline-0's and not within 20% of
    /// baseline-1's.
    LengthTolerance,
    /// Header-name sequence equals baseline-0's and differs from
    /// baseline-1's.
    HeaderOrder,
    TransportError,
    Non200,
    /// Answered 200 but no success rule distinguished it.
    LengthMismatch,
    NotEvaluated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueResult {
    pub status: TechniqueStatus,
    pub reason: ResultReason,
}

impl TechniqueResult {
    const NOT_EVALUATED: TechniqueResult = TechniqueResult {
        status: TechniqueStatus::NotEvaluated,
        reason: ResultReason::NotEvaluated,
    };

    pub fn succeeded(&self) -> bool {
        self.status == TechniqueStatus::Success
    }
}

/// Verdict for one scanned pair. `applicable` is false exactly when
/// `prune_reason` is set, and then no technique was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub pair: ScanPair,
    pub applicable: bool,
    pub prune_reason: Option<PruneReason>,
    pub fronting: TechniqueResult,
    pub faking: TechniqueResult,
    pub domainless: TechniqueResult,
}

/// Whether a certificate covers a DNS name, by exact match or a
/// single-label `*.` wildcard, against the subject CN and SAN entries.
pub fn cert_covers(summary: &CertSummary, domain: &str) -> bool {
    let domain = domain.to_ascii_lowercase();
    summary
        .san_dns_names
        .iter()
        .chain(summary.subject_common_name.as_ref())
        .any(|name| name_matches(&name.to_ascii_lowercase(), &domain))
}

fn name_matches(pattern: &str, domain: &str) -> bool {
    if let Some(suffix) = pattern.strip_prefix("*.") {
        // The wildcard stands for exactly one label.
        match domain.split_once('.') {
            Some((label, rest)) => !label.is_empty() && rest == suffix,
            None => false,
        }
    } else {
        pattern == domain
    }
}

// Tolerance checks in exact integer arithmetic; floating point would
// wobble at the boundaries the rules pin down. Both bounds are
// inclusive: "within 5%" admits a length exactly 5% off, and "within
// 20%" (which blocks) captures a length exactly 20% off.
fn within_5_percent(length: u64, baseline: u64) -> bool {
    (length.abs_diff(baseline) as u128) * 20 <= baseline as u128
}

fn within_20_percent(length: u64, baseline: u64) -> bool {
    (length.abs_diff(baseline) as u128) * 5 <= baseline as u128
}

fn evaluate_technique(
    outcome: &ScanOutcome,
    baseline0: &ScanOutcome,
    baseline1: &ScanOutcome,
) -> TechniqueResult {
    if outcome.transport_error.is_some() {
        return TechniqueResult {
            status: TechniqueStatus::Failure,
            reason: ResultReason::TransportError,
        };
    }
    if outcome.status_code != Some(200) {
        return TechniqueResult { status: TechniqueStatus::Failure, reason: ResultReason::Non200 };
    }
    let length = outcome.content_length;
    if length == baseline0.content_length && length != baseline1.content_length {
        return TechniqueResult {
            status: TechniqueStatus::Success,
            reason: ResultReason::ExactLength,
        };
    }
    if within_5_percent(length, baseline0.content_length)
        && !within_20_percent(length, baseline1.content_length)
    {
        return TechniqueResult {
            status: TechniqueStatus::Success,
            reason: ResultReason::LengthTolerance,
        };
    }
    if outcome.header_names == baseline0.header_names
        && outcome.header_names != baseline1.header_names
    {
        return TechniqueResult {
            status: TechniqueStatus::Success,
            reason: ResultReason::HeaderOrder,
        };
    }
    TechniqueResult { status: TechniqueStatus::Failure, reason: ResultReason::LengthMismatch }
}

fn find_role<'a>(
    outcomes: &'a [ScanOutcome],
    role: ScanRole,
) -> Result<&'a ScanOutcome, ClassifyError> {
    let mut found = None;
    for outcome in outcomes.iter().filter(|o| o.spec.role == role) {
        if found.is_some() {
            return Err(ClassifyError::DuplicateRole(role));
        }
        found = Some(outcome);
    }
    found.ok_or(ClassifyError::MissingRole(role))
}

/// Evaluates one pair given its five outcomes (any order).
pub fn evaluate_pair(
    pair: &ScanPair,
    outcomes: &[ScanOutcome],
) -> Result<PairVerdict, ClassifyError> {
    let baseline0 = find_role(outcomes, ScanRole::Baseline0)?;
    let baseline1 = find_role(outcomes, ScanRole::Baseline1)?;
    let fronting = find_role(outcomes, ScanRole::Fronting)?;
    let faking = find_role(outcomes, ScanRole::Faking)?;
    let domainless = find_role(outcomes, ScanRole::Domainless)?;

    let covers_both = |outcome: &ScanOutcome| {
        outcome.leaf_cert.as_ref().is_some_and(|cert| {
            cert_covers(cert, &pair.target.domain) && cert_covers(cert, &pair.front.domain)
        })
    };
    let prune_reason = if covers_both(baseline0) || covers_both(baseline1) {
        Some(PruneReason::CertCoversBoth)
    } else if baseline0.transport_error.is_some() || baseline1.transport_error.is_some() {
        Some(PruneReason::BaselineError)
    } else if baseline0.status_code != Some(200) || baseline1.status_code != Some(200) {
        Some(PruneReason::BaselineNon200)
    } else {
        None
    };
    if let Some(reason) = prune_reason {
        return Ok(PairVerdict {
            pair: pair.clone(),
            applicable: false,
            prune_reason: Some(reason),
            fronting: TechniqueResult::NOT_EVALUATED,
            faking: TechniqueResult::NOT_EVALUATED,
            domainless: TechniqueResult::NOT_EVALUATED,
        });
    }
    Ok(PairVerdict {
        pair: pair.clone(),
        applicable: true,
        prune_reason: None,
        fronting: evaluate_technique(fronting, baseline0, baseline1),
        faking: evaluate_technique(faking, baseline0, baseline1),
        domainless: evaluate_technique(domainless, baseline0, baseline1),
    })
}

/// Regroups flat outcome records by pair index and evaluates every
/// pair, in pair order.
pub fn classify_all(
    pairs: &[ScanPair],
    outcomes: &[IndexedOutcome],
) -> Result<Vec<PairVerdict>, ClassifyError> {
    let mut by_pair: Vec<Vec<ScanOutcome>> = vec![Vec::new(); pairs.len()];
    for indexed in outcomes {
        let slot = by_pair
            .get_mut(indexed.pair_index)
            .ok_or(ClassifyError::InvalidPairIndex(indexed.pair_index, pairs.len()))?;
        slot.push(indexed.outcome.clone());
    }
    pairs
        .iter()
        .zip(&by_pair)
        .map(|(pair, outcomes)| evaluate_pair(pair, outcomes))
        .collect()
}

pub fn write_verdicts_jsonl<W: Write>(mut writer: W, verdicts: &[PairVerdict]) -> io::Result<()> {
    for verdict in verdicts {
        serde_json::to_writer(&mut writer, verdict)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_verdicts_jsonl<R: BufRead>(reader: R) -> io::Result<Vec<PairVerdict>> {
    let mut verdicts = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        verdicts.push(
            serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(verdicts)
}
