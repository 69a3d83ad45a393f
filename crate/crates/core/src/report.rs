//! Aggregation of pair verdicts into per-group support percentages,
//! color banding, popularity-weighted estimates, and rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate_sets::GroupKey;
use crate::classifier::{PairVerdict, PruneReason, TechniqueResult};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("verdict for group {found:?} passed to aggregation of {expected:?}")]
    MixedGroups { expected: String, found: String },
    #[error("popularity list is empty")]
    EmptyPopularity,
}

/// Banding over a support percentage: green below 5%, red at 95% and
/// above, yellow between. The bands are about *harm*: green groups
/// barely admit the technique, red groups admit it almost always.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorBand {
    Green,
    Yellow,
    Red,
}

impl ColorBand {
    pub fn as_str(&self) -> &'static str {
        match self {
            ColorBand::Green => "green",
            ColorBand::Yellow => "yellow",
            ColorBand::Red => "red",
        }
    }
}

pub fn color_band(pct: f64) -> ColorBand {
    if pct < 5.0 {
        ColorBand::Green
    } else if pct >= 95.0 {
        ColorBand::Red
    } else {
        ColorBand::Yellow
    }
}

/// Support figures for one candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub key: GroupKey,
    /// Distinct target domains among applicable verdicts.
    pub observed_domains: usize,
    pub applicable_pairs: usize,
    pub fronting_successes: usize,
    pub faking_successes: usize,
    pub domainless_successes: usize,
    pub fronting_pct: f64,
    pub faking_pct: f64,
    pub domainless_pct: f64,
    pub fronting_band: ColorBand,
    pub faking_band: ColorBand,
    pub domainless_band: ColorBand,
}

/// A group with no applicable verdicts has no meaningful percentage;
/// it is reported as suppressed with its prune reasons counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuppressedGroup {
    pub key: GroupKey,
    pub total_pairs: usize,
    pub pruned: BTreeMap<PruneReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateOutcome {
    Report(GroupReport),
    Suppressed(SuppressedGroup),
}

/// Aggregates the verdicts of one group. All verdicts must carry
/// `key`; zero applicable verdicts yields the suppressed form.
pub fn aggregate(verdicts: &[PairVerdict], key: &GroupKey) -> Result<AggregateOutcome, ReportError> {
    for verdict in verdicts {
        if verdict.pair.group != *key {
            return Err(ReportError::MixedGroups {
                expected: key.value.clone(),
                found: verdict.pair.group.value.clone(),
            });
        }
    }
    let applicable: Vec<&PairVerdict> = verdicts.iter().filter(|v| v.applicable).collect();
    if applicable.is_empty() {
        let mut pruned: BTreeMap<PruneReason, usize> = BTreeMap::new();
        for verdict in verdicts {
            if let Some(reason) = verdict.prune_reason {
                *pruned.entry(reason).or_insert(0) += 1;
            }
        }
        return Ok(AggregateOutcome::Suppressed(SuppressedGroup {
            key: key.clone(),
            total_pairs: verdicts.len(),
            pruned,
        }));
    }
    let observed_domains = applicable
        .iter()
        .map(|v| v.pair.target.domain.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    let count = |pick: fn(&PairVerdict) -> TechniqueResult| {
        applicable.iter().filter(|v| pick(v).succeeded()).count()
    };
    let fronting_successes = count(|v| v.fronting);
    let faking_successes = count(|v| v.faking);
    let domainless_successes = count(|v| v.domainless);
    let pct = |successes: usize| 100.0 * successes as f64 / applicable.len() as f64;
    let (fronting_pct, faking_pct, domainless_pct) =
        (pct(fronting_successes), pct(faking_successes), pct(domainless_successes));
    Ok(AggregateOutcome::Report(GroupReport {
        key: key.clone(),
        observed_domains,
        applicable_pairs: applicable.len(),
        fronting_successes,
        faking_successes,
        domainless_successes,
        fronting_pct,
        faking_pct,
        domainless_pct,
        fronting_band: color_band(fronting_pct),
        faking_band: color_band(faking_pct),
        domainless_band: color_band(domainless_pct),
    }))
}

/// Partitions mixed verdicts by group key and aggregates each group,
/// in key order.
pub fn aggregate_by_group(verdicts: &[PairVerdict]) -> Vec<AggregateOutcome> {
    let mut by_group: BTreeMap<&GroupKey, Vec<PairVerdict>> = BTreeMap::new();
    for verdict in verdicts {
        by_group.entry(&verdict.pair.group).or_default().push(verdict.clone());
    }
    by_group
        .into_iter()
        .map(|(key, group)| aggregate(&group, key).expect("partitioned by key"))
        .collect()
}

pub fn split_outcomes(outcomes: Vec<AggregateOutcome>) -> (Vec<GroupReport>, Vec<SuppressedGroup>) {
    let mut reports = Vec::new();
    let mut suppressed = Vec::new();
    for outcome in outcomes {
        match outcome {
            AggregateOutcome::Report(r) => reports.push(r),
            AggregateOutcome::Suppressed(s) => suppressed.push(s),
        }
    }
    (reports, suppressed)
}

/// Share of a popularity list that could be victimized: domains whose
/// CNAME canonical sits in a group with nonzero fronting support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityEstimate {
    pub total_domains: usize,
    /// Domains with any CNAME mapping at all.
    pub cname_mapped: usize,
    /// Mapped to a canonical we have a measured group for.
    pub tracked: usize,
    /// Tracked and the group's fronting support is above zero.
    pub frontable: usize,
    pub frontable_of_tracked_pct: f64,
    pub frontable_of_total_pct: f64,
}

pub fn popularity_estimate(
    popular_domains: &[String],
    cname_map: &BTreeMap<String, String>,
    support_by_canonical: &BTreeMap<String, f64>,
) -> Result<PopularityEstimate, ReportError> {
    if popular_domains.is_empty() {
        return Err(ReportError::EmptyPopularity);
    }
    let mut cname_mapped = 0usize;
    let mut tracked = 0usize;
    let mut frontable = 0usize;
    for domain in popular_domains {
        let Some(canonical) = cname_map.get(domain) else { continue };
        cname_mapped += 1;
        let Some(pct) = support_by_canonical.get(canonical) else { continue };
        tracked += 1;
        if *pct > 0.0 {
            frontable += 1;
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    Ok(PopularityEstimate {
        total_domains: popular_domains.len(),
        cname_mapped,
        tracked,
        frontable,
        frontable_of_tracked_pct: ratio(frontable, tracked),
        frontable_of_total_pct: ratio(frontable, popular_domains.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Markdown,
    Csv,
    Json,
}

impl RenderFormat {
    pub fn parse(name: &str) -> Option<RenderFormat> {
        match name {
            "markdown" | "md" => Some(RenderFormat::Markdown),
            "csv" => Some(RenderFormat::Csv),
            "json" => Some(RenderFormat::Json),
            _ => None,
        }
    }

    pub fn file_extension(&self) -> &'static str {
        match self {
            RenderFormat::Markdown => "md",
            RenderFormat::Csv => "csv",
            RenderFormat::Json => "json",
        }
    }
}

fn sorted<T: Clone>(items: &[T], key: impl Fn(&T) -> &GroupKey) -> Vec<T> {
    let mut copy = items.to_vec();
    copy.sort_by(|a, b| key(a).cmp(key(b)));
    copy
}

fn prune_counts(pruned: &BTreeMap<PruneReason, usize>) -> String {
    let parts: Vec<String> = pruned
        .iter()
        .map(|(reason, count)| {
            let name = serde_json::to_value(reason).unwrap();
            format!("{}: {count}", name.as_str().unwrap())
        })
        .collect();
    parts.join(", ")
}

fn render_markdown(reports: &[GroupReport], suppressed: &[SuppressedGroup]) -> String {
    let mut out = String::new();
    out.push_str("| group | kind | domains | pairs | fronting | faking | domainless |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in reports {
        let cell = |pct: f64, band: ColorBand| format!("{:.2}% ({})", pct, band.as_str());
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.key.value,
            r.key.kind.as_str(),
            r.observed_domains,
            r.applicable_pairs,
            cell(r.fronting_pct, r.fronting_band),
            cell(r.faking_pct, r.faking_band),
            cell(r.domainless_pct, r.domainless_band),
        );
    }
    if !suppressed.is_empty() {
        out.push_str("\nSuppressed groups (no applicable pairs):\n");
        for s in suppressed {
            let _ = writeln!(
                out,
                "- {} ({}): {} pairs, pruned {{{}}}",
                s.key.value,
                s.key.kind.as_str(),
                s.total_pairs,
                prune_counts(&s.pruned),
            );
        }
    }
    out
}

fn render_csv(reports: &[GroupReport], suppressed: &[SuppressedGroup]) -> String {
    let mut out = String::new();
    out.push_str(
        "kind,value,observed_domains,applicable_pairs,fronting_pct,fronting_band,\
         faking_pct,faking_band,domainless_pct,domainless_band,pruned\n",
    );
    let quote = |value: &str| {
        if value.contains([',', '"', '\n']) {
            format!("\"{}\"", value.replace('"', "\"\""))
        } else {
            value.to_string()
        }
    };
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.2},{},{:.2},{},{:.2},{},",
            r.key.kind.as_str(),
            quote(&r.key.value),
            r.observed_domains,
            r.applicable_pairs,
            r.fronting_pct,
            r.fronting_band.as_str(),
            r.faking_pct,
            r.faking_band.as_str(),
            r.domainless_pct,
            r.domainless_band.as_str(),
        );
    }
    for s in suppressed {
        let _ = writeln!(
            out,
            "{},{},,{},,,,,,,{}",
            s.key.kind.as_str(),
            quote(&s.key.value),
            s.total_pairs,
            quote(&prune_counts(&s.pruned)),
        );
    }
    out
}

/// Renders reports plus suppressed groups, sorted by group key, in one
/// of the three output formats. Output is deterministic for equal
/// inputs.
pub fn render(
    reports: &[GroupReport],
    suppressed: &[SuppressedGroup],
    format: RenderFormat,
) -> String {
    let reports = sorted(reports, |r| &r.key);
    let suppressed = sorted(suppressed, |s| &s.key);
    match format {
        RenderFormat::Markdown => render_markdown(&reports, &suppressed),
        RenderFormat::Csv => render_csv(&reports, &suppressed),
        RenderFormat::Json => {
            #[derive(Serialize)]
            struct Document<'a> {
                groups: &'a [GroupReport],
                suppressed: &'a [SuppressedGroup],
            }
            let mut text =
                serde_json::to_string_pretty(&Document { groups: &reports, suppressed: &suppressed })
                    .expect("report serializes");
            text.push('\n');
            text
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate_sets::{DestinationTuple, GroupingKind, ScanPair};
    use crate::classifier::{ResultReason, TechniqueStatus};

    fn key(value: &str) -> GroupKey {
        GroupKey { kind: GroupingKind::CnameDomain, value: value.to_string() }
    }

    fn verdict(group: &str, target: &str, ok: [bool; 3], prune: Option<PruneReason>) -> PairVerdict {
        let result = |success: bool| TechniqueResult {
            status: if success { TechniqueStatus::Success } else { TechniqueStatus::Failure },
            reason: if success { ResultReason::ExactLength } else { ResultReason::LengthMismatch },
        };
        let not_evaluated = TechniqueResult {
            status: TechniqueStatus::NotEvaluated,
            reason: ResultReason::NotEvaluated,
        };
        let applicable = prune.is_none();
        PairVerdict {
            pair: ScanPair {
                target: DestinationTuple {
                    domain: target.to_string(),
                    ip: "127.0.0.1".parse().unwrap(),
                },
                front: DestinationTuple {
                    domain: "front.test".to_string(),
                    ip: "127.0.0.2".parse().unwrap(),
                },
                group: key(group),
            },
            applicable,
            prune_reason: prune,
            fronting: if applicable { result(ok[0]) } else { not_evaluated },
            faking: if applicable { result(ok[1]) } else { not_evaluated },
            domainless: if applicable { result(ok[2]) } else { not_evaluated },
        }
    }

    #[test]
    fn banding_boundaries() {
        assert_eq!(color_band(0.0), ColorBand::Green);
        assert_eq!(color_band(4.999), ColorBand::Green);
        assert_eq!(color_band(5.0), ColorBand::Yellow);
        assert_eq!(color_band(94.999), ColorBand::Yellow);
        assert_eq!(color_band(95.0), ColorBand::Red);
        assert_eq!(color_band(100.0), ColorBand::Red);
    }

    #[test]
    fn aggregate_counts_and_percentages() {
        let verdicts = vec![
            verdict("g.test", "a.test", [true, true, true], None),
            verdict("g.test", "b.test", [false, true, true], None),
            verdict("g.test", "a.test", [true, false, true], None),
            verdict("g.test", "c.test", [false, false, false], Some(PruneReason::BaselineNon200)),
        ];
        let AggregateOutcome::Report(report) = aggregate(&verdicts, &key("g.test")).unwrap()
        else {
            panic!("expected a report");
        };
        // The pruned pair is excluded from the denominator entirely.
        assert_eq!(report.applicable_pairs, 3);
        assert_eq!(report.observed_domains, 2);
        assert_eq!(report.fronting_successes, 2);
        assert!((report.fronting_pct - 66.666_666).abs() < 1e-3);
        assert_eq!(report.faking_pct, 100.0 * 2.0 / 3.0);
        assert_eq!(report.domainless_pct, 100.0);
        assert_eq!(report.domainless_band, ColorBand::Red);
        assert_eq!(report.fronting_band, ColorBand::Yellow);
    }

    #[test]
    fn all_pruned_group_is_suppressed_with_reasons() {
        let verdicts = vec![
            verdict("g.test", "a.test", [false; 3], Some(PruneReason::CertCoversBoth)),
            verdict("g.test", "b.test", [false; 3], Some(PruneReason::CertCoversBoth)),
            verdict("g.test", "c.test", [false; 3], Some(PruneReason::BaselineError)),
        ];
        let AggregateOutcome::Suppressed(s) = aggregate(&verdicts, &key("g.test")).unwrap()
        else {
            panic!("expected suppression");
        };
        assert_eq!(s.total_pairs, 3);
        assert_eq!(s.pruned[&PruneReason::CertCoversBoth], 2);
        assert_eq!(s.pruned[&PruneReason::BaselineError], 1);
    }

    #[test]
    fn mixed_group_keys_are_rejected() {
        let verdicts = vec![verdict("other.test", "a.test", [true; 3], None)];
        assert!(matches!(
            aggregate(&verdicts, &key("g.test")),
            Err(ReportError::MixedGroups { .. })
        ));
    }

    #[test]
    fn aggregate_by_group_partitions() {
        let verdicts = vec![
            verdict("b.test", "x.test", [true; 3], None),
            verdict("a.test", "y.test", [false; 3], None),
            verdict("b.test", "z.test", [true; 3], None),
        ];
        let outcomes = aggregate_by_group(&verdicts);
        assert_eq!(outcomes.len(), 2);
        let AggregateOutcome::Report(first) = &outcomes[0] else { panic!() };
        assert_eq!(first.key.value, "a.test");
        let AggregateOutcome::Report(second) = &outcomes[1] else { panic!() };
        assert_eq!((second.key.value.as_str(), second.applicable_pairs), ("b.test", 2));
    }

    #[test]
    fn popularity_estimate_examples() {
        let popular: Vec<String> = (0..50).map(|i| format!("d{i}.test")).collect();
        let mut cname_map = BTreeMap::new();
        let mut support = BTreeMap::new();
        // 20 mapped; 10 of those tracked; 4 of those frontable.
        for i in 0..20 {
            cname_map.insert(format!("d{i}.test"), format!("c{}.test", i % 10));
        }
        for i in 0..5 {
            support.insert(format!("c{i}.test"), if i < 2 { 80.0 } else { 0.0 });
        }
        let estimate = popularity_estimate(&popular, &cname_map, &support).unwrap();
        assert_eq!(estimate.total_domains, 50);
        assert_eq!(estimate.cname_mapped, 20);
        assert_eq!(estimate.tracked, 10);
        assert_eq!(estimate.frontable, 4);
        assert!((estimate.frontable_of_tracked_pct - 40.0).abs() < 1e-9);
        assert!((estimate.frontable_of_total_pct - 8.0).abs() < 1e-9);
    }

    #[test]
    fn popularity_estimate_edge_cases() {
        assert_eq!(
            popularity_estimate(&[], &BTreeMap::new(), &BTreeMap::new()),
            Err(ReportError::EmptyPopularity)
        );
        let popular = vec!["a.test".to_string()];
        let estimate =
            popularity_estimate(&popular, &BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!((estimate.tracked, estimate.frontable_of_tracked_pct), (0, 0.0));
    }

    #[test]
    fn markdown_rendering_is_sorted_and_stable() {
        let verdicts = vec![
            verdict("zeta.test", "x.test", [true; 3], None),
            verdict("alpha.test", "y.test", [false; 3], None),
        ];
        let (reports, suppressed) = split_outcomes(aggregate_by_group(&verdicts));
        let text = render(&reports, &suppressed, RenderFormat::Markdown);
        let alpha = text.find("alpha.test").unwrap();
        let zeta = text.find("zeta.test").unwrap();
        assert!(alpha < zeta);
        assert!(text.contains("| 100.00% (red) |"));
        assert!(text.contains("| 0.00% (green) |"));
        assert_eq!(text, render(&reports, &suppressed, RenderFormat::Markdown));
    }
}
