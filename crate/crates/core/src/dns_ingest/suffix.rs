//! Public-suffix matching over a bundled registry snapshot.
//!
//! The snapshot contains registry (ICANN-style) rules only. CDN and
//! hosting platform zones are not treated as suffixes, so a name like
//! `j.sni.global.fastly.net` keeps `fastly.net` as its registrable
//! domain. That is what grouping wants: tuples that share a platform
//! zone belong to the same candidate set.

use std::collections::HashSet;
use std::sync::OnceLock;

const BUNDLED: &str = include_str!("data/public_suffix.dat");

/// Parsed suffix rules. Rule kinds follow the upstream list format:
/// plain rules, `*.` wildcard rules (wildcard matches exactly one
/// label), and `!` exception rules that cancel a wildcard.
#[derive(Debug, Default)]
pub struct SuffixList {
    exact: HashSet<String>,
    // "*.ck" is stored as "ck"; it matches any single label in front.
    wildcard: HashSet<String>,
    // "!www.ck" is stored as "www.ck".
    exception: HashSet<String>,
}

impl SuffixList {
    /// Parses list text: one rule per line, `//` comments, blank lines
    /// ignored. Unparseable lines are skipped rather than fatal; the
    /// bundled snapshot contains none.
    pub fn parse(text: &str) -> SuffixList {
        let mut list = SuffixList::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let rule = line.split_whitespace().next().unwrap().to_ascii_lowercase();
            if let Some(rest) = rule.strip_prefix('!') {
                list.exception.insert(rest.to_string());
            } else if let Some(rest) = rule.strip_prefix("*.") {
                list.wildcard.insert(rest.to_string());
            } else if rule != "*" {
                list.exact.insert(rule);
            }
        }
        list
    }

    /// The snapshot compiled into the binary.
    pub fn bundled() -> &'static SuffixList {
        static LIST: OnceLock<SuffixList> = OnceLock::new();
        LIST.get_or_init(|| SuffixList::parse(BUNDLED))
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty() && self.wildcard.is_empty()
    }

    /// Number of labels of the public suffix of `labels`, or 0 when no
    /// rule matches. `labels` must already be normalized (lowercase, no
    /// empty labels). Longest rule wins; an exception rule beats the
    /// wildcard it cancels by shortening the suffix by one label.
    pub(crate) fn suffix_label_count(&self, labels: &[&str]) -> usize {
        let n = labels.len();
        // Walk tails longest-first so the first hit is the prevailing rule.
        for start in 0..n {
            let tail = labels[start..].join(".");
            if self.exception.contains(&tail) {
                return n - start - 1;
            }
            if self.exact.contains(&tail) {
                return n - start;
            }
            if n - start >= 2 && self.wildcard.contains(&labels[start + 1..].join(".")) {
                return n - start;
            }
        }
        0
    }
}
