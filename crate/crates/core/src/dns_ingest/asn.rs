//! IP-to-AS mapping by longest prefix match over a sorted prefix table.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// An IPv4 CIDR prefix. The base address is stored pre-masked, so two
/// prefixes are equal iff they describe the same address range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ipv4Prefix {
    base: u32,
    len: u8,
}

impl Ipv4Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Ipv4Prefix, IngestError> {
        if len > 32 {
            return Err(IngestError::InvalidPrefix(format!("{addr}/{len}")));
        }
        let base = u32::from(addr) & Self::mask(len);
        Ok(Ipv4Prefix { base, len })
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn base(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.base)
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & Self::mask(self.len) == self.base
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - len)
        }
    }
}

impl FromStr for Ipv4Prefix {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidPrefix(s.to_string());
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => (a, l),
            // A bare address is a host route.
            None => (s, "32"),
        };
        let addr: Ipv4Addr = addr.parse().map_err(|_| bad())?;
        let len: u8 = len.parse().map_err(|_| bad())?;
        Ipv4Prefix::new(addr, len)
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base(), self.len)
    }
}

impl Serialize for Ipv4Prefix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv4Prefix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsnEntry {
    pub prefix: Ipv4Prefix,
    pub asn: u32,
    pub as_name: String,
}

/// Prefix table with longest-prefix-match lookup. Entries are kept
/// sorted by descending prefix length so a linear scan can stop at the
/// first containing prefix.
#[derive(Debug, Default)]
pub struct AsnTable {
    entries: Vec<AsnEntry>,
}

impl AsnTable {
    /// Builds a table, rejecting duplicate prefixes and reserved AS
    /// number 0 so a lookup result is always unambiguous.
    pub fn from_entries(mut entries: Vec<AsnEntry>) -> Result<AsnTable, IngestError> {
        let mut seen: HashSet<Ipv4Prefix> = HashSet::with_capacity(entries.len());
        for entry in &entries {
            if entry.asn == 0 {
                return Err(IngestError::InvalidAsn(entry.prefix.to_string()));
            }
            if !seen.insert(entry.prefix) {
                return Err(IngestError::DuplicatePrefix(entry.prefix.to_string()));
            }
        }
        entries.sort_by(|a, b| {
            b.prefix
                .len()
                .cmp(&a.prefix.len())
                .then_with(|| a.prefix.cmp(&b.prefix))
        });
        Ok(AsnTable { entries })
    }

    /// Loads `prefix,asn,name` CSV (header row required).
    pub fn from_csv<R: Read>(reader: R) -> Result<AsnTable, IngestError> {
        let mut csv_reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for record in csv_reader.deserialize::<CsvRow>() {
            let row = record.map_err(|e| IngestError::Csv(e.to_string()))?;
            entries.push(AsnEntry {
                prefix: row.prefix.parse()?,
                asn: row.asn,
                as_name: row.name,
            });
        }
        AsnTable::from_entries(entries)
    }

    /// Longest prefix match; `None` for untracked address space.
    pub fn lookup(&self, ip: Ipv4Addr) -> Option<&AsnEntry> {
        self.entries.iter().find(|e| e.prefix.contains(ip))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Deserialize)]
struct CsvRow {
    prefix: String,
    asn: u32,
    name: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(prefix: &str, asn: u32, name: &str) -> AsnEntry {
        AsnEntry { prefix: prefix.parse().unwrap(), asn, as_name: name.to_string() }
    }

    #[test]
    fn longest_prefix_wins() {
        let table = AsnTable::from_entries(vec![
            entry("10.0.0.0/8", 64500, "COARSE"),
            entry("10.1.0.0/16", 64501, "FINE"),
        ])
        .unwrap();
        assert_eq!(table.lookup("10.1.2.3".parse().unwrap()).unwrap().asn, 64501);
        assert_eq!(table.lookup("10.2.2.3".parse().unwrap()).unwrap().asn, 64500);
        assert!(table.lookup("192.0.2.1".parse().unwrap()).is_none());
    }

    #[test]
    fn duplicate_prefix_rejected() {
        let err = AsnTable::from_entries(vec![
            entry("10.0.0.0/8", 64500, "A"),
            entry("10.0.0.0/8", 64501, "B"),
        ])
        .unwrap_err();
        assert!(matches!(err, IngestError::DuplicatePrefix(_)));
        // Same range written with an unmasked base address is still a duplicate.
        let err = AsnTable::from_entries(vec![
            entry("10.0.0.0/8", 64500, "A"),
            entry("10.9.9.9/8", 64501, "B"),
        ])
        .unwrap_err();
        assert!(matches!(err, IngestError::DuplicatePrefix(_)));
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(matches!("10.0.0.0/33".parse::<Ipv4Prefix>(), Err(IngestError::InvalidPrefix(_))));
        assert!(matches!("banana/8".parse::<Ipv4Prefix>(), Err(IngestError::InvalidPrefix(_))));
        let err =
            AsnTable::from_entries(vec![entry("10.0.0.0/8", 0, "ZERO")]).unwrap_err();
        assert!(matches!(err, IngestError::InvalidAsn(_)));
    }

    #[test]
    fn csv_round_trip() {
        let csv = "prefix,asn,name\n198.51.100.0/24,64502,EXAMPLE-NET\n203.0.113.0/24,64503,DOC-NET\n";
        let table = AsnTable::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(table.len(), 2);
        let hit = table.lookup("203.0.113.77".parse().unwrap()).unwrap();
        assert_eq!((hit.asn, hit.as_name.as_str()), (64503, "DOC-NET"));
    }

    #[test]
    fn zero_length_prefix_matches_everything() {
        let table = AsnTable::from_entries(vec![entry("0.0.0.0/0", 64510, "ALL")]).unwrap();
        assert_eq!(table.lookup("255.255.255.255".parse().unwrap()).unwrap().asn, 64510);
    }
}
