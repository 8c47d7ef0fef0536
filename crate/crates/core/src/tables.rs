//! Flow tables as sets of `(rule, counter)` pairs.
//!
//! Addition is plain set union and scalars come from GF(2). Union never
//! removes anything, so additive inverses only cancel through [`reduce`],
//! a separate normal form that strips `{r, -r}` pairs.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::actions::AffineAction;
use crate::error::{Error, Result};
use crate::headers::MatchPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gf2 {
    Zero,
    One,
}

impl Gf2 {
    pub const ALL: [Gf2; 2] = [Gf2::Zero, Gf2::One];
}

impl Add for Gf2 {
    type Output = Gf2;
    fn add(self, rhs: Gf2) -> Gf2 {
        if self == rhs {
            Gf2::Zero
        } else {
            Gf2::One
        }
    }
}

impl Mul for Gf2 {
    type Output = Gf2;
    fn mul(self, rhs: Gf2) -> Gf2 {
        if self == Gf2::One && rhs == Gf2::One {
            Gf2::One
        } else {
            Gf2::Zero
        }
    }
}

impl From<bool> for Gf2 {
    fn from(b: bool) -> Gf2 {
        if b {
            Gf2::One
        } else {
            Gf2::Zero
        }
    }
}

/// `<match, out_port, ttl, action>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowRule {
    pub matcher: MatchPattern,
    pub out_port: u16,
    pub ttl: u16,
    pub action: AffineAction,
}

impl FlowRule {
    pub fn new(matcher: MatchPattern, out_port: u16, ttl: u16, action: AffineAction) -> FlowRule {
        FlowRule { matcher, out_port, ttl, action }
    }

    pub fn negate(&self) -> Result<FlowRule> {
        negate_rule(self)
    }

    /// Same match, port and ttl.
    pub fn same_slot(&self, other: &FlowRule) -> bool {
        self.matcher == other.matcher && self.out_port == other.out_port && self.ttl == other.ttl
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowEntry {
    pub rule: FlowRule,
    pub counter: u64,
}

impl FlowEntry {
    pub fn new(rule: FlowRule, counter: u64) -> FlowEntry {
        FlowEntry { rule, counter }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRepr {
    #[serde(rename = "match", default)]
    matcher: MatchPattern,
    out_port: u16,
    ttl: u16,
    action: AffineAction,
}

impl Serialize for FlowRule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RuleRepr { matcher: self.matcher, out_port: self.out_port, ttl: self.ttl, action: self.action }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FlowRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = RuleRepr::deserialize(d)?;
        Ok(FlowRule::new(r.matcher, r.out_port, r.ttl, r.action))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRepr {
    #[serde(rename = "match", default)]
    matcher: MatchPattern,
    out_port: u16,
    ttl: u16,
    action: AffineAction,
    #[serde(default)]
    counter: u64,
}

impl Serialize for FlowEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EntryRepr {
            matcher: self.rule.matcher,
            out_port: self.rule.out_port,
            ttl: self.rule.ttl,
            action: self.rule.action,
            counter: self.counter,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FlowEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = EntryRepr::deserialize(d)?;
        Ok(FlowEntry::new(FlowRule::new(r.matcher, r.out_port, r.ttl, r.action), r.counter))
    }
}

/// A flow table. Entries are kept in canonical order, so equality and
/// serialization are deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowTable {
    entries: BTreeSet<FlowEntry>,
}

impl FlowTable {
    /// `Φ`.
    pub fn empty() -> FlowTable {
        FlowTable::default()
    }

    pub fn singleton(entry: FlowEntry) -> FlowTable {
        FlowTable::from_entries([entry])
    }

    pub fn from_entries<I: IntoIterator<Item = FlowEntry>>(entries: I) -> FlowTable {
        FlowTable { entries: entries.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::collections::btree_set::Iter<'_, FlowEntry> {
        self.entries.iter()
    }

    pub fn contains(&self, entry: &FlowEntry) -> bool {
        self.entries.contains(entry)
    }

    pub fn contains_rule(&self, rule: &FlowRule) -> bool {
        self.entries.iter().any(|e| e.rule == *rule)
    }

    pub fn insert(&mut self, entry: FlowEntry) -> bool {
        self.entries.insert(entry)
    }

    /// Removes every entry whose rule is `rule`; returns how many went.
    pub fn remove_rule(&mut self, rule: &FlowRule) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.rule != *rule);
        before - self.entries.len()
    }

    pub fn add(&self, other: &FlowTable) -> FlowTable {
        add(self, other)
    }
}

impl<'a> IntoIterator for &'a FlowTable {
    type Item = &'a FlowEntry;
    type IntoIter = std::collections::btree_set::Iter<'a, FlowEntry>;
    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

impl FromIterator<FlowEntry> for FlowTable {
    fn from_iter<I: IntoIterator<Item = FlowEntry>>(iter: I) -> FlowTable {
        FlowTable::from_entries(iter)
    }
}

impl Serialize for FlowTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.entries.iter())
    }
}

impl<'de> Deserialize<'de> for FlowTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(FlowTable::from_entries(Vec::<FlowEntry>::deserialize(d)?))
    }
}

impl fmt::Display for FlowTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("Φ");
        }
        for e in &self.entries {
            writeln!(
                f,
                "  match={} out_port={} ttl={} action={} counter={}",
                serde_json::to_string(&e.rule.matcher).map_err(|_| fmt::Error)?,
                e.rule.out_port,
                e.rule.ttl,
                e.rule.action,
                e.counter
            )?;
        }
        Ok(())
    }
}

pub fn empty() -> FlowTable {
    FlowTable::empty()
}

/// `t1 + t2 = t1 ∪ t2`.
pub fn add(t1: &FlowTable, t2: &FlowTable) -> FlowTable {
    FlowTable { entries: t1.entries.union(&t2.entries).copied().collect() }
}

pub fn scalar_mul(a: Gf2, t: &FlowTable) -> FlowTable {
    match a {
        Gf2::Zero => FlowTable::empty(),
        Gf2::One => t.clone(),
    }
}

/// `-r`: same match, port and ttl with the inverse action.
pub fn negate_rule(r: &FlowRule) -> Result<FlowRule> {
    Ok(FlowRule { action: r.action.invert()?, ..*r })
}

pub fn negate_table(t: &FlowTable) -> Result<FlowTable> {
    t.entries
        .iter()
        .enumerate()
        .map(|(index, e)| {
            negate_rule(&e.rule).map(|rule| FlowEntry { rule, ..*e }).map_err(|_| Error::SingularEntry { index })
        })
        .collect()
}

/// True when `a` and `b` are each other's additive inverse.
pub fn are_inverse(a: &FlowRule, b: &FlowRule) -> bool {
    a.same_slot(b) && (negate_rule(b) == Ok(*a))
}

/// Cancellation normal form: removes `{r, -r}` pairs, lowest pair in
/// canonical order first, until none remain. Cancelled counters are lost.
pub fn reduce(t: &FlowTable) -> FlowTable {
    let mut entries: Vec<FlowEntry> = t.entries.iter().copied().collect();
    'scan: loop {
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if are_inverse(&entries[i].rule, &entries[j].rule) {
                    entries.remove(j);
                    entries.remove(i);
                    continue 'scan;
                }
            }
        }
        break;
    }
    FlowTable::from_entries(entries)
}

pub fn table_equal(t1: &FlowTable, t2: &FlowTable) -> bool {
    t1 == t2
}
