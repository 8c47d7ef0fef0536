//! Congruence reports, behavioral differential testing, loop detection and
//! what-if evaluation of a candidate FLOW_MOD.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::actions::{self, AffineAction};
use crate::error::{Error, Result};
use crate::headers::Header;
use crate::nib::Nib;
use crate::tables::{reduce, table_equal, FlowEntry, FlowRule, FlowTable};
use crate::transforms::{
    apply_transform, chain, flow_mod_add, flow_mod_delete, flow_mod_modify, normalize, AppTransform, GuardedDelta,
    ServiceChain,
};

// ---------------------------------------------------------------------------
// Congruence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Congruent,
    NotCongruent,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Congruent => "congruent",
            Verdict::NotCongruent => "not_congruent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Linear,
    Translation,
}

/// Where two normalized composites first disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Difference {
    pub slot: usize,
    pub part: Part,
    /// Index of the differing term within the slot's sum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub term: Option<usize>,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CongruenceReport {
    pub left_name: String,
    pub right_name: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_difference: Option<Difference>,
    pub left: AppTransform,
    pub right: AppTransform,
    /// Composites whose linear part is not the identity.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub non_identity_linear: Vec<String>,
}

fn first_difference(a: &AppTransform, b: &AppTransform) -> Option<Difference> {
    let row = |r: &[bool]| r.iter().map(|&x| if x { '1' } else { '0' }).collect::<String>();
    for i in 0..a.dim() {
        if a.linear.row(i) != b.linear.row(i) {
            return Some(Difference {
                slot: i,
                part: Part::Linear,
                term: None,
                left: row(a.linear.row(i)),
                right: row(b.linear.row(i)),
            });
        }
    }
    for i in 0..a.dim() {
        let (l, r) = (&a.translation[i], &b.translation[i]);
        if l == r {
            continue;
        }
        let k = (0..).find(|&k| l.terms.get(k) != r.terms.get(k)).expect("slots differ");
        let show = |t: Option<&GuardedDelta>| t.map_or_else(|| "(none)".to_string(), |t| t.to_string());
        return Some(Difference {
            slot: i,
            part: Part::Translation,
            term: Some(k),
            left: show(l.terms.get(k)),
            right: show(r.terms.get(k)),
        });
    }
    None
}

/// Congruence of two chains' composites, with the normalized forms and the
/// first difference in canonical order.
pub fn check_congruence(a: &ServiceChain, b: &ServiceChain) -> Result<CongruenceReport> {
    let (ca, cb) = (chain(a)?, chain(b)?);
    if ca.dim() != cb.dim() {
        return Err(Error::DimensionMismatch { left: ca.dim(), right: cb.dim() });
    }
    let (left, right) = (normalize(&ca), normalize(&cb));
    let first_difference = first_difference(&left, &right);
    let verdict = if first_difference.is_none() { Verdict::Congruent } else { Verdict::NotCongruent };
    let non_identity_linear =
        [&left, &right].iter().filter(|c| !c.linear.is_identity()).map(|c| c.name.clone()).collect();
    Ok(CongruenceReport {
        left_name: a.name.clone(),
        right_name: b.name.clone(),
        verdict,
        first_difference,
        left,
        right,
        non_identity_linear,
    })
}

fn write_composite(f: &mut fmt::Formatter<'_>, c: &AppTransform) -> fmt::Result {
    writeln!(f, "  {}:", c.name)?;
    for i in 0..c.dim() {
        let row: String = c.linear.row(i).iter().map(|&x| if x { '1' } else { '0' }).collect();
        writeln!(f, "    slot {i}  [{row}]  + {}", c.translation[i])?;
    }
    Ok(())
}

impl fmt::Display for CongruenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verdict: {}", self.verdict)?;
        writeln!(f, "left:    {}", self.left_name)?;
        writeln!(f, "right:   {}", self.right_name)?;
        if let Some(d) = &self.first_difference {
            match d.term {
                Some(k) => writeln!(f, "first difference: slot {} translation term {k}", d.slot)?,
                None => writeln!(f, "first difference: slot {} linear row", d.slot)?,
            }
            writeln!(f, "  left:  {}", d.left)?;
            writeln!(f, "  right: {}", d.right)?;
        }
        for name in &self.non_identity_linear {
            writeln!(f, "note: {name} has a non-identity linear part")?;
        }
        writeln!(f, "normalized:")?;
        write_composite(f, &self.left)?;
        write_composite(f, &self.right)
    }
}

// ---------------------------------------------------------------------------
// Behavioral differences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    /// Index into the scenario list.
    pub scenario: usize,
    pub header: Header,
    /// First slot whose reduced tables differ; absent when only one side
    /// failed to apply.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
    pub left: Outcome,
    pub right: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Table(FlowTable),
    /// Applied without error; tables not compared.
    Applied,
    Error(String),
}

/// Runs both composites on every scenario and keeps those whose resulting
/// tables differ after reduction. Two failures count as agreement.
pub fn behavioral_diff(a: &ServiceChain, b: &ServiceChain, scenarios: &[(Nib, Header)]) -> Result<Vec<Counterexample>> {
    let (ca, cb) = (chain(a)?, chain(b)?);
    let mut out = Vec::new();
    for (i, (nib, h)) in scenarios.iter().enumerate() {
        let (ra, rb) = (apply_transform(&ca, nib, h), apply_transform(&cb, nib, h));
        let found = match (&ra, &rb) {
            (Err(_), Err(_)) => None,
            (Ok(x), Ok(y)) => first_table_difference(x, y).map(|s| {
                let (l, r) = (reduce(&x.tables()[s]), reduce(&y.tables()[s]));
                (Some(s), Outcome::Table(l), Outcome::Table(r))
            }),
            _ => {
                let outcome = |r: &Result<Nib>| match r {
                    Ok(_) => Outcome::Applied,
                    Err(e) => Outcome::Error(e.to_string()),
                };
                Some((None, outcome(&ra), outcome(&rb)))
            }
        };
        if let Some((slot, left, right)) = found {
            out.push(Counterexample { scenario: i, header: *h, slot, left, right });
        }
    }
    Ok(out)
}

fn first_table_difference(x: &Nib, y: &Nib) -> Option<usize> {
    if x.switch_count() != y.switch_count() {
        return Some(0);
    }
    (0..x.switch_count()).find(|&i| !table_equal(&reduce(&x.tables()[i]), &reduce(&y.tables()[i])))
}

// ---------------------------------------------------------------------------
// Loops
// ---------------------------------------------------------------------------

/// Two entries of one table that are additive inverses of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct LoopFinding {
    pub switch: usize,
    pub first: FlowEntry,
    pub second: FlowEntry,
    /// `compose(first.action, second.action)`; always the identity.
    pub certificate: AffineAction,
}

impl fmt::Display for LoopFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = serde_json::to_string(&self.first.rule.matcher).map_err(|_| fmt::Error)?;
        write!(
            f,
            "switch {}: match={} out_port={} ttl={} actions {} / {} compose to {}",
            self.switch,
            m,
            self.first.rule.out_port,
            self.first.rule.ttl,
            self.first.rule.action,
            self.second.rule.action,
            self.certificate
        )
    }
}

pub fn table_loops(switch: usize, t: &FlowTable) -> Vec<LoopFinding> {
    let entries: Vec<&FlowEntry> = t.iter().collect();
    let mut out = Vec::new();
    for (i, e1) in entries.iter().enumerate() {
        for e2 in &entries[i + 1..] {
            if !e1.rule.same_slot(&e2.rule) {
                continue;
            }
            let certificate = actions::compose(&e1.rule.action, &e2.rule.action);
            if certificate.is_identity() {
                out.push(LoopFinding { switch, first: **e1, second: **e2, certificate });
            }
        }
    }
    out
}

/// Every unordered pair of entries in one table with equal match, port and
/// ttl whose actions compose to the identity.
pub fn detect_loops(nib: &Nib) -> Vec<LoopFinding> {
    nib.tables().iter().enumerate().flat_map(|(i, t)| table_loops(i, t)).collect()
}

// ---------------------------------------------------------------------------
// What-if
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum FlowModOp {
    Add { rule: FlowRule },
    Delete { rule: FlowRule },
    Modify { old: FlowRule, new: FlowRule },
}

/// Candidate FLOW_MOD. Unknown fields are rejected by the flattened op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMod {
    pub switch: usize,
    #[serde(flatten)]
    pub op: FlowModOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableDiff {
    pub switch: usize,
    pub added: Vec<FlowEntry>,
    pub removed: Vec<FlowEntry>,
}

impl TableDiff {
    pub fn between(switch: usize, before: &FlowTable, after: &FlowTable) -> TableDiff {
        TableDiff {
            switch,
            added: after.iter().filter(|e| !before.contains(e)).copied().collect(),
            removed: before.iter().filter(|e| !after.contains(e)).copied().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    /// Rebuilds the after-table from the before-table.
    pub fn apply(&self, before: &FlowTable) -> FlowTable {
        before.iter().filter(|e| !self.removed.contains(e)).chain(&self.added).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WhatIfReport {
    pub candidate: FlowMod,
    /// One diff per switch, in switch order.
    pub diffs: Vec<TableDiff>,
    pub new_loops: Vec<LoopFinding>,
    #[serde(skip)]
    pub after: Nib,
}

impl fmt::Display for WhatIfReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.candidate.op {
            FlowModOp::Add { .. } => "add",
            FlowModOp::Delete { .. } => "delete",
            FlowModOp::Modify { .. } => "modify",
        };
        writeln!(f, "candidate: {op} on switch {}", self.candidate.switch)?;
        for d in &self.diffs {
            if d.is_empty() {
                writeln!(f, "switch {}: unchanged", d.switch)?;
                continue;
            }
            writeln!(f, "switch {}: +{} -{}", d.switch, d.added.len(), d.removed.len())?;
            for (sign, entries) in [('+', &d.added), ('-', &d.removed)] {
                for e in entries.iter() {
                    writeln!(f, "  {sign} {}", serde_json::to_string(e).map_err(|_| fmt::Error)?)?;
                }
            }
        }
        writeln!(f, "new loops: {}", self.new_loops.len())?;
        for l in &self.new_loops {
            writeln!(f, "  {l}")?;
        }
        Ok(())
    }
}

/// Applies `candidate` to a copy of `nib` and reports what would change.
pub fn what_if(nib: &Nib, candidate: &FlowMod) -> Result<WhatIfReport> {
    let s = candidate.switch;
    let before = nib.table(s)?;
    let table = match &candidate.op {
        FlowModOp::Add { rule } => flow_mod_add(before, rule),
        FlowModOp::Delete { rule } => flow_mod_delete(before, rule)?,
        FlowModOp::Modify { old, new } => flow_mod_modify(before, old, new)?,
    };
    let after = nib.with_table(s, table)?;
    let diffs = (0..nib.switch_count()).map(|i| TableDiff::between(i, &nib.tables()[i], &after.tables()[i])).collect();
    let old_loops = detect_loops(nib);
    let new_loops = detect_loops(&after).into_iter().filter(|l| !old_loops.contains(l)).collect();
    Ok(WhatIfReport { candidate: candidate.clone(), diffs, new_loops, after })
}
