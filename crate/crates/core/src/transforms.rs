//! Control applications as affine transformations of the NIB vector.
//!
//! An [`AppTransform`] is the homogeneous matrix
//!
//! ```text
//! [ C  d ]   C: n x n, entries in {0, 1}
//! [ 0  1 ]   d: one symbolic table-delta per switch
//! ```
//!
//! acting on `[t_1, ..., t_n, 1]`. Each entry of `d` is a [`SlotDelta`]: a
//! sum of piecewise [`GuardedDelta`] terms whose guards read the NIB's flow
//! statistics and whose arms are rule templates instantiated against the
//! incoming header.
//!
//! Table addition is union, so a row of `C` selects tables by union and the
//! product of two linear parts is the boolean (OR of ANDs) product.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::actions::{self, AffineAction, RuleState};
use crate::error::{Error, Result};
use crate::headers::{field_delta, Field, Header, MatchPattern};
use crate::nib::{count_by_dest, count_by_src, Nib};
use crate::tables::{self, negate_table, reduce, FlowEntry, FlowRule, FlowTable};

// ---------------------------------------------------------------------------
// FLOW_MOD
// ---------------------------------------------------------------------------

/// FLOW_MOD add: `t + {(r, 0)}`.
pub fn flow_mod_add(t: &FlowTable, r: &FlowRule) -> FlowTable {
    tables::add(t, &FlowTable::singleton(FlowEntry::new(*r, 0)))
}

/// FLOW_MOD delete: removes every entry whose rule is `r`.
///
/// For rules with a non-involutive inverse this coincides with cancelling the
/// matching entries against their negation (see [`delete_cancels_by_inverse`]);
/// drop rules and involutions have no distinct inverse and are removed
/// directly.
pub fn flow_mod_delete(t: &FlowTable, r: &FlowRule) -> Result<FlowTable> {
    if !t.contains_rule(r) {
        return Err(Error::NotFound);
    }
    let mut out = t.clone();
    out.remove_rule(r);
    Ok(out)
}

/// Whether deleting `r` from `t` is witnessed by additive-inverse
/// cancellation rather than direct removal.
pub fn delete_cancels_by_inverse(t: &FlowTable, r: &FlowRule) -> bool {
    let matching: FlowTable = t.iter().filter(|e| e.rule == *r).copied().collect();
    !matching.is_empty() && negate_table(&matching).is_ok_and(|neg| reduce(&tables::add(&matching, &neg)).is_empty())
}

/// FLOW_MOD modify: delete `old`, then add `new` with a fresh counter.
pub fn flow_mod_modify(t: &FlowTable, old: &FlowRule, new: &FlowRule) -> Result<FlowTable> {
    Ok(flow_mod_add(&flow_mod_delete(t, old)?, new))
}

// ---------------------------------------------------------------------------
// Guards and templates
// ---------------------------------------------------------------------------

/// Predicate over the NIB statistics and the incoming header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Guard {
    True,
    /// `N(h) <= threshold`.
    NsrcLeq {
        threshold: u64,
    },
    /// `L(s1) <= L(s2)`.
    LoadLeq {
        s1: u64,
        s2: u64,
    },
}

impl Guard {
    pub fn eval(&self, nib: &Nib, h: &Header) -> bool {
        match *self {
            Guard::True => true,
            Guard::NsrcLeq { threshold } => count_by_src(nib, h) as u64 <= threshold,
            Guard::LoadLeq { s1, s2 } => count_by_dest(nib, s1) <= count_by_dest(nib, s2),
        }
    }

    fn is_tautology(&self) -> bool {
        match *self {
            Guard::True => true,
            Guard::LoadLeq { s1, s2 } => s1 == s2,
            Guard::NsrcLeq { .. } => false,
        }
    }

    /// `self` holding implies `other` holds.
    fn implies(&self, other: &Guard) -> bool {
        if other.is_tautology() || self == other {
            return true;
        }
        matches!(
            (self, other),
            (Guard::NsrcLeq { threshold: a }, Guard::NsrcLeq { threshold: b }) if a <= b
        )
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::True => f.write_str("true"),
            Guard::NsrcLeq { threshold } => write!(f, "N(h) <= {threshold}"),
            Guard::LoadLeq { s1, s2 } => write!(f, "L({s1}) <= L({s2})"),
        }
    }
}

const DEST_PORT: &str = "@dest";

/// Output-port reference inside a template.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortRef {
    Number(u16),
    Named(String),
    /// Port of the server at the header's effective destination.
    Dest,
}

impl PortRef {
    pub fn named(name: &str) -> PortRef {
        PortRef::Named(name.to_string())
    }
}

impl Serialize for PortRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PortRef::Number(n) => s.serialize_u16(*n),
            PortRef::Named(name) => s.serialize_str(name),
            PortRef::Dest => s.serialize_str(DEST_PORT),
        }
    }
}

impl<'de> Deserialize<'de> for PortRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(u16),
            Name(String),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Number(n) => PortRef::Number(n),
            Repr::Name(name) if name == DEST_PORT => PortRef::Dest,
            Repr::Name(name) if name.starts_with('@') => {
                return Err(D::Error::custom(format!("unknown port directive `{name}`")))
            }
            Repr::Name(name) => PortRef::Named(name),
        })
    }
}

/// Where a template's match pattern comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchSource {
    /// Exact match on every field of the incoming header.
    InputHeader,
    Literal(MatchPattern),
}

impl Serialize for MatchSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MatchSource::InputHeader => s.serialize_str("input"),
            MatchSource::Literal(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for MatchSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Keyword(String),
            Pattern(MatchPattern),
        }
        match Repr::deserialize(d)? {
            Repr::Keyword(k) if k == "input" => Ok(MatchSource::InputHeader),
            Repr::Keyword(k) => Err(D::Error::custom(format!("unknown match source `{k}`"))),
            Repr::Pattern(p) => Ok(MatchSource::Literal(p)),
        }
    }
}

/// Action expression; resolved to an [`AffineAction`] when the template is
/// instantiated. `Seq` applies left to right.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionExpr {
    Forward {
        delta: u16,
    },
    /// Forward translation by a resolved port number.
    ForwardTo {
        port: PortRef,
    },
    Drop,
    Modify {
        field: Field,
        delta: u64,
    },
    /// Set-field, realized as the translation from the current value.
    Set {
        field: Field,
        value: u64,
    },
    /// Set-field to whichever of two servers currently carries less load.
    SetLeastLoaded {
        field: Field,
        servers: [u64; 2],
    },
    Seq {
        actions: Vec<ActionExpr>,
    },
}

impl ActionExpr {
    /// `A_f` toward a named port.
    pub fn forward_to(port: &str) -> ActionExpr {
        ActionExpr::ForwardTo { port: PortRef::named(port) }
    }

    fn resolve(&self, ctx: &Ctx<'_>, current: &Header) -> Result<AffineAction> {
        Ok(match self {
            ActionExpr::Forward { delta } => actions::forward(*delta),
            ActionExpr::ForwardTo { port } => actions::forward(ctx.port(port)?),
            ActionExpr::Drop => actions::drop(),
            ActionExpr::Modify { field, delta } => actions::modify_field(*field, *delta)?,
            ActionExpr::Set { field, value } => set_field(*field, *value, current)?,
            ActionExpr::SetLeastLoaded { field, servers: [s1, s2] } => {
                let pick = if count_by_dest(ctx.nib, *s1) <= count_by_dest(ctx.nib, *s2) { *s1 } else { *s2 };
                set_field(*field, pick, current)?
            }
            ActionExpr::Seq { actions } => {
                let mut acc = AffineAction::identity();
                let mut state = RuleState::new(*current, 0, 0);
                for a in actions {
                    let step = a.resolve(ctx, &state.header)?;
                    state = step.apply(&state);
                    acc = actions::compose(&step, &acc);
                }
                acc
            }
        })
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortRef::Number(n) => write!(f, "{n}"),
            PortRef::Named(name) => f.write_str(name),
            PortRef::Dest => f.write_str("p_DEST(h)"),
        }
    }
}

impl fmt::Display for ActionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionExpr::Forward { delta } => write!(f, "fwd(+{delta})"),
            ActionExpr::ForwardTo { port } => write!(f, "fwd({port})"),
            ActionExpr::Drop => f.write_str("drop"),
            ActionExpr::Modify { field, delta } => write!(f, "mod({field}+{delta})"),
            ActionExpr::Set { field, value } => write!(f, "set({field}={value})"),
            ActionExpr::SetLeastLoaded { field, servers: [s1, s2] } => {
                write!(f, "set({field}=least_loaded({s1},{s2}))")
            }
            ActionExpr::Seq { actions } if actions.is_empty() => f.write_str("id"),
            ActionExpr::Seq { actions } => {
                for (i, a) in actions.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{a}")?;
                }
                Ok(())
            }
        }
    }
}

fn set_field(field: Field, value: u64, current: &Header) -> Result<AffineAction> {
    actions::modify_field(field, field_delta(current.get(field), value, field.width())?)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTemplate {
    #[serde(rename = "match")]
    pub matcher: MatchSource,
    pub out_port: PortRef,
    pub ttl: u16,
    pub action: ActionExpr,
    #[serde(default)]
    pub counter: u64,
}

impl RuleTemplate {
    /// `<h, port, ttl, action>` matched on the incoming header.
    pub fn for_input(out_port: PortRef, ttl: u16, action: ActionExpr) -> RuleTemplate {
        RuleTemplate { matcher: MatchSource::InputHeader, out_port, ttl, action, counter: 0 }
    }

    fn instantiate(&self, ctx: &Ctx<'_>) -> Result<FlowEntry> {
        let matcher = match self.matcher {
            MatchSource::InputHeader => MatchPattern::exact(ctx.header),
            MatchSource::Literal(p) => p,
        };
        let out_port = ctx.port(&self.out_port)?;
        let action = self.action.resolve(ctx, ctx.header)?;
        Ok(FlowEntry::new(FlowRule::new(matcher, out_port, self.ttl, action), self.counter))
    }
}

impl fmt::Display for RuleTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.matcher {
            MatchSource::InputHeader => f.write_str("<h, ")?,
            MatchSource::Literal(p) => write!(f, "<{}, ", serde_json::to_string(p).map_err(|_| fmt::Error)?)?,
        }
        write!(f, "{}, {}, {}>", self.out_port, self.ttl, self.action)?;
        if self.counter != 0 {
            write!(f, "#{}", self.counter)?;
        }
        Ok(())
    }
}

struct Ctx<'a> {
    nib: &'a Nib,
    header: &'a Header,
}

impl Ctx<'_> {
    fn port(&self, p: &PortRef) -> Result<u16> {
        let topo = self.nib.topology();
        match p {
            PortRef::Number(n) => Ok(*n),
            PortRef::Named(name) => topo.port(name),
            PortRef::Dest => topo.server_port(self.nib.effective_dest_of(self.header)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub guard: Guard,
    pub rules: Vec<RuleTemplate>,
}

/// Piecewise table delta: the first branch whose guard holds supplies the
/// rules to add, else `default` does.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardedDelta {
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub default: Vec<RuleTemplate>,
}

impl GuardedDelta {
    pub fn unconditional(rules: Vec<RuleTemplate>) -> GuardedDelta {
        GuardedDelta { branches: Vec::new(), default: rules }
    }

    /// Two-arm `if guard { then } otherwise { other }`.
    pub fn cases(guard: Guard, then: Vec<RuleTemplate>, otherwise: Vec<RuleTemplate>) -> GuardedDelta {
        GuardedDelta { branches: vec![Branch { guard, rules: then }], default: otherwise }
    }

    pub fn is_unconditional(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.default.is_empty() && self.branches.iter().all(|b| b.rules.is_empty())
    }

    pub fn select(&self, nib: &Nib, h: &Header) -> &[RuleTemplate] {
        self.branches.iter().find(|b| b.guard.eval(nib, h)).map_or(&self.default[..], |b| &b.rules[..])
    }

    fn normalized(&self) -> GuardedDelta {
        let mut d = GuardedDelta {
            branches: self.branches.iter().map(|b| Branch { guard: b.guard, rules: sorted_rules(&b.rules) }).collect(),
            default: sorted_rules(&self.default),
        };
        loop {
            let before = d.clone();
            d.drop_shadowed();
            d.trim_trailing_defaults();
            d.reorder_equal_neighbours();
            if d == before {
                return d;
            }
        }
    }

    /// Removes branches that can never be selected.
    fn drop_shadowed(&mut self) {
        let mut kept: Vec<Branch> = Vec::with_capacity(self.branches.len());
        for b in self.branches.drain(..) {
            if b.guard.is_tautology() {
                self.default = b.rules;
                break;
            }
            if kept.iter().any(|k| b.guard.implies(&k.guard)) {
                continue;
            }
            kept.push(b);
        }
        self.branches = kept;
    }

    fn trim_trailing_defaults(&mut self) {
        while self.branches.last().is_some_and(|b| b.rules == self.default) {
            self.branches.pop();
        }
    }

    /// Neighbouring branches with equal rules can trade places without
    /// changing the selected rules; put them in guard order.
    fn reorder_equal_neighbours(&mut self) {
        let mut swapped = true;
        while swapped {
            swapped = false;
            for i in 1..self.branches.len() {
                let (a, b) = (&self.branches[i - 1], &self.branches[i]);
                if a.rules == b.rules && a.guard > b.guard {
                    self.branches.swap(i - 1, i);
                    swapped = true;
                }
            }
        }
    }
}

fn write_rules(f: &mut fmt::Formatter<'_>, rules: &[RuleTemplate]) -> fmt::Result {
    f.write_str("{")?;
    for (i, r) in rules.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{r}")?;
    }
    f.write_str("}")
}

impl fmt::Display for GuardedDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.branches.is_empty() {
            return write_rules(f, &self.default);
        }
        for (i, b) in self.branches.iter().enumerate() {
            write!(f, "{} {} then ", if i == 0 { "if" } else { " elif" }, b.guard)?;
            write_rules(f, &b.rules)?;
        }
        f.write_str(" else ")?;
        write_rules(f, &self.default)
    }
}

fn sorted_rules(rules: &[RuleTemplate]) -> Vec<RuleTemplate> {
    let mut v = rules.to_vec();
    v.sort();
    v.dedup();
    v
}

/// One entry of the translation column: a sum of piecewise deltas.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotDelta {
    pub terms: Vec<GuardedDelta>,
}

impl SlotDelta {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn single(delta: GuardedDelta) -> SlotDelta {
        SlotDelta { terms: vec![delta] }
    }

    /// `self + other`.
    pub fn plus(&self, other: &SlotDelta) -> SlotDelta {
        SlotDelta { terms: self.terms.iter().chain(&other.terms).cloned().collect() }
    }

    fn normalized(&self) -> SlotDelta {
        let mut fixed = Vec::new();
        let mut terms = Vec::new();
        for t in &self.terms {
            let t = t.normalized();
            if t.is_empty() {
                continue;
            }
            if t.is_unconditional() {
                fixed.extend(t.default);
            } else {
                terms.push(t);
            }
        }
        if !fixed.is_empty() {
            terms.push(GuardedDelta::unconditional(sorted_rules(&fixed)));
        }
        terms.sort();
        terms.dedup();
        SlotDelta { terms }
    }

    fn instantiate(&self, ctx: &Ctx<'_>, into: &mut FlowTable) -> Result<()> {
        for term in &self.terms {
            for template in term.select(ctx.nib, ctx.header) {
                into.insert(template.instantiate(ctx)?);
            }
        }
        Ok(())
    }
}

impl fmt::Display for SlotDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            if self.terms.len() > 1 && !t.is_unconditional() {
                write!(f, "[{t}]")?;
            } else {
                write!(f, "{t}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for SlotDelta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.terms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SlotDelta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(SlotDelta { terms: Vec::deserialize(d)? })
    }
}

// ---------------------------------------------------------------------------
// Linear part
// ---------------------------------------------------------------------------

/// Square matrix with entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitMatrix {
    rows: Vec<Vec<bool>>,
}

impl BitMatrix {
    pub fn identity(n: usize) -> BitMatrix {
        BitMatrix { rows: (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect() }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<BitMatrix> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { left: n, right: bad.len() });
        }
        Ok(BitMatrix { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i][j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    pub fn is_identity(&self) -> bool {
        *self == BitMatrix::identity(self.dim())
    }

    /// `self * rhs` with OR as addition.
    pub fn mul(&self, rhs: &BitMatrix) -> BitMatrix {
        let n = self.dim();
        let rows =
            (0..n).map(|i| (0..n).map(|j| (0..n).any(|k| self.rows[i][k] && rhs.rows[k][j])).collect()).collect();
        BitMatrix { rows }
    }
}

impl Serialize for BitMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<u8>> = self.rows.iter().map(|r| r.iter().map(|&b| b as u8).collect()).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(d)?;
        let rows = rows
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|v| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(D::Error::custom(format!("matrix entry {other} not in {{0,1}}"))),
                    })
                    .collect()
            })
            .collect::<std::result::Result<_, _>>()?;
        BitMatrix::from_rows(rows).map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Applications
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppTransform {
    pub name: String,
    pub linear: BitMatrix,
    pub translation: Vec<SlotDelta>,
}

impl AppTransform {
    pub fn identity(name: &str, n: usize) -> AppTransform {
        AppTransform {
            name: name.to_string(),
            linear: BitMatrix::identity(n),
            translation: vec![SlotDelta::default(); n],
        }
    }

    pub fn new(name: &str, linear: BitMatrix, translation: Vec<SlotDelta>) -> Result<AppTransform> {
        if linear.dim() != translation.len() {
            return Err(Error::DimensionMismatch { left: linear.dim(), right: translation.len() });
        }
        Ok(AppTransform { name: name.to_string(), linear, translation })
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    /// Same transformation under another name.
    pub fn renamed(mut self, name: &str) -> AppTransform {
        self.name = name.to_string();
        self
    }

    /// Structural equality, ignoring names.
    pub fn same_matrix(&self, other: &AppTransform) -> bool {
        self.linear == other.linear && self.translation == other.translation
    }
}

/// Ordered service chain; the first stage is applied first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceChain {
    pub name: String,
    pub stages: Vec<AppTransform>,
}

impl ServiceChain {
    pub fn new(name: &str, stages: Vec<AppTransform>) -> ServiceChain {
        ServiceChain { name: name.to_string(), stages }
    }
}

/// Application that adds `delta` to switch `slot`'s table and leaves every
/// other table alone.
pub fn make_app(name: &str, slot: usize, delta: GuardedDelta, n: usize) -> Result<AppTransform> {
    if slot >= n {
        return Err(Error::IndexOutOfRange { index: slot, len: n });
    }
    let mut app = AppTransform::identity(name, n);
    app.translation[slot] = SlotDelta::single(delta);
    Ok(app)
}

/// `second ∘ first`.
pub fn compose_apps(second: &AppTransform, first: &AppTransform) -> Result<AppTransform> {
    if second.dim() != first.dim() {
        return Err(Error::DimensionMismatch { left: second.dim(), right: first.dim() });
    }
    let n = second.dim();
    let linear = second.linear.mul(&first.linear);
    let translation = (0..n)
        .map(|i| {
            let carried = SlotDelta {
                terms: (0..n)
                    .filter(|&j| second.linear.get(i, j))
                    .flat_map(|j| first.translation[j].terms.iter().cloned())
                    .collect(),
            };
            carried.plus(&second.translation[i])
        })
        .collect();
    Ok(AppTransform { name: format!("{}.{}", second.name, first.name), linear, translation })
}

pub fn chain(stages: &ServiceChain) -> Result<AppTransform> {
    let (first, rest) = stages.stages.split_first().ok_or(Error::EmptyChain)?;
    let mut acc = first.clone();
    for stage in rest {
        acc = compose_apps(stage, &acc)?;
    }
    Ok(acc.renamed(&stages.name))
}

/// `[t'_1 .. t'_n 1]^T = C x [t_1 .. t_n 1]^T`, with guards evaluated
/// against `nib` and `h`.
pub fn apply_transform(a: &AppTransform, nib: &Nib, h: &Header) -> Result<Nib> {
    if a.dim() != nib.switch_count() {
        return Err(Error::DimensionMismatch { left: a.dim(), right: nib.switch_count() });
    }
    let ctx = Ctx { nib, header: h };
    let mut out = Vec::with_capacity(a.dim());
    for i in 0..a.dim() {
        let mut table = FlowTable::empty();
        for (j, t) in nib.tables().iter().enumerate() {
            if a.linear.get(i, j) {
                table = tables::add(&table, t);
            }
        }
        a.translation[i].instantiate(&ctx, &mut table)?;
        out.push(table);
    }
    nib.with_tables(out)
}

/// Canonical form used for congruence. Only rewrites that keep the selected
/// rules unchanged for every NIB and header are applied.
pub fn normalize(a: &AppTransform) -> AppTransform {
    AppTransform {
        name: a.name.clone(),
        linear: a.linear.clone(),
        translation: a.translation.iter().map(SlotDelta::normalized).collect(),
    }
}

pub fn congruent(a: &AppTransform, b: &AppTransform) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(normalize(a).same_matrix(&normalize(b)))
}

pub fn is_translation_only(a: &AppTransform) -> bool {
    a.linear.is_identity() && normalize(a).translation.iter().all(|s| s.terms.iter().all(|t| t.is_unconditional()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{forward, modify_field};
    use crate::nib::{Flow, Topology};

    fn topo() -> Topology {
        Topology::new(2)
            .with_port("p_LB", 1)
            .with_port("p_IDS", 2)
            .with_port("p_s1", 3)
            .with_port("p_s2", 4)
            .with_server(100, "p_s1")
            .with_server(200, "p_s2")
    }

    fn hdr(src: u64, dst: u64) -> Header {
        Header::zero().with(Field::NwSrc, src).unwrap().with(Field::NwDst, dst).unwrap()
    }

    fn nib_with_flows(flows: Vec<Flow>) -> Nib {
        Nib::with_state(topo(), vec![FlowTable::empty(); 2], flows).unwrap()
    }

    fn tpl(port: &str, action: ActionExpr) -> RuleTemplate {
        RuleTemplate::for_input(PortRef::named(port), 30, action)
    }

    fn rule(src: u64, action: AffineAction) -> FlowRule {
        FlowRule::new(MatchPattern::exact(&hdr(src, 0)), 1, 5, action)
    }

    fn ids_delta(nu: u64) -> GuardedDelta {
        GuardedDelta::cases(
            Guard::NsrcLeq { threshold: nu },
            vec![tpl("p_LB", ActionExpr::forward_to("p_LB"))],
            vec![tpl("p_LB", ActionExpr::Drop)],
        )
    }

    #[test]
    fn flow_mod_add_cases() {
        let r = rule(1, forward(2));
        let t = flow_mod_add(&FlowTable::empty(), &r);
        assert_eq!(t.len(), 1);
        assert_eq!(t.iter().next().unwrap().counter, 0);
        assert_eq!(flow_mod_add(&t, &r), t);
    }

    #[test]
    fn flow_mod_delete_cases() {
        let r = rule(1, forward(2));
        let t = flow_mod_add(&FlowTable::empty(), &r);
        assert_eq!(flow_mod_delete(&t, &r).unwrap(), FlowTable::empty());
        assert_eq!(flow_mod_delete(&FlowTable::empty(), &r), Err(Error::NotFound));

        let base = FlowTable::from_entries([FlowEntry::new(rule(2, actions::drop()), 9)]);
        let added = flow_mod_add(&base, &r);
        assert_eq!(flow_mod_delete(&added, &r).unwrap(), base);
        assert!(delete_cancels_by_inverse(&added, &r));
        // drop rules go by direct removal
        let d = rule(2, actions::drop());
        assert!(!delete_cancels_by_inverse(&base, &d));
        assert_eq!(flow_mod_delete(&base, &d).unwrap(), FlowTable::empty());
        // involutive action: r == -r, cancellation impossible
        let inv = rule(3, forward(0x8000));
        let t = flow_mod_add(&FlowTable::empty(), &inv);
        assert!(!delete_cancels_by_inverse(&t, &inv));
        assert_eq!(flow_mod_delete(&t, &inv).unwrap(), FlowTable::empty());
    }

    #[test]
    fn flow_mod_modify_cases() {
        let old = rule(1, forward(2));
        let new = rule(1, forward(3));
        let t = flow_mod_add(&FlowTable::empty(), &old);
        assert_eq!(flow_mod_modify(&t, &old, &new).unwrap(), FlowTable::singleton(FlowEntry::new(new, 0)));

        let t = FlowTable::singleton(FlowEntry::new(old, 12));
        assert_eq!(flow_mod_modify(&t, &old, &old).unwrap(), FlowTable::singleton(FlowEntry::new(old, 0)));
        assert_eq!(flow_mod_modify(&FlowTable::empty(), &old, &new), Err(Error::NotFound));
    }

    #[test]
    fn make_app_layout() {
        let app = make_app("ids", 1, ids_delta(3), 2).unwrap();
        assert!(app.linear.is_identity());
        assert!(app.translation[0].is_empty());
        assert_eq!(app.translation[1], SlotDelta::single(ids_delta(3)));
        assert_eq!(make_app("x", 2, ids_delta(3), 2), Err(Error::IndexOutOfRange { index: 2, len: 2 }));
        let empty = make_app("e", 0, GuardedDelta::default(), 2).unwrap();
        assert!(congruent(&empty, &AppTransform::identity("id", 2)).unwrap());
    }

    #[test]
    fn compose_identity_unit() {
        let a = make_app("ids", 1, ids_delta(3), 2).unwrap();
        let id = AppTransform::identity("id", 2);
        assert!(compose_apps(&id, &a).unwrap().same_matrix(&a));
        assert!(compose_apps(&a, &id).unwrap().same_matrix(&a));
        assert!(compose_apps(&a, &AppTransform::identity("id", 3)).is_err());
    }

    #[test]
    fn chain_cases() {
        assert_eq!(chain(&ServiceChain::new("c", vec![])), Err(Error::EmptyChain));
        let a = make_app("ids", 1, ids_delta(3), 2).unwrap();
        assert!(chain(&ServiceChain::new("c", vec![a.clone()])).unwrap().same_matrix(&a));
    }

    #[test]
    fn apply_identity_is_noop() {
        let t = FlowTable::singleton(FlowEntry::new(rule(1, forward(1)), 4));
        let nib = Nib::with_state(topo(), vec![t, FlowTable::empty()], vec![]).unwrap();
        let out = apply_transform(&AppTransform::identity("id", 2), &nib, &hdr(1, 1)).unwrap();
        assert_eq!(out, nib);
    }

    #[test]
    fn apply_guarded_ids() {
        let app = make_app("ids", 0, ids_delta(1), 2).unwrap();
        let h = hdr(7, 100);
        let fresh = nib_with_flows(vec![Flow::new(h)]);
        let out = apply_transform(&app, &fresh, &h).unwrap();
        let e = out.tables()[0].iter().next().unwrap();
        assert_eq!(e.rule.action, forward(1));
        assert_eq!(e.rule.out_port, 1);
        assert_eq!(e.rule.matcher, MatchPattern::exact(&h));
        assert_eq!(e.counter, 0);

        let busy = nib_with_flows(vec![Flow::new(h), Flow::new(h)]);
        let out = apply_transform(&app, &busy, &h).unwrap();
        assert!(out.tables()[0].iter().next().unwrap().rule.action.is_drop());
        assert!(out.tables()[1].is_empty());
    }

    #[test]
    fn apply_least_loaded_rewrite() {
        let a_mf = ActionExpr::Seq {
            actions: vec![
                ActionExpr::SetLeastLoaded { field: Field::NwDst, servers: [100, 200] },
                ActionExpr::forward_to("p_s1"),
            ],
        };
        let app = make_app("lb", 0, GuardedDelta::unconditional(vec![tpl("p_s1", a_mf)]), 2).unwrap();
        let h = hdr(7, 50);
        // server 100 busier -> rewrite toward 200
        let nib = nib_with_flows(vec![Flow::assigned(hdr(1, 50), 100)]);
        let out = apply_transform(&app, &nib, &h).unwrap();
        let action = out.tables()[0].iter().next().unwrap().rule.action;
        let moved = action.apply(&RuleState::new(h, 0, 0));
        assert_eq!(moved.header.get(Field::NwDst), 200);
        assert_eq!(moved.out_port, 3);
    }

    #[test]
    fn apply_dest_port_and_unresolved() {
        let app = make_app(
            "y",
            1,
            GuardedDelta::unconditional(vec![RuleTemplate::for_input(
                PortRef::Dest,
                1,
                ActionExpr::Forward { delta: 0 },
            )]),
            2,
        )
        .unwrap();
        let nib = nib_with_flows(vec![]);
        let out = apply_transform(&app, &nib, &hdr(1, 200)).unwrap();
        assert_eq!(out.tables()[1].iter().next().unwrap().rule.out_port, 4);
        assert!(matches!(apply_transform(&app, &nib, &hdr(1, 7)), Err(Error::UnresolvedPort(_))));

        let bad = make_app("b", 0, GuardedDelta::unconditional(vec![tpl("p_missing", ActionExpr::Drop)]), 2).unwrap();
        assert_eq!(apply_transform(&bad, &nib, &hdr(1, 1)), Err(Error::UnresolvedPort("p_missing".into())));
    }

    #[test]
    fn apply_linear_union() {
        let t0 = FlowTable::singleton(FlowEntry::new(rule(1, forward(1)), 0));
        let t1 = FlowTable::singleton(FlowEntry::new(rule(2, forward(2)), 0));
        let nib = Nib::with_state(topo(), vec![t0.clone(), t1.clone()], vec![]).unwrap();
        let swap = AppTransform::new(
            "swap",
            BitMatrix::from_rows(vec![vec![false, true], vec![true, true]]).unwrap(),
            vec![SlotDelta::default(); 2],
        )
        .unwrap();
        let out = apply_transform(&swap, &nib, &hdr(0, 0)).unwrap();
        assert_eq!(out.tables()[0], t1);
        assert_eq!(out.tables()[1], tables::add(&t0, &t1));
    }

    #[test]
    fn normalize_collapses_identical_arms() {
        let a_mf = ActionExpr::Seq {
            actions: vec![
                ActionExpr::SetLeastLoaded { field: Field::NwDst, servers: [100, 200] },
                ActionExpr::forward_to("p_IDS"),
            ],
        };
        let arm = vec![tpl("p_IDS", a_mf)];
        let y1_lb =
            make_app("y1-lb", 1, GuardedDelta::cases(Guard::LoadLeq { s1: 100, s2: 200 }, arm.clone(), arm.clone()), 2)
                .unwrap();
        let n = normalize(&y1_lb);
        assert_eq!(n.translation[1], SlotDelta::single(GuardedDelta::unconditional(arm)));
        assert!(is_translation_only(&y1_lb));
    }

    #[test]
    fn normalize_idempotent_and_order_insensitive() {
        let a = vec![tpl("p_LB", ActionExpr::Drop)];
        let b = vec![tpl("p_IDS", ActionExpr::Drop)];
        let d1 = GuardedDelta {
            branches: vec![
                Branch { guard: Guard::LoadLeq { s1: 1, s2: 2 }, rules: a.clone() },
                Branch { guard: Guard::NsrcLeq { threshold: 3 }, rules: a.clone() },
            ],
            default: b.clone(),
        };
        let d2 = GuardedDelta {
            branches: vec![
                Branch { guard: Guard::NsrcLeq { threshold: 3 }, rules: a.clone() },
                Branch { guard: Guard::LoadLeq { s1: 1, s2: 2 }, rules: a.clone() },
            ],
            default: b.clone(),
        };
        let x = make_app("x", 0, d1, 1).unwrap();
        let y = make_app("y", 0, d2, 1).unwrap();
        assert_eq!(normalize(&normalize(&x)), normalize(&x));
        assert!(congruent(&x, &y).unwrap());
    }

    #[test]
    fn normalize_keeps_overlapping_guard_order() {
        let a = vec![tpl("p_LB", ActionExpr::Drop)];
        let b = vec![tpl("p_IDS", ActionExpr::Drop)];
        let c = vec![tpl("p_s1", ActionExpr::Drop)];
        let mk = |first: Guard, fr: &Vec<RuleTemplate>, second: Guard, sr: &Vec<RuleTemplate>| {
            make_app(
                "x",
                0,
                GuardedDelta {
                    branches: vec![
                        Branch { guard: first, rules: fr.clone() },
                        Branch { guard: second, rules: sr.clone() },
                    ],
                    default: c.clone(),
                },
                1,
            )
            .unwrap()
        };
        let x = mk(Guard::NsrcLeq { threshold: 5 }, &a, Guard::NsrcLeq { threshold: 3 }, &b);
        let y = mk(Guard::NsrcLeq { threshold: 3 }, &b, Guard::NsrcLeq { threshold: 5 }, &a);
        // x never reaches its second arm; y does. Not the same map.
        assert!(!congruent(&x, &y).unwrap());
        assert_eq!(normalize(&x).translation[0].terms[0].branches.len(), 1);
        assert_eq!(normalize(&y).translation[0].terms[0].branches.len(), 2);
    }

    #[test]
    fn normalize_true_guard_becomes_default() {
        let a = vec![tpl("p_LB", ActionExpr::Drop)];
        let d = GuardedDelta {
            branches: vec![
                Branch { guard: Guard::True, rules: a.clone() },
                Branch { guard: Guard::NsrcLeq { threshold: 1 }, rules: vec![] },
            ],
            default: vec![],
        };
        let x = make_app("x", 0, d, 1).unwrap();
        let y = make_app("y", 0, GuardedDelta::unconditional(a), 1).unwrap();
        assert!(congruent(&x, &y).unwrap());
    }

    #[test]
    fn congruence_basics() {
        let a = make_app("ids", 1, ids_delta(3), 2).unwrap();
        assert!(congruent(&a, &a).unwrap());
        let b = make_app("ids", 1, ids_delta(4), 2).unwrap();
        assert!(!congruent(&a, &b).unwrap());
        assert!(congruent(&a, &AppTransform::identity("i", 3)).is_err());

        let u = make_app("u", 0, GuardedDelta::unconditional(vec![tpl("p_LB", ActionExpr::forward_to("p_LB"))]), 2)
            .unwrap();
        let v = make_app("v", 0, GuardedDelta::unconditional(vec![tpl("p_s1", ActionExpr::Drop)]), 2).unwrap();
        let uv = compose_apps(&u, &v).unwrap();
        let vu = compose_apps(&v, &u).unwrap();
        assert!(!uv.same_matrix(&vu));
        assert!(congruent(&uv, &vu).unwrap());
    }

    #[test]
    fn translation_only_cases() {
        assert!(is_translation_only(&AppTransform::identity("id", 2)));
        assert!(!is_translation_only(&make_app("ids", 1, ids_delta(3), 2).unwrap()));
        let add = make_app("add", 0, GuardedDelta::unconditional(vec![tpl("p_LB", ActionExpr::Drop)]), 2).unwrap();
        assert!(is_translation_only(&add));
    }

    #[test]
    fn literal_match_template() {
        let p = MatchPattern::wildcard().with_exact(Field::TpDst, 22).unwrap();
        let t = RuleTemplate {
            matcher: MatchSource::Literal(p),
            out_port: PortRef::Number(9),
            ttl: 0,
            action: ActionExpr::Modify { field: Field::TpDst, delta: 1 },
            counter: 0,
        };
        let app = make_app("lit", 0, GuardedDelta::unconditional(vec![t]), 1).unwrap();
        let nib = Nib::new(Topology::new(1));
        let out = apply_transform(&app, &nib, &hdr(1, 1)).unwrap();
        let e = out.tables()[0].iter().next().unwrap();
        assert_eq!(e.rule.matcher, p);
        assert_eq!(e.rule.out_port, 9);
        assert_eq!(e.rule.action, modify_field(Field::TpDst, 1).unwrap());
    }

    #[test]
    fn template_serialization() {
        let json = r#"{"match":"input","out_port":"@dest","ttl":3,"action":{"kind":"seq","actions":[{"kind":"set","field":"nw_dst","value":5},{"kind":"forward_to","port":"p_s1"}]}}"#;
        let t: RuleTemplate = serde_json::from_str(json).unwrap();
        assert_eq!(t.out_port, PortRef::Dest);
        assert_eq!(t.matcher, MatchSource::InputHeader);
        let back: RuleTemplate = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<RuleTemplate>(
            r#"{"match":"output","out_port":1,"ttl":1,"action":{"kind":"drop"}}"#
        )
        .is_err());
        assert!(serde_json::from_str::<RuleTemplate>(
            r#"{"match":"input","out_port":"@nope","ttl":1,"action":{"kind":"drop"}}"#
        )
        .is_err());
        let g: Guard = serde_json::from_str(r#"{"kind":"nsrc_leq","threshold":4}"#).unwrap();
        assert_eq!(g, Guard::NsrcLeq { threshold: 4 });
        let m: BitMatrix = serde_json::from_str("[[1,0],[0,1]]").unwrap();
        assert!(m.is_identity());
        assert!(serde_json::from_str::<BitMatrix>("[[2]]").is_err());
        assert!(serde_json::from_str::<BitMatrix>("[[1,0]]").is_err());
    }
}
