//! Seeded generators for tables, actions, applications and NIB scenarios.
//!
//! Everything is driven by a ChaCha stream, so a seed fully determines the
//! generated values across runs and platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::{self, AffineAction};
use crate::headers::{width_mask, Field, Header, MatchPattern, FIELD_COUNT};
use crate::nib::{Flow, Nib, Topology};
use crate::tables::{FlowEntry, FlowRule, FlowTable};
use crate::transforms::{
    make_app, ActionExpr, AppTransform, BitMatrix, Branch, Guard, GuardedDelta, MatchSource, PortRef, RuleTemplate,
    SlotDelta,
};

pub const DEFAULT_SEED: u64 = 0x5eed_0f10;

/// Which actions a generated rule may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMix {
    /// Forward / modify compositions plus the occasional drop.
    Any,
    /// Invertible actions only.
    Invertible,
    /// Invertible actions whose inverse differs from themselves.
    NonInvolutive,
    /// Only involutions (self-inverse, including the identity).
    Involutive,
    Drop,
}

pub struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    pub fn new(seed: u64) -> Gen {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Uniform value per field over the field's full width.
    pub fn header(&mut self) -> Header {
        let values: Vec<u64> = Field::ALL.iter().map(|f| self.rng.gen::<u64>() & width_mask(f.width())).collect();
        Header::new(&values).expect("masked")
    }

    /// Header drawn uniformly per field from a small domain, so that
    /// matches and sources collide often.
    pub fn small_header(&mut self, domain: u64) -> Header {
        let values: Vec<u64> =
            Field::ALL.iter().map(|f| self.rng.gen_range(0..domain) & width_mask(f.width())).collect();
        Header::new(&values).expect("masked")
    }

    fn translation(&mut self) -> AffineAction {
        let mut a = AffineAction::identity();
        for _ in 0..self.rng.gen_range(1..=3) {
            let step = if self.rng.gen_bool(0.4) {
                actions::forward(self.rng.gen())
            } else {
                let field = Field::ALL[self.rng.gen_range(0..FIELD_COUNT)];
                actions::modify_field(field, self.rng.gen::<u64>() & width_mask(field.width())).expect("masked")
            };
            a = actions::compose(&step, &a);
        }
        a
    }

    fn involution(&mut self) -> AffineAction {
        match self.rng.gen_range(0..3) {
            0 => AffineAction::identity(),
            1 => actions::forward(0x8000),
            _ => {
                let field = Field::ALL[self.rng.gen_range(0..FIELD_COUNT)];
                actions::modify_field(field, 1 << (field.width() - 1)).expect("in range")
            }
        }
    }

    pub fn action(&mut self, mix: ActionMix) -> AffineAction {
        match mix {
            ActionMix::Any => {
                if self.rng.gen_bool(0.2) {
                    actions::drop()
                } else {
                    self.translation()
                }
            }
            ActionMix::Invertible => {
                if self.rng.gen_bool(0.1) {
                    self.involution()
                } else {
                    self.translation()
                }
            }
            ActionMix::NonInvolutive => loop {
                let a = self.translation();
                if !a.is_involution() {
                    return a;
                }
            },
            ActionMix::Involutive => self.involution(),
            ActionMix::Drop => actions::drop(),
        }
    }

    /// Rule whose match, port and ttl come from small pools.
    pub fn rule(&mut self, mix: ActionMix) -> FlowRule {
        let h = self.small_header(3);
        let matcher = if self.rng.gen_bool(0.5) {
            MatchPattern::exact(&h)
        } else {
            MatchPattern::wildcard().with_exact(Field::NwSrc, h.src()).expect("in range")
        };
        FlowRule::new(matcher, self.rng.gen_range(1..4), self.rng.gen_range(0..3) * 30, self.action(mix))
    }

    pub fn table(&mut self, max_entries: usize, mix: ActionMix) -> FlowTable {
        let n = self.rng.gen_range(0..=max_entries);
        (0..n).map(|_| FlowEntry::new(self.rule(mix), self.rng.gen_range(0..3))).collect()
    }

    pub fn nonempty_table(&mut self, max_entries: usize, mix: ActionMix) -> FlowTable {
        loop {
            let t = self.table(max_entries.max(1), mix);
            if !t.is_empty() {
                return t;
            }
        }
    }

    /// Table with some `{r, -r}` pairs planted among random entries.
    pub fn table_with_inverse_pairs(&mut self, max_entries: usize) -> FlowTable {
        let mut t = self.table(max_entries / 2, ActionMix::Any);
        while t.len() + 2 <= max_entries && self.rng.gen_bool(0.5) {
            let r = self.rule(ActionMix::Invertible);
            t.insert(FlowEntry::new(r, self.rng.gen_range(0..3)));
            t.insert(FlowEntry::new(r.negate().expect("invertible"), self.rng.gen_range(0..3)));
        }
        t
    }

    /// Observed flows, sources from `sources`, destinations from `dests`.
    pub fn flows(&mut self, max: usize, sources: &[u64], dests: &[u64]) -> Vec<Flow> {
        let n = self.rng.gen_range(0..=max);
        (0..n)
            .map(|_| {
                let h = self.header_for(sources, dests);
                if self.rng.gen_bool(0.5) {
                    Flow::assigned(h, *dests.choose(&mut self.rng).expect("non-empty"))
                } else {
                    Flow::new(h)
                }
            })
            .collect()
    }

    /// Uniform header whose source and destination come from the pools.
    pub fn header_for(&mut self, sources: &[u64], dests: &[u64]) -> Header {
        self.header()
            .with(Field::NwSrc, *sources.choose(&mut self.rng).expect("non-empty"))
            .and_then(|h| h.with(Field::NwDst, *dests.choose(&mut self.rng).expect("non-empty")))
            .expect("pool values fit")
    }

    pub fn bit_matrix(&mut self, n: usize, density: f64) -> BitMatrix {
        let rows = (0..n).map(|_| (0..n).map(|_| self.rng.gen_bool(density)).collect()).collect();
        BitMatrix::from_rows(rows).expect("square")
    }
}

/// Generates applications and scenarios that fit one topology.
pub struct AppGen<'a> {
    pub topology: &'a Topology,
    port_names: Vec<String>,
    servers: Vec<u64>,
    sources: Vec<u64>,
}

impl<'a> AppGen<'a> {
    pub fn new(topology: &'a Topology) -> AppGen<'a> {
        let mut servers: Vec<u64> = topology.servers.iter().map(|s| s.address).collect();
        if servers.is_empty() {
            servers = vec![0x0a00_0064, 0x0a00_00c8];
        }
        AppGen {
            topology,
            port_names: topology.ports.keys().cloned().collect(),
            servers,
            sources: vec![0x0a01_0001, 0x0a01_0002, 0x0a01_0003],
        }
    }

    fn port_ref(&self, g: &mut Gen) -> PortRef {
        let roll = g.rng.gen_range(0..10);
        if roll == 0 && !self.topology.servers.is_empty() {
            PortRef::Dest
        } else if roll < 7 && !self.port_names.is_empty() {
            PortRef::Named(self.port_names.choose(&mut g.rng).expect("non-empty").clone())
        } else {
            PortRef::Number(g.rng.gen_range(1..5))
        }
    }

    fn action_expr(&self, g: &mut Gen, depth: u32) -> ActionExpr {
        match g.rng.gen_range(0..if depth == 0 { 7 } else { 6 }) {
            0 => ActionExpr::Forward { delta: g.rng.gen_range(0..4) },
            1 => ActionExpr::ForwardTo { port: self.port_ref(g) },
            2 => ActionExpr::Drop,
            3 => ActionExpr::Modify { field: Field::TpDst, delta: g.rng.gen_range(0..3) },
            4 => ActionExpr::Set { field: Field::NwDst, value: *self.servers.choose(&mut g.rng).expect("non-empty") },
            5 => ActionExpr::SetLeastLoaded {
                field: Field::NwDst,
                servers: [self.servers[0], *self.servers.last().unwrap()],
            },
            _ => ActionExpr::Seq {
                actions: (0..g.rng.gen_range(0..3)).map(|_| self.action_expr(g, depth + 1)).collect(),
            },
        }
    }

    pub fn template(&self, g: &mut Gen) -> RuleTemplate {
        let matcher = if g.rng.gen_bool(0.8) {
            MatchSource::InputHeader
        } else {
            MatchSource::Literal(
                MatchPattern::wildcard().with_exact(Field::TpDst, g.rng.gen_range(0..3)).expect("fits"),
            )
        };
        RuleTemplate {
            matcher,
            out_port: self.port_ref(g),
            ttl: g.rng.gen_range(0..2) * 30,
            action: self.action_expr(g, 0),
            counter: 0,
        }
    }

    fn templates(&self, g: &mut Gen, max: usize) -> Vec<RuleTemplate> {
        (0..g.rng.gen_range(0..=max)).map(|_| self.template(g)).collect()
    }

    pub fn guard(&self, g: &mut Gen) -> Guard {
        match g.rng.gen_range(0..5) {
            0 => Guard::True,
            1 | 2 => Guard::NsrcLeq { threshold: g.rng.gen_range(0..4) },
            _ => {
                let s1 = *self.servers.choose(&mut g.rng).expect("non-empty");
                let s2 = *self.servers.choose(&mut g.rng).expect("non-empty");
                Guard::LoadLeq { s1, s2 }
            }
        }
    }

    pub fn guarded_delta(&self, g: &mut Gen) -> GuardedDelta {
        let branches =
            (0..g.rng.gen_range(0..3)).map(|_| Branch { guard: self.guard(g), rules: self.templates(g, 2) }).collect();
        GuardedDelta { branches, default: self.templates(g, 2) }
    }

    /// Single-slot application with identity linear part.
    pub fn app(&self, g: &mut Gen, name: &str) -> AppTransform {
        let n = self.topology.switches;
        make_app(name, g.rng.gen_range(0..n), self.guarded_delta(g), n).expect("slot in range")
    }

    /// Single-slot application adding an unconditional delta.
    pub fn translation_app(&self, g: &mut Gen, name: &str) -> AppTransform {
        let n = self.topology.switches;
        let delta = GuardedDelta::unconditional(self.templates(g, 3));
        make_app(name, g.rng.gen_range(0..n), delta, n).expect("slot in range")
    }

    /// Application with a random linear part and random slot deltas.
    pub fn general_app(&self, g: &mut Gen, name: &str) -> AppTransform {
        let n = self.topology.switches;
        let linear = if g.rng.gen_bool(0.5) { BitMatrix::identity(n) } else { g.bit_matrix(n, 0.4) };
        let translation = (0..n)
            .map(|_| {
                if g.rng.gen_bool(0.4) {
                    SlotDelta::default()
                } else {
                    SlotDelta { terms: (0..g.rng.gen_range(1..3)).map(|_| self.guarded_delta(g)).collect() }
                }
            })
            .collect();
        AppTransform::new(name, linear, translation).expect("square")
    }

    /// A structurally different application with the same behavior,
    /// built only from rewrites that keep every selected rule set.
    pub fn equivalent_variant(&self, g: &mut Gen, a: &AppTransform) -> AppTransform {
        let mut out = a.clone();
        for slot in &mut out.translation {
            let mut terms = Vec::new();
            for term in &slot.terms {
                let mut t = term.clone();
                for b in &mut t.branches {
                    b.rules.reverse();
                    if let Some(first) = b.rules.first().cloned() {
                        if g.rng.gen_bool(0.3) {
                            b.rules.push(first);
                        }
                    }
                }
                t.default.reverse();
                if g.rng.gen_bool(0.3) {
                    // trailing branch equal to the default
                    t.branches.push(Branch { guard: self.guard(g), rules: t.default.clone() });
                }
                if let Some(b) = t.branches.first().cloned() {
                    if g.rng.gen_bool(0.3) {
                        // shadowed by the identical guard in front of it
                        t.branches.insert(1, Branch { guard: b.guard, rules: self.templates(g, 1) });
                    }
                }
                if t.branches.is_empty() && t.default.len() > 1 && g.rng.gen_bool(0.5) {
                    let tail = t.default.split_off(1);
                    terms.push(GuardedDelta::unconditional(tail));
                }
                terms.push(t);
            }
            terms.reverse();
            if g.rng.gen_bool(0.2) {
                if let Some(t) = terms.first().cloned() {
                    terms.push(t);
                }
            }
            slot.terms = terms;
        }
        out
    }

    /// Random NIB state over the topology plus an incoming header.
    pub fn scenario(&self, g: &mut Gen) -> (Nib, Header) {
        let tables = (0..self.topology.switches).map(|_| g.table(4, ActionMix::Any)).collect();
        let flows = g.flows(20, &self.sources, &self.servers);
        let nib = Nib::with_state(self.topology.clone(), tables, flows).expect("table count matches");
        let h = g.header_for(&self.sources, &self.servers);
        (nib, h)
    }

    pub fn scenarios(&self, g: &mut Gen, count: usize) -> Vec<(Nib, Header)> {
        (0..count).map(|_| self.scenario(g)).collect()
    }
}
