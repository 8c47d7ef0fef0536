//! Two switches, an IDS and a load balancer, composed in both orders.
//!
//! The IDS forwards a flow toward the load balancer while its source has at
//! most `nu` observed flows and drops it otherwise. The load balancer
//! rewrites the destination to the less-loaded of two servers and forwards
//! toward that server.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headers::{Field, Header};
use crate::nib::{Flow, Topology};
use crate::scenario::{AppSpec, Query, ScenarioFile, FORMAT_VERSION};
use crate::transforms::{make_app, ActionExpr, Guard, GuardedDelta, PortRef, RuleTemplate, ServiceChain};

pub const SWITCHES: usize = 2;

/// Slot of the LB delta in the IDS-first chain.
pub const X_LB_SLOT: usize = 0;
/// Slot of the IDS delta in the IDS-first chain.
pub const X_IDS_SLOT: usize = 1;
/// Slot of the IDS deltas in the LB-first chain.
pub const Y_IDS_SLOT: usize = 0;
/// Slot of the LB deltas in the LB-first chain.
pub const Y_LB_SLOT: usize = 1;

pub const X_CHAIN: &str = "ids-lb";
pub const Y_CHAIN: &str = "lb-ids";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortNames {
    pub lb: String,
    pub ids: String,
    pub s1: String,
    pub s2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyConfig {
    /// IDS threshold on flows per source.
    pub nu: u64,
    pub servers: (u64, u64),
    pub port_names: PortNames,
    /// Port numbers in the order lb, ids, s1, s2.
    pub port_numbers: [u16; 4],
    pub ttl: u16,
}

impl Default for CaseStudyConfig {
    fn default() -> CaseStudyConfig {
        CaseStudyConfig {
            nu: 3,
            servers: (0x0a00_0101, 0x0a00_0102),
            port_names: PortNames { lb: "p_LB".into(), ids: "p_IDS".into(), s1: "p_s1".into(), s2: "p_s2".into() },
            port_numbers: [1, 2, 3, 4],
            ttl: 30,
        }
    }
}

impl CaseStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.servers.0 == self.servers.1 {
            return Err(Error::Scenario("case study servers must differ".into()));
        }
        let n = &self.port_names;
        let mut names = vec![&n.lb, &n.ids, &n.s1, &n.s2];
        names.sort();
        names.dedup();
        if names.len() != 4 {
            return Err(Error::Scenario("case study port names must differ".into()));
        }
        Ok(())
    }

    pub fn topology(&self) -> Topology {
        let n = &self.port_names;
        let [lb, ids, s1, s2] = self.port_numbers;
        Topology::new(SWITCHES)
            .with_port(&n.lb, lb)
            .with_port(&n.ids, ids)
            .with_port(&n.s1, s1)
            .with_port(&n.s2, s2)
            .with_server(self.servers.0, &n.s1)
            .with_server(self.servers.1, &n.s2)
    }

    /// `<h, port, ttl, forward(port)>`.
    pub fn forward_rule(&self, port: &str) -> RuleTemplate {
        RuleTemplate::for_input(PortRef::named(port), self.ttl, ActionExpr::forward_to(port))
    }

    /// `<h, port, ttl, drop>`.
    pub fn drop_rule(&self, port: &str) -> RuleTemplate {
        RuleTemplate::for_input(PortRef::named(port), self.ttl, ActionExpr::Drop)
    }

    /// `<h, port, ttl, rewrite dest to least-loaded server; forward(port)>`.
    pub fn balance_rule(&self, port: &str) -> RuleTemplate {
        let action = ActionExpr::Seq {
            actions: vec![
                ActionExpr::SetLeastLoaded { field: Field::NwDst, servers: [self.servers.0, self.servers.1] },
                ActionExpr::forward_to(port),
            ],
        };
        RuleTemplate::for_input(PortRef::named(port), self.ttl, action)
    }

    /// `<h, port of DEST(h), ttl, forward(that port)>`.
    pub fn dest_rule(&self) -> RuleTemplate {
        RuleTemplate::for_input(PortRef::Dest, self.ttl, ActionExpr::ForwardTo { port: PortRef::Dest })
    }

    fn ids_guard(&self) -> Guard {
        Guard::NsrcLeq { threshold: self.nu }
    }

    fn load_guard(&self) -> Guard {
        Guard::LoadLeq { s1: self.servers.0, s2: self.servers.1 }
    }

    /// IDS in the IDS-first chain: forward to the LB or drop.
    pub fn x_ids(&self) -> GuardedDelta {
        let lb = &self.port_names.lb;
        GuardedDelta::cases(self.ids_guard(), vec![self.forward_rule(lb)], vec![self.drop_rule(lb)])
    }

    /// LB in the IDS-first chain: balance toward whichever server is chosen.
    pub fn x_lb(&self) -> GuardedDelta {
        let n = &self.port_names;
        GuardedDelta::cases(self.load_guard(), vec![self.balance_rule(&n.s1)], vec![self.balance_rule(&n.s2)])
    }

    /// First IDS visit in the LB-first chain: pass everything to the LB.
    pub fn y1_ids(&self) -> GuardedDelta {
        GuardedDelta::unconditional(vec![self.forward_rule(&self.port_names.lb)])
    }

    /// First LB visit in the LB-first chain: balance, then hand back to the IDS.
    pub fn y1_lb(&self) -> GuardedDelta {
        let ids = &self.port_names.ids;
        GuardedDelta::cases(self.load_guard(), vec![self.balance_rule(ids)], vec![self.balance_rule(ids)])
    }

    /// Second IDS visit in the LB-first chain.
    pub fn y2_ids(&self) -> GuardedDelta {
        self.x_ids()
    }

    /// Second LB visit in the LB-first chain: deliver to the chosen server.
    pub fn y2_lb(&self) -> GuardedDelta {
        GuardedDelta::unconditional(vec![self.dest_rule()])
    }

    fn app_specs(&self) -> Vec<AppSpec> {
        let spec = |name: &str, slot, delta| AppSpec { name: name.into(), slot, delta };
        vec![
            spec("ids", X_IDS_SLOT, self.x_ids()),
            spec("lb", X_LB_SLOT, self.x_lb()),
            spec("y1-ids", Y_IDS_SLOT, self.y1_ids()),
            spec("y1-lb", Y_LB_SLOT, self.y1_lb()),
            spec("y2-ids", Y_IDS_SLOT, self.y2_ids()),
            spec("y2-lb", Y_LB_SLOT, self.y2_lb()),
        ]
    }

    fn chain_names(&self) -> BTreeMap<String, Vec<String>> {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        BTreeMap::from([
            (X_CHAIN.to_string(), names(&["ids", "lb"])),
            (Y_CHAIN.to_string(), names(&["y1-ids", "y1-lb", "y2-ids", "y2-lb"])),
        ])
    }

    /// A source with more than `nu` observed flows, and a fresh source.
    pub fn sample_headers(&self) -> (Header, Header) {
        let base = Header::zero().with(Field::DlType, 0x0800).and_then(|h| h.with(Field::NwProto, 6)).expect("fits");
        let mk =
            |src: u64| base.with(Field::NwSrc, src).and_then(|h| h.with(Field::NwDst, self.servers.0)).expect("fits");
        (mk(0x0a01_0001), mk(0x0a01_0002))
    }

    /// Bundled scenario: empty tables, `nu + 1` flows from one busy source,
    /// and a query for each chain and header.
    pub fn scenario_file(&self) -> Result<ScenarioFile> {
        self.validate()?;
        let (busy, fresh) = self.sample_headers();
        let flows = (0..=self.nu).map(|_| Flow::new(busy)).collect();
        let queries = [X_CHAIN, Y_CHAIN]
            .iter()
            .flat_map(|c| [busy, fresh].map(|h| Query { chain: c.to_string(), header: h }))
            .collect();
        Ok(ScenarioFile {
            version: FORMAT_VERSION,
            topology: self.topology(),
            tables: Vec::new(),
            flows,
            apps: self.app_specs(),
            chains: self.chain_names(),
            queries,
        })
    }
}

fn app(cfg: &CaseStudyConfig, name: &str) -> Result<crate::transforms::AppTransform> {
    let spec = cfg.app_specs().into_iter().find(|s| s.name == name).expect("known app");
    make_app(&spec.name, spec.slot, spec.delta, SWITCHES)
}

/// IDS then LB.
pub fn build_x_chain(cfg: &CaseStudyConfig) -> Result<ServiceChain> {
    cfg.validate()?;
    Ok(ServiceChain::new(X_CHAIN, vec![app(cfg, "ids")?, app(cfg, "lb")?]))
}

/// LB then IDS, with traffic passing each box twice.
pub fn build_y_chain(cfg: &CaseStudyConfig) -> Result<ServiceChain> {
    cfg.validate()?;
    let stages = ["y1-ids", "y1-lb", "y2-ids", "y2-lb"].iter().map(|n| app(cfg, n)).collect::<Result<_>>()?;
    Ok(ServiceChain::new(Y_CHAIN, stages))
}
