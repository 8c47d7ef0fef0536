//! Scenario files: a topology, initial NIB, named applications and chains.
//!
//! The format is JSON with a `"version": 1` field. Unknown fields are
//! rejected anywhere in the document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headers::Header;
use crate::nib::{Flow, Nib, Topology};
use crate::tables::FlowTable;
use crate::transforms::{make_app, ActionExpr, AppTransform, GuardedDelta, PortRef, RuleTemplate, ServiceChain};

pub const FORMAT_VERSION: u32 = 1;

/// Application adding `delta` to one switch's table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub name: String,
    pub slot: usize,
    pub delta: GuardedDelta,
}

/// A header to push through a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub chain: String,
    pub header: Header,
}

/// On-disk form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub topology: Topology,
    /// One table per switch; an empty list means all tables start empty.
    #[serde(default)]
    pub tables: Vec<FlowTable>,
    #[serde(default)]
    pub flows: Vec<Flow>,
    #[serde(default)]
    pub apps: Vec<AppSpec>,
    /// Chain name to app names, first applied first.
    #[serde(default)]
    pub chains: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<Query>,
}

impl ScenarioFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

/// Resolved scenario with every name checked.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub nib: Nib,
    pub apps: BTreeMap<String, AppTransform>,
    pub chains: BTreeMap<String, ServiceChain>,
    pub queries: Vec<Query>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        Scenario::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Scenario> {
        if file.version != FORMAT_VERSION {
            return Err(Error::Scenario(format!("unsupported version {}", file.version)));
        }
        let topo = file.topology;
        topo.validate()?;
        let n = topo.switches;
        let tables = if file.tables.is_empty() { vec![FlowTable::empty(); n] } else { file.tables };
        let nib = Nib::with_state(topo, tables, file.flows)?;

        let mut apps = BTreeMap::new();
        for spec in file.apps {
            check_ports(nib.topology(), &spec)?;
            let app = make_app(&spec.name, spec.slot, spec.delta, n)?;
            if apps.insert(spec.name.clone(), app).is_some() {
                return Err(Error::Scenario(format!("duplicate app `{}`", spec.name)));
            }
        }

        let mut chains = BTreeMap::new();
        for (name, stages) in file.chains {
            if stages.is_empty() {
                return Err(Error::EmptyChain);
            }
            let stages = stages
                .iter()
                .map(|s| {
                    apps.get(s).cloned().ok_or_else(|| Error::Scenario(format!("chain `{name}`: unknown app `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            chains.insert(name.clone(), ServiceChain::new(&name, stages));
        }

        for q in &file.queries {
            if !chains.contains_key(&q.chain) {
                return Err(Error::Scenario(format!("query names unknown chain `{}`", q.chain)));
            }
        }
        Ok(Scenario { nib, apps, chains, queries: file.queries })
    }

    pub fn chain(&self, name: &str) -> Result<&ServiceChain> {
        self.chains.get(name).ok_or_else(|| Error::Scenario(format!("unknown chain `{name}`")))
    }
}

fn check_ports(topo: &Topology, spec: &AppSpec) -> Result<()> {
    fn in_action(topo: &Topology, a: &ActionExpr) -> Result<()> {
        match a {
            ActionExpr::ForwardTo { port: PortRef::Named(p) } => topo.port(p).map(|_| ()),
            ActionExpr::Seq { actions } => actions.iter().try_for_each(|a| in_action(topo, a)),
            _ => Ok(()),
        }
    }
    let check = |t: &RuleTemplate| -> Result<()> {
        if let PortRef::Named(p) = &t.out_port {
            topo.port(p)?;
        }
        in_action(topo, &t.action)
    };
    spec.delta.branches.iter().flat_map(|b| b.rules.iter()).chain(&spec.delta.default).try_for_each(check)
}
