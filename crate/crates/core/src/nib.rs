//! The network information base: one flow table per switch plus the set of
//! observed flows the applications' statistics read from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headers::{Field, Header};
use crate::tables::FlowTable;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerPort {
    pub address: u64,
    pub port: String,
}

/// Static topology: switch count, named ports and server attachment points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub switches: usize,
    #[serde(default)]
    pub ports: BTreeMap<String, u16>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub servers: Vec<ServerPort>,
}

impl Topology {
    pub fn new(switches: usize) -> Topology {
        Topology { switches, ports: BTreeMap::new(), servers: Vec::new() }
    }

    pub fn with_port(mut self, name: &str, number: u16) -> Topology {
        self.ports.insert(name.to_string(), number);
        self
    }

    pub fn with_server(mut self, address: u64, port: &str) -> Topology {
        self.servers.push(ServerPort { address, port: port.to_string() });
        self
    }

    pub fn port(&self, name: &str) -> Result<u16> {
        self.ports.get(name).copied().ok_or_else(|| Error::UnresolvedPort(name.to_string()))
    }

    /// Port of the server reachable at `address`.
    pub fn server_port(&self, address: u64) -> Result<u16> {
        let server = self
            .servers
            .iter()
            .find(|s| s.address == address)
            .ok_or_else(|| Error::UnresolvedPort(format!("server {address}")))?;
        self.port(&server.port)
    }

    pub fn validate(&self) -> Result<()> {
        if self.switches == 0 {
            return Err(Error::Scenario("topology needs at least one switch".into()));
        }
        for s in &self.servers {
            self.port(&s.port)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flow {
    pub header: Header,
    /// Server address picked by a load balancer, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_dest: Option<u64>,
}

impl Flow {
    pub fn new(header: Header) -> Flow {
        Flow { header, assigned_dest: None }
    }

    pub fn assigned(header: Header, dest: u64) -> Flow {
        Flow { header, assigned_dest: Some(dest) }
    }

    pub fn effective_dest(&self) -> u64 {
        self.assigned_dest.unwrap_or_else(|| self.header.dest())
    }
}

/// `[t_1, ..., t_n, 1]`. The trailing homogeneous slot is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NibVector {
    pub tables: Vec<FlowTable>,
}

impl NibVector {
    /// Length including the homogeneous slot.
    pub fn len(&self) -> usize {
        self.tables.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nib {
    topology: Topology,
    tables: Vec<FlowTable>,
    flows: Vec<Flow>,
}

impl Nib {
    pub fn new(topology: Topology) -> Nib {
        let tables = vec![FlowTable::empty(); topology.switches];
        Nib { topology, tables, flows: Vec::new() }
    }

    pub fn with_state(topology: Topology, tables: Vec<FlowTable>, flows: Vec<Flow>) -> Result<Nib> {
        if tables.len() != topology.switches {
            return Err(Error::DimensionMismatch { left: topology.switches, right: tables.len() });
        }
        Ok(Nib { topology, tables, flows })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn switch_count(&self) -> usize {
        self.tables.len()
    }

    pub fn tables(&self) -> &[FlowTable] {
        &self.tables
    }

    pub fn table(&self, switch: usize) -> Result<&FlowTable> {
        self.tables.get(switch).ok_or(Error::IndexOutOfRange { index: switch, len: self.tables.len() })
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    /// Copy of `self` with switch `switch`'s table replaced.
    pub fn with_table(&self, switch: usize, table: FlowTable) -> Result<Nib> {
        self.table(switch)?;
        let mut out = self.clone();
        out.tables[switch] = table;
        Ok(out)
    }

    /// Copy of `self` with every table replaced; the count must not change.
    pub fn with_tables(&self, tables: Vec<FlowTable>) -> Result<Nib> {
        if tables.len() != self.tables.len() {
            return Err(Error::DimensionMismatch { left: self.tables.len(), right: tables.len() });
        }
        Ok(Nib { tables, ..self.clone() })
    }

    pub fn vector(&self) -> NibVector {
        nib_vector(self)
    }

    pub fn from_vector(&self, v: NibVector) -> Result<Nib> {
        self.with_tables(v.tables)
    }

    /// Destination the network will actually use for `h`: the assignment
    /// of the latest recorded flow with this exact header, else `DEST(h)`.
    pub fn effective_dest_of(&self, h: &Header) -> u64 {
        self.flows.iter().rev().find(|f| f.header == *h).and_then(|f| f.assigned_dest).unwrap_or_else(|| h.dest())
    }
}

pub fn nib_vector(nib: &Nib) -> NibVector {
    NibVector { tables: nib.tables.clone() }
}

/// `N(h)`: observed flows sharing `h`'s source address.
pub fn count_by_src(nib: &Nib, h: &Header) -> usize {
    let src = h.get(Field::NwSrc);
    nib.flows.iter().filter(|f| f.header.src() == src).count()
}

/// `L(s)`: observed flows whose effective destination is `s`.
pub fn count_by_dest(nib: &Nib, s: u64) -> usize {
    nib.flows.iter().filter(|f| f.effective_dest() == s).count()
}

pub fn record_flow(nib: &Nib, f: Flow) -> Nib {
    let mut out = nib.clone();
    out.flows.push(f);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(src: u64, dst: u64) -> Flow {
        Flow::new(Header::zero().with(Field::NwSrc, src).unwrap().with(Field::NwDst, dst).unwrap())
    }

    fn nib_with(flows: Vec<Flow>) -> Nib {
        Nib::with_state(Topology::new(2), vec![FlowTable::empty(); 2], flows).unwrap()
    }

    #[test]
    fn vector_shape() {
        let nib = Nib::new(Topology::new(2));
        let v = nib_vector(&nib);
        assert_eq!(v.tables, vec![FlowTable::empty(), FlowTable::empty()]);
        assert_eq!(v.len(), 3);
        assert_eq!(nib.from_vector(v).unwrap(), nib);
        assert!(nib.from_vector(NibVector { tables: vec![] }).is_err());
    }

    #[test]
    fn count_by_src_cases() {
        let h = flow(1, 0).header;
        assert_eq!(count_by_src(&nib_with(vec![]), &h), 0);
        let nib = nib_with(vec![flow(1, 10), flow(1, 11), flow(1, 12), flow(2, 10), flow(3, 10)]);
        assert_eq!(count_by_src(&nib, &h), 3);
        let nib = nib_with(vec![flow(1, 0), flow(2, 0), flow(3, 0)]);
        assert_eq!(count_by_src(&nib, &flow(2, 99).header), 1);
    }

    #[test]
    fn count_by_dest_cases() {
        assert_eq!(count_by_dest(&nib_with(vec![]), 5), 0);
        let virt = flow(1, 100).header;
        let nib = nib_with(vec![Flow::assigned(virt, 5), Flow::assigned(virt, 5), Flow::assigned(virt, 6)]);
        assert_eq!(count_by_dest(&nib, 5), 2);
        assert_eq!(count_by_dest(&nib, 6), 1);
        assert_eq!(count_by_dest(&nib, 100), 0);
        assert_eq!(count_by_dest(&nib, 7), 0);
    }

    #[test]
    fn record_flow_cases() {
        let nib = Nib::new(Topology::new(1));
        let once = record_flow(&nib, flow(4, 4));
        assert_eq!(once.flows().len(), 1);
        assert_eq!(once.tables(), nib.tables());
        let mut acc = nib.clone();
        for _ in 0..5 {
            acc = record_flow(&acc, flow(4, 1));
        }
        assert_eq!(count_by_src(&acc, &flow(4, 0).header), 5);
    }

    #[test]
    fn effective_dest_prefers_latest_assignment() {
        let h = flow(1, 100).header;
        let nib = nib_with(vec![Flow::assigned(h, 5), Flow::assigned(h, 6)]);
        assert_eq!(nib.effective_dest_of(&h), 6);
        assert_eq!(nib.effective_dest_of(&flow(2, 9).header), 9);
    }

    #[test]
    fn topology_lookup() {
        let topo = Topology::new(2).with_port("p_s1", 3).with_server(7, "p_s1");
        assert_eq!(topo.port("p_s1").unwrap(), 3);
        assert_eq!(topo.server_port(7).unwrap(), 3);
        assert!(matches!(topo.port("nope"), Err(Error::UnresolvedPort(_))));
        assert!(topo.server_port(8).is_err());
        assert!(Topology::new(1).with_server(1, "missing").validate().is_err());
    }
}
