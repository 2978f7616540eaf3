//! Netlist to multi-relational device graph.
//!
//! One node per device. For every net and every ordered pair of distinct
//! devices on it, an edge `u → v` is typed by the port through which `v`
//! touches the net, and a `shared_net` edge is added alongside.

mod batch;
mod features;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::spice::{Device, DeviceKind, NetlistIR};

pub use batch::{GraphBatch, RelationEdges};
pub use features::{signed_log1p, NodeFeaturizer, D_CONT, D_TYPE};

/// Number of continuous feature slots per node.
pub const NUM_SLOTS: usize = 8;
/// Slot names, in order, with the unit each value is expressed in.
pub const SLOT_NAMES: [&str; NUM_SLOTS] = ["w_um", "l_um", "r_kohm", "c_pf", "l_uh", "vdc_v", "idc_ma", "m"];
/// Nets with more incident devices than this get no `shared_net` edges.
pub const SHARED_NET_CAP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    MosDrain,
    MosGate,
    MosSource,
    MosBulk,
    BjtCollector,
    BjtBase,
    BjtEmitter,
    SrcPlus,
    SrcMinus,
    DiodeAnode,
    DiodeCathode,
    RTerminal,
    CTerminal,
    LTerminal,
    VcvsPort,
    CccsPort,
    VccsPort,
    CcvsPort,
    SharedNet,
    SubcktTerminal,
}

impl Relation {
    pub const COUNT: usize = 20;

    pub const ALL: [Relation; Relation::COUNT] = [
        Relation::MosDrain,
        Relation::MosGate,
        Relation::MosSource,
        Relation::MosBulk,
        Relation::BjtCollector,
        Relation::BjtBase,
        Relation::BjtEmitter,
        Relation::SrcPlus,
        Relation::SrcMinus,
        Relation::DiodeAnode,
        Relation::DiodeCathode,
        Relation::RTerminal,
        Relation::CTerminal,
        Relation::LTerminal,
        Relation::VcvsPort,
        Relation::CccsPort,
        Relation::VccsPort,
        Relation::CcvsPort,
        Relation::SharedNet,
        Relation::SubcktTerminal,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Relation> {
        Relation::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        use Relation::*;
        match self {
            MosDrain => "mos_drain",
            MosGate => "mos_gate",
            MosSource => "mos_source",
            MosBulk => "mos_bulk",
            BjtCollector => "bjt_collector",
            BjtBase => "bjt_base",
            BjtEmitter => "bjt_emitter",
            SrcPlus => "src_plus",
            SrcMinus => "src_minus",
            DiodeAnode => "diode_anode",
            DiodeCathode => "diode_cathode",
            RTerminal => "r_terminal",
            CTerminal => "c_terminal",
            LTerminal => "l_terminal",
            VcvsPort => "vcvs_port",
            CccsPort => "cccs_port",
            VccsPort => "vccs_port",
            CcvsPort => "ccvs_port",
            SharedNet => "shared_net",
            SubcktTerminal => "subckt_terminal",
        }
    }

    /// Relation for a device of `kind` touching a net through `port`, or
    /// `None` if the kind has no such port.
    pub fn for_port(kind: DeviceKind, port: &str) -> Option<Relation> {
        use DeviceKind as K;
        use Relation::*;
        Some(match (kind, port) {
            (K::Nmos | K::Pmos, "d") => MosDrain,
            (K::Nmos | K::Pmos, "g") => MosGate,
            (K::Nmos | K::Pmos, "s") => MosSource,
            (K::Nmos | K::Pmos, "b") => MosBulk,
            (K::Npn | K::Pnp, "c") => BjtCollector,
            (K::Npn | K::Pnp, "b") => BjtBase,
            (K::Npn | K::Pnp, "e") => BjtEmitter,
            (K::Vsource | K::Isource, "p") => SrcPlus,
            (K::Vsource | K::Isource, "n") => SrcMinus,
            (K::Diode, "a") => DiodeAnode,
            (K::Diode, "k") => DiodeCathode,
            (K::Resistor, "t1" | "t2") => RTerminal,
            (K::Capacitor, "t1" | "t2") => CTerminal,
            (K::Inductor, "t1" | "t2") => LTerminal,
            (K::Vcvs, _) => VcvsPort,
            (K::Cccs, _) => CccsPort,
            (K::Vccs, _) => VccsPort,
            (K::Ccvs, _) => CcvsPort,
            (K::Subckt, _) => SubcktTerminal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: DeviceKind,
    /// Continuous slots in the units of [`SLOT_NAMES`], before log scaling.
    pub cont: [f64; NUM_SLOTS],
}

impl Node {
    pub fn kind_id(&self) -> usize {
        self.kind.index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub nodes: Vec<Node>,
    /// Sorted by `(dst, relation, src)`; a multiset, since two devices can
    /// share several nets.
    pub edges: Vec<Edge>,
    pub node_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("netlist has no devices")]
    EmptyNetlist,
    #[error("device `{device}` has non-finite parameter `{param}`")]
    NonFiniteParam { device: String, param: String },
}

impl CircuitGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Edge counts indexed by relation id.
    pub fn relation_histogram(&self) -> [usize; Relation::COUNT] {
        let mut h = [0; Relation::COUNT];
        for e in &self.edges {
            h[e.relation.id()] += 1;
        }
        h
    }
}

/// Continuous slots of a device in rescaled units; absent slots are 0.
pub fn continuous_slots(d: &Device) -> Result<[f64; NUM_SLOTS], GraphError> {
    for (k, v) in &d.params {
        if !v.is_finite() {
            return Err(GraphError::NonFiniteParam { device: d.name.clone(), param: k.clone() });
        }
    }
    let mut s = [0.0; NUM_SLOTS];
    let p = |k: &str| d.param(k).unwrap_or(0.0);
    match d.kind {
        DeviceKind::Nmos | DeviceKind::Pmos => {
            s[0] = p("w") * 1e6;
            s[1] = p("l") * 1e6;
        }
        DeviceKind::Resistor => s[2] = p("value") * 1e-3,
        DeviceKind::Capacitor => s[3] = p("value") * 1e12,
        DeviceKind::Inductor => s[4] = p("value") * 1e6,
        DeviceKind::Vsource => s[5] = p("value"),
        DeviceKind::Isource => s[6] = p("value") * 1e3,
        _ => {}
    }
    s[7] = p("m");
    if let Some(i) = s.iter().position(|x| !x.is_finite()) {
        return Err(GraphError::NonFiniteParam { device: d.name.clone(), param: SLOT_NAMES[i].into() });
    }
    Ok(s)
}

/// Builds the device graph of the top-level scope. Subcircuit instances stay
/// single nodes.
pub fn build_graph(ir: &NetlistIR) -> Result<CircuitGraph, GraphError> {
    if ir.devices.is_empty() {
        return Err(GraphError::EmptyNetlist);
    }
    let mut nodes = Vec::with_capacity(ir.devices.len());
    let mut node_ids = Vec::with_capacity(ir.devices.len());
    // net -> (device index, relation of its first port on that net)
    let mut incident: BTreeMap<&str, Vec<(usize, Relation)>> = BTreeMap::new();
    for (i, d) in ir.devices.iter().enumerate() {
        nodes.push(Node { kind: d.kind, cont: continuous_slots(d)? });
        node_ids.push(d.name.clone());
        for t in &d.terminals {
            let list = incident.entry(t.net.as_str()).or_default();
            if list.iter().any(|(j, _)| *j == i) {
                continue;
            }
            let rel = Relation::for_port(d.kind, &t.port).unwrap_or(Relation::SubcktTerminal);
            list.push((i, rel));
        }
    }

    let mut edges = Vec::new();
    for list in incident.values() {
        let shared = list.len() <= SHARED_NET_CAP;
        for &(u, _) in list {
            for &(v, rel_v) in list {
                if u == v {
                    continue;
                }
                edges.push(Edge { src: u, dst: v, relation: rel_v });
                if shared {
                    edges.push(Edge { src: u, dst: v, relation: Relation::SharedNet });
                }
            }
        }
    }
    edges.sort_by_key(|e| (e.dst, e.relation, e.src));
    Ok(CircuitGraph { nodes, edges, node_ids })
}

#[cfg(test)]
mod tests;
