use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::ParamStore;
use crate::spice::parse_netlist;

fn graph(text: &str) -> CircuitGraph {
    build_graph(&parse_netlist(text).unwrap()).unwrap()
}

fn edge_set(g: &CircuitGraph) -> Vec<(usize, usize, &'static str)> {
    g.edges.iter().map(|e| (e.src, e.dst, e.relation.name())).collect()
}

#[test]
fn relation_ids_are_dense_and_names_distinct() {
    let names: BTreeSet<&str> = Relation::ALL.iter().map(|r| r.name()).collect();
    assert_eq!(names.len(), 20);
    for (i, r) in Relation::ALL.iter().enumerate() {
        assert_eq!(r.id(), i);
        assert_eq!(Relation::from_id(i), Some(*r));
        assert_eq!(serde_json::to_value(r).unwrap(), r.name());
    }
    assert_eq!(Relation::from_id(20), None);
}

#[test]
fn single_resistor_has_no_edges() {
    let g = graph("* t\nR1 in out 1k\n");
    assert_eq!(g.num_nodes(), 1);
    assert!(g.edges.is_empty());
}

#[test]
fn two_resistors_in_series() {
    let g = graph("* t\nR1 in mid 1k\nR2 mid out 1k\n");
    let mut got = edge_set(&g);
    got.sort();
    let mut want = vec![(0, 1, "r_terminal"), (1, 0, "r_terminal"), (0, 1, "shared_net"), (1, 0, "shared_net")];
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn destination_port_typing() {
    let g = graph("* t\nR1 a g 1k\nM1 d g s b nmos W=1u L=1u\n");
    let mut got = edge_set(&g);
    got.sort();
    let mut want = vec![(0, 1, "mos_gate"), (1, 0, "r_terminal"), (0, 1, "shared_net"), (1, 0, "shared_net")];
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn subckt_instances_use_subckt_terminal() {
    let g = graph("* t\n.subckt buf i o\nR1 i o 1k\n.ends\nX1 a b buf\nR2 a 0 1k\n");
    let into_x: Vec<_> = g.edges.iter().filter(|e| e.dst == 0 && e.relation != Relation::SharedNet).collect();
    assert_eq!(into_x.len(), 1);
    assert_eq!(into_x[0].relation, Relation::SubcktTerminal);
}

#[test]
fn self_connections_make_no_self_edges() {
    // source tied to bulk: M1 counts once on net s
    let g = graph("* t\nM1 d g s s nmos\nR1 s 0 1k\n");
    assert!(g.edges.iter().all(|e| e.src != e.dst));
    let into_m: Vec<_> = g.edges.iter().filter(|e| e.dst == 0).map(|e| e.relation).collect();
    assert_eq!(into_m, vec![Relation::MosSource, Relation::SharedNet]);
}

#[test]
fn fan_out_cap_skips_shared_net() {
    let mut text = String::from("* rail\n");
    for i in 0..40 {
        text.push_str(&format!("C{i} n{i} vdd 1p\n"));
    }
    let g = graph(&text);
    let h = g.relation_histogram();
    assert_eq!(h[Relation::CTerminal.id()], 40 * 39);
    assert_eq!(h[Relation::SharedNet.id()], 0);
}

#[test]
fn empty_netlist_is_an_error() {
    let ir = parse_netlist("* nothing\n.op\n").unwrap();
    assert_eq!(build_graph(&ir), Err(GraphError::EmptyNetlist));
}

#[test]
fn non_finite_param_is_rejected() {
    let mut ir = parse_netlist("* t\nR1 a b 1k\n").unwrap();
    ir.devices[0].params.insert("value".into(), f64::NAN);
    assert!(matches!(build_graph(&ir), Err(GraphError::NonFiniteParam { .. })));
}

#[test]
fn slot_scaling() {
    let ir = parse_netlist("* t\nR1 a b 10k\nM1 d g s b nmos W=2u L=0.5u m=4\nC1 a 0 3p\nV1 a 0 -1.5\nI1 a 0 2m\nL1 a b 10u\n")
        .unwrap();
    let s: Vec<[f64; NUM_SLOTS]> = ir.devices.iter().map(|d| continuous_slots(d).unwrap()).collect();
    assert!((s[0][2] - 10.0).abs() < 1e-12);
    assert!((signed_log1p(s[0][2]) - 11f64.ln()).abs() < 1e-12);
    assert!((signed_log1p(s[0][2]) - 2.3979).abs() < 1e-4);
    assert!((s[1][0] - 2.0).abs() < 1e-9 && (s[1][1] - 0.5).abs() < 1e-9 && s[1][7] == 4.0);
    assert!((s[2][3] - 3.0).abs() < 1e-9);
    assert_eq!(signed_log1p(s[3][5]), -(2.5f64.ln()));
    assert!((s[4][6] - 2.0).abs() < 1e-12);
    assert!((s[5][4] - 10.0).abs() < 1e-9);
}

#[test]
fn featurizer_shapes_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let f = NodeFeaturizer::new(&mut store, "graph.featurizer", 512, &mut rng);
    let ir = parse_netlist("* t\nR1 a b 10k\nR2 c d 10k\nR3 c d 1k\nC1 a 0\n").unwrap();
    let v: Vec<Vec<f64>> = ir.devices.iter().map(|d| f.featurize(&store, d).unwrap()).collect();
    assert_eq!(v[0].len(), 512);
    assert_eq!(v[0], v[1]);
    assert_ne!(v[0], v[2]);
    assert_eq!(NodeFeaturizer::scaled_slots(&ndarray::Array2::zeros((1, NUM_SLOTS))).sum(), 0.0);

    // batch path agrees with the single-device path
    let g = build_graph(&ir).unwrap();
    let batch = GraphBatch::new(&[&g]);
    let mut tape = crate::autodiff::Tape::new();
    let out = f.forward(&mut tape, &store, &batch).unwrap();
    for (i, row) in tape.value(out).rows().into_iter().enumerate() {
        for (a, b) in row.iter().zip(&v[i]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn batch_groups_edges_by_relation() {
    let a = graph("* t\nR1 in mid 1k\nR2 mid out 1k\n");
    let b = graph("* t\nR1 a g 1k\nM1 d g s b nmos\n");
    let batch = GraphBatch::new(&[&a, &b]);
    assert_eq!(batch.num_nodes, 4);
    assert_eq!(&*batch.node_graph, &[0, 0, 1, 1]);
    let r = batch.relations[Relation::RTerminal.id()].as_ref().unwrap();
    assert_eq!(&*r.dst_nodes, &[0, 1, 2]);
    assert_eq!(&*r.src, &[1, 0, 3]);
    let g = batch.relations[Relation::MosGate.id()].as_ref().unwrap();
    assert_eq!(&*g.dst_nodes, &[3]);
    assert!(batch.relations[Relation::BjtBase.id()].is_none());
}

fn random_deck() -> impl Strategy<Value = String> {
    let card = (0usize..6, prop::collection::vec(0usize..6, 4), 1u32..100);
    prop::collection::vec(card, 1..14).prop_map(|cards| {
        let net = |i: usize| if i == 0 { "0".to_string() } else { format!("n{i}") };
        let mut text = String::from("* random\n");
        for (i, (k, n, v)) in cards.into_iter().enumerate() {
            let line = match k {
                0 => format!("R{i} {} {} {v}k", net(n[0]), net(n[1])),
                1 => format!("C{i} {} {} {v}p", net(n[0]), net(n[1])),
                2 => format!("M{i} {} {} {} {} nch W={v}u L=1u", net(n[0]), net(n[1]), net(n[2]), net(n[3])),
                3 => format!("Q{i} {} {} {} qp", net(n[0]), net(n[1]), net(n[2])),
                4 => format!("V{i} {} {} {v}", net(n[0]), net(n[1])),
                _ => format!("E{i} {} {} {} {} {v}", net(n[0]), net(n[1]), net(n[2]), net(n[3])),
            };
            text.push_str(&line);
            text.push('\n');
        }
        text
    })
}

fn rename_nets(ir: &mut NetlistIR) {
    for d in &mut ir.devices {
        for t in &mut d.terminals {
            t.net = format!("renamed_{}", t.net.chars().rev().collect::<String>());
        }
    }
}

proptest! {
    #[test]
    fn net_renaming_gives_identical_graph(text in random_deck()) {
        let ir = parse_netlist(&text).unwrap();
        let mut renamed = ir.clone();
        rename_nets(&mut renamed);
        prop_assert_eq!(build_graph(&ir).unwrap(), build_graph(&renamed).unwrap());
    }

    #[test]
    fn port_edges_are_symmetric(text in random_deck()) {
        let ir = parse_netlist(&text).unwrap();
        let g = build_graph(&ir).unwrap();
        let mut count: BTreeMap<(usize, usize, bool), i64> = BTreeMap::new();
        for e in &g.edges {
            prop_assert!(e.src != e.dst && e.src < g.num_nodes() && e.dst < g.num_nodes());
            let shared = e.relation == Relation::SharedNet;
            if !shared {
                // destination owns a port with this relation
                let d = &ir.devices[e.dst];
                prop_assert!(d.terminals.iter().any(|t| Relation::for_port(d.kind, &t.port) == Some(e.relation)));
            }
            *count.entry((e.src.min(e.dst), e.src.max(e.dst), shared)).or_default() += if e.src < e.dst { 1 } else { -1 };
        }
        prop_assert!(count.values().all(|&c| c == 0));
    }

    #[test]
    fn per_net_edge_count(text in random_deck()) {
        let ir = parse_netlist(&text).unwrap();
        let g = build_graph(&ir).unwrap();
        let mut per_net: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for (i, d) in ir.devices.iter().enumerate() {
            for t in &d.terminals {
                per_net.entry(t.net.as_str()).or_default().insert(i);
            }
        }
        let expected: usize = per_net.values().map(|s| s.len() * (s.len() - 1)).sum();
        let h = g.relation_histogram();
        prop_assert_eq!(h[Relation::SharedNet.id()], expected);
        prop_assert_eq!(g.edges.len() - h[Relation::SharedNet.id()], expected);
    }
}
