//! Pipeline planner: compiles a validated parser graph into stage levels,
//! register banks, mux sites, and per-header precomputed constants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{numbits, shift_def};
use crate::graph::{HeaderIdx, HeaderSpec, LengthSpec, ParserGraph, ValidationReport};

/// Compiled pipeline: every header sits in exactly one level (its longest-path
/// distance from the start header), one register bank follows each level, and
/// a mux sits wherever two or more data streams converge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub design: String,
    pub bus_width_bits: u32,
    pub levels: Vec<Vec<String>>,
    pub registers: Vec<RegisterBank>,
    pub muxes: Vec<MuxSpec>,
    pub header_plans: BTreeMap<String, HeaderPlan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterBank {
    pub after_level: usize,
}

/// A convergence point. `inputs` are ordered by priority: the first input
/// whose valid flag is set drives the output (an N-way site folds left as
/// nested 2-way selections); the last input is the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuxSpec {
    pub site: MuxSite,
    pub inputs: Vec<String>,
    pub select: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuxSite {
    /// Between register banks, feeding the headers of this level.
    LevelEntry(usize),
    /// The final packet-stream merge.
    Output,
}

/// Per-header constants folded at plan time, the way a constructor would
/// hardwire them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderPlan {
    /// Right-shift bringing the transition key to the LSBs of its bus word;
    /// absent for keyless headers.
    pub state_shift: Option<u64>,
    pub shift_plan: ShiftPlan,
    /// For each valid length: does the header span more than one bus word?
    pub bus_span: BTreeMap<u64, bool>,
    /// Width of the received-bits counter, sized for the largest length.
    pub rx_counter_width: u32,
}

/// Alignment shifts are stored modulo the bus width; whole-word skips are the
/// stream scheduler's job, so only the few residues that can actually occur
/// ever reach the shifter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPlan {
    Fixed { shift: u64 },
    Lut { entries: BTreeMap<u64, u64> },
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("graph failed validation:\n{0}")]
    InvalidGraph(ValidationReport),
}

/// Longest-path level for every header, indexed by header position.
/// Requires a validated (acyclic, fully reachable) graph.
pub(crate) fn levels_by_idx(graph: &ParserGraph) -> Vec<usize> {
    let n = graph.headers.len();
    let mut indeg = vec![0usize; n];
    for i in 0..n {
        for s in graph.successors(HeaderIdx(i)) {
            indeg[s.0] += 1;
        }
    }
    let mut level = vec![0usize; n];
    let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    while let Some(i) = queue.pop_front() {
        for s in graph.successors(HeaderIdx(i)) {
            level[s.0] = level[s.0].max(level[i] + 1);
            indeg[s.0] -= 1;
            if indeg[s.0] == 0 {
                queue.push_back(s.0);
            }
        }
    }
    level
}

/// Groups headers into levels by longest-path distance from start; headers
/// sharing a level are listed in declaration order.
pub fn level_schedule(graph: &ParserGraph) -> Vec<Vec<String>> {
    let level = levels_by_idx(graph);
    let depth = level.iter().copied().max().unwrap_or(0);
    let mut out = vec![Vec::new(); depth + 1];
    for (i, h) in graph.headers.iter().enumerate() {
        out[level[i]].push(h.id.clone());
    }
    out
}

/// Ordered inputs for the stream feeding header `h`: predecessors sorted by
/// level, deepest first (the immediate predecessor on any path is always the
/// deepest valid one), declaration order breaking ties.
pub(crate) fn input_order(preds: &[HeaderIdx], level: &[usize]) -> Vec<HeaderIdx> {
    let mut inputs = preds.to_vec();
    inputs.sort_by_key(|p| (std::cmp::Reverse(level[p.0]), p.0));
    inputs
}

/// One mux per distinct convergence: headers of a level that share the same
/// multi-predecessor input set share the mux, and a final output mux merges
/// the deepest alternatives.
pub fn place_muxes(graph: &ParserGraph, levels: &[Vec<String>]) -> Vec<MuxSpec> {
    let level = levels_by_idx(graph);
    let preds = graph.predecessors();
    let mut muxes = Vec::new();
    let mut seen: Vec<(usize, Vec<HeaderIdx>)> = Vec::new();
    for (i, _h) in graph.headers.iter().enumerate() {
        if preds[i].len() < 2 {
            continue;
        }
        let inputs = input_order(&preds[i], &level);
        let key = (level[i], inputs.clone());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        muxes.push(MuxSpec {
            site: MuxSite::LevelEntry(level[i]),
            inputs: inputs.iter().map(|p| graph.id_of(*p).to_owned()).collect(),
            select: graph.id_of(inputs[0]).to_owned(),
        });
    }
    let deepest = levels.last().expect("at least one level");
    if deepest.len() >= 2 {
        muxes.push(MuxSpec {
            site: MuxSite::Output,
            inputs: deepest.clone(),
            select: deepest[0].clone(),
        });
    }
    muxes
}

/// Folds the per-header constants: alignment shift plan, bus-span flags, the
/// key shift, and the received-bits counter width.
pub fn build_header_plan(spec: &HeaderSpec, bus_width_bits: u32) -> HeaderPlan {
    let bus = bus_width_bits as u64;
    let lengths = spec.valid_lengths_bits();
    let entries: BTreeMap<u64, u64> = lengths.iter().map(|&l| (l, l % bus)).collect();
    let shift_plan = match &spec.length {
        LengthSpec::Fixed { .. } => ShiftPlan::Fixed {
            shift: lengths[0] % bus,
        },
        LengthSpec::Variable { .. } => {
            if entries.values().all(|&s| s == 0) {
                // every valid length is a whole number of bus words
                ShiftPlan::Fixed { shift: 0 }
            } else {
                ShiftPlan::Lut { entries }
            }
        }
    };
    let max_len = spec.max_len_bits();
    HeaderPlan {
        state_shift: spec
            .key
            .as_ref()
            .map(|k| shift_def(max_len, bus, k.end_bits()).expect("validated key placement")),
        shift_plan,
        bus_span: lengths.iter().map(|&l| (l, l > bus)).collect(),
        rx_counter_width: numbits(max_len),
    }
}

/// Compiles a graph into a full pipeline plan. Fails if the graph does not
/// validate; the result is a pure function of the input.
pub fn plan(graph: &ParserGraph) -> Result<PipelinePlan, PlanError> {
    let report = graph.validate();
    if !report.is_ok() {
        return Err(PlanError::InvalidGraph(report));
    }
    let levels = level_schedule(graph);
    let muxes = place_muxes(graph, &levels);
    let registers = (0..levels.len())
        .map(|after_level| RegisterBank { after_level })
        .collect();
    let header_plans = graph
        .headers
        .iter()
        .map(|h| (h.id.clone(), build_header_plan(h, graph.bus_width_bits)))
        .collect();
    Ok(PipelinePlan {
        design: graph.name.clone(),
        bus_width_bits: graph.bus_width_bits,
        levels,
        registers,
        muxes,
        header_plans,
    })
}

impl PipelinePlan {
    /// Canonical JSON: object keys sorted, stable across runs.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("plan serializes");
        let mut text = serde_json::to_string_pretty(&value).expect("plan prints");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// DOT rendering: one cluster per level, trapezoid mux nodes, transition
/// edges labelled value/mask.
pub fn to_dot(graph: &ParserGraph, plan: &PipelinePlan) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    writeln!(s, "digraph \"{}\" {{", plan.design).unwrap();
    writeln!(s, "  rankdir=LR;").unwrap();
    writeln!(s, "  node [shape=box];").unwrap();
    for (i, level) in plan.levels.iter().enumerate() {
        writeln!(s, "  subgraph cluster_level_{i} {{").unwrap();
        writeln!(s, "    label=\"level {i}\";").unwrap();
        for id in level {
            writeln!(s, "    \"{id}\";").unwrap();
        }
        writeln!(s, "  }}").unwrap();
    }
    writeln!(s, "  \"ACCEPT\" [shape=doublecircle];").unwrap();
    for h in &graph.headers {
        for t in &h.transitions {
            let to = match t.next {
                crate::graph::Target::Header(idx) => graph.id_of(idx).to_owned(),
                crate::graph::Target::Accept => "ACCEPT".to_owned(),
            };
            if h.key.is_some() {
                writeln!(
                    s,
                    "  \"{}\" -> \"{}\" [label=\"0x{:x}/0x{:x}\"];",
                    h.id, to, t.value, t.mask
                )
                .unwrap();
            } else {
                writeln!(s, "  \"{}\" -> \"{}\";", h.id, to).unwrap();
            }
        }
        if h.key.is_none() && h.transitions.is_empty() {
            writeln!(s, "  \"{}\" -> \"ACCEPT\";", h.id).unwrap();
        }
    }
    for (i, m) in plan.muxes.iter().enumerate() {
        let site = match m.site {
            MuxSite::LevelEntry(l) => format!("level {l} entry"),
            MuxSite::Output => "output".to_owned(),
        };
        writeln!(
            s,
            "  \"mux{i}\" [shape=trapezium, label=\"{site}\\nselect {}.Valid\"];",
            m.select
        )
        .unwrap();
        for input in &m.inputs {
            writeln!(s, "  \"{input}\" -> \"mux{i}\" [style=dashed];").unwrap();
        }
    }
    writeln!(s, "}}").unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture(name: &str) -> ParserGraph {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name);
        ParserGraph::load_file(path).unwrap()
    }

    fn inline(text: &str) -> ParserGraph {
        ParserGraph::load_spec(text).unwrap()
    }

    #[test]
    fn l4_levels() {
        let g = fixture("l4_parser.json");
        assert_eq!(
            level_schedule(&g),
            vec![
                vec!["eth".to_owned()],
                vec!["ipv4".to_owned(), "ipv6".to_owned()],
                vec!["udp".to_owned(), "tcp".to_owned()],
            ]
        );
    }

    #[test]
    fn single_node_level() {
        let g = inline(
            r#"{"name":"x","bus_width_bits":64,"start":"a","headers":[{"id":"a","length":{"fixed_bytes":2}}]}"#,
        );
        assert_eq!(level_schedule(&g), vec![vec!["a".to_owned()]]);
    }

    #[test]
    fn diamond_levels_by_longest_path() {
        let g = fixture("diamond.json");
        assert_eq!(
            level_schedule(&g),
            vec![
                vec!["a".to_owned()],
                vec!["b".to_owned(), "c".to_owned()],
                vec!["d".to_owned()],
            ]
        );
    }

    #[test]
    fn l4_muxes() {
        let g = fixture("l4_parser.json");
        let p = plan(&g).unwrap();
        assert_eq!(p.muxes.len(), 2);
        assert_eq!(p.muxes[0].site, MuxSite::LevelEntry(2));
        assert_eq!(p.muxes[0].inputs, vec!["ipv4", "ipv6"]);
        assert_eq!(p.muxes[0].select, "ipv4");
        assert_eq!(p.muxes[1].site, MuxSite::Output);
        assert_eq!(p.muxes[1].inputs, vec!["udp", "tcp"]);
        assert_eq!(p.muxes[1].select, "udp");
        assert_eq!(p.registers.len(), 3);
        assert_eq!(p.levels.len(), 3);
    }

    #[test]
    fn linear_chain_has_no_muxes() {
        let g = fixture("linear_chain.json");
        let p = plan(&g).unwrap();
        assert!(p.muxes.is_empty());
        assert_eq!(p.levels.len(), 3);
        assert_eq!(p.registers.len(), 3);
    }

    #[test]
    fn single_header_plan_shape() {
        let g = inline(
            r#"{"name":"x","bus_width_bits":64,"start":"a","headers":[{"id":"a","length":{"fixed_bytes":2}}]}"#,
        );
        let p = plan(&g).unwrap();
        assert_eq!(p.levels.len(), 1);
        assert_eq!(p.registers.len(), 1);
        assert!(p.muxes.is_empty());
    }

    #[test]
    fn three_way_convergence_priority() {
        let g = inline(
            r#"{"name":"x","bus_width_bits":64,"start":"s","headers":[
            {"id":"s","length":{"fixed_bytes":2},"key":{"offset_bits":0,"width_bits":8},
             "transitions":[{"value":"0x1","mask":"0xff","next":"a"},
                            {"value":"0x2","mask":"0xff","next":"b"},
                            {"value":"0x3","mask":"0xff","next":"c"}]},
            {"id":"a","length":{"fixed_bytes":2},"transitions":[{"next":"d"}]},
            {"id":"b","length":{"fixed_bytes":2},"transitions":[{"next":"d"}]},
            {"id":"c","length":{"fixed_bytes":2},"transitions":[{"next":"d"}]},
            {"id":"d","length":{"fixed_bytes":2}}]}"#,
        );
        let p = plan(&g).unwrap();
        assert_eq!(p.muxes.len(), 1);
        assert_eq!(p.muxes[0].inputs, vec!["a", "b", "c"]);
        assert_eq!(p.muxes[0].select, "a");
    }

    #[test]
    fn skip_edge_mux_prefers_deeper_predecessor() {
        // a -> b -> c plus the skip edge a -> c: the stream entering c must
        // come from b whenever b ran, so b outranks a in the input order.
        let g = inline(
            r#"{"name":"x","bus_width_bits":64,"start":"a","headers":[
            {"id":"a","length":{"fixed_bytes":2},"key":{"offset_bits":0,"width_bits":8},
             "transitions":[{"value":"0x1","mask":"0xff","next":"b"},
                            {"value":"0x2","mask":"0xff","next":"c"}]},
            {"id":"b","length":{"fixed_bytes":2},"transitions":[{"next":"c"}]},
            {"id":"c","length":{"fixed_bytes":2}}]}"#,
        );
        let p = plan(&g).unwrap();
        assert_eq!(p.muxes.len(), 1);
        assert_eq!(p.muxes[0].inputs, vec!["b", "a"]);
        assert_eq!(p.muxes[0].select, "b");
    }

    #[test]
    fn ipv4_shift_lut() {
        let g = fixture("l4_parser.json");
        let hp = build_header_plan(g.header(g.idx_of("ipv4").unwrap()), 512);
        match &hp.shift_plan {
            ShiftPlan::Lut { entries } => {
                assert_eq!(entries.len(), 11);
                let expect: Vec<u64> = (5..=15).map(|v| 32 * v).collect();
                assert_eq!(entries.keys().copied().collect::<Vec<_>>(), expect);
                for (&len, &shift) in entries {
                    assert_eq!(shift, len % 512);
                }
            }
            other => panic!("expected lut, got {other:?}"),
        }
        assert!(hp.bus_span.values().all(|&b| !b));
        assert_eq!(hp.rx_counter_width, numbits(480));
        assert_eq!(hp.rx_counter_width, 9);
    }

    #[test]
    fn eth_fixed_shift() {
        let g = fixture("l4_parser.json");
        let hp = build_header_plan(g.header(g.idx_of("eth").unwrap()), 512);
        assert_eq!(hp.shift_plan, ShiftPlan::Fixed { shift: 112 });
        assert_eq!(hp.state_shift, Some(400));
        assert_eq!(hp.bus_span, [(112, false)].into_iter().collect());
    }

    #[test]
    fn wide_fixed_header_spans_bus() {
        let g = inline(
            r#"{"name":"x","bus_width_bits":128,"start":"a","headers":[{"id":"a","length":{"fixed_bytes":40}}]}"#,
        );
        let hp = build_header_plan(g.header(g.idx_of("a").unwrap()), 128);
        assert_eq!(hp.shift_plan, ShiftPlan::Fixed { shift: 64 });
        assert_eq!(hp.bus_span, [(320, true)].into_iter().collect());
    }

    #[test]
    fn degenerate_lut_collapses_to_fixed_zero() {
        // every valid length is a whole number of 64-bit words
        let g = inline(
            r#"{"name":"x","bus_width_bits":64,"start":"a","headers":[
            {"id":"a","length":{"variable":{"field":{"offset_bits":0,"width_bits":4},
             "multiplier_bits":64,"addend_bits":0,"min":1,"max":4}}}]}"#,
        );
        let hp = build_header_plan(g.header(g.idx_of("a").unwrap()), 64);
        assert_eq!(hp.shift_plan, ShiftPlan::Fixed { shift: 0 });
        assert_eq!(hp.bus_span.len(), 4);
    }

    #[test]
    fn plan_rejects_invalid_graph() {
        let g = fixture("straddle_negative.json");
        assert!(matches!(plan(&g), Err(PlanError::InvalidGraph(_))));
    }

    #[test]
    fn plan_serialization_is_deterministic() {
        let g = fixture("l4_parser.json");
        let a = plan(&g).unwrap().to_canonical_json();
        let b = plan(&g).unwrap().to_canonical_json();
        assert_eq!(a, b);
        let round = PipelinePlan::from_json(&a).unwrap();
        assert_eq!(round.to_canonical_json(), a);
    }

    #[test]
    fn dot_has_level_clusters_and_trapezoids() {
        let g = fixture("l4_parser.json");
        let p = plan(&g).unwrap();
        let dot = to_dot(&g, &p);
        assert_eq!(dot.matches("cluster_level_").count(), 3);
        assert_eq!(dot.matches("trapezium").count(), 2);
    }

    /// Random DAGs: node 0 is the start; every later node gets at least one
    /// predecessor among earlier nodes, so the graph is connected and acyclic
    /// by construction.
    fn random_dag() -> impl Strategy<Value = ParserGraph> {
        (2usize..8, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = seed;
            let mut next_rand = move || {
                rng ^= rng << 13;
                rng ^= rng >> 7;
                rng ^= rng << 17;
                rng
            };
            let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n];
            for to in 1..n {
                let from = (next_rand() as usize) % to;
                edges[from].push(to);
                // sprinkle extra forward edges
                for outs in edges.iter_mut().take(to) {
                    if !outs.contains(&to) && next_rand() % 3 == 0 {
                        outs.push(to);
                    }
                }
            }
            let headers: Vec<String> = (0..n)
                .map(|i| {
                    let transitions: Vec<String> = edges[i]
                        .iter()
                        .enumerate()
                        .map(|(k, to)| {
                            format!(r#"{{"value":"0x{k:x}","mask":"0xff","next":"h{to}"}}"#)
                        })
                        .collect();
                    format!(
                        r#"{{"id":"h{i}","length":{{"fixed_bytes":2}},
                            "key":{{"offset_bits":0,"width_bits":8}},
                            "transitions":[{}]}}"#,
                        transitions.join(",")
                    )
                })
                .collect();
            let text = format!(
                r#"{{"name":"rand","bus_width_bits":64,"start":"h0","headers":[{}]}}"#,
                headers.join(",")
            );
            ParserGraph::load_spec(&text).unwrap()
        })
    }

    proptest! {
        #[test]
        fn random_dag_plan_invariants(g in random_dag()) {
            prop_assert!(g.validate().is_ok());
            let p = plan(&g).unwrap();

            // every header in exactly one level
            let mut seen = std::collections::BTreeSet::new();
            for level in &p.levels {
                for id in level {
                    prop_assert!(seen.insert(id.clone()));
                }
            }
            prop_assert_eq!(seen.len(), g.headers.len());

            // level = 1 + max predecessor level
            let level = levels_by_idx(&g);
            let preds = g.predecessors();
            for i in 0..g.headers.len() {
                if preds[i].is_empty() {
                    prop_assert_eq!(level[i], 0);
                } else {
                    let expect = 1 + preds[i].iter().map(|p| level[p.0]).max().unwrap();
                    prop_assert_eq!(level[i], expect);
                }
            }

            // mux count = distinct multi-predecessor convergences
            //             + 1 when the deepest level holds alternatives
            let mut sites = Vec::new();
            for i in 0..g.headers.len() {
                if preds[i].len() >= 2 {
                    let key = (level[i], input_order(&preds[i], &level));
                    if !sites.contains(&key) {
                        sites.push(key);
                    }
                }
            }
            let deepest_alternatives = p.levels.last().unwrap().len() >= 2;
            prop_assert_eq!(p.muxes.len(), sites.len() + usize::from(deepest_alternatives));

            // one register bank per level
            prop_assert_eq!(p.registers.len(), p.levels.len());

            // pure function of the input
            let again = plan(&g).unwrap();
            prop_assert_eq!(p.to_canonical_json(), again.to_canonical_json());
        }
    }
}
