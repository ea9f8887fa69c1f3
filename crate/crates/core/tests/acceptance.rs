//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime (visible under `--nocapture`). Budgets are asserted in-test.
//!
//! Hardware quality figures (synthesis frequency, LUT/FF/slice counts,
//! wall-clock latency) need a vendor toolchain and are out of scope here;
//! criteria 1-6 are the software-checkable replacements (criterion 7 below
//! records that explicitly).

use std::time::{Duration, Instant};

use parsepipe::bits::{create_mask, numbits, WideBits};
use parsepipe::codegen::{emit, BackendId};
use parsepipe::plan::{plan, MuxSite, ShiftPlan};
use parsepipe::reference::reference_parse;
use parsepipe::sim::{results_equivalent, PacketSimulator, ParseStatus};
use parsepipe::{traffic, ParserGraph};

const VALID_FIXTURES: [&str; 4] = [
    "l4_parser.json",
    "linear_chain.json",
    "diamond.json",
    "variable_only.json",
];

fn fixture(name: &str) -> ParserGraph {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    ParserGraph::load_file(path).unwrap()
}

fn finish(criterion: &str, what: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < budget,
        "{criterion} exceeded its {budget:?} budget: {elapsed:?}"
    );
    println!("[acceptance] {criterion} {what}: PASS ({elapsed:.2?})");
}

#[test]
fn c1_pipeline_structure_of_bundled_l4_design() {
    let started = Instant::now();
    let graph = fixture("l4_parser.json");
    assert!(graph.validate().is_ok());
    let plan = plan(&graph).unwrap();

    assert_eq!(
        plan.levels,
        vec![
            vec!["eth".to_owned()],
            vec!["ipv4".to_owned(), "ipv6".to_owned()],
            vec!["udp".to_owned(), "tcp".to_owned()],
        ]
    );
    assert_eq!(plan.registers.len(), 3);
    assert_eq!(plan.muxes.len(), 2);
    assert_eq!(plan.muxes[0].site, MuxSite::LevelEntry(2));
    assert_eq!(plan.muxes[0].select, "ipv4");
    assert_eq!(plan.muxes[1].site, MuxSite::Output);
    assert_eq!(plan.muxes[1].select, "udp");

    finish("C1", "pipeline structure", started, Duration::from_secs(1));
}

#[test]
fn c2_ipv4_variable_length_table() {
    let started = Instant::now();
    let graph = fixture("l4_parser.json");
    let plan = plan(&graph).unwrap();
    let ipv4 = &plan.header_plans["ipv4"];

    let expected: Vec<u64> = (5u64..=15).map(|v| 32 * v).collect();
    assert_eq!(expected.first(), Some(&160));
    assert_eq!(expected.last(), Some(&480));
    assert_eq!(expected.len(), 11);
    match &ipv4.shift_plan {
        ShiftPlan::Lut { entries } => {
            assert_eq!(entries.keys().copied().collect::<Vec<_>>(), expected);
        }
        other => panic!("expected a shift LUT, got {other:?}"),
    }
    // the length rule itself reproduces the same table
    let spec = graph.header(graph.idx_of("ipv4").unwrap());
    assert_eq!(spec.valid_lengths_bits(), expected);

    finish("C2", "length table", started, Duration::from_secs(1));
}

#[test]
fn c3_oracle_equivalence_over_10000_packets() {
    let started = Instant::now();
    let per_fixture = 2500usize; // 4 fixtures x 2500 = 10,000 packets
    let mut total = 0usize;
    let mut divergences = 0usize;
    for name in VALID_FIXTURES {
        let graph = fixture(name);
        let plan = plan(&graph).unwrap();
        let sim = PacketSimulator::new(&graph, &plan).unwrap();
        let corpus = traffic::generate(&graph, per_fixture, traffic::DEFAULT_SEED);
        for p in &corpus {
            let piped = sim.run_packet(&p.bytes);
            let reference = reference_parse(&graph, &p.bytes);
            if !results_equivalent(&piped, &reference) {
                divergences += 1;
                eprintln!("divergence on `{name}`: {:02x?}", p.bytes);
            }
        }
        total += corpus.len();
    }
    assert_eq!(total, 10_000);
    assert_eq!(
        divergences, 0,
        "{divergences} divergences over {total} packets"
    );

    finish(
        "C3",
        "oracle equivalence (10,000 packets)",
        started,
        Duration::from_secs(60),
    );
}

#[test]
fn c4_bit_primitive_oracles() {
    let started = Instant::now();

    // numbits: exhaustive against brute force up to 2^20
    let mut checked = 0u64;
    for n in 0..=(1u64 << 20) {
        let mut w = 1;
        while w < 64 && n >= (1u64 << w) {
            w += 1;
        }
        assert_eq!(numbits(n), w, "numbits({n})");
        checked += 1;
    }
    assert_eq!(checked, (1 << 20) + 1);

    // create_mask: widths 1..=64 against big-integer arithmetic
    for w in 1..=64u32 {
        let m = create_mask(w).unwrap();
        assert_eq!(m as u128, (1u128 << w) - 1, "create_mask({w})");
        assert_eq!(m.count_ones(), w);
    }

    // extract_bits: 1000 random wide-word slices against a bit loop
    let mut state = 0x3715_9AF3_D41C_9E25u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for i in 0..1000 {
        let width_bits = 64 + (next() % 1985) as u32; // word width 64..=2048
        let nbytes = (width_bits as usize).div_ceil(8);
        let bytes: Vec<u8> = (0..nbytes).map(|_| next() as u8).collect();
        let word = WideBits::from_bytes(&bytes, width_bits);
        let slice_w = 1 + (next() % 64) as u32;
        let slice_w = slice_w.min(width_bits);
        let offset = next() % (width_bits as u64 - slice_w as u64 + 1);
        let got = word.extract(offset, slice_w).unwrap();
        let want = (0..slice_w as u64).fold(0u64, |acc, k| (acc << 1) | word.bit(offset + k));
        assert_eq!(got, want, "slice {i}: offset {offset} width {slice_w}");
    }

    finish("C4", "bit primitives", started, Duration::from_secs(30));
}

#[test]
fn c5_per_node_objects_single_generic_definition() {
    let started = Instant::now();
    let mut first_module: Option<String> = None;
    for name in VALID_FIXTURES {
        let graph = fixture(name);
        let plan = plan(&graph).unwrap();
        let bundle = emit(&graph, &plan, BackendId::MpoCxx).unwrap();
        let pipeline = &bundle.files["pipeline.cpp"];

        // one specialized object declaration per graph node
        let objects = pipeline.matches("static FixedHeader<").count()
            + pipeline.matches("static VariableHeader<").count();
        assert_eq!(objects, graph.headers.len(), "{name}: object count");

        // the generic module text occurs exactly once in the bundle
        let whole: String = bundle.files.values().cloned().collect();
        assert_eq!(
            whole.matches("class Header {").count(),
            1,
            "{name}: generic definition must be single"
        );
        match &first_module {
            None => first_module = Some(bundle.files["module.hpp"].clone()),
            Some(m) => assert_eq!(m, &bundle.files["module.hpp"], "{name}: module drifted"),
        }

        // ternary count equals the plan's mux count
        assert_eq!(
            pipeline.matches('?').count(),
            plan.muxes.len(),
            "{name}: ternary count"
        );

        // repeated emission is byte-identical
        let again = emit(&graph, &plan, BackendId::MpoCxx).unwrap();
        assert_eq!(bundle, again, "{name}: emission must be deterministic");
    }

    finish(
        "C5",
        "per-node objects, single generic definition",
        started,
        Duration::from_secs(5),
    );
}

#[test]
fn c6_round_trip_reconstruction() {
    let started = Instant::now();
    let per_fixture = 2500usize;
    let mut ok_parses = 0usize;
    for name in VALID_FIXTURES {
        let graph = fixture(name);
        let plan = plan(&graph).unwrap();
        let sim = PacketSimulator::new(&graph, &plan).unwrap();
        for p in traffic::generate(&graph, per_fixture, traffic::DEFAULT_SEED) {
            let (result, capture) = sim.run_packet_captured(&p.bytes);
            if result.status != ParseStatus::Ok {
                continue;
            }
            ok_parses += 1;
            let mut rebuilt = Vec::new();
            for (_, bytes) in &capture.headers {
                rebuilt.extend_from_slice(bytes);
            }
            rebuilt.extend_from_slice(&capture.payload);
            assert_eq!(
                rebuilt, p.bytes,
                "{name}: headers + payload must reconstruct the packet"
            );
        }
    }
    assert!(
        ok_parses >= 7000,
        "corpus should be mostly parseable: {ok_parses}"
    );

    finish(
        "C6",
        &format!("round-trip integrity ({ok_parses} ok parses)"),
        started,
        Duration::from_secs(60),
    );
}

#[test]
fn c7_hardware_metrics_out_of_scope() {
    // Synthesis frequency, LUT/FF/slice counts, and nanosecond latency need
    // vendor synthesis and place-and-route; no software assertion can stand
    // in for them. The single-definition and structural checks above (C1,
    // C5) cover what is checkable at desk scale.
    println!(
        "[acceptance] C7 hardware QoR figures: N/A (requires vendor synthesis; replaced by C1-C6)"
    );
}
