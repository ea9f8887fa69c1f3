//! Cycle-level pipeline simulator.
//!
//! Executes a [`PipelinePlan`] on packet byte streams. Every header engine at
//! every level runs unconditionally on its input stream, exactly like the
//! statically-instantiated hardware modules: the stream carries an
//! "expected next header" tag, engines whose id does not match pass their
//! input through untouched, and mux sites pick the first input whose header
//! completed. The result is that the final output stream is always the
//! payload-aligned remainder of the packet, whatever depth the parse stopped
//! at.
//!
//! Per word, an active engine counts received bits, evaluates the transition
//! key once the key's bus word has arrived, resolves the header length
//! (fixed, or from the extracted length field), extracts PHV fields as their
//! bits become available, and finally realigns the stream so the next header
//! starts at bit 0 of the following level's words.
//!
//! A level handles at most one header boundary per packet; two headers never
//! complete inside the same bus beat at the same level.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{create_mask, read_bits, WideBits};
use crate::graph::{HeaderIdx, HeaderSpec, ParserGraph, Target};
use crate::plan::{HeaderPlan, MuxSite, PipelinePlan, ShiftPlan};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Truncated,
    Malformed { reason: MalformedReason },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    LengthOutOfRange { header: String, value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhvEntry {
    pub valid: bool,
    pub fields: BTreeMap<String, u64>,
}

/// Per-packet outcome. `phv` always lists every header of the design;
/// headers off the accepted path stay invalid with no fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResult {
    pub status: ParseStatus,
    pub path: Vec<String>,
    pub phv: BTreeMap<String, PhvEntry>,
    pub latency_cycles: u64,
    pub payload_offset_bits: u64,
}

/// Equality on everything the parse semantics define; `latency_cycles` is a
/// pipeline property and excluded (the sequential reference reports 0).
pub fn results_equivalent(a: &ParseResult, b: &ParseResult) -> bool {
    a.status == b.status
        && a.path == b.path
        && a.phv == b.phv
        && a.payload_offset_bits == b.payload_offset_bits
}

/// Raw bytes seen by the pipeline along the accepted path, for stream
/// reconstruction checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunCapture {
    /// (header id, exact header bytes) in path order, captured from each
    /// level's aligned input stream.
    pub headers: Vec<(String, Vec<u8>)>,
    /// Bytes left on the bus after the last parsed header.
    pub payload: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plan does not match graph: {0}")]
    PlanMismatch(String),
}

/// Runtime state of one header engine, the mutable half of a parser node.
#[derive(Debug)]
pub struct HeaderRuntime<'a> {
    spec: &'a HeaderSpec,
    hplan: &'a HeaderPlan,
    bus_bits: u32,
    /// Received-bit counter as the hardware sees it: saturates at
    /// 2^rx_counter_width - 1, which is past every valid header length.
    pub rx_bits: u64,
    words_seen: u64,
    pub next_header: Option<Target>,
    pub next_header_valid: bool,
    pub phv_accum: BTreeMap<String, u64>,
    key_checked: bool,
    acc: Vec<u8>,
    acc_cap_bytes: usize,
    header_len_bits: Option<u64>,
    malformed_value: Option<u64>,
}

impl<'a> HeaderRuntime<'a> {
    pub fn new(spec: &'a HeaderSpec, hplan: &'a HeaderPlan, bus_bits: u32) -> Self {
        let bus_bytes = bus_bits as usize / 8;
        let max_words = (spec.max_len_bits() as usize).div_ceil(bus_bits as usize);
        let header_len_bits = match &spec.length {
            crate::graph::LengthSpec::Fixed { .. } => Some(spec.min_len_bits()),
            crate::graph::LengthSpec::Variable { .. } => None,
        };
        HeaderRuntime {
            spec,
            hplan,
            bus_bits,
            rx_bits: 0,
            words_seen: 0,
            next_header: None,
            next_header_valid: false,
            phv_accum: BTreeMap::new(),
            key_checked: false,
            acc: Vec::with_capacity(max_words * bus_bytes),
            acc_cap_bytes: max_words * bus_bytes,
            header_len_bits,
            malformed_value: None,
        }
    }

    /// Bits actually received so far (exact, unlike the saturating counter).
    pub fn received_bits(&self) -> u64 {
        self.words_seen * self.bus_bits as u64
    }

    pub fn header_len_bits(&self) -> Option<u64> {
        self.header_len_bits
    }

    pub fn malformed_value(&self) -> Option<u64> {
        self.malformed_value
    }

    pub fn header_bytes(&self, len_bits: u64) -> &[u8] {
        &self.acc[..(len_bits / 8) as usize]
    }

    /// Evaluates the transition key against the current word, once, as soon
    /// as the word holding the key has arrived. Words arriving before the
    /// key location leave the state unchanged. Key disjointness (validated)
    /// makes the match order irrelevant.
    pub fn state_transition(&mut self, word: &WideBits) {
        let Some(key) = &self.spec.key else {
            return;
        };
        if self.next_header_valid || self.key_checked {
            return;
        }
        if self.received_bits() > key.offset_bits as u64 {
            let shift = self.hplan.state_shift.expect("keyed header has a shift");
            let mask = create_mask(key.width_bits).expect("validated key width");
            let packet_key = word.shr(shift).low_u64() & mask;
            for t in &self.spec.transitions {
                if t.value == (packet_key & t.mask) {
                    self.next_header = Some(t.next);
                    self.next_header_valid = true;
                }
            }
            self.key_checked = true;
        }
    }

    /// Consumes one bus word: counts it, buffers the header prefix, runs the
    /// state transition, resolves the header length, and extracts whatever
    /// fields are now fully received.
    pub fn header_analysis(&mut self, word: &WideBits) {
        debug_assert_eq!(word.width(), self.bus_bits);
        self.words_seen += 1;
        let cap = (1u64 << self.hplan.rx_counter_width) - 1;
        self.rx_bits = (self.rx_bits + self.bus_bits as u64).min(cap);

        if self.acc.len() < self.acc_cap_bytes {
            self.acc.extend_from_slice(&word.to_bytes());
        }

        self.state_transition(word);

        let avail = self.received_bits().min(self.acc.len() as u64 * 8);
        if self.header_len_bits.is_none() && self.malformed_value.is_none() {
            if let crate::graph::LengthSpec::Variable {
                field_offset_bits,
                field_width_bits,
                ..
            } = &self.spec.length
            {
                if *field_offset_bits as u64 + *field_width_bits as u64 <= avail {
                    let expr = read_bits(&self.acc, *field_offset_bits as u64, *field_width_bits)
                        .expect("length field within buffered prefix");
                    match self.spec.size_bits(expr) {
                        Ok(len) => self.header_len_bits = Some(len),
                        Err(e) => self.malformed_value = Some(e.value),
                    }
                }
            }
        }

        for f in &self.spec.fields {
            if self.phv_accum.contains_key(&f.name) {
                continue;
            }
            if f.offset_bits as u64 + f.width_bits as u64 <= avail {
                let v = read_bits(&self.acc, f.offset_bits as u64, f.width_bits)
                    .expect("field within buffered prefix");
                self.phv_accum.insert(f.name.clone(), v);
            }
        }
    }
}

/// Left-aligns the remainder of a word stream after `consumed_bits` of
/// header: whole words are dropped, the residue shift comes from the plan's
/// shift table, and each output word stitches two adjacent input words.
///
/// Panics if `consumed_bits` has no entry in a LUT shift plan; that is a
/// planner bug, not a data error.
pub fn pipeline_adjust(
    words: &[WideBits],
    consumed_bits: u64,
    shift_plan: &ShiftPlan,
    bus_bits: u32,
) -> Vec<WideBits> {
    let w = bus_bits as u64;
    let shift = match shift_plan {
        ShiftPlan::Fixed { shift } => *shift,
        ShiftPlan::Lut { entries } => *entries.get(&consumed_bits).unwrap_or_else(|| {
            panic!("shift LUT has no entry for header length {consumed_bits} bits")
        }),
    };
    debug_assert_eq!(shift, consumed_bits % w, "shift plan disagrees with length");
    let n_full = (consumed_bits / w) as usize;
    let zero = WideBits::zero(bus_bits);
    (0..words.len() - n_full)
        .map(|k| {
            let a = &words[n_full + k];
            if shift == 0 {
                a.clone()
            } else {
                let b = words.get(n_full + k + 1).unwrap_or(&zero);
                a.shl(shift).or(&b.shr(w - shift))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Flow {
    Expect(HeaderIdx),
    Accept,
    Dead,
}

#[derive(Debug, Clone)]
struct LevelStream {
    words: Vec<WideBits>,
    real_bits: u64,
    flow: Flow,
}

#[derive(Debug, Clone)]
enum Summary {
    Inactive,
    Parsed {
        len_bits: u64,
        fields: BTreeMap<String, u64>,
        next: Target,
        raw: Vec<u8>,
    },
    Truncated,
    Malformed {
        value: u64,
    },
}

#[derive(Debug, Clone)]
enum InputRoute {
    Source,
    Single(HeaderIdx),
    /// Priority-ordered inputs from the matching plan mux.
    Mux(Vec<HeaderIdx>),
}

/// A plan bound to its graph, ready to stream packets.
pub struct PacketSimulator<'g> {
    graph: &'g ParserGraph,
    plan: &'g PipelinePlan,
    levels: Vec<Vec<HeaderIdx>>,
    routes: Vec<InputRoute>,
    output_route: InputRoute,
    hplans: Vec<&'g HeaderPlan>,
}

impl<'g> PacketSimulator<'g> {
    pub fn new(graph: &'g ParserGraph, plan: &'g PipelinePlan) -> Result<Self, SimError> {
        if plan.bus_width_bits != graph.bus_width_bits {
            return Err(SimError::PlanMismatch(format!(
                "bus width {} vs {}",
                plan.bus_width_bits, graph.bus_width_bits
            )));
        }
        let resolve = |id: &str| {
            graph
                .idx_of(id)
                .ok_or_else(|| SimError::PlanMismatch(format!("unknown header `{id}` in plan")))
        };
        let mut levels = Vec::with_capacity(plan.levels.len());
        let mut level_of = vec![usize::MAX; graph.headers.len()];
        for (li, level) in plan.levels.iter().enumerate() {
            let mut idxs = Vec::with_capacity(level.len());
            for id in level {
                let idx = resolve(id)?;
                if level_of[idx.0] != usize::MAX {
                    return Err(SimError::PlanMismatch(format!(
                        "header `{id}` scheduled twice"
                    )));
                }
                level_of[idx.0] = li;
                idxs.push(idx);
            }
            levels.push(idxs);
        }
        if level_of.contains(&usize::MAX) {
            return Err(SimError::PlanMismatch("plan misses headers".into()));
        }
        let mut hplans = Vec::with_capacity(graph.headers.len());
        for h in &graph.headers {
            hplans.push(
                plan.header_plans.get(&h.id).ok_or_else(|| {
                    SimError::PlanMismatch(format!("no header plan for `{}`", h.id))
                })?,
            );
        }
        let preds = graph.predecessors();
        let mut routes = Vec::with_capacity(graph.headers.len());
        for (i, h) in graph.headers.iter().enumerate() {
            let route = match preds[i].len() {
                0 => InputRoute::Source,
                1 => InputRoute::Single(preds[i][0]),
                _ => {
                    let expected: Vec<String> =
                        crate::plan::input_order(&preds[i], &levels_of(&levels, graph))
                            .iter()
                            .map(|p| graph.id_of(*p).to_owned())
                            .collect();
                    let mux = plan
                        .muxes
                        .iter()
                        .find(|m| {
                            m.site == MuxSite::LevelEntry(level_of[i]) && m.inputs == expected
                        })
                        .ok_or_else(|| {
                            SimError::PlanMismatch(format!("no mux feeds header `{}`", h.id))
                        })?;
                    let mut inputs = Vec::with_capacity(mux.inputs.len());
                    for id in &mux.inputs {
                        inputs.push(resolve(id)?);
                    }
                    InputRoute::Mux(inputs)
                }
            };
            routes.push(route);
        }
        let deepest = levels.last().expect("plan has at least one level");
        let output_route = if deepest.len() >= 2 {
            let mux = plan
                .muxes
                .iter()
                .find(|m| m.site == MuxSite::Output)
                .ok_or_else(|| SimError::PlanMismatch("missing output mux".into()))?;
            let mut inputs = Vec::with_capacity(mux.inputs.len());
            for id in &mux.inputs {
                inputs.push(resolve(id)?);
            }
            InputRoute::Mux(inputs)
        } else {
            InputRoute::Single(deepest[0])
        };
        Ok(PacketSimulator {
            graph,
            plan,
            levels,
            routes,
            output_route,
            hplans,
        })
    }

    /// Streams one packet through the leveled pipeline.
    pub fn run_packet(&self, packet: &[u8]) -> ParseResult {
        self.run(packet, false).0
    }

    /// Same, also returning the raw header/payload bytes seen on the bus.
    pub fn run_packet_captured(&self, packet: &[u8]) -> (ParseResult, RunCapture) {
        let (result, capture) = self.run(packet, true);
        (result, capture.expect("capture requested"))
    }

    fn run(&self, packet: &[u8], want_capture: bool) -> (ParseResult, Option<RunCapture>) {
        let bus = self.plan.bus_width_bits;
        let bus_bytes = bus as usize / 8;
        let total_bits = packet.len() as u64 * 8;
        let nwords = ((packet.len()).div_ceil(bus_bytes)).max(1);
        let words: Vec<WideBits> = (0..nwords)
            .map(|k| {
                let lo = k * bus_bytes;
                let hi = ((k + 1) * bus_bytes).min(packet.len());
                WideBits::from_bytes(packet.get(lo..hi).unwrap_or(&[]), bus)
            })
            .collect();

        let n = self.graph.headers.len();
        let source = LevelStream {
            words,
            real_bits: total_bits,
            flow: Flow::Expect(self.graph.start),
        };
        let mut streams: Vec<Option<LevelStream>> = vec![None; n];
        let mut summaries: Vec<Summary> = vec![Summary::Inactive; n];

        for level in &self.levels {
            for &h in level {
                let input = self.select_input(&self.routes[h.0], &source, &streams, &summaries);
                let (summary, out) = if input.flow == Flow::Expect(h) {
                    self.run_header(h, input)
                } else {
                    (Summary::Inactive, input.clone())
                };
                summaries[h.0] = summary;
                streams[h.0] = Some(out);
            }
        }

        let mut phv: BTreeMap<String, PhvEntry> = self
            .graph
            .headers
            .iter()
            .map(|h| {
                (
                    h.id.clone(),
                    PhvEntry {
                        valid: false,
                        fields: BTreeMap::new(),
                    },
                )
            })
            .collect();
        let mut path = Vec::new();
        let mut captured_headers = Vec::new();
        let mut offset = 0u64;
        let mut cur = self.graph.start;
        let status = loop {
            let id = self.graph.id_of(cur).to_owned();
            match &summaries[cur.0] {
                Summary::Parsed {
                    len_bits,
                    fields,
                    next,
                    raw,
                } => {
                    let entry = phv.get_mut(&id).expect("phv covers all headers");
                    entry.valid = true;
                    entry.fields = fields.clone();
                    path.push(id.clone());
                    if want_capture {
                        captured_headers.push((id, raw.clone()));
                    }
                    offset += len_bits;
                    match next {
                        Target::Accept => break ParseStatus::Ok,
                        Target::Header(x) => cur = *x,
                    }
                }
                Summary::Truncated => break ParseStatus::Truncated,
                Summary::Malformed { value } => {
                    break ParseStatus::Malformed {
                        reason: MalformedReason::LengthOutOfRange {
                            header: id,
                            value: *value,
                        },
                    }
                }
                Summary::Inactive => unreachable!("active chain reached an idle engine"),
            }
        };

        let capture = want_capture.then(|| {
            let payload = if status == ParseStatus::Ok {
                let out = self.select_input(&self.output_route, &source, &streams, &summaries);
                debug_assert_eq!(out.real_bits, total_bits - offset);
                let mut bytes: Vec<u8> = out.words.iter().flat_map(|w| w.to_bytes()).collect();
                bytes.truncate((out.real_bits / 8) as usize);
                bytes
            } else {
                Vec::new()
            };
            RunCapture {
                headers: captured_headers,
                payload,
            }
        });

        let result = ParseResult {
            status,
            path,
            phv,
            latency_cycles: self.plan.registers.len() as u64 + (nwords as u64 - 1),
            payload_offset_bits: offset,
        };
        (result, capture)
    }

    fn select_input<'s>(
        &self,
        route: &InputRoute,
        source: &'s LevelStream,
        streams: &'s [Option<LevelStream>],
        summaries: &[Summary],
    ) -> &'s LevelStream
    where
        'g: 's,
    {
        let stream_of = |idx: HeaderIdx| -> &'s LevelStream {
            streams[idx.0]
                .as_ref()
                .expect("levels are evaluated in order")
        };
        match route {
            InputRoute::Source => source,
            InputRoute::Single(p) => stream_of(*p),
            InputRoute::Mux(inputs) => {
                for &p in inputs {
                    if matches!(summaries[p.0], Summary::Parsed { .. }) {
                        return stream_of(p);
                    }
                }
                stream_of(*inputs.last().expect("mux has inputs"))
            }
        }
    }

    fn run_header(&self, h: HeaderIdx, input: &LevelStream) -> (Summary, LevelStream) {
        let spec = self.graph.header(h);
        let hp = self.hplans[h.0];
        let bus = self.plan.bus_width_bits;
        let dead = |summary: Summary| {
            let stream = LevelStream {
                words: input.words.clone(),
                real_bits: input.real_bits,
                flow: Flow::Dead,
            };
            (summary, stream)
        };

        if input.real_bits < spec.min_len_bits() {
            return dead(Summary::Truncated);
        }
        let mut rt = HeaderRuntime::new(spec, hp, bus);
        for word in &input.words {
            rt.header_analysis(word);
            if rt.malformed_value.is_some() {
                break;
            }
            if let Some(len) = rt.header_len_bits {
                if rt.received_bits() >= len {
                    break;
                }
            }
        }
        if let Some(value) = rt.malformed_value {
            return dead(Summary::Malformed { value });
        }
        let len = rt
            .header_len_bits
            .expect("length resolves within the minimum-length prefix");
        if len > input.real_bits {
            return dead(Summary::Truncated);
        }
        let next = if spec.key.is_some() {
            if rt.next_header_valid {
                rt.next_header.expect("valid flag implies a target")
            } else {
                Target::Accept
            }
        } else {
            spec.transitions
                .first()
                .map(|t| t.next)
                .unwrap_or(Target::Accept)
        };
        debug_assert!(
            spec.fields
                .iter()
                .all(|f| rt.phv_accum.contains_key(&f.name)),
            "all fields extracted by completion"
        );
        let raw = rt.header_bytes(len).to_vec();
        let out_words = pipeline_adjust(&input.words, len, &hp.shift_plan, bus);
        let flow = match next {
            Target::Accept => Flow::Accept,
            Target::Header(x) => Flow::Expect(x),
        };
        let stream = LevelStream {
            words: out_words,
            real_bits: input.real_bits - len,
            flow,
        };
        (
            Summary::Parsed {
                len_bits: len,
                fields: rt.phv_accum,
                next,
                raw,
            },
            stream,
        )
    }
}

fn levels_of(levels: &[Vec<HeaderIdx>], graph: &ParserGraph) -> Vec<usize> {
    let mut out = vec![0usize; graph.headers.len()];
    for (li, level) in levels.iter().enumerate() {
        for &h in level {
            out[h.0] = li;
        }
    }
    out
}

/// Runs a batch of packets; results come back in input order. With the
/// `parallel` feature the packets fan out across a worker pool.
#[cfg(feature = "parallel")]
pub fn simulate_batch(sim: &PacketSimulator<'_>, packets: &[Vec<u8>]) -> Vec<ParseResult> {
    use rayon::prelude::*;
    packets.par_iter().map(|p| sim.run_packet(p)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn simulate_batch(sim: &PacketSimulator<'_>, packets: &[Vec<u8>]) -> Vec<ParseResult> {
    simulate_batch_sequential(sim, packets)
}

/// Single-threaded batch run, always available (benchmark baseline).
pub fn simulate_batch_sequential(
    sim: &PacketSimulator<'_>,
    packets: &[Vec<u8>],
) -> Vec<ParseResult> {
    packets.iter().map(|p| sim.run_packet(p)).collect()
}
