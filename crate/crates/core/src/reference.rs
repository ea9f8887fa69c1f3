//! Sequential reference parser: a byte-walking interpreter of the parser
//! graph with no pipeline, no bus words, and no shared extraction code.
//! Used as the independent oracle for pipeline-equivalence testing;
//! `latency_cycles` is reported as 0 because the reference has no pipeline.

use std::collections::BTreeMap;

use crate::graph::{LengthSpec, ParserGraph, Target};
use crate::sim::{results_equivalent, MalformedReason, ParseResult, ParseStatus, PhvEntry};

/// Bit-at-a-time slice read, deliberately naive.
fn bits_at(packet: &[u8], offset: u64, width: u32) -> u64 {
    let mut v = 0u64;
    for k in 0..width as u64 {
        let pos = offset + k;
        let bit = (packet[(pos / 8) as usize] >> (7 - pos % 8)) & 1;
        v = (v << 1) | bit as u64;
    }
    v
}

/// Walks the packet header by header, mirroring the parse semantics:
/// minimum-length check, length resolution, field extraction, key match
/// (falling through to ACCEPT when nothing matches).
pub fn reference_parse(graph: &ParserGraph, packet: &[u8]) -> ParseResult {
    let total_bits = packet.len() as u64 * 8;
    let mut phv: BTreeMap<String, PhvEntry> = graph
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
    let mut offset = 0u64;
    let mut cur = graph.start;

    let status = loop {
        let spec = graph.header(cur);
        let remaining = total_bits - offset;
        if remaining < spec.min_len_bits() {
            break ParseStatus::Truncated;
        }
        let len = match &spec.length {
            LengthSpec::Fixed { .. } => spec.min_len_bits(),
            LengthSpec::Variable {
                field_offset_bits,
                field_width_bits,
                ..
            } => {
                let expr = bits_at(
                    packet,
                    offset + *field_offset_bits as u64,
                    *field_width_bits,
                );
                match spec.size_bits(expr) {
                    Ok(len) => len,
                    Err(e) => {
                        break ParseStatus::Malformed {
                            reason: MalformedReason::LengthOutOfRange {
                                header: spec.id.clone(),
                                value: e.value,
                            },
                        }
                    }
                }
            }
        };
        if remaining < len {
            break ParseStatus::Truncated;
        }

        let entry = phv.get_mut(&spec.id).expect("phv covers all headers");
        entry.valid = true;
        for f in &spec.fields {
            entry.fields.insert(
                f.name.clone(),
                bits_at(packet, offset + f.offset_bits as u64, f.width_bits),
            );
        }
        path.push(spec.id.clone());
        offset += len;

        let next = match &spec.key {
            None => spec
                .transitions
                .first()
                .map(|t| t.next)
                .unwrap_or(Target::Accept),
            Some(key) => {
                let kv = bits_at(
                    packet,
                    offset - len + key.offset_bits as u64,
                    key.width_bits,
                );
                spec.transitions
                    .iter()
                    .find(|t| t.value == (kv & t.mask))
                    .map(|t| t.next)
                    .unwrap_or(Target::Accept)
            }
        };
        match next {
            Target::Accept => break ParseStatus::Ok,
            Target::Header(x) => cur = x,
        }
    };

    ParseResult {
        status,
        path,
        phv,
        latency_cycles: 0,
        payload_offset_bits: offset,
    }
}

/// Runs every packet through both the pipeline and the reference parser and
/// returns the indexes that disagree (empty means fully equivalent).
pub fn divergences(
    sim: &crate::sim::PacketSimulator<'_>,
    graph: &ParserGraph,
    packets: &[Vec<u8>],
) -> Vec<usize> {
    let piped = crate::sim::simulate_batch(sim, packets);
    piped
        .iter()
        .enumerate()
        .filter(|(i, r)| !results_equivalent(r, &reference_parse(graph, &packets[*i])))
        .map(|(i, _)| i)
        .collect()
}
