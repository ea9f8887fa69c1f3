//! Seeded test-traffic generator: walks random paths through the parser
//! graph emitting well-formed packets, plus a deliberate share of malformed
//! (out-of-range length field) and truncated packets.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::{mask64, write_bits};
use crate::graph::{LengthSpec, ParserGraph, Target};
use crate::reference::reference_parse;
use crate::sim::ParseStatus;

/// Default generator seed; fixed so corpora reproduce byte-for-byte.
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intent {
    Valid,
    Truncated,
    Malformed,
}

#[derive(Debug, Clone)]
pub struct GeneratedPacket {
    pub bytes: Vec<u8>,
    pub intent: Intent,
}

/// Generates `count` packets. At least every tenth packet exercises a
/// truncated case and another tenth a malformed case (graphs with no
/// variable-length header fall back to truncation for the latter).
pub fn generate(graph: &ParserGraph, count: usize, seed: u64) -> Vec<GeneratedPacket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| match i % 10 {
            0 => truncated_packet(graph, &mut rng),
            1 => malformed_packet(graph, &mut rng),
            _ => valid_packet(graph, &mut rng),
        })
        .collect()
}

fn valid_packet(graph: &ParserGraph, rng: &mut ChaCha8Rng) -> GeneratedPacket {
    for _ in 0..8 {
        let mut bytes = walk_headers(graph, rng, None);
        let payload_len = rng.random_range(0..=48);
        let mut payload = vec![0u8; payload_len];
        rng.fill_bytes(&mut payload);
        bytes.extend_from_slice(&payload);
        if reference_parse(graph, &bytes).status == ParseStatus::Ok {
            return GeneratedPacket {
                bytes,
                intent: Intent::Valid,
            };
        }
    }
    // rejected walks only happen when key and length bits collide; emit the
    // last attempt anyway so the corpus size stays exact
    let bytes = walk_headers(graph, rng, None);
    GeneratedPacket {
        bytes,
        intent: Intent::Valid,
    }
}

fn truncated_packet(graph: &ParserGraph, rng: &mut ChaCha8Rng) -> GeneratedPacket {
    for _ in 0..8 {
        let full = walk_headers(graph, rng, None);
        if full.len() < 2 {
            break;
        }
        let cut = rng.random_range(1..full.len());
        let bytes = full[..cut].to_vec();
        if reference_parse(graph, &bytes).status == ParseStatus::Truncated {
            return GeneratedPacket {
                bytes,
                intent: Intent::Truncated,
            };
        }
    }
    valid_packet(graph, rng)
}

fn malformed_packet(graph: &ParserGraph, rng: &mut ChaCha8Rng) -> GeneratedPacket {
    let has_target = graph.headers.iter().any(sabotage_possible);
    if !has_target {
        return truncated_packet(graph, rng);
    }
    for _ in 0..8 {
        let bytes = walk_headers(graph, rng, Some(Sabotage::BadLengthField));
        if matches!(
            reference_parse(graph, &bytes).status,
            ParseStatus::Malformed { .. }
        ) {
            return GeneratedPacket {
                bytes,
                intent: Intent::Malformed,
            };
        }
    }
    truncated_packet(graph, rng)
}

#[derive(Clone, Copy)]
enum Sabotage {
    BadLengthField,
}

fn sabotage_possible(spec: &crate::graph::HeaderSpec) -> bool {
    match &spec.length {
        LengthSpec::Fixed { .. } => false,
        LengthSpec::Variable {
            field_width_bits,
            min,
            max,
            ..
        } => *min > 0 || (*max as u64) < mask64(*field_width_bits),
    }
}

/// Builds the header section of a packet along a random path. With a
/// sabotage request, the first eligible variable-length header on the walk
/// gets an out-of-range length value and the packet stops there.
fn walk_headers(graph: &ParserGraph, rng: &mut ChaCha8Rng, sabotage: Option<Sabotage>) -> Vec<u8> {
    let mut bytes = Vec::new();
    let mut cur = graph.start;
    loop {
        let spec = graph.header(cur);

        if sabotage.is_some() && sabotage_possible(spec) {
            let LengthSpec::Variable {
                field_offset_bits,
                field_width_bits,
                min,
                max,
                ..
            } = &spec.length
            else {
                unreachable!("sabotage targets are variable-length");
            };
            let mut hdr = vec![0u8; (spec.min_len_bits() / 8) as usize];
            rng.fill_bytes(&mut hdr);
            let field_max = mask64(*field_width_bits);
            let bad = if *min > 0 && (*max as u64 == field_max || rng.random_bool(0.5)) {
                rng.random_range(0..*min as u64)
            } else {
                rng.random_range(*max as u64 + 1..=field_max)
            };
            write_bits(&mut hdr, *field_offset_bits as u64, *field_width_bits, bad)
                .expect("length field fits the minimum-length buffer");
            bytes.extend_from_slice(&hdr);
            return bytes;
        }

        let (len_bits, expr) = match &spec.length {
            LengthSpec::Fixed { .. } => (spec.min_len_bits(), None),
            LengthSpec::Variable { min, max, .. } => {
                let v = rng.random_range(*min as u64..=*max as u64);
                (spec.size_bits(v).expect("value within range"), Some(v))
            }
        };
        let mut hdr = vec![0u8; (len_bits / 8) as usize];
        rng.fill_bytes(&mut hdr);
        if let (
            Some(v),
            LengthSpec::Variable {
                field_offset_bits,
                field_width_bits,
                ..
            },
        ) = (expr, &spec.length)
        {
            write_bits(&mut hdr, *field_offset_bits as u64, *field_width_bits, v)
                .expect("length field within header");
        }

        let next = match &spec.key {
            None => spec
                .transitions
                .first()
                .map(|t| t.next)
                .unwrap_or(Target::Accept),
            Some(key) => {
                let width_mask = mask64(key.width_bits);
                let n = spec.transitions.len();
                let follow = n > 0 && rng.random_range(0..100) < 85;
                let chosen = if follow {
                    Some(rng.random_range(0..n))
                } else {
                    None
                };
                let (kv, next) = match chosen {
                    Some(i) => {
                        let t = &spec.transitions[i];
                        // free bits outside the mask stay random; disjointness
                        // guarantees no other entry can match the result
                        (
                            t.value | (rng.random::<u64>() & !t.mask & width_mask),
                            t.next,
                        )
                    }
                    None => {
                        let mut fallthrough = None;
                        for _ in 0..32 {
                            let kv = rng.random::<u64>() & width_mask;
                            if spec.transitions.iter().all(|t| t.value != (kv & t.mask)) {
                                fallthrough = Some(kv);
                                break;
                            }
                        }
                        match fallthrough {
                            Some(kv) => (kv, Target::Accept),
                            None => {
                                // key space fully covered; follow the first
                                let t = &spec.transitions[0];
                                (
                                    t.value | (rng.random::<u64>() & !t.mask & width_mask),
                                    t.next,
                                )
                            }
                        }
                    }
                };
                write_bits(&mut hdr, key.offset_bits as u64, key.width_bits, kv)
                    .expect("key within header");
                next
            }
        };

        bytes.extend_from_slice(&hdr);
        match next {
            Target::Accept => return bytes,
            Target::Header(x) => cur = x,
        }
    }
}
