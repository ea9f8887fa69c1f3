//! Parser-graph model: ingestion from the JSON spec format, the in-memory
//! representation, and semantic validation.
//!
//! A parser graph is a DAG whose nodes are protocol headers and whose edges
//! are keyed transitions. Loading only checks structure (syntax, duplicate
//! ids, dangling references); everything semantic lives in [`ParserGraph::validate`],
//! which reports the complete list of violations instead of failing on the
//! first one.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::bits::{b2b, mask64, MAX_KEY_WIDTH_BITS, MAX_WIDTH_BITS};

/// Headers may span several bus words but are capped to keep per-header
/// buffering bounded.
pub const MAX_HEADER_BITS: u64 = 4096;
pub const MIN_BUS_WIDTH_BITS: u32 = 8;

/// Index of a header in [`ParserGraph::headers`] (declaration order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeaderIdx(pub usize);

/// Where a transition goes: another header, or the accepting terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Header(HeaderIdx),
    Accept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyLocation {
    pub offset_bits: u32,
    pub width_bits: u32,
}

impl KeyLocation {
    pub fn end_bits(&self) -> u64 {
        self.offset_bits as u64 + self.width_bits as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionKey {
    pub value: u64,
    pub mask: u64,
    pub next: Target,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub offset_bits: u32,
    pub width_bits: u32,
}

/// Header length rule: fixed byte count, or the linear form
/// `multiplier_bits * x + addend_bits` over a length field `x` taken from the
/// header itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LengthSpec {
    Fixed {
        bytes: u32,
    },
    Variable {
        field_offset_bits: u32,
        field_width_bits: u32,
        multiplier_bits: u32,
        addend_bits: u32,
        min: u32,
        max: u32,
    },
}

#[derive(Debug, Clone)]
pub struct HeaderSpec {
    pub id: String,
    pub name: String,
    pub length: LengthSpec,
    pub key: Option<KeyLocation>,
    pub transitions: Vec<TransitionKey>,
    pub fields: Vec<FieldSpec>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("length field value {value} outside declared range {min}..={max}")]
pub struct LengthOutOfRange {
    pub value: u64,
    pub min: u32,
    pub max: u32,
}

impl HeaderSpec {
    /// Smallest length this header can take, in bits.
    pub fn min_len_bits(&self) -> u64 {
        match &self.length {
            LengthSpec::Fixed { bytes } => b2b(*bytes as u64),
            LengthSpec::Variable {
                multiplier_bits,
                addend_bits,
                min,
                ..
            } => *multiplier_bits as u64 * *min as u64 + *addend_bits as u64,
        }
    }

    /// Largest length this header can take, in bits.
    pub fn max_len_bits(&self) -> u64 {
        match &self.length {
            LengthSpec::Fixed { bytes } => b2b(*bytes as u64),
            LengthSpec::Variable {
                multiplier_bits,
                addend_bits,
                max,
                ..
            } => *multiplier_bits as u64 * *max as u64 + *addend_bits as u64,
        }
    }

    /// Header size for a given length-field value. Fixed headers ignore
    /// `expr_val`; variable ones evaluate the linear form after a range
    /// check, signalling a malformed packet when the value is out of range.
    pub fn size_bits(&self, expr_val: u64) -> Result<u64, LengthOutOfRange> {
        match &self.length {
            LengthSpec::Fixed { bytes } => Ok(b2b(*bytes as u64)),
            LengthSpec::Variable {
                multiplier_bits,
                addend_bits,
                min,
                max,
                ..
            } => {
                if expr_val < *min as u64 || expr_val > *max as u64 {
                    return Err(LengthOutOfRange {
                        value: expr_val,
                        min: *min,
                        max: *max,
                    });
                }
                Ok(*multiplier_bits as u64 * expr_val + *addend_bits as u64)
            }
        }
    }

    /// All lengths this header may legally take, ascending.
    pub fn valid_lengths_bits(&self) -> Vec<u64> {
        match &self.length {
            LengthSpec::Fixed { bytes } => vec![b2b(*bytes as u64)],
            LengthSpec::Variable { min, max, .. } => (*min..=*max)
                .map(|v| self.size_bits(v as u64).expect("value within range"))
                .collect(),
        }
    }
}

/// The full declarative parser design.
#[derive(Debug, Clone)]
pub struct ParserGraph {
    pub name: String,
    pub bus_width_bits: u32,
    pub start: HeaderIdx,
    pub headers: Vec<HeaderSpec>,
    index: BTreeMap<String, HeaderIdx>,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("i/o error reading `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("header list is empty")]
    EmptyHeaders,
    #[error("duplicate header id `{id}`")]
    DuplicateHeaderId { id: String },
    #[error("start header `{id}` is not declared")]
    UnknownStart { id: String },
    #[error("header `{header}` transitions to undeclared header `{next}`")]
    UnknownNext { header: String, next: String },
    #[error("header `{header}`: bad hex literal `{text}` for {what}")]
    BadHex {
        header: String,
        what: &'static str,
        text: String,
    },
    #[error("bus width {width} out of range {min}..={max} or not a multiple of 8",
            min = MIN_BUS_WIDTH_BITS, max = MAX_WIDTH_BITS)]
    BadBusWidth { width: u32 },
}

// ---------------------------------------------------------------------------
// External spec format (JSON).

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    name: String,
    bus_width_bits: u32,
    start: String,
    headers: Vec<HeaderDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderDoc {
    id: String,
    #[serde(default)]
    name: Option<String>,
    length: LengthDoc,
    #[serde(default)]
    key: Option<KeyDoc>,
    #[serde(default)]
    transitions: Vec<TransitionDoc>,
    #[serde(default)]
    fields: Vec<FieldDoc>,
}

#[derive(Deserialize)]
enum LengthDoc {
    #[serde(rename = "fixed_bytes")]
    FixedBytes(u32),
    #[serde(rename = "variable")]
    Variable(VariableDoc),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDoc {
    field: BitRangeDoc,
    multiplier_bits: u32,
    addend_bits: u32,
    min: u32,
    max: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BitRangeDoc {
    offset_bits: u32,
    width_bits: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyDoc {
    offset_bits: u32,
    width_bits: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionDoc {
    #[serde(default = "zero_hex")]
    value: String,
    #[serde(default = "zero_hex")]
    mask: String,
    next: String,
}

fn zero_hex() -> String {
    "0x0".to_owned()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldDoc {
    name: String,
    offset_bits: u32,
    width_bits: u32,
}

fn parse_hex(header: &str, what: &'static str, text: &str) -> Result<u64, LoadError> {
    let bad = || LoadError::BadHex {
        header: header.to_owned(),
        what,
        text: text.to_owned(),
    };
    let digits = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .ok_or_else(bad)?;
    u64::from_str_radix(digits, 16).map_err(|_| bad())
}

impl ParserGraph {
    /// Parses the JSON spec format and resolves references. No semantic
    /// validation happens here; see [`ParserGraph::validate`].
    pub fn load_spec(text: &str) -> Result<ParserGraph, LoadError> {
        let doc: SpecDoc = serde_json::from_str(text).map_err(|e| LoadError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_doc(doc)
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<ParserGraph, LoadError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::load_spec(&text)
    }

    fn from_doc(doc: SpecDoc) -> Result<ParserGraph, LoadError> {
        if doc.headers.is_empty() {
            return Err(LoadError::EmptyHeaders);
        }
        if doc.bus_width_bits < MIN_BUS_WIDTH_BITS
            || doc.bus_width_bits > MAX_WIDTH_BITS
            || !doc.bus_width_bits.is_multiple_of(8)
        {
            return Err(LoadError::BadBusWidth {
                width: doc.bus_width_bits,
            });
        }
        let mut index = BTreeMap::new();
        for (i, h) in doc.headers.iter().enumerate() {
            if index.insert(h.id.clone(), HeaderIdx(i)).is_some() {
                return Err(LoadError::DuplicateHeaderId { id: h.id.clone() });
            }
        }
        let start = *index
            .get(&doc.start)
            .ok_or_else(|| LoadError::UnknownStart {
                id: doc.start.clone(),
            })?;

        let mut headers = Vec::with_capacity(doc.headers.len());
        for h in doc.headers {
            let length = match h.length {
                LengthDoc::FixedBytes(bytes) => LengthSpec::Fixed { bytes },
                LengthDoc::Variable(v) => LengthSpec::Variable {
                    field_offset_bits: v.field.offset_bits,
                    field_width_bits: v.field.width_bits,
                    multiplier_bits: v.multiplier_bits,
                    addend_bits: v.addend_bits,
                    min: v.min,
                    max: v.max,
                },
            };
            let mut transitions = Vec::with_capacity(h.transitions.len());
            for t in &h.transitions {
                let next = if t.next == "ACCEPT" {
                    Target::Accept
                } else {
                    Target::Header(*index.get(&t.next).ok_or_else(|| LoadError::UnknownNext {
                        header: h.id.clone(),
                        next: t.next.clone(),
                    })?)
                };
                transitions.push(TransitionKey {
                    value: parse_hex(&h.id, "value", &t.value)?,
                    mask: parse_hex(&h.id, "mask", &t.mask)?,
                    next,
                });
            }
            headers.push(HeaderSpec {
                name: h.name.unwrap_or_else(|| h.id.clone()),
                id: h.id,
                length,
                key: h.key.map(|k| KeyLocation {
                    offset_bits: k.offset_bits,
                    width_bits: k.width_bits,
                }),
                transitions,
                fields: h
                    .fields
                    .into_iter()
                    .map(|f| FieldSpec {
                        name: f.name,
                        offset_bits: f.offset_bits,
                        width_bits: f.width_bits,
                    })
                    .collect(),
            });
        }
        Ok(ParserGraph {
            name: doc.name,
            bus_width_bits: doc.bus_width_bits,
            start,
            headers,
            index,
        })
    }

    pub fn header(&self, idx: HeaderIdx) -> &HeaderSpec {
        &self.headers[idx.0]
    }

    pub fn idx_of(&self, id: &str) -> Option<HeaderIdx> {
        self.index.get(id).copied()
    }

    pub fn id_of(&self, idx: HeaderIdx) -> &str {
        &self.headers[idx.0].id
    }

    /// Transition targets that are headers (ACCEPT edges omitted), in
    /// declaration order, deduplicated.
    pub fn successors(&self, idx: HeaderIdx) -> Vec<HeaderIdx> {
        let mut out = Vec::new();
        for t in &self.headers[idx.0].transitions {
            if let Target::Header(h) = t.next {
                if !out.contains(&h) {
                    out.push(h);
                }
            }
        }
        out
    }

    /// Predecessor lists for every header, deduplicated, in declaration
    /// order of the predecessor.
    pub fn predecessors(&self) -> Vec<Vec<HeaderIdx>> {
        let mut preds = vec![Vec::new(); self.headers.len()];
        for (i, h) in self.headers.iter().enumerate() {
            for t in &h.transitions {
                if let Target::Header(to) = t.next {
                    if !preds[to.0].contains(&HeaderIdx(i)) {
                        preds[to.0].push(HeaderIdx(i));
                    }
                }
            }
        }
        preds
    }

    /// Checks every semantic rule and returns the complete list of
    /// violations. Violations are data, not failures.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        self.check_acyclic(&mut v);
        self.check_reachable(&mut v);
        for h in &self.headers {
            check_length(h, &mut v);
            check_key(h, self.bus_width_bits, &mut v);
            check_fields(h, &mut v);
        }
        ValidationReport { violations: v }
    }

    fn check_acyclic(&self, out: &mut Vec<Violation>) {
        let n = self.headers.len();
        let mut indeg = vec![0usize; n];
        for i in 0..n {
            for s in self.successors(HeaderIdx(i)) {
                indeg[s.0] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = queue.pop() {
            seen += 1;
            for s in self.successors(HeaderIdx(i)) {
                indeg[s.0] -= 1;
                if indeg[s.0] == 0 {
                    queue.push(s.0);
                }
            }
        }
        if seen < n {
            let cyclic: Vec<String> = (0..n)
                .filter(|&i| indeg[i] > 0)
                .map(|i| self.headers[i].id.clone())
                .collect();
            out.push(Violation::Cycle { headers: cyclic });
        }
    }

    fn check_reachable(&self, out: &mut Vec<Violation>) {
        let n = self.headers.len();
        let mut seen = vec![false; n];
        let mut stack = vec![self.start];
        seen[self.start.0] = true;
        while let Some(i) = stack.pop() {
            for s in self.successors(i) {
                if !seen[s.0] {
                    seen[s.0] = true;
                    stack.push(s);
                }
            }
        }
        for (i, reached) in seen.iter().enumerate() {
            if !reached {
                out.push(Violation::Unreachable {
                    header: self.headers[i].id.clone(),
                });
            }
        }
    }
}

fn check_length(h: &HeaderSpec, out: &mut Vec<Violation>) {
    let id = || h.id.clone();
    match &h.length {
        LengthSpec::Fixed { bytes } => {
            if *bytes == 0 {
                out.push(Violation::ZeroLengthHeader { header: id() });
            }
            if b2b(*bytes as u64) > MAX_HEADER_BITS {
                out.push(Violation::HeaderTooLong {
                    header: id(),
                    bits: b2b(*bytes as u64),
                });
            }
        }
        LengthSpec::Variable {
            field_offset_bits,
            field_width_bits,
            multiplier_bits,
            addend_bits,
            min,
            max,
        } => {
            if *field_width_bits == 0 || *field_width_bits > MAX_KEY_WIDTH_BITS {
                out.push(Violation::LengthFieldWidth {
                    header: id(),
                    width: *field_width_bits,
                });
                return;
            }
            if min > max {
                out.push(Violation::MinExceedsMax {
                    header: id(),
                    min: *min,
                    max: *max,
                });
                return;
            }
            if *field_width_bits < 64 && *max as u64 > mask64(*field_width_bits) {
                out.push(Violation::RangeExceedsLengthField {
                    header: id(),
                    max: *max,
                    width: *field_width_bits,
                });
            }
            let min_len = h.min_len_bits();
            let max_len = h.max_len_bits();
            if min_len == 0 {
                out.push(Violation::ZeroLengthHeader { header: id() });
            }
            if max_len > MAX_HEADER_BITS {
                out.push(Violation::HeaderTooLong {
                    header: id(),
                    bits: max_len,
                });
            }
            let byte_multiple = if min < max {
                *multiplier_bits != 0 && multiplier_bits % 8 == 0 && addend_bits % 8 == 0
            } else {
                min_len.is_multiple_of(8)
            };
            if !byte_multiple {
                out.push(Violation::LengthNotByteMultiple {
                    header: id(),
                    multiplier_bits: *multiplier_bits,
                    addend_bits: *addend_bits,
                });
            }
            if *field_offset_bits as u64 + *field_width_bits as u64 > min_len {
                out.push(Violation::LengthFieldOutOfBounds {
                    header: id(),
                    offset: *field_offset_bits,
                    width: *field_width_bits,
                    min_len,
                });
            }
        }
    }
}

fn check_key(h: &HeaderSpec, bus_width_bits: u32, out: &mut Vec<Violation>) {
    let id = || h.id.clone();
    let Some(key) = &h.key else {
        if h.transitions.len() > 1 {
            out.push(Violation::KeylessMultipleTransitions {
                header: id(),
                count: h.transitions.len(),
            });
        }
        return;
    };
    if key.width_bits == 0 || key.width_bits > MAX_KEY_WIDTH_BITS {
        out.push(Violation::KeyWidth {
            header: id(),
            width: key.width_bits,
        });
        return;
    }
    let min_len = h.min_len_bits();
    if key.end_bits() > min_len {
        out.push(Violation::KeyOutOfBounds {
            header: id(),
            offset: key.offset_bits,
            width: key.width_bits,
            min_len,
        });
    }
    let bus = bus_width_bits as u64;
    if key.offset_bits as u64 / bus != (key.end_bits() - 1) / bus {
        out.push(Violation::KeyStraddlesBusWord {
            header: id(),
            offset: key.offset_bits,
            width: key.width_bits,
            bus_width_bits,
        });
    }
    let width_mask = mask64(key.width_bits);
    for (i, t) in h.transitions.iter().enumerate() {
        if t.mask & !width_mask != 0 || t.value & !width_mask != 0 {
            out.push(Violation::KeyLiteralTooWide {
                header: id(),
                index: i,
                width: key.width_bits,
            });
        }
        if t.value & !t.mask != 0 {
            out.push(Violation::ValueNotInMask {
                header: id(),
                index: i,
                value: t.value,
                mask: t.mask,
            });
        }
    }
    // Pairwise disjointness under the masks: two keys overlap iff some value
    // matches both, which reduces to agreement on the shared care bits.
    for i in 0..h.transitions.len() {
        for j in (i + 1)..h.transitions.len() {
            let a = &h.transitions[i];
            let b = &h.transitions[j];
            if (a.value ^ b.value) & (a.mask & b.mask) == 0 {
                out.push(Violation::OverlappingTransitionKeys {
                    header: id(),
                    first: i,
                    second: j,
                });
            }
        }
    }
}

fn check_fields(h: &HeaderSpec, out: &mut Vec<Violation>) {
    let min_len = h.min_len_bits();
    let mut seen = BTreeMap::new();
    for f in &h.fields {
        if seen.insert(f.name.clone(), ()).is_some() {
            out.push(Violation::DuplicateFieldName {
                header: h.id.clone(),
                field: f.name.clone(),
            });
        }
        if f.width_bits == 0 || f.width_bits > MAX_KEY_WIDTH_BITS {
            out.push(Violation::FieldWidth {
                header: h.id.clone(),
                field: f.name.clone(),
                width: f.width_bits,
            });
            continue;
        }
        if f.offset_bits as u64 + f.width_bits as u64 > min_len {
            out.push(Violation::FieldOutOfBounds {
                header: h.id.clone(),
                field: f.name.clone(),
                offset: f.offset_bits,
                width: f.width_bits,
                min_len,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Violation {
    #[error("cycle: transition relation is cyclic through {headers:?}")]
    Cycle { headers: Vec<String> },
    #[error("unreachable: header `{header}` cannot be reached from start")]
    Unreachable { header: String },
    #[error("header `{header}`: key [{offset}, +{width}) extends past minimum header length {min_len} bits")]
    KeyOutOfBounds {
        header: String,
        offset: u32,
        width: u32,
        min_len: u64,
    },
    #[error("header `{header}`: key [{offset}, +{width}) straddles a {bus_width_bits}-bit bus-word boundary")]
    KeyStraddlesBusWord {
        header: String,
        offset: u32,
        width: u32,
        bus_width_bits: u32,
    },
    #[error("header `{header}`: key width {width} out of range 1..={max}", max = MAX_KEY_WIDTH_BITS)]
    KeyWidth { header: String, width: u32 },
    #[error("header `{header}`: transition {index} value/mask wider than the {width}-bit key")]
    KeyLiteralTooWide {
        header: String,
        index: usize,
        width: u32,
    },
    #[error(
        "header `{header}`: transition {index} value 0x{value:x} has bits outside mask 0x{mask:x}"
    )]
    ValueNotInMask {
        header: String,
        index: usize,
        value: u64,
        mask: u64,
    },
    #[error("header `{header}`: transitions {first} and {second} overlap under their masks")]
    OverlappingTransitionKeys {
        header: String,
        first: usize,
        second: usize,
    },
    #[error("header `{header}`: {count} transitions declared without a key")]
    KeylessMultipleTransitions { header: String, count: usize },
    #[error("header `{header}`: declared length range is empty (min {min} > max {max})")]
    MinExceedsMax { header: String, min: u32, max: u32 },
    #[error("header `{header}`: max length value {max} does not fit the {width}-bit length field")]
    RangeExceedsLengthField {
        header: String,
        max: u32,
        width: u32,
    },
    #[error("header `{header}`: lengths from multiplier {multiplier_bits} / addend {addend_bits} are not all whole bytes (or not distinct)")]
    LengthNotByteMultiple {
        header: String,
        multiplier_bits: u32,
        addend_bits: u32,
    },
    #[error("header `{header}`: length field [{offset}, +{width}) extends past minimum header length {min_len} bits")]
    LengthFieldOutOfBounds {
        header: String,
        offset: u32,
        width: u32,
        min_len: u64,
    },
    #[error("header `{header}`: length field width {width} out of range 1..={max}", max = MAX_KEY_WIDTH_BITS)]
    LengthFieldWidth { header: String, width: u32 },
    #[error("header `{header}`: zero-length header")]
    ZeroLengthHeader { header: String },
    #[error("header `{header}`: maximum length {bits} bits exceeds the {MAX_HEADER_BITS}-bit cap")]
    HeaderTooLong { header: String, bits: u64 },
    #[error("header `{header}`: field `{field}` width {width} out of range 1..={max}", max = MAX_KEY_WIDTH_BITS)]
    FieldWidth {
        header: String,
        field: String,
        width: u32,
    },
    #[error("header `{header}`: field `{field}` [{offset}, +{width}) extends past minimum header length {min_len} bits")]
    FieldOutOfBounds {
        header: String,
        field: String,
        offset: u32,
        width: u32,
        min_len: u64,
    },
    #[error("header `{header}`: duplicate field name `{field}`")]
    DuplicateFieldName { header: String, field: String },
}
