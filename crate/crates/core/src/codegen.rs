//! Source-text backends.
//!
//! `mpo-cxx` renders a plan as HLS-flavoured C++: a single generic
//! parser-node library shared by every design, a per-design types header
//! carrying PHV records and the per-node constant tables, and a top-level
//! pipeline that statically instantiates one specialized object per graph
//! node, wiring levels through temporary word arrays and rendering each mux
//! site as exactly one conditional ternary expression.
//!
//! Bundles are deterministic: the same plan always yields byte-identical
//! files. Nothing here is compiled in-tree; golden-file tests pin the text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{LengthSpec, ParserGraph, Target};
use crate::plan::{MuxSite, MuxSpec, PipelinePlan, ShiftPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendId {
    MpoCxx,
    PlanReport,
}

impl BackendId {
    pub fn available() -> &'static [&'static str] {
        &["mpo-cxx", "plan-report"]
    }
}

impl FromStr for BackendId {
    type Err = EmitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mpo-cxx" => Ok(BackendId::MpoCxx),
            "plan-report" => Ok(BackendId::PlanReport),
            other => Err(EmitError::UnknownBackend {
                requested: other.to_owned(),
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("unknown backend `{requested}`; available: {}", BackendId::available().join(", "))]
    UnknownBackend { requested: String },
    #[error("plan does not match graph: {0}")]
    PlanGraphMismatch(String),
    #[error("i/o error writing `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A deterministic set of generated files, keyed by path relative to the
/// design's output directory. Every file ends with a newline; the manifest
/// is itself one of the files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceBundle {
    pub design: String,
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    purpose: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest {
    backend: String,
    design: String,
    files: Vec<ManifestEntry>,
}

impl SourceBundle {
    fn with_manifest(
        design: &str,
        backend: &str,
        files: Vec<(&str, String, &str)>,
    ) -> SourceBundle {
        let manifest = Manifest {
            backend: backend.to_owned(),
            design: design.to_owned(),
            files: files
                .iter()
                .map(|(path, text, purpose)| ManifestEntry {
                    path: (*path).to_owned(),
                    purpose: (*purpose).to_owned(),
                    bytes: text.len(),
                })
                .collect(),
        };
        let value = serde_json::to_value(&manifest).expect("manifest serializes");
        let mut manifest_text = serde_json::to_string_pretty(&value).expect("manifest prints");
        manifest_text.push('\n');
        let mut map: BTreeMap<String, String> = files
            .into_iter()
            .map(|(path, text, _)| (path.to_owned(), text))
            .collect();
        map.insert("MANIFEST.json".to_owned(), manifest_text);
        SourceBundle {
            design: design.to_owned(),
            files: map,
        }
    }

    /// Writes the bundle under `<out_root>/gen/<design>/`.
    pub fn write_to(&self, out_root: &Path) -> Result<std::path::PathBuf, EmitError> {
        let dir = out_root.join("gen").join(&self.design);
        std::fs::create_dir_all(&dir).map_err(|source| EmitError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for (name, text) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|source| EmitError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(dir)
    }
}

/// Lowercase identifiers: non-alphanumerics become underscores, a leading
/// digit gets an `h` prefix, collisions get a numeric suffix.
pub fn sanitize_ident(raw: &str, used: &mut Vec<String>) -> String {
    let mut s: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        s.push('h');
    }
    if s.chars().next().unwrap().is_ascii_digit() {
        s.insert(0, 'h');
    }
    if used.contains(&s) {
        let mut n = 2;
        while used.contains(&format!("{s}_{n}")) {
            n += 1;
        }
        s = format!("{s}_{n}");
    }
    used.push(s.clone());
    s
}

fn camel(ident: &str) -> String {
    ident
        .split('_')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let mut c = p.chars();
            let head = c.next().unwrap().to_ascii_uppercase();
            format!("{head}{}", c.as_str())
        })
        .collect()
}

/// Per-node naming derived from the header id.
struct NodeNames {
    ident: String,       // object + table prefix: eth
    type_prefix: String, // PHV/layout type prefix: Eth
    enum_id: String,     // HDR_ETH
}

fn node_names(graph: &ParserGraph) -> Vec<NodeNames> {
    let mut used = Vec::new();
    graph
        .headers
        .iter()
        .map(|h| {
            let ident = sanitize_ident(&h.id, &mut used);
            NodeNames {
                type_prefix: camel(&ident),
                enum_id: format!("HDR_{}", ident.to_ascii_uppercase()),
                ident,
            }
        })
        .collect()
}

fn check_match(graph: &ParserGraph, plan: &PipelinePlan) -> Result<(), EmitError> {
    if plan.design != graph.name {
        return Err(EmitError::PlanGraphMismatch(format!(
            "design `{}` vs graph `{}`",
            plan.design, graph.name
        )));
    }
    if plan.bus_width_bits != graph.bus_width_bits {
        return Err(EmitError::PlanGraphMismatch("bus width differs".into()));
    }
    for h in &graph.headers {
        if !plan.header_plans.contains_key(&h.id) {
            return Err(EmitError::PlanGraphMismatch(format!(
                "plan misses header `{}`",
                h.id
            )));
        }
    }
    let scheduled: usize = plan.levels.iter().map(|l| l.len()).sum();
    if scheduled != graph.headers.len() {
        return Err(EmitError::PlanGraphMismatch(
            "plan schedules a different node count".into(),
        ));
    }
    Ok(())
}

/// Emits the bundle for a backend. `plan` must have been produced from
/// `graph`.
pub fn emit(
    graph: &ParserGraph,
    plan: &PipelinePlan,
    backend: BackendId,
) -> Result<SourceBundle, EmitError> {
    check_match(graph, plan)?;
    match backend {
        BackendId::MpoCxx => Ok(emit_mpo_cxx(graph, plan)),
        BackendId::PlanReport => Ok(render_plan_report(graph, plan)),
    }
}

// ---------------------------------------------------------------------------
// mpo-cxx backend

/// The shared parser-node library. Emitted verbatim, once per bundle, for
/// every design: specialization happens only through template parameters and
/// constructor constants, never by copying this text.
const GENERIC_MODULE: &str = r#"// module.hpp -- generic packet-parser node library.
//
// One definition serves every parser node. The dialect stays inside the
// subset common HLS front ends synthesize: static polymorphism (CRTP)
// instead of virtual dispatch, lambdas instead of function pointers,
// fixed-bound std::array instead of dynamic containers. No tool pragmas are
// emitted; insert scheduling directives in Parser() and HeaderAnalysis()
// as your flow requires.
#ifndef PARSER_NODE_MODULE_HPP
#define PARSER_NODE_MODULE_HPP

#include <array>
#include <cstddef>
#include <utility>

#include "ap_int.h" // vendor arbitrary-precision integer types

using std::array;
using std::pair;
using std::size_t;

typedef ap_uint<16> headerIDType;
typedef pair<unsigned, unsigned> FieldDefType; // (offset bits, width bits)

struct KeyEntryType {
    unsigned long long KeyVal;
    unsigned long long KeyMask;
    headerIDType NextHeader;
};

// Size in bits needed to represent the value n; numbits(0) == 1.
constexpr unsigned numbits(unsigned long long n) {
    return n < 2ULL ? 1u : 1u + numbits(n >> 1);
}

// Bytes to bits.
constexpr unsigned long long B2b(unsigned long long bytes) {
    return bytes * 8ULL;
}

// The width least-significant bits set.
constexpr unsigned long long createMask(unsigned width) {
    return width >= 64u ? ~0ULL : (1ULL << width) - 1ULL;
}

// Right shift aligning a key ending at key_end_bit (MSB-first from the
// header start) with the least-significant bits of the bus word holding it;
// a key ending exactly on a word boundary needs no shift.
constexpr unsigned long long shift_def(unsigned long long header_bits,
                                       unsigned long long bus_bits,
                                       unsigned long long key_end_bit) {
    return (key_end_bit % bus_bits) == 0ULL ? 0ULL
                                            : bus_bits - (key_end_bit % bus_bits);
}

// Header-size dispatch, resolved at compile time: fixed formats answer from
// a constant, variable formats evaluate their linear length formula.
template <unsigned HSIZE_BITS, class T_DHeaderFormat>
struct HeaderFormat {
    ap_uint<HSIZE_BITS> getHeaderSize(const ap_uint<HSIZE_BITS>& expr_val) const {
        return static_cast<const T_DHeaderFormat*>(this)->getSpecHeaderSize(expr_val);
    }
};

template <unsigned HSIZE_BITS, unsigned long long N_Bits>
struct fixedHeaderFormat
    : public HeaderFormat<HSIZE_BITS, fixedHeaderFormat<HSIZE_BITS, N_Bits> > {
    ap_uint<HSIZE_BITS> getSpecHeaderSize(const ap_uint<HSIZE_BITS>&) const {
        return N_Bits;
    }
};

template <unsigned HSIZE_BITS, unsigned long long N_Mult, unsigned long long N_Add>
struct varHeaderFormat
    : public HeaderFormat<HSIZE_BITS, varHeaderFormat<HSIZE_BITS, N_Mult, N_Add> > {
    ap_uint<HSIZE_BITS> getSpecHeaderSize(const ap_uint<HSIZE_BITS>& expr_val) const {
        return (N_Mult * expr_val) + N_Add;
    }
};

// Generic parser node. N_Size is the largest header size in bytes,
// N_BusSize the bus width in bits; T_HeaderLayout carries the per-node
// constant tables and T_DHeader the concrete node class (CRTP).
template <unsigned N_Size, unsigned N_BusSize, class T_HeaderLayout, class T_DHeader>
class Header {
  protected:
    typedef ap_uint<numbits(B2b(N_Size))> RXBitsType;
    typedef ap_uint<N_BusSize> PktBusType;

    const headerIDType instanceID;
    const T_HeaderLayout HeaderLayout;
    const unsigned long long stateTransShiftVal;
    const array<bool, T_HeaderLayout::LEN_COUNT> HeaderBusCompVal;
    array<PktBusType, (B2b(N_Size) + N_BusSize - 1) / N_BusSize> rxBuf;
    RXBitsType rxBits;
    headerIDType NextHeader;
    bool NextHeaderValid;

  public:
    template <typename T, typename F>
    const T init_array(const F& func) const {
        T arr = T();
        for (size_t i = 0; i < arr.size(); ++i)
            arr[i] = func(i);
        return arr;
    }

    Header(const headerIDType instance_id, const T_HeaderLayout& HLayout)
        : instanceID(instance_id),
          HeaderLayout(HLayout),
          stateTransShiftVal(shift_def(
              B2b(N_Size), N_BusSize,
              HLayout.KeyLocation.first + HLayout.KeyLocation.second)),
          HeaderBusCompVal(init_array<array<bool, T_HeaderLayout::LEN_COUNT> >(
              [HLayout](size_t i) {
                  // does this valid length spill past one bus word
                  return HLayout.ArrLenLookup[i] > N_BusSize;
              })),
          rxBits(0),
          NextHeader(0),
          NextHeaderValid(false) {}

    // Evaluates the transition keys once the bus word holding the key has
    // arrived. Keys are pairwise disjoint, so match order is irrelevant.
    void StateTransition(const PktBusType& PktIn) {
        typedef unsigned long long KeyType;
        const KeyType DataInMask = createMask(HeaderLayout.KeyLocation.second);
        KeyType packetKeyVal = (PktIn >> stateTransShiftVal) & DataInMask;
        if (!NextHeaderValid && (rxBits > HeaderLayout.KeyLocation.first)) {
            for (const KeyEntryType& key : HeaderLayout.Key) {
                if (key.KeyVal == (packetKeyVal & key.KeyMask)) {
                    NextHeader = key.NextHeader;
                    NextHeaderValid = true;
                }
            }
        }
    }

    // One bus beat: buffer it, advance the received-bit counter, run the
    // state transition, extract the fields whose bits have arrived, and
    // hand the tail to the derived node for realignment.
    template <class T_PHV>
    void HeaderAnalysis(const PktBusType& PktIn, T_PHV& PHV, PktBusType& PktOut) {
        if (rxBits < B2b(N_Size))
            rxBuf[rxBits / N_BusSize] = PktIn;
        rxBits = rxBits + N_BusSize;
        StateTransition(PktIn);
        for (size_t i = 0; i < HeaderLayout.Fields.size(); ++i) {
            const FieldDefType& f = HeaderLayout.Fields[i];
            if (rxBits > (f.first + f.second - 1u))
                PHV.set(i, extractField(f));
        }
        const unsigned long long headerBits =
            static_cast<const T_DHeader*>(this)->resolvedHeaderSize();
        if (rxBits >= headerBits) {
            PHV.Valid = true;
            static_cast<T_DHeader*>(this)->PipelineAdjust(PktIn, headerBits, PktOut);
        } else {
            PktOut = PktIn;
        }
    }

    // MSB-first slice read out of the buffered header prefix.
    unsigned long long extractField(const FieldDefType& f) const {
        const PktBusType& word = rxBuf[f.first / N_BusSize];
        const unsigned endBit = (f.first % N_BusSize) + f.second;
        return static_cast<unsigned long long>(word >> (N_BusSize - endBit)) &
               createMask(f.second);
    }
};

// Fixed-size node: the alignment shift is one hardwired constant.
template <unsigned N_Size, unsigned N_BusSize, class T_HeaderLayout>
class FixedHeader
    : public Header<N_Size, N_BusSize, T_HeaderLayout,
                    FixedHeader<N_Size, N_BusSize, T_HeaderLayout> > {
    typedef Header<N_Size, N_BusSize, T_HeaderLayout,
                   FixedHeader<N_Size, N_BusSize, T_HeaderLayout> >
        Base;

  public:
    FixedHeader(const headerIDType instance_id, const T_HeaderLayout& HLayout)
        : Base(instance_id, HLayout) {}

    unsigned long long resolvedHeaderSize() const {
        return Base::HeaderLayout.ArrLenLookup[0];
    }

    void PipelineAdjust(const typename Base::PktBusType& PktIn,
                        unsigned long long,
                        typename Base::PktBusType& PktOut) {
        PktOut = PktIn << Base::HeaderLayout.ShiftLookup[0];
    }
};

// Variable-size node: the shift comes from a small lookup table holding only
// the set of valid shift operands, instead of a general barrel shifter.
template <unsigned N_Size, unsigned N_BusSize, class T_HeaderLayout>
class VariableHeader
    : public Header<N_Size, N_BusSize, T_HeaderLayout,
                    VariableHeader<N_Size, N_BusSize, T_HeaderLayout> > {
    typedef Header<N_Size, N_BusSize, T_HeaderLayout,
                   VariableHeader<N_Size, N_BusSize, T_HeaderLayout> >
        Base;
    typedef varHeaderFormat<64u, T_HeaderLayout::LEN_MULT, T_HeaderLayout::LEN_ADD>
        FormatType;
    FormatType format;

  public:
    VariableHeader(const headerIDType instance_id, const T_HeaderLayout& HLayout)
        : Base(instance_id, HLayout) {}

    unsigned long long resolvedHeaderSize() const {
        const FieldDefType& f = Base::HeaderLayout.LenField;
        const ap_uint<64> expr_val = Base::extractField(f);
        return format.getHeaderSize(expr_val);
    }

    void PipelineAdjust(const typename Base::PktBusType& PktIn,
                        unsigned long long headerBits,
                        typename Base::PktBusType& PktOut) {
        unsigned long long shift = 0;
        for (size_t i = 0; i < Base::HeaderLayout.ArrLenLookup.size(); ++i) {
            if (Base::HeaderLayout.ArrLenLookup[i] == headerBits)
                shift = Base::HeaderLayout.ShiftLookup[i];
        }
        PktOut = PktIn << shift;
    }
};

#endif // PARSER_NODE_MODULE_HPP
"#;

fn ull_list(values: impl IntoIterator<Item = u64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v}ULL"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn render_types(graph: &ParserGraph, plan: &PipelinePlan, names: &[NodeNames]) -> String {
    let mut s = String::new();
    let mut used = Vec::new();
    let design_ident = sanitize_ident(&graph.name, &mut used);
    let guard = format!("{}_TYPES_HPP", design_ident.to_ascii_uppercase());
    let _ = writeln!(
        s,
        "// types.hpp -- PHV records and per-node constant tables for design `{}`.",
        graph.name
    );
    let _ = writeln!(s, "#ifndef {guard}");
    let _ = writeln!(s, "#define {guard}");
    let _ = writeln!(s);
    let _ = writeln!(s, "#include \"module.hpp\"");
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "static const unsigned BUS_WIDTH_BITS = {}u;",
        plan.bus_width_bits
    );
    let _ = writeln!(s, "typedef ap_uint<{}> PktDataType;", plan.bus_width_bits);
    let _ = writeln!(s);
    let _ = writeln!(s, "enum HeaderIdEnum {{");
    for (i, n) in names.iter().enumerate() {
        let _ = writeln!(s, "    {} = {i},", n.enum_id);
    }
    let _ = writeln!(s, "    HDR_ACCEPT = {}", names.len());
    let _ = writeln!(s, "}};");

    for (i, h) in graph.headers.iter().enumerate() {
        let n = &names[i];
        let hp = &plan.header_plans[&h.id];
        let _ = writeln!(s);
        let kind = match &h.length {
            LengthSpec::Fixed { bytes } => format!("fixed {bytes} bytes"),
            LengthSpec::Variable { min, max, .. } => format!("variable, units {min}..{max}"),
        };
        let _ = writeln!(s, "// --- node {}: {kind}", h.id);
        let _ = writeln!(s, "struct {}PHVDataType {{", n.type_prefix);
        for f in &h.fields {
            let _ = writeln!(s, "    ap_uint<{}> {};", f.width_bits, f.name);
        }
        let _ = writeln!(s, "    bool Valid;");
        let _ = writeln!(s, "    void set(size_t i, unsigned long long v) {{");
        if h.fields.is_empty() {
            let _ = writeln!(s, "        (void)i;");
            let _ = writeln!(s, "        (void)v;");
        } else {
            let _ = writeln!(s, "        switch (i) {{");
            for (fi, f) in h.fields.iter().enumerate() {
                let _ = writeln!(s, "            case {fi}: {} = v; break;", f.name);
            }
            let _ = writeln!(s, "            default: break;");
            let _ = writeln!(s, "        }}");
        }
        let _ = writeln!(s, "    }}");
        let _ = writeln!(s, "}};");
        let _ = writeln!(s);

        // transitions; keyless nodes get one match-all entry
        let key_entries: Vec<String> = if h.key.is_some() {
            h.transitions
                .iter()
                .map(|t| {
                    let next = match t.next {
                        Target::Header(idx) => names[idx.0].enum_id.clone(),
                        Target::Accept => "HDR_ACCEPT".to_owned(),
                    };
                    format!("{{0x{:x}ULL, 0x{:x}ULL, {next}}}", t.value, t.mask)
                })
                .collect()
        } else {
            let next = h
                .transitions
                .first()
                .map(|t| match t.next {
                    Target::Header(idx) => names[idx.0].enum_id.clone(),
                    Target::Accept => "HDR_ACCEPT".to_owned(),
                })
                .unwrap_or_else(|| "HDR_ACCEPT".to_owned());
            vec![format!("{{0x0ULL, 0x0ULL, {next}}}")]
        };
        let lengths = h.valid_lengths_bits();
        let shifts: Vec<u64> = lengths
            .iter()
            .map(|l| l % plan.bus_width_bits as u64)
            .collect();
        let (key_off, key_width) = h
            .key
            .as_ref()
            .map(|k| (k.offset_bits, k.width_bits))
            .unwrap_or((0, 0));

        let _ = writeln!(s, "struct {}LayoutType {{", n.type_prefix);
        let _ = writeln!(
            s,
            "    static const size_t KEY_COUNT = {};",
            key_entries.len()
        );
        let _ = writeln!(s, "    static const size_t LEN_COUNT = {};", lengths.len());
        let _ = writeln!(
            s,
            "    static const size_t FIELD_COUNT = {};",
            h.fields.len()
        );
        if let LengthSpec::Variable {
            multiplier_bits,
            addend_bits,
            ..
        } = &h.length
        {
            let _ = writeln!(
                s,
                "    static const unsigned long long LEN_MULT = {multiplier_bits}ULL;"
            );
            let _ = writeln!(
                s,
                "    static const unsigned long long LEN_ADD = {addend_bits}ULL;"
            );
        }
        let _ = writeln!(s, "    pair<unsigned, unsigned> KeyLocation;");
        let _ = writeln!(s, "    array<KeyEntryType, KEY_COUNT> Key;");
        let _ = writeln!(s, "    array<unsigned long long, LEN_COUNT> ArrLenLookup;");
        let _ = writeln!(s, "    array<unsigned long long, LEN_COUNT> ShiftLookup;");
        let _ = writeln!(s, "    array<FieldDefType, FIELD_COUNT> Fields;");
        if let LengthSpec::Variable {
            field_offset_bits,
            field_width_bits,
            ..
        } = &h.length
        {
            let _ = writeln!(
                s,
                "    FieldDefType LenField = FieldDefType({field_offset_bits}u, {field_width_bits}u);"
            );
        }
        let _ = writeln!(s, "}};");
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "static const {}LayoutType {}_layout = {{",
            n.type_prefix, n.ident
        );
        let _ = writeln!(
            s,
            "    /* KeyLocation  */ pair<unsigned, unsigned>({key_off}u, {key_width}u),"
        );
        let _ = writeln!(
            s,
            "    /* Key          */ {{{{{}}}}},",
            key_entries.join(", ")
        );
        let _ = writeln!(
            s,
            "    /* ArrLenLookup */ {{{{{}}}}},",
            ull_list(lengths.iter().copied())
        );
        let _ = writeln!(
            s,
            "    /* ShiftLookup  */ {{{{{}}}}},",
            ull_list(shifts.iter().copied())
        );
        let fields = h
            .fields
            .iter()
            .map(|f| format!("FieldDefType({}u, {}u)", f.offset_bits, f.width_bits))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(s, "    /* Fields       */ {{{{{fields}}}}},");
        let _ = writeln!(s, "}};");
        // keep the planner's key-shift constant visible next to the tables
        if let Some(shift) = hp.state_shift {
            let _ = writeln!(
                s,
                "static const unsigned long long {}_KEY_SHIFT = {shift}ULL;",
                n.ident.to_ascii_uppercase()
            );
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "#endif // {guard}");
    s
}

fn mux_expr(mux: &MuxSpec, graph: &ParserGraph, names: &[NodeNames]) -> String {
    // left fold of 2-way selections; the last input is the default
    let idx_of = |id: &str| graph.idx_of(id).expect("mux input exists").0;
    let mut expr = format!("tmpPOut[{}]", idx_of(mux.inputs.last().unwrap()));
    for id in mux.inputs.iter().rev().skip(1) {
        let i = idx_of(id);
        expr = format!(
            "(tmp{}PHV.Valid) ? tmpPOut[{i}] : {expr}",
            names[i].type_prefix
        );
    }
    expr
}

fn render_pipeline(graph: &ParserGraph, plan: &PipelinePlan, names: &[NodeNames]) -> String {
    let n = graph.headers.len();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "// pipeline.cpp -- parser pipeline for design `{}`.",
        graph.name
    );
    let _ = writeln!(
        s,
        "// {} nodes in {} levels; {} register banks; {} mux sites.",
        n,
        plan.levels.len(),
        plan.registers.len(),
        plan.muxes.len()
    );
    let _ = writeln!(s, "#include \"types.hpp\"");
    let _ = writeln!(s);
    let _ = writeln!(s, "void Parser(const PktDataType& PktIn,");
    for names_i in names.iter() {
        let _ = writeln!(
            s,
            "            {}PHVDataType& {}_phv,",
            names_i.type_prefix, names_i.ident
        );
    }
    let _ = writeln!(s, "            PktDataType& PktOut) {{");
    let _ = writeln!(s, "    array<PktDataType, {n}> tmpPIn;");
    let _ = writeln!(s, "    array<PktDataType, {n}> tmpPOut;");
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "    // one statically-constructed specialized object per graph node"
    );
    for (i, h) in graph.headers.iter().enumerate() {
        let node = &names[i];
        let max_bytes = h.max_len_bits() / 8;
        let class = match &h.length {
            LengthSpec::Fixed { .. } => "FixedHeader",
            LengthSpec::Variable { .. } => "VariableHeader",
        };
        let _ = writeln!(
            s,
            "    static {class}<{max_bytes}u, {}u, {}LayoutType> {}({}, {}_layout);",
            plan.bus_width_bits, node.type_prefix, node.ident, node.enum_id, node.ident
        );
        let _ = writeln!(
            s,
            "    static {}PHVDataType tmp{}PHV;",
            node.type_prefix, node.type_prefix
        );
    }

    // resolve each level's input expressions
    let level_of: BTreeMap<&str, usize> = plan
        .levels
        .iter()
        .enumerate()
        .flat_map(|(li, level)| level.iter().map(move |id| (id.as_str(), li)))
        .collect();
    let preds = graph.predecessors();

    for (li, level) in plan.levels.iter().enumerate() {
        let _ = writeln!(s);
        if li == 0 {
            let _ = writeln!(s, "    // level 0");
        } else {
            let _ = writeln!(s, "    // register bank {} -> level {li}", li - 1);
        }
        // distinct input routes for this level, in first-consumer order
        let mut routes: Vec<(String, String)> = Vec::new(); // (expr, temp name)
        for id in level {
            let idx = graph.idx_of(id).expect("level ids resolve");
            if preds[idx.0].is_empty() {
                continue;
            }
            let expr = if preds[idx.0].len() == 1 {
                format!("tmpPOut[{}]", preds[idx.0][0].0)
            } else {
                let mux = plan
                    .muxes
                    .iter()
                    .find(|m| {
                        m.site == MuxSite::LevelEntry(level_of[id.as_str()])
                            && m.inputs
                                .iter()
                                .all(|inp| preds[idx.0].contains(&graph.idx_of(inp).unwrap()))
                            && m.inputs.len() == preds[idx.0].len()
                    })
                    .expect("plan holds a mux for every convergence");
                mux_expr(mux, graph, names)
            };
            if !routes.iter().any(|(e, _)| *e == expr) {
                let temp = format!("stage{li}_bus{}", routes.len());
                routes.push((expr, temp));
            }
        }
        for (expr, temp) in &routes {
            let _ = writeln!(s, "    const PktDataType {temp} = {expr};");
        }
        for id in level {
            let idx = graph.idx_of(id).expect("level ids resolve");
            let node = &names[idx.0];
            let input = if preds[idx.0].is_empty() {
                "PktIn".to_owned()
            } else {
                let expr = if preds[idx.0].len() == 1 {
                    format!("tmpPOut[{}]", preds[idx.0][0].0)
                } else {
                    let mux = plan
                        .muxes
                        .iter()
                        .find(|m| {
                            m.site == MuxSite::LevelEntry(level_of[id.as_str()])
                                && m.inputs.len() == preds[idx.0].len()
                                && m.inputs
                                    .iter()
                                    .all(|inp| preds[idx.0].contains(&graph.idx_of(inp).unwrap()))
                        })
                        .expect("plan holds a mux for every convergence");
                    mux_expr(mux, graph, names)
                };
                routes
                    .iter()
                    .find(|(e, _)| *e == expr)
                    .map(|(_, t)| t.clone())
                    .expect("route registered")
            };
            let _ = writeln!(s, "    tmpPIn[{}] = {input};", idx.0);
            let _ = writeln!(
                s,
                "    {}.HeaderAnalysis(tmpPIn[{}], tmp{}PHV, tmpPOut[{}]);",
                node.ident, idx.0, node.type_prefix, idx.0
            );
            let _ = writeln!(s, "    {}_phv = tmp{}PHV;", node.ident, node.type_prefix);
        }
    }

    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "    // register bank {} -> output",
        plan.registers.len() - 1
    );
    let out_expr = match plan.muxes.iter().find(|m| m.site == MuxSite::Output) {
        Some(mux) => mux_expr(mux, graph, names),
        None => {
            let deepest = plan.levels.last().expect("at least one level");
            format!(
                "tmpPOut[{}]",
                graph.idx_of(&deepest[0]).expect("deepest id resolves").0
            )
        }
    };
    let _ = writeln!(s, "    const PktDataType out_bus = {out_expr};");
    let _ = writeln!(s, "    PktOut = out_bus;");
    let _ = writeln!(s, "}}");
    s
}

fn emit_mpo_cxx(graph: &ParserGraph, plan: &PipelinePlan) -> SourceBundle {
    let names = node_names(graph);
    let types = render_types(graph, plan, &names);
    let pipeline = render_pipeline(graph, plan, &names);
    SourceBundle::with_manifest(
        &graph.name,
        "mpo-cxx",
        vec![
            (
                "module.hpp",
                GENERIC_MODULE.to_owned(),
                "generic parser-node library (design-independent, single definition)",
            ),
            (
                "pipeline.cpp",
                pipeline,
                "top-level pipeline: one static node object per header, one ternary per mux site",
            ),
            (
                "types.hpp",
                types,
                "PHV records and per-node constant tables (keys, length and shift lookups)",
            ),
        ],
    )
}

// ---------------------------------------------------------------------------
// plan-report backend

/// Human-readable plan summary plus the DOT rendering.
pub fn render_plan_report(graph: &ParserGraph, plan: &PipelinePlan) -> SourceBundle {
    let mut r = String::new();
    let _ = writeln!(r, "design: {}", plan.design);
    let _ = writeln!(r, "bus_width_bits: {}", plan.bus_width_bits);
    let _ = writeln!(r, "levels: {}", plan.levels.len());
    let _ = writeln!(r, "muxes: {}", plan.muxes.len());
    let _ = writeln!(r, "register_banks: {}", plan.registers.len());
    let _ = writeln!(
        r,
        "latency_model: register banks ({}) + bus words streamed - 1",
        plan.registers.len()
    );
    let _ = writeln!(r);
    for (i, level) in plan.levels.iter().enumerate() {
        let _ = writeln!(r, "level {i}: {}", level.join(", "));
    }
    let _ = writeln!(r);
    for (i, m) in plan.muxes.iter().enumerate() {
        let site = match m.site {
            MuxSite::LevelEntry(l) => format!("entry to level {l}"),
            MuxSite::Output => "output".to_owned(),
        };
        let _ = writeln!(
            r,
            "mux {i}: {site} | inputs: {} | select: {}.Valid",
            m.inputs.join(", "),
            m.select
        );
    }
    let _ = writeln!(r);
    for h in &graph.headers {
        let hp = &plan.header_plans[&h.id];
        let span = hp.bus_span.values().any(|&b| b);
        let kind = match &h.length {
            LengthSpec::Fixed { .. } => format!("fixed {} bits", h.min_len_bits()),
            LengthSpec::Variable { .. } => {
                format!("variable {}..{} bits", h.min_len_bits(), h.max_len_bits())
            }
        };
        let shift = match hp.state_shift {
            Some(v) => format!("key shift {v}"),
            None => "no key".to_owned(),
        };
        let _ = writeln!(
            r,
            "header {}: {kind} | {shift} | rx counter {} bits | spans bus: {}",
            h.id,
            hp.rx_counter_width,
            if span { "yes" } else { "no" }
        );
        if let ShiftPlan::Lut { entries } = &hp.shift_plan {
            let _ = writeln!(r, "  shift lut ({} entries):", entries.len());
            for (len, shift) in entries {
                let _ = writeln!(r, "    {len} -> {shift}");
            }
        }
    }
    let dot = crate::plan::to_dot(graph, plan);
    SourceBundle::with_manifest(
        &plan.design,
        "plan-report",
        vec![
            ("plan.dot", dot, "pipeline structure in DOT form"),
            (
                "report.txt",
                r,
                "plan summary: levels, muxes, lookup tables",
            ),
        ],
    )
}
