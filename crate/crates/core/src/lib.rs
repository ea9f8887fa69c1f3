//! parsepipe: a packet-parser pipeline compiler and simulator.
//!
//! A declarative parser graph (protocol headers as nodes, keyed transitions
//! as edges) is compiled into a leveled pipeline plan with register banks,
//! mux sites, and per-header constant tables, then either executed
//! cycle-level on packet byte streams or rendered as HLS-style C++ source.
//!
//! Modules:
//! - [`bits`] — wide-word, bit-exact primitives (MSB-first).
//! - [`graph`] — spec ingestion, graph model, semantic validation.
//! - [`plan`] — level scheduling, mux placement, shift lookup tables.
//! - [`sim`] — the pipeline simulator.
//! - [`reference`] — independent sequential parser used as the test oracle.
//! - [`traffic`] — seeded packet-corpus generation.
//! - [`pktio`] — hex / raw / pcap packet input, hex output.
//! - [`codegen`] — `mpo-cxx` and `plan-report` source backends.

pub mod bits;
pub mod codegen;
pub mod graph;
pub mod pktio;
pub mod plan;
pub mod reference;
pub mod sim;
pub mod traffic;

pub use graph::{ParserGraph, ValidationReport};
pub use plan::{plan, PipelinePlan};
pub use reference::reference_parse;
pub use sim::{PacketSimulator, ParseResult, ParseStatus};
