//! Knowledge-driven SDN for swarm networks.
//!
//! This crate couples a deterministic, simulated P4-style data plane with
//! a dynamic RDF knowledge graph. Switch and swarm-node metadata —
//! topology, flow rules, in-band telemetry, CPU load, location,
//! capabilities — is continuously converted into triples, and controller
//! applications query that graph to make forwarding decisions: swarm-ID
//! multicast access control, telemetry-driven adaptive routing, and
//! capability-aware node selection.
//!
//! The main pieces:
//!
//! - [`packet`]: frame parsing/emission for the Ethernet/IPv4/UDP stack
//!   with the INT telemetry shim and the RTPS header.
//! - [`dataplane`]: per-switch match-action tables, multicast groups, the
//!   ingress pipeline, and INT source/transit/sink processing.
//! - [`sim`]: the discrete-event network simulator with a virtual clock.
//! - [`channel`]: the bit-exact controller/switch message codec and write
//!   dispatch, modeled on P4Runtime semantics.
//! - [`rdf`] / [`rdfizer`]: the fixed minimal ontology and the converters
//!   that turn network state into triples.
//! - [`store`] / [`sparql`]: the indexed in-memory triple store and the
//!   SPARQL-subset engine that serves as its query endpoint.
//! - [`controller`]: the control applications built on the graph.
//! - [`scenario`]: scripted end-to-end runs producing deterministic
//!   reports; the `swarmkdn` binary is a thin shell over this module.
//!
//! Each major capability has a runnable example under `examples/`; start
//! with `access_control` for the full loop.

pub mod channel;
pub mod controller;
pub mod dataplane;
pub mod packet;
pub mod rdf;
pub mod rdfizer;
pub mod scenario;
pub mod sim;
pub mod sparql;
pub mod store;
pub mod topology;

pub use controller::{Controller, ControllerConfig};
pub use scenario::{Scenario, ScenarioRunner};
pub use sim::{Network, ObservableEvent};
pub use store::TripleStore;
pub use topology::Topology;
