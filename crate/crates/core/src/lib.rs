//! Censorship-potential analysis over AS-level routing data.

pub mod chokepoint;
pub mod dnsmap;
pub mod hijack;
pub mod ingest;
pub mod intraas;
pub mod model;
pub mod pace;
pub mod pathinfer;
pub mod probe;
pub mod synth;
