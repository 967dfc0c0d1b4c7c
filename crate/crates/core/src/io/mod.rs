//! File formats, the bundled PISA fixture, simulation configs and run
//! manifests. Every reader validates against a fixed schema and reports
//! the offending file, row and column.

pub mod area;
pub mod data;
pub mod manifest;
pub mod pisa;
pub mod simout;
mod table;

pub use area::{ingest_area_csv, parse_area_csv, write_area_csv, AreaInput};
pub use manifest::RunManifest;
pub use pisa::{replay_pisa_fixture, PisaFixtureRow, PisaReplay};
