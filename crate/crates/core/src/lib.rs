pub mod adapt;
pub mod command;
pub mod harness;
pub mod human;
pub mod lead;
pub mod orchestrator;
pub mod params;
pub mod perception;
pub mod placement;
pub mod rng;
pub mod world;
