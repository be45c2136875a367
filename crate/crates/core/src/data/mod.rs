//! Event streams, spells and simulation.

pub mod events;
pub mod simulate;
pub mod spells;

pub use events::{parse_events, write_events, Diagnostics, EventRecord};
pub use simulate::{simulate, SimulationConfig, StateTruth};
pub use spells::{build_spells, write_spells, GapPolicy, RecordIndex, SpellOptions};
