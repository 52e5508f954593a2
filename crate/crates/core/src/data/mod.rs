//! Epoch sets: synthetic generation, the epoch file format, CSV import and
//! train/validation splitting.

pub mod csvio;
pub mod epochs;
pub mod split;
pub mod synth;

pub use csvio::csv_import;
pub use epochs::{epochs_read, epochs_write, EpochSet};
pub use split::{split_and_batch, Split};
pub use synth::{
    dataset_preset, raised_cosine, raised_cosine_energy, synth_generate, DatasetPreset, EventSpec,
    SynthSpec, TABLE_PRESETS, TASK_PRESETS,
};
