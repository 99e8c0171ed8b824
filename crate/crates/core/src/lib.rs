//! Story instrument engine: the persistent premise/character/scene/beat
//! model, prompt assembly, completion providers, beat generation, prose
//! rendering and the on-disk project store.

pub mod engine;
pub mod error;
pub mod format;
pub mod model;
pub mod prompt;
pub mod prose;
pub mod provider;
pub mod store;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod validate;

pub use error::Coded;
pub use format::{deserialize, serialize, FormatError};
pub use model::StoryInstrument;
pub use validate::{validate_instrument, Finding, ValidationReport};
