//! Story engine: transcript format, design-room documents, game rooms and the
//! prompts and providers that drive them.

pub mod plot;
pub mod prompt;
pub mod provider;
pub mod room;
pub mod story;
pub mod summarizer;
pub mod turn_format;

#[cfg(feature = "testing")]
pub mod testing;
