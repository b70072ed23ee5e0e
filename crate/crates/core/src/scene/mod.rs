//! Scene files, particle sampling, frame and diagnostics output.

pub mod config;
pub mod diagnostics;
pub mod frame;
pub mod sampling;
pub mod writer;

pub use config::{load_scene, SceneConfig};
pub use diagnostics::DiagnosticsRow;
pub use frame::FrameRecord;
