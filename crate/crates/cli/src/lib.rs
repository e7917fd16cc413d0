//! File formats, scene and manifest configs, and the sweep runner behind the `photocon` binary.

pub mod formats;
pub mod manifest;
pub mod runner;
pub mod scene;
