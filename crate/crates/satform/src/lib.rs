//! IO companion to `satform-core`: the `.satf` raster and `.satw` checkpoint
//! formats, dataset manifests, run configuration, and run-directory output.

pub mod config;
pub mod manifest;
pub mod rundir;
pub mod satf;
pub mod satw;
