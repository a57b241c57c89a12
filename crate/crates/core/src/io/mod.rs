//! File formats: checkpoints, frame corpora, pixmaps and reports.

pub mod checkpoint;
pub mod corpus;
pub mod ppm;
pub mod report;
