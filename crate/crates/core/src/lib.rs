pub mod data;
pub mod ingest;
pub mod splines;
pub mod stats;
pub mod contours;
pub mod synth;
pub mod mapping;
pub mod centroid;
