//! Synthetic glance data: rendering, dataset assembly and on-disk format.

pub mod classes;
pub mod dataset;
pub mod io;
pub mod render;

pub use classes::GlanceClass;
pub use dataset::{generate_dataset, Baseline, BaselineFallback, Dataset, DatasetConfig, Sample, Split};
pub use render::{decode_class, decode_gaze, render_sample, DomainSpec, SubjectProfile};
