//! Object manifests, grouped splits, crop preprocessing and the synthetic
//! dataset generator.

mod manifest;
mod preprocess;
mod split;
pub mod synth;

pub use manifest::{
    load_manifest, parse_manifest, write_manifest, ObjectRecord, SizeClass, MAX_JRD,
};
pub use preprocess::{crop_window, hflip, preprocess, preprocess_all, preprocess_image};
pub use split::{apportion, group_split, Split, SplitAssignment};
pub use synth::{jrd_from_strength, synth_images, write_synth_dataset, SynthOutput};
