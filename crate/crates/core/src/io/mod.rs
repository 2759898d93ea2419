//! Dataset containers, synthetic scenes and classification-map images.

mod hsc;
mod ppm;
mod synth;

pub use hsc::{
    read_hsc, read_hsc_cube, read_manifest, write_hsc, HscManifest, HscPaths, HSC_MAGIC,
};
pub use ppm::{class_color, encode_class_map, write_class_map};
pub use synth::{synth_scene, SyntheticSceneSpec};
