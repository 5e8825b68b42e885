//! Dataset I/O and the synthetic scene generator.

pub mod manifest;
pub mod pfm;
pub mod pngio;
pub mod synth;

pub use manifest::{
    load_bracket, load_dataset, read_manifest, save_scene, Light, Motion, Sample, SceneManifest,
};
pub use pfm::{read_pfm, write_pfm};
pub use pngio::{read_png, write_png};
pub use synth::{
    build_dataset, make_ground_truth, synthesize_scene, ClassMix, DatasetConfig,
    SyntheticSceneSpec,
};
