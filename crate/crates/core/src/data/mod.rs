//! Synthetic paired degradations, image files and dataset manifests.

mod degrade;
mod io;
mod synth;

pub use degrade::{degrade, motion_kernel, parse_kinds, DegradationKind, DegradationParams, DegradationSpec};
pub use io::{
    decode_png, decode_ppm, encode_png, encode_ppm, load_dataset, quantize, read_image, read_manifest, write_dataset,
    write_image, ImageFormat, ManifestEntry, MANIFEST_NAME,
};
pub use synth::{labels, make_dataset, make_dataset_with, sample_rng, synth_clean, PairedSample};
