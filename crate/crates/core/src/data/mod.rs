//! Image and mask I/O, resampling, dataset splitting and synthetic phantoms.

pub mod dataset;
pub mod image;
pub mod pgm;
pub mod phantom;
pub mod resample;
pub mod split;

pub use dataset::{load_pairs, make_dataset, read_manifest, write_manifest, ManifestEntry, MANIFEST_NAME};
pub use image::{images_to_tensor, GrayImage};
pub use pgm::{decode_pgm, encode_mask_pgm, encode_pgm, read_mask, read_pgm, write_mask, write_pgm};
pub use phantom::{generate_phantom, PhantomSpec, BONE_BAND, IMPLANT_BAND};
pub use resample::{downscale, downscale_mask};
pub use split::{split_dataset, split_indices, DatasetSplit, SplitRule};
