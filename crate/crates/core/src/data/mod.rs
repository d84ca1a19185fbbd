//! Data handling: synthetic pair generation, the MPT1 tensor format, and
//! manifest-backed dataset loading.

mod generate;
mod manifest;
mod mpt;
mod resize;

pub use generate::{generate_synthetic_pair, pair_seed, MIN_PATCH};
pub use manifest::{
    split_manifest, write_synthetic_dataset, Dataset, DatasetManifest, ManifestEntry, Modality,
    Split,
};
pub use mpt::{
    decode_tensor, encode_tensor, encoded_len, read_tensor, write_tensor, ByteReader, MPT1_MAGIC,
};
pub use resize::resize_bilinear;
