//! Synthetic face corpus with known identities and landmark geometry.

mod dataset;
mod identity;
mod landmarks;

pub use dataset::{
    generate_dataset, load_external_images, FaceDataset, FaceRecord, GenerationParams, Split,
    SplitMode,
};
pub use identity::{ranges, FaceIdentity, FaceParams};
pub use landmarks::{BoundingBox, LandmarkMap, Region};
