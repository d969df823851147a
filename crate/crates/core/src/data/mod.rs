//! Synthetic paired multi-contrast data: phantoms, degradation, splits and storage.

pub mod dataset;
pub mod degrade;
pub mod interp;
pub mod phantom;
pub mod sample;
pub mod split;

pub use dataset::{generate_dataset, Dataset, DatasetConfig};
pub use degrade::{degrade, DegradeMethod};
pub use interp::bicubic_upsample;
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use sample::{generate_sample, load_sample, save_sample, SamplePair, SampleSpec};
pub use split::{make_split, DatasetSplit, SplitName};
