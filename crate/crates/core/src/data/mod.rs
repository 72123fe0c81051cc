pub mod dataset;
pub mod pnm;
pub mod synthetic;

pub use dataset::{
    load_all, load_dataset, read_index, read_sample, save_sample, write_split, SegSample,
    IGNORE_LABEL,
};
pub use synthetic::{gen_synthetic, generate_split, Split, SyntheticSpec};
