//! File formats: PLINK 1 genotype triplets, delimited phenotype/covariate
//! tables, result reports, and binary caches.

pub mod bed;
pub mod cache;
pub mod report;
pub mod table;

pub use bed::{encode_bed, write_plink, BedTriplet, BimRecord};
pub use cache::{
    load_eigen, load_kinship, load_model, save_eigen, save_kinship, save_model, ContentHasher,
    ModelFile,
};
pub use report::{
    read_fit, write_benchmark, write_config, write_cv, write_fit, write_predictions, FitRecord,
};
pub use table::Table;
