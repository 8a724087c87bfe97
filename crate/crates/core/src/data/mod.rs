//! Relation-extraction datasets: ingestion, argument masking, input
//! assembly and stratified subsampling.

mod assemble;
mod instance;
mod masking;
pub mod semeval;
mod subsample;
pub mod tacred;

pub use assemble::{assemble_dataset, assemble_input, encode_words, EncodedExample};
pub use instance::{Argument, Dataset, Format, RelationInstance, Role};
pub use masking::{apply_masking, mask_dataset, mask_token, mask_vocabulary, MaskingStrategy};
pub use semeval::{load_semeval, parse_semeval, OTHER};
pub use subsample::{stratified_subsample, stratum_size};
pub use tacred::{load_tacred, parse_tacred, to_tacred_json, NO_RELATION};

use std::path::Path;

use crate::error::Result;

/// Loads `path` in the given format.
pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    match format {
        Format::Tacred => load_tacred(path),
        Format::Semeval => load_semeval(path),
    }
}
