//! Dataset schema, diff decomposition, input variants and fold construction.

mod diff;
mod io;
mod record;
mod split;
mod synthetic;
mod variant;

pub use diff::{parse_unified_diff, CodeSegments};
pub use io::{check_dataset, 
    format_language_table, language_histogram, parse_dataset, read_dataset, write_dataset,
    write_dataset_to, LanguageCount,
};
pub use record::{Aspect, AspectSet, CommitRecord, Label, MAX_ASPECT_WORDS};
pub use split::{downsample_negatives, split_kfold, Fold};
pub use variant::{build_input, build_input_from_parts, code_text, InputVariant, ModelInput};
pub use synthetic::{synthetic_corpus, TEMPLATE_COUNT};
