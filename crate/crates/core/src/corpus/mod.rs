//! Masked entity-linked corpus: dictionary linking, per-entity masking,
//! document-level splits, templated records and tokenisation.

mod dictionary;
pub mod io;
mod labels;
mod masking;
mod splits;
mod tokenize;

pub use dictionary::{link_entities, EntityDictionary, Mention};
pub use labels::{clean_label, parse_template_records, template_records, TemplateRecord, GENETICS_TEMPLATE};
pub use masking::{build_masked_corpus, make_masked_examples, MaskedPassage, SentenceRef};
pub use splits::{build_splits, CorpusSplits, Split, SplitPolicy};
pub use tokenize::{tokenize, tokenize_with_len, words, TokenSequence, Vocab, MASK_ID, PAD_ID, SEQ_LEN, UNK_ID};

pub const MASK_TOKEN: &str = "[MASK]";
pub const LABEL_PLACEHOLDER: &str = "{label}";
pub const DEFAULT_SOURCE: &str = "literature";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty surface form for entity `{0}`")]
    EmptySurface(String),
    #[error("empty entity id for surface form `{0}`")]
    EmptyEntity(String),
    #[error("surface form `{surface}` maps to both `{first}` and `{second}`")]
    AmbiguousSurface {
        surface: String,
        first: String,
        second: String,
    },
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("label is empty after cleaning")]
    EmptyLabel,
    #[error("template must contain `[MASK]` and exactly one `{{label}}`: {0:?}")]
    BadTemplate(String),
    #[error("document `{0}` has no year but the split policy is temporal")]
    MissingYear(String),
    #[error("duplicate document id `{0}`")]
    DuplicateDoc(String),
    #[error("requested {requested} held-out documents but only {available} exist")]
    SplitSizes { requested: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A source document: an id, an optional publication year and its sentences
/// in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub doc_id: String,
    pub year: Option<u32>,
    pub sentences: Vec<String>,
    pub source: String,
}

impl RawDocument {
    pub fn new(doc_id: impl Into<String>, year: Option<u32>, sentences: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            year,
            sentences,
            source: DEFAULT_SOURCE.to_string(),
        }
    }
}
