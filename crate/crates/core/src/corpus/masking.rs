use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{link_entities, EntityDictionary, Mention, RawDocument, DEFAULT_SOURCE, MASK_TOKEN};

fn is_default_source(s: &str) -> bool {
    s == DEFAULT_SOURCE
}

fn default_source() -> String {
    DEFAULT_SOURCE.to_string()
}

/// A passage with every mention of one answer entity replaced by the mask
/// token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedPassage {
    pub passage_id: String,
    pub answer_id: String,
    pub masked_text: String,
    pub doc_id: String,
    pub year: Option<u32>,
    #[serde(default = "default_source", skip_serializing_if = "is_default_source")]
    pub source: String,
}

/// Where a sentence came from; used to derive passage ids.
#[derive(Debug, Clone, Copy)]
pub struct SentenceRef<'a> {
    pub doc_id: &'a str,
    pub year: Option<u32>,
    pub sent_idx: usize,
    pub source: &'a str,
}

/// Masks `text[span]` for every listed mention span.
fn mask_spans(text: &str, spans: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for &(s, e) in spans {
        out.push_str(&text[cursor..s]);
        out.push_str(MASK_TOKEN);
        cursor = e;
    }
    out.push_str(&text[cursor..]);
    out
}

/// One masked passage per distinct linked entity (ascending entity id);
/// in each, all of that entity's mentions are masked and other entities stay
/// as plain text.
pub fn make_masked_examples(
    sentence: &str,
    origin: SentenceRef<'_>,
    mentions: &[Mention],
) -> Vec<MaskedPassage> {
    let entities: BTreeSet<&str> = mentions.iter().map(|m| m.entity_id.as_str()).collect();
    entities
        .into_iter()
        .map(|entity| {
            let spans: Vec<(usize, usize)> = mentions
                .iter()
                .filter(|m| m.entity_id == entity)
                .map(|m| (m.start, m.end))
                .collect();
            MaskedPassage {
                passage_id: format!("{}:{}:{}", origin.doc_id, origin.sent_idx, entity),
                answer_id: entity.to_string(),
                masked_text: mask_spans(sentence, &spans),
                doc_id: origin.doc_id.to_string(),
                year: origin.year,
                source: origin.source.to_string(),
            }
        })
        .collect()
}

/// Links and masks every sentence of every document. Documents are processed
/// in parallel and merged in ascending doc id order; sentences without an
/// answer entity contribute nothing.
pub fn build_masked_corpus(docs: &[RawDocument], dict: &EntityDictionary) -> Vec<MaskedPassage> {
    let mut order: Vec<&RawDocument> = docs.iter().collect();
    order.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    order
        .par_iter()
        .map(|doc| {
            let mut out = Vec::new();
            for (idx, sentence) in doc.sentences.iter().enumerate() {
                let mentions = link_entities(sentence, dict);
                if mentions.is_empty() {
                    continue;
                }
                let origin = SentenceRef {
                    doc_id: &doc.doc_id,
                    year: doc.year,
                    sent_idx: idx,
                    source: &doc.source,
                };
                out.extend(make_masked_examples(sentence, origin, &mentions));
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
