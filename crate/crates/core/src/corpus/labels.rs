use super::{CorpusError, MaskedPassage, LABEL_PLACEHOLDER, MASK_TOKEN};

/// Template used to turn genetic-association rows into sentences.
pub const GENETICS_TEMPLATE: &str = "[MASK] is genetically associated with {label}.";

/// A structured `(entity, label)` row to be rendered as a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRecord {
    pub entity_id: String,
    pub label: String,
    pub source: String,
}

/// Rewrites an inverted ontology label into natural word order: lowercase,
/// split on commas, reverse the pieces, join with single spaces.
pub fn clean_label(raw: &str) -> Result<String, CorpusError> {
    let lowered = raw.to_lowercase();
    let parts: Vec<String> = lowered
        .split(',')
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        return Err(CorpusError::EmptyLabel);
    }
    Ok(parts.into_iter().rev().collect::<Vec<_>>().join(" "))
}

/// Renders each record through `template`, which must contain the mask token
/// and a `{label}` placeholder.
pub fn template_records(
    records: &[TemplateRecord],
    template: &str,
) -> Result<Vec<MaskedPassage>, CorpusError> {
    if !template.contains(MASK_TOKEN) || template.matches(LABEL_PLACEHOLDER).count() != 1 {
        return Err(CorpusError::BadTemplate(template.to_string()));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let label = clean_label(&r.label)?;
            let doc_id = format!("{}:{}", r.source, i);
            Ok(MaskedPassage {
                passage_id: format!("{doc_id}:{}", r.entity_id),
                answer_id: r.entity_id.clone(),
                masked_text: template.replace(LABEL_PLACEHOLDER, &label),
                doc_id,
                year: None,
                source: r.source.clone(),
            })
        })
        .collect()
}

/// Parses `entity_id,label,source` lines. Labels containing commas must be
/// double-quoted.
pub fn parse_template_records(text: &str) -> Result<Vec<TemplateRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = super::io::split_csv_line(line).map_err(|message| CorpusError::Parse {
            line: i + 1,
            message,
        })?;
        if fields.len() != 3 {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        out.push(TemplateRecord {
            entity_id: fields[0].trim().to_string(),
            label: fields[1].clone(),
            source: fields[2].trim().to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(
            clean_label("Leukemia, Myelomonocytic, Chronic").unwrap(),
            "chronic myelomonocytic leukemia"
        );
        assert_eq!(clean_label("Asthma").unwrap(), "asthma");
        assert_eq!(clean_label("A, B").unwrap(), "b a");
        assert!(clean_label("  ").is_err());
        assert!(clean_label("").is_err());
    }

    #[test]
    fn templated_sentences() {
        let recs = vec![
            TemplateRecord {
                entity_id: "G1".into(),
                label: "Asthma".into(),
                source: "genetics".into(),
            },
            TemplateRecord {
                entity_id: "G1".into(),
                label: "Leukemia, Myelomonocytic, Chronic".into(),
                source: "genetics".into(),
            },
        ];
        let out = template_records(&recs, GENETICS_TEMPLATE).unwrap();
        assert_eq!(out[0].masked_text, "[MASK] is genetically associated with asthma.");
        assert_eq!(
            out[1].masked_text,
            "[MASK] is genetically associated with chronic myelomonocytic leukemia."
        );
        assert!(out.iter().all(|p| p.answer_id == "G1"));
        assert!(template_records(&[], GENETICS_TEMPLATE).unwrap().is_empty());
    }

    #[test]
    fn empty_label_and_bad_template() {
        let recs = vec![TemplateRecord {
            entity_id: "G1".into(),
            label: " , ".into(),
            source: "g".into(),
        }];
        assert!(template_records(&recs, GENETICS_TEMPLATE).is_err());
        assert!(template_records(&[], "no mask {label}").is_err());
    }

    #[test]
    fn quoted_csv_labels() {
        let recs = parse_template_records("G1,\"Leukemia, Myelomonocytic, Chronic\",genetics\n").unwrap();
        assert_eq!(recs[0].label, "Leukemia, Myelomonocytic, Chronic");
    }

    proptest::proptest! {
        #[test]
        fn clean_label_idempotent(s in "[A-Za-z ,]{1,40}") {
            if let Ok(once) = clean_label(&s) {
                proptest::prop_assert_eq!(clean_label(&once).unwrap(), once);
            }
        }
    }
}
