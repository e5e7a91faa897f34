use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::CorpusError;

/// A linked mention: entity id plus the byte span it covers in the sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub entity_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<char, usize>,
    entity: Option<usize>,
}

/// Surface form → entity id map used for dictionary entity linking.
/// Surface forms are stored lowercased; matching is case-insensitive.
#[derive(Debug, Clone)]
pub struct EntityDictionary {
    surfaces: BTreeMap<String, String>,
    entities: BTreeSet<String>,
    entity_names: Vec<String>,
    trie: Vec<TrieNode>,
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

impl EntityDictionary {
    /// Builds a dictionary from `(entity id, surface form)` pairs.
    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: AsRef<str>,
    {
        let mut surfaces: BTreeMap<String, String> = BTreeMap::new();
        for (entity, surface) in pairs {
            let entity = entity.into();
            let surface = surface.as_ref().trim().to_lowercase();
            if surface.is_empty() {
                return Err(CorpusError::EmptySurface(entity));
            }
            if entity.trim().is_empty() {
                return Err(CorpusError::EmptyEntity(surface));
            }
            match surfaces.get(&surface) {
                Some(existing) if existing != &entity => {
                    return Err(CorpusError::AmbiguousSurface {
                        surface,
                        first: existing.clone(),
                        second: entity,
                    })
                }
                _ => {
                    surfaces.insert(surface, entity);
                }
            }
        }
        if surfaces.is_empty() {
            return Err(CorpusError::EmptyDictionary);
        }
        let entities: BTreeSet<String> = surfaces.values().cloned().collect();
        let entity_names: Vec<String> = entities.iter().cloned().collect();
        let mut trie = vec![TrieNode::default()];
        for (surface, entity) in &surfaces {
            let mut node = 0;
            for c in surface.chars() {
                let next = trie.len();
                node = *trie[node].children.entry(c).or_insert(next);
                if node == next {
                    trie.push(TrieNode::default());
                }
            }
            trie[node].entity = Some(entity_names.binary_search(entity).unwrap_or(0));
        }
        Ok(Self {
            surfaces,
            entities,
            entity_names,
            trie,
        })
    }

    /// Parses `entity_id<TAB>surface_form` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, CorpusError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (entity, surface) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
                line: i + 1,
                message: "expected `entity_id<TAB>surface_form`".into(),
            })?;
            pairs.push((entity.trim().to_string(), surface.to_string()));
        }
        Self::from_pairs(pairs)
    }

    /// The answer set, in ascending id order.
    pub fn entities(&self) -> &BTreeSet<String> {
        &self.entities
    }

    pub fn surface_forms(&self) -> impl Iterator<Item = (&str, &str)> {
        self.surfaces.iter().map(|(s, e)| (s.as_str(), e.as_str()))
    }

    /// Greedy longest-match, left-to-right, case-insensitive linking on word
    /// boundaries. Returned spans never overlap.
    pub fn link(&self, sentence: &str) -> Vec<Mention> {
        // Lowercased characters with the index of the original char they came from.
        let originals: Vec<(usize, char)> = sentence.char_indices().collect();
        let mut lowered: Vec<char> = Vec::with_capacity(originals.len());
        let mut origin: Vec<usize> = Vec::with_capacity(originals.len());
        for (ci, &(_, c)) in originals.iter().enumerate() {
            for lc in c.to_lowercase() {
                lowered.push(lc);
                origin.push(ci);
            }
        }
        let byte_start = |ci: usize| originals[ci].0;
        let byte_end = |ci: usize| originals[ci].0 + originals[ci].1.len_utf8();
        let boundary = |pos: usize| {
            pos == 0 || pos == lowered.len() || !(is_word(lowered[pos - 1]) && is_word(lowered[pos]))
        };

        let mut out = Vec::new();
        let mut i = 0;
        while i < lowered.len() {
            if !boundary(i) {
                i += 1;
                continue;
            }
            let mut node = 0;
            let mut best: Option<(usize, usize)> = None;
            let mut j = i;
            while j < lowered.len() {
                match self.trie[node].children.get(&lowered[j]) {
                    Some(&next) => node = next,
                    None => break,
                }
                j += 1;
                if let Some(e) = self.trie[node].entity {
                    if boundary(j) {
                        best = Some((j, e));
                    }
                }
            }
            match best {
                Some((end, e)) => {
                    out.push(Mention {
                        entity_id: self.entity_names[e].clone(),
                        start: byte_start(origin[i]),
                        end: byte_end(origin[end - 1]),
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Links answer entities in a sentence.
pub fn link_entities(sentence: &str, dict: &EntityDictionary) -> Vec<Mention> {
    dict.link(sentence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict(pairs: &[(&str, &str)]) -> EntityDictionary {
        EntityDictionary::from_pairs(pairs.iter().map(|&(e, s)| (e, s))).unwrap()
    }

    #[test]
    fn single_hit() {
        let d = dict(&[("G1", "EGFR")]);
        let s = "EGFR drives growth";
        let m = link_entities(s, &d);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].entity_id, "G1");
        assert_eq!(&s[m[0].start..m[0].end], "EGFR");
    }

    #[test]
    fn longest_match_wins() {
        let d = dict(&[("G2", "TNF"), ("G3", "TNF receptor")]);
        let s = "TNF receptor binds";
        let m = link_entities(s, &d);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].entity_id, "G3");
        assert_eq!(&s[m[0].start..m[0].end], "TNF receptor");
    }

    #[test]
    fn no_hit_gives_empty() {
        let d = dict(&[("G1", "EGFR")]);
        assert!(link_entities("nothing to see here", &d).is_empty());
    }

    #[test]
    fn case_insensitive_on_word_boundaries() {
        let d = dict(&[("G1", "egfr")]);
        let s = "Egfr and EGFRvIII and pEGFR, EGFR.";
        let m = link_entities(s, &d);
        let hits: Vec<&str> = m.iter().map(|x| &s[x.start..x.end]).collect();
        assert_eq!(hits, vec!["Egfr", "EGFR"]);
    }

    #[test]
    fn non_ascii_spans_are_byte_correct() {
        let d = dict(&[("G1", "ß-catenin")]);
        let s = "Die ß-Catenin Achse";
        let m = link_entities(s, &d);
        assert_eq!(&s[m[0].start..m[0].end], "ß-Catenin");
    }

    #[test]
    fn ambiguous_surface_is_rejected() {
        let r = EntityDictionary::from_pairs(vec![("G1", "abc"), ("G2", "ABC")]);
        assert!(matches!(r, Err(CorpusError::AmbiguousSurface { .. })));
    }

    #[test]
    fn tsv_parse_reports_line() {
        let err = EntityDictionary::from_tsv("G1\tEGFR\nbroken line\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
    }
}
