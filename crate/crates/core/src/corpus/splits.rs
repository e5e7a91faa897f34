use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, RawDocument};

/// Document-level corpus split.
///
/// `S1` trains the retriever and is the reasoner's training evidence,
/// `S2` supplies reasoner training queries, `S3` is held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    S1,
    S2,
    S3,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::S1, Split::S2, Split::S3];

    pub fn name(self) -> &'static str {
        match self {
            Split::S1 => "s1",
            Split::S2 => "s2",
            Split::S3 => "s3",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Split::S1),
            "s2" => Ok(Split::S2),
            "s3" => Ok(Split::S3),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Documents from `split_year` onwards go to S3; `s2_docs` of the earlier
    /// documents are sampled into S2, the rest into S1.
    Temporal { split_year: u32, s2_docs: usize, seed: u64 },
    /// Year-agnostic random assignment; S1 receives the remainder.
    Random { s2_docs: usize, s3_docs: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplits {
    pub policy: SplitPolicy,
    pub assignment: BTreeMap<String, Split>,
}

impl CorpusSplits {
    pub fn split_of(&self, doc_id: &str) -> Option<Split> {
        self.assignment.get(doc_id).copied()
    }

    pub fn docs_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, &s)| s == split)
            .map(|(d, _)| d.as_str())
    }

    pub fn counts(&self) -> BTreeMap<Split, usize> {
        let mut out: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
        for s in self.assignment.values() {
            *out.entry(*s).or_default() += 1;
        }
        out
    }
}

fn shuffled(mut ids: Vec<String>, seed: u64) -> Vec<String> {
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids
}

/// Assigns whole documents to S1/S2/S3. Deterministic for a given seed.
pub fn build_splits(docs: &[RawDocument], policy: &SplitPolicy) -> Result<CorpusSplits, CorpusError> {
    let mut seen = std::collections::BTreeSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(CorpusError::DuplicateDoc(d.doc_id.clone()));
        }
    }
    let mut assignment = BTreeMap::new();
    match *policy {
        SplitPolicy::Temporal {
            split_year,
            s2_docs,
            seed,
        } => {
            let mut before = Vec::new();
            for d in docs {
                let year = d.year.ok_or_else(|| CorpusError::MissingYear(d.doc_id.clone()))?;
                if year >= split_year {
                    assignment.insert(d.doc_id.clone(), Split::S3);
                } else {
                    before.push(d.doc_id.clone());
                }
            }
            for (i, id) in shuffled(before, seed).into_iter().enumerate() {
                let s = if i < s2_docs { Split::S2 } else { Split::S1 };
                assignment.insert(id, s);
            }
        }
        SplitPolicy::Random {
            s2_docs,
            s3_docs,
            seed,
        } => {
            if s2_docs + s3_docs > docs.len() {
                return Err(CorpusError::SplitSizes {
                    requested: s2_docs + s3_docs,
                    available: docs.len(),
                });
            }
            let ids = docs.iter().map(|d| d.doc_id.clone()).collect();
            for (i, id) in shuffled(ids, seed).into_iter().enumerate() {
                let s = if i < s3_docs {
                    Split::S3
                } else if i < s3_docs + s2_docs {
                    Split::S2
                } else {
                    Split::S1
                };
                assignment.insert(id, s);
            }
        }
    }
    Ok(CorpusSplits {
        policy: policy.clone(),
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, year: Option<u32>) -> RawDocument {
        RawDocument::new(id, year, vec!["x".into()])
    }

    #[test]
    fn temporal_split_by_year() {
        let docs = vec![doc("a", Some(2004)), doc("b", Some(2006))];
        let s = build_splits(
            &docs,
            &SplitPolicy::Temporal {
                split_year: 2005,
                s2_docs: 0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(s.split_of("a"), Some(Split::S1));
        assert_eq!(s.split_of("b"), Some(Split::S3));
    }

    #[test]
    fn temporal_requires_years() {
        let docs = vec![doc("a", None)];
        let r = build_splits(
            &docs,
            &SplitPolicy::Temporal {
                split_year: 2005,
                s2_docs: 0,
                seed: 1,
            },
        );
        assert!(matches!(r, Err(CorpusError::MissingYear(_))));
    }

    #[test]
    fn random_all_to_s2() {
        let docs: Vec<_> = (0..7).map(|i| doc(&format!("d{i}"), None)).collect();
        let s = build_splits(
            &docs,
            &SplitPolicy::Random {
                s2_docs: 7,
                s3_docs: 0,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(s.counts()[&Split::S2], 7);
        assert_eq!(s.counts()[&Split::S1], 0);
    }

    #[test]
    fn same_seed_same_assignment() {
        let docs: Vec<_> = (0..50).map(|i| doc(&format!("d{i}"), Some(2000 + i % 10))).collect();
        let p = SplitPolicy::Random {
            s2_docs: 10,
            s3_docs: 10,
            seed: 99,
        };
        assert_eq!(build_splits(&docs, &p).unwrap(), build_splits(&docs, &p).unwrap());
        let mut rev = docs.clone();
        rev.reverse();
        assert_eq!(build_splits(&docs, &p).unwrap(), build_splits(&rev, &p).unwrap());
    }
}
