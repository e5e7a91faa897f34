//! Exact per-answer cosine retrieval.
//!
//! Evidence vectors are grouped by the answer entity that was masked in
//! them. Rows are L2-normalised at build time and queries at search time, so
//! cosine similarity is a plain inner product. Search is brute force.
//!
//! File layout (little-endian):
//!
//! ```text
//! "R2EIDX1"  u32 h  u32 answer count
//! per answer: u32 len + id, u64 rows, rows × h × f32,
//!             then per row: passage id, doc id (u32 len + bytes),
//!             u32 year (0 = unknown), source tag (u32 len + bytes)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io_util::{put_string, read_bytes, read_f32, read_string, read_u32, read_u64};
use crate::scalar::Scalar;

pub const INDEX_MAGIC: &[u8; 7] = b"R2EIDX1";

/// Partitions at least this large are scored in parallel chunks.
const PARALLEL_ROWS: usize = 8192;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("passage `{0}` has a zero-norm embedding")]
    ZeroNorm(String),
    #[error("query embedding has zero norm")]
    ZeroQuery,
    #[error("embedding width {got} does not match index width {expected}")]
    Width { expected: usize, got: usize },
    #[error("unknown answer `{0}`")]
    UnknownAnswer(String),
    #[error("unknown answers: {0:?}")]
    UnknownAnswers(Vec<String>),
    #[error("row {row} out of range for answer `{answer}`")]
    Row { answer: String, row: usize },
    #[error("bad index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where an evidence row came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageRef {
    pub passage_id: String,
    pub doc_id: String,
    pub year: Option<u32>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceHit {
    pub passage: PassageRef,
    pub similarity: f64,
    pub row: usize,
}

/// Restricts which rows a search may return.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataFilter {
    /// Keep rows with a known year `<= max_year`.
    pub max_year: Option<u32>,
    /// Keep rows whose source tag is listed.
    pub sources: Option<Vec<String>>,
}

impl MetadataFilter {
    pub fn is_empty(&self) -> bool {
        self.max_year.is_none() && self.sources.is_none()
    }

    pub fn admits(&self, r: &PassageRef) -> bool {
        if let Some(max) = self.max_year {
            match r.year {
                Some(y) if y <= max => {}
                _ => return false,
            }
        }
        if let Some(s) = &self.sources {
            if !s.iter().any(|x| x == &r.source) {
                return false;
            }
        }
        true
    }
}

/// One evidence row to index.
#[derive(Debug, Clone)]
pub struct IndexEntry<T> {
    pub answer_id: String,
    pub passage: PassageRef,
    pub vector: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
struct Partition {
    rows: Vec<f32>,
    refs: Vec<PassageRef>,
}

/// Immutable per-answer evidence matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerPartitionIndex {
    hidden: usize,
    partitions: BTreeMap<String, Partition>,
}

fn l2_normalised<T: Scalar>(v: &[T]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x.as_f64() / norm).collect())
}

impl AnswerPartitionIndex {
    /// Groups entries by answer; rows within a partition are ordered by
    /// passage id, so rebuilding from the same entries in any order gives an
    /// identical index.
    pub fn build<T: Scalar>(hidden: usize, entries: Vec<IndexEntry<T>>) -> Result<Self, IndexError> {
        let mut grouped: BTreeMap<String, Vec<(PassageRef, Vec<f32>)>> = BTreeMap::new();
        for e in entries {
            if e.vector.len() != hidden {
                return Err(IndexError::Width {
                    expected: hidden,
                    got: e.vector.len(),
                });
            }
            let unit = l2_normalised(&e.vector).ok_or_else(|| IndexError::ZeroNorm(e.passage.passage_id.clone()))?;
            grouped
                .entry(e.answer_id)
                .or_default()
                .push((e.passage, unit.into_iter().map(|x| x as f32).collect()));
        }
        let partitions = grouped
            .into_iter()
            .map(|(answer, mut rows)| {
                rows.sort_by(|a, b| a.0.passage_id.cmp(&b.0.passage_id));
                let mut p = Partition {
                    rows: Vec::with_capacity(rows.len() * hidden),
                    refs: Vec::with_capacity(rows.len()),
                };
                for (r, v) in rows {
                    p.rows.extend_from_slice(&v);
                    p.refs.push(r);
                }
                (answer, p)
            })
            .collect();
        Ok(Self { hidden, partitions })
    }

    pub fn empty(hidden: usize) -> Self {
        Self {
            hidden,
            partitions: BTreeMap::new(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn answer_ids(&self) -> impl Iterator<Item = &str> {
        self.partitions.keys().map(String::as_str)
    }

    pub fn contains(&self, answer: &str) -> bool {
        self.partitions.contains_key(answer)
    }

    pub fn partition_len(&self, answer: &str) -> usize {
        self.partitions.get(answer).map_or(0, |p| p.refs.len())
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.partitions.iter().map(|(a, p)| (a.clone(), p.refs.len())).collect()
    }

    pub fn total_rows(&self) -> usize {
        self.partitions.values().map(|p| p.refs.len()).sum()
    }

    /// The stored (unit-norm) row.
    pub fn row(&self, answer: &str, row: usize) -> Result<&[f32], IndexError> {
        let p = self
            .partitions
            .get(answer)
            .ok_or_else(|| IndexError::UnknownAnswer(answer.to_string()))?;
        if row >= p.refs.len() {
            return Err(IndexError::Row {
                answer: answer.to_string(),
                row,
            });
        }
        Ok(&p.rows[row * self.hidden..(row + 1) * self.hidden])
    }

    pub fn passage(&self, answer: &str, row: usize) -> Option<&PassageRef> {
        self.partitions.get(answer).and_then(|p| p.refs.get(row))
    }

    /// Exact top-`k` rows of `answer`'s partition by cosine to `query`,
    /// similarity descending, ties by ascending passage id.
    pub fn topk<T: Scalar>(
        &self,
        answer: &str,
        query: &[T],
        k: usize,
        filter: Option<&MetadataFilter>,
    ) -> Result<Vec<EvidenceHit>, IndexError> {
        let p = self
            .partitions
            .get(answer)
            .ok_or_else(|| IndexError::UnknownAnswer(answer.to_string()))?;
        let q = self.unit_query(query)?;
        Ok(self.search_partition(p, &q, k, filter))
    }

    /// [`topk`](Self::topk) for several answers at once, in parallel. The
    /// result does not depend on the degree of parallelism.
    pub fn topk_all<T: Scalar>(
        &self,
        answers: &[String],
        query: &[T],
        k: usize,
        filter: Option<&MetadataFilter>,
    ) -> Result<BTreeMap<String, Vec<EvidenceHit>>, IndexError> {
        let missing: Vec<String> = answers.iter().filter(|a| !self.contains(a)).cloned().collect();
        if !missing.is_empty() {
            return Err(IndexError::UnknownAnswers(missing));
        }
        if answers.is_empty() {
            return Ok(BTreeMap::new());
        }
        let q = self.unit_query(query)?;
        Ok(answers
            .par_iter()
            .map(|a| (a.clone(), self.search_partition(&self.partitions[a], &q, k, filter)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect())
    }

    fn unit_query<T: Scalar>(&self, query: &[T]) -> Result<Vec<f64>, IndexError> {
        if query.len() != self.hidden {
            return Err(IndexError::Width {
                expected: self.hidden,
                got: query.len(),
            });
        }
        l2_normalised(query).ok_or(IndexError::ZeroQuery)
    }

    fn search_partition(&self, p: &Partition, q: &[f64], k: usize, filter: Option<&MetadataFilter>) -> Vec<EvidenceHit> {
        let h = self.hidden;
        let score = |i: usize| -> f64 {
            p.rows[i * h..(i + 1) * h]
                .iter()
                .zip(q)
                .map(|(&r, &x)| r as f64 * x)
                .sum::<f64>()
        };
        let admitted = |i: usize| filter.is_none_or(|f| f.admits(&p.refs[i]));
        let n = p.refs.len();
        let mut scored: Vec<(f64, usize)> = if n >= PARALLEL_ROWS {
            (0..n).into_par_iter().filter(|&i| admitted(i)).map(|i| (score(i), i)).collect()
        } else {
            (0..n).filter(|&i| admitted(i)).map(|i| (score(i), i)).collect()
        };
        // Rows are stored in passage-id order, so row order breaks ties.
        let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k == 0 {
            return Vec::new();
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
            .into_iter()
            .map(|(s, i)| EvidenceHit {
                passage: p.refs[i].clone(),
                similarity: s,
                row: i,
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        buf.extend_from_slice(&(self.partitions.len() as u32).to_le_bytes());
        for (answer, p) in &self.partitions {
            put_string(&mut buf, answer);
            buf.extend_from_slice(&(p.refs.len() as u64).to_le_bytes());
            for v in &p.rows {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for r in &p.refs {
                put_string(&mut buf, &r.passage_id);
                put_string(&mut buf, &r.doc_id);
                buf.extend_from_slice(&r.year.unwrap_or(0).to_le_bytes());
                put_string(&mut buf, &r.source);
            }
        }
        buf
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), IndexError> {
        out.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self, IndexError> {
        let magic = read_bytes(input, INDEX_MAGIC.len())?;
        if magic != INDEX_MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let hidden = read_u32(input)? as usize;
        let count = read_u32(input)? as usize;
        let mut partitions = BTreeMap::new();
        for _ in 0..count {
            let answer = read_string(input)?;
            let rows = read_u64(input)? as usize;
            let mut data = Vec::with_capacity(rows * hidden);
            for _ in 0..rows * hidden {
                data.push(read_f32(input)?);
            }
            let mut refs = Vec::with_capacity(rows);
            for _ in 0..rows {
                let passage_id = read_string(input)?;
                let doc_id = read_string(input)?;
                let year = read_u32(input)?;
                let source = read_string(input)?;
                refs.push(PassageRef {
                    passage_id,
                    doc_id,
                    year: (year != 0).then_some(year),
                    source,
                });
            }
            partitions.insert(answer, Partition { rows: data, refs });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(IndexError::Format("trailing bytes".into()));
        }
        Ok(Self { hidden, partitions })
    }

    /// Hex SHA-256 of the serialised index.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pref(id: &str) -> PassageRef {
        PassageRef {
            passage_id: id.to_string(),
            doc_id: format!("doc-{id}"),
            year: Some(2000),
            source: "literature".to_string(),
        }
    }

    fn entry(a: &str, id: &str, v: Vec<f64>) -> IndexEntry<f64> {
        IndexEntry {
            answer_id: a.to_string(),
            passage: pref(id),
            vector: v,
        }
    }

    fn two_axis() -> AnswerPartitionIndex {
        AnswerPartitionIndex::build(2, vec![entry("G1", "p2", vec![0.0, 1.0]), entry("G1", "p1", vec![1.0, 0.0])]).unwrap()
    }

    #[test]
    fn partition_sizes() {
        let idx = AnswerPartitionIndex::build(
            2,
            vec![
                entry("G1", "a", vec![1.0, 0.0]),
                entry("G1", "b", vec![1.0, 1.0]),
                entry("G1", "c", vec![0.0, 1.0]),
                entry("G2", "d", vec![1.0, 2.0]),
                entry("G2", "e", vec![2.0, 1.0]),
            ],
        )
        .unwrap();
        assert_eq!(idx.partition_len("G1"), 3);
        assert_eq!(idx.partition_len("G2"), 2);
        let empty = AnswerPartitionIndex::build::<f64>(2, vec![]).unwrap();
        assert_eq!(empty.total_rows(), 0);
    }

    #[test]
    fn exact_hit() {
        let hits = two_axis().topk("G1", &[1.0, 0.0], 1, None).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].passage.passage_id, "p1");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_query_ties_by_passage_id() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let hits = two_axis().topk("G1", &[s, s], 2, None).unwrap();
        assert_eq!(hits[0].passage.passage_id, "p1");
        assert_eq!(hits[1].passage.passage_id, "p2");
        for h in &hits {
            assert!((h.similarity - s).abs() < 1e-7);
        }
    }

    #[test]
    fn k_larger_than_partition() {
        assert_eq!(two_axis().topk("G1", &[1.0, 0.3], 64, None).unwrap().len(), 2);
    }

    #[test]
    fn errors() {
        let idx = two_axis();
        assert!(matches!(idx.topk("G9", &[1.0, 0.0], 1, None), Err(IndexError::UnknownAnswer(_))));
        assert!(matches!(idx.topk("G1", &[0.0, 0.0], 1, None), Err(IndexError::ZeroQuery)));
        let r = AnswerPartitionIndex::build(2, vec![entry("G1", "z", vec![0.0, 0.0])]);
        assert!(matches!(r, Err(IndexError::ZeroNorm(id)) if id == "z"));
    }

    #[test]
    fn year_filter_excludes_later_docs() {
        let mut late = entry("G1", "late", vec![1.0, 0.0]);
        late.passage.year = Some(2010);
        let idx = AnswerPartitionIndex::build(2, vec![late, entry("G1", "early", vec![0.5, 0.5])]).unwrap();
        let f = MetadataFilter {
            max_year: Some(2005),
            sources: None,
        };
        let hits = idx.topk("G1", &[1.0, 0.0], 5, Some(&f)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].passage.passage_id, "early");
    }

    #[test]
    fn serialisation_roundtrip_and_checksum() {
        let idx = two_axis();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..7], INDEX_MAGIC);
        let back = AnswerPartitionIndex::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.checksum(), idx.checksum());
        let rebuilt = AnswerPartitionIndex::build(2, vec![entry("G1", "p1", vec![1.0, 0.0]), entry("G1", "p2", vec![0.0, 1.0])]).unwrap();
        assert_eq!(rebuilt.to_bytes(), bytes);
    }

    #[test]
    fn topk_all_matches_individual_calls() {
        let idx = AnswerPartitionIndex::build(
            2,
            vec![entry("G1", "a", vec![1.0, 0.2]), entry("G2", "b", vec![0.1, 1.0]), entry("G2", "c", vec![1.0, 1.0])],
        )
        .unwrap();
        let ids = vec!["G1".to_string(), "G2".to_string()];
        let all = idx.topk_all(&ids, &[0.3, 0.7], 2, None).unwrap();
        for a in &ids {
            assert_eq!(all[a], idx.topk(a, &[0.3, 0.7], 2, None).unwrap());
        }
        assert!(idx.topk_all::<f64>(&[], &[0.3, 0.7], 2, None).unwrap().is_empty());
        assert!(matches!(
            idx.topk_all(&["G1".to_string(), "X".to_string()], &[1.0, 0.0], 1, None),
            Err(IndexError::UnknownAnswers(v)) if v == vec!["X".to_string()]
        ));
    }
}
