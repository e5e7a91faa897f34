use serde::{Deserialize, Serialize};

use super::{PairVariant, Reasoner, ReasonerError, NULL_EMBEDDING};
use crate::diffkernel::{layers, sigmoid, KernelError, NodeId, Tape, Tensor};
use crate::index::{AnswerPartitionIndex, MetadataFilter, PassageRef};
use crate::scalar::Scalar;

/// Where a feature slot's vector came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Evidence {
        passage: PassageRef,
        similarity: f64,
        row: usize,
    },
    Null,
}

/// One fused query–evidence vector, or the NULL marker (the learned NULL
/// embedding is substituted when combining).
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature<T> {
    pub vector: Option<Vec<T>>,
    pub provenance: Provenance,
}

/// The `k` feature slots for one (answer, query) pair. NULL rows of
/// `rows` are zero and ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T: Scalar> {
    pub rows: Tensor<T>,
    pub provenance: Vec<Provenance>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn k(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_null(&self, i: usize) -> bool {
        matches!(self.provenance[i], Provenance::Null)
    }

    pub fn null_mask(&self) -> Vec<bool> {
        (0..self.k()).map(|i| self.is_null(i)).collect()
    }

    pub fn evidence_count(&self) -> usize {
        self.null_mask().iter().filter(|&&n| !n).count()
    }

    pub fn feature(&self, i: usize) -> PairFeature<T> {
        PairFeature {
            vector: (!self.is_null(i)).then(|| self.rows.row_slice(i).to_vec()),
            provenance: self.provenance[i].clone(),
        }
    }

    /// Builds a set from explicit features; `vector: None` marks NULL.
    pub fn from_features(hidden: usize, features: Vec<PairFeature<T>>) -> Result<Self, ReasonerError> {
        let mut data = Vec::with_capacity(features.len() * hidden);
        let mut provenance = Vec::with_capacity(features.len());
        for f in features {
            match f.vector {
                Some(v) if v.len() == hidden => data.extend(v),
                Some(v) => {
                    return Err(ReasonerError::Width {
                        expected: hidden,
                        got: v.len(),
                    })
                }
                None => data.extend(std::iter::repeat_n(T::zero(), hidden)),
            }
            provenance.push(f.provenance);
        }
        let rows = Tensor::matrix(provenance.len(), hidden, data)?;
        Ok(Self { rows, provenance })
    }

    /// Copy with the listed slots replaced by NULL.
    pub fn with_nulls(&self, indices: &[usize]) -> Result<Self, ReasonerError> {
        let mut out = self.clone();
        let h = self.rows.cols();
        for &i in indices {
            if i >= self.k() {
                return Err(ReasonerError::MaskIndex { index: i, len: self.k() });
            }
            out.provenance[i] = Provenance::Null;
            out.rows.data_mut()[i * h..(i + 1) * h].fill(T::zero());
        }
        Ok(out)
    }

    /// Same slots in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let h = self.rows.cols();
        let mut data = Vec::with_capacity(self.rows.len());
        for &i in order {
            data.extend_from_slice(self.rows.row_slice(i));
        }
        Self {
            rows: Tensor::matrix(order.len(), h, data).expect("permutation keeps shape"),
            provenance: order.iter().map(|&i| self.provenance[i].clone()).collect(),
        }
    }
}

fn unit<T: Scalar>(v: &[T]) -> Vec<T> {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n > T::zero() {
        v.iter().map(|&x| x / n).collect()
    } else {
        v.to_vec()
    }
}

impl<T: Scalar> Reasoner<T> {
    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn check_width(&self, got: usize) -> Result<(), ReasonerError> {
        if got != self.config.hidden {
            return Err(ReasonerError::Width {
                expected: self.config.hidden,
                got,
            });
        }
        Ok(())
    }

    /// Fuses `query` with every row of `evidence` (`[n, h]`), giving `[n, h]`.
    /// The query is scaled to unit norm first, matching the index rows.
    pub fn pair_features_on(
        &self,
        tape: &mut Tape<'_, T>,
        query: &[T],
        evidence: &Tensor<T>,
    ) -> Result<NodeId, KernelError> {
        let h = self.config.hidden;
        let n = evidence.rows();
        match self.config.pair_variant {
            PairVariant::Hadamard => {
                let q = unit(query);
                let mut out = evidence.clone();
                for row in out.data_mut().chunks_mut(h) {
                    for (v, &qv) in row.iter_mut().zip(&q) {
                        *v = *v * qv;
                    }
                }
                tape.leaf(out)
            }
            PairVariant::Conv => {
                let q = tape.leaf(Tensor::row(unit(query))?)?;
                let q = tape.repeat_rows(q, n)?;
                let e = tape.leaf(evidence.clone())?;
                let stacked = tape.concat_cols(&[q, e])?;
                let normed = layers::layer_norm(tape, stacked, "pair.ln")?;
                let qs = tape.slice_cols(normed, 0, h)?;
                let qs = tape.reshape(qs, vec![1, n * h])?;
                let es = tape.slice_cols(normed, h, h)?;
                let es = tape.reshape(es, vec![1, n * h])?;
                let x = tape.concat_rows(&[qs, es])?;
                let w1 = tape.param("pair.conv1.w")?;
                let b1 = tape.param("pair.conv1.b")?;
                let c1 = tape.conv1x1(x, w1, b1)?;
                let a1 = tape.gelu(c1)?;
                let w2 = tape.param("pair.conv2.w")?;
                let b2 = tape.param("pair.conv2.b")?;
                let c2 = tape.conv1x1(a1, w2, b2)?;
                tape.reshape(c2, vec![n, h])
            }
        }
    }

    fn mab(&self, tape: &mut Tape<'_, T>, prefix: &str, x: NodeId, y: NodeId) -> Result<NodeId, KernelError> {
        let a = layers::multihead_attention(tape, &format!("{prefix}.attn"), x, y, self.config.heads, None)?;
        let r = tape.add(x, a)?;
        let hdn = layers::layer_norm(tape, r, &format!("{prefix}.ln0"))?;
        let f = layers::feed_forward(tape, hdn, &format!("{prefix}.rff"))?;
        let r = tape.add(hdn, f)?;
        layers::layer_norm(tape, r, &format!("{prefix}.ln1"))
    }

    /// Set-transformer combiner over `[k, h]` features; rows flagged in
    /// `null` are replaced by the learned NULL embedding. Returns the `[1, 1]`
    /// logit node.
    pub fn combine_on(&self, tape: &mut Tape<'_, T>, features: NodeId, null: &[bool]) -> Result<NodeId, KernelError> {
        let null_emb = tape.param(NULL_EMBEDDING)?;
        let mut x = tape.where_rows(features, null_emb, null)?;
        for b in 0..self.config.encoder_blocks {
            let inducing = tape.param(&format!("set.isab{b}.inducing"))?;
            let hdn = self.mab(tape, &format!("set.isab{b}.mab0"), inducing, x)?;
            x = self.mab(tape, &format!("set.isab{b}.mab1"), x, hdn)?;
        }
        let seed = tape.param("set.pma.seed")?;
        let z = layers::feed_forward(tape, x, "set.pma.rff")?;
        let mut y = self.mab(tape, "set.pma.mab", seed, z)?;
        for b in 0..self.config.decoder_blocks {
            y = self.mab(tape, &format!("set.sab{b}"), y, y)?;
        }
        layers::linear(tape, y, "set.out")
    }

    /// Fused features for a query and its retrieved evidence rows, padded
    /// with NULL up to `k`. Extra evidence beyond `k` is ignored.
    pub fn features(
        &self,
        query: &[T],
        evidence: &[(Vec<T>, Provenance)],
    ) -> Result<FeatureSet<T>, ReasonerError> {
        self.features_with_k(query, evidence, self.config.k)
    }

    /// [`features`](Self::features) with an explicit slot count. The set
    /// combiner accepts any positive slot count.
    pub fn features_with_k(
        &self,
        query: &[T],
        evidence: &[(Vec<T>, Provenance)],
        k: usize,
    ) -> Result<FeatureSet<T>, ReasonerError> {
        self.check_width(query.len())?;
        if k == 0 {
            return Err(ReasonerError::Config("k must be positive".into()));
        }
        let h = self.config.hidden;
        let used = &evidence[..evidence.len().min(k)];
        let mut provenance: Vec<Provenance> = used.iter().map(|(_, p)| p.clone()).collect();
        let mut data = vec![T::zero(); k * h];
        if !used.is_empty() {
            let mut ev = Vec::with_capacity(used.len() * h);
            for (v, _) in used {
                self.check_width(v.len())?;
                ev.extend_from_slice(v);
            }
            let ev = Tensor::matrix(used.len(), h, ev)?;
            let mut tape = Tape::new(&self.params);
            let f = self.pair_features_on(&mut tape, query, &ev)?;
            data[..used.len() * h].copy_from_slice(tape.value(f).data());
        }
        provenance.resize(k, Provenance::Null);
        Ok(FeatureSet {
            rows: Tensor::matrix(k, h, data)?,
            provenance,
        })
    }

    /// Retrieves `answer`'s top-`k` evidence for `query` and fuses it. An
    /// answer without a partition gets all-NULL features.
    pub fn features_from_index(
        &self,
        query: &[T],
        answer: &str,
        index: &AnswerPartitionIndex,
        filter: Option<&MetadataFilter>,
    ) -> Result<FeatureSet<T>, ReasonerError> {
        self.features_from_index_k(query, answer, index, filter, self.config.k)
    }

    pub fn features_from_index_k(
        &self,
        query: &[T],
        answer: &str,
        index: &AnswerPartitionIndex,
        filter: Option<&MetadataFilter>,
        k: usize,
    ) -> Result<FeatureSet<T>, ReasonerError> {
        let evidence = if index.contains(answer) {
            index
                .topk(answer, query, k, filter)?
                .into_iter()
                .map(|hit| {
                    let row = index.row(answer, hit.row)?.iter().map(|&v| T::of(v as f64)).collect();
                    Ok((
                        row,
                        Provenance::Evidence {
                            passage: hit.passage,
                            similarity: hit.similarity,
                            row: hit.row,
                        },
                    ))
                })
                .collect::<Result<Vec<_>, ReasonerError>>()?
        } else {
            Vec::new()
        };
        self.features_with_k(query, &evidence, k)
    }

    /// Fuses a single pair.
    pub fn encode_pair(&self, query: &[T], evidence: &[T]) -> Result<Vec<T>, ReasonerError> {
        self.check_width(query.len())?;
        self.check_width(evidence.len())?;
        let ev = Tensor::row(evidence.to_vec())?;
        let mut tape = Tape::new(&self.params);
        let f = self.pair_features_on(&mut tape, query, &ev)?;
        Ok(tape.value(f).data().to_vec())
    }

    /// Logit with the given slots forced to NULL in addition to the set's own
    /// NULL slots. Any positive slot count is accepted.
    pub fn logit_masked(&self, features: &FeatureSet<T>, extra_null: &[bool]) -> Result<T, ReasonerError> {
        if features.k() == 0 {
            return Err(ReasonerError::FeatureCount {
                expected: self.config.k,
                got: 0,
            });
        }
        self.check_width(features.rows.cols())?;
        let null: Vec<bool> = (0..features.k())
            .map(|i| features.is_null(i) || extra_null.get(i).copied().unwrap_or(false))
            .collect();
        let mut tape = Tape::new(&self.params);
        let x = tape.leaf(features.rows.clone())?;
        let z = self.combine_on(&mut tape, x, &null)?;
        Ok(tape.value(z).data()[0])
    }

    /// `(logit, sigmoid(logit))` for exactly `k` slots.
    pub fn combine(&self, features: &FeatureSet<T>) -> Result<(T, T), ReasonerError> {
        if features.k() != self.config.k {
            return Err(ReasonerError::FeatureCount {
                expected: self.config.k,
                got: features.k(),
            });
        }
        let z = self.logit_masked(features, &[])?;
        Ok((z, sigmoid(z)))
    }

    /// Score with every slot NULL: the no-evidence baseline `g(∅)`.
    pub fn null_logit(&self) -> Result<T, ReasonerError> {
        let k = self.config.k;
        let h = self.config.hidden;
        let fs = FeatureSet {
            rows: Tensor::zeros(&[k, h]),
            provenance: vec![Provenance::Null; k],
        };
        self.logit_masked(&fs, &[])
    }

    /// Rescores with the listed evidence slots replaced by NULL.
    pub fn audit_rescore(&self, features: &FeatureSet<T>, masked: &[usize]) -> Result<(T, T), ReasonerError> {
        let mut extra = vec![false; features.k()];
        for &i in masked {
            if i >= features.k() {
                return Err(ReasonerError::MaskIndex {
                    index: i,
                    len: features.k(),
                });
            }
            extra[i] = true;
        }
        let z = self.logit_masked(features, &extra)?;
        Ok((z, sigmoid(z)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::ReasonerConfig;
    use super::*;

    fn small(variant: PairVariant) -> Reasoner<f64> {
        let cfg = ReasonerConfig {
            hidden: 8,
            k: 4,
            heads: 2,
            inducing_points: 3,
            pair_variant: variant,
            ..Default::default()
        };
        Reasoner::init(cfg, 11).unwrap()
    }

    fn ev(v: Vec<f64>) -> (Vec<f64>, Provenance) {
        let passage = PassageRef {
            passage_id: "p".into(),
            doc_id: "d".into(),
            year: None,
            source: "s".into(),
        };
        (
            v,
            Provenance::Evidence {
                passage,
                similarity: 0.5,
                row: 0,
            },
        )
    }

    #[test]
    fn zero_conv_gives_zero_features() {
        let mut r = small(PairVariant::Conv);
        for name in ["pair.conv1.w", "pair.conv2.w"] {
            r.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let f = r.encode_pair(&[0.3; 8], &[-1.0, 2.0, 0.5, 0.0, 1.0, 1.0, 3.0, -2.0]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hadamard_with_ones_is_unit_query() {
        let r = small(PairVariant::Hadamard);
        let q = [3.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let f = r.encode_pair(&q, &[1.0; 8]).unwrap();
        assert!((f[0] - 0.6).abs() < 1e-15 && (f[2] - 0.8).abs() < 1e-15);
        assert!(r.params.names().all(|n| !n.starts_with("pair.")));
    }

    #[test]
    fn padding_and_baseline() {
        let r = small(PairVariant::Conv);
        let q = vec![0.1; 8];
        let fs = r.features(&q, &[]).unwrap();
        assert_eq!(fs.k(), 4);
        assert!(fs.null_mask().iter().all(|&b| b));
        let (z, p) = r.combine(&fs).unwrap();
        assert_eq!(z, r.null_logit().unwrap());
        assert!((p - sigmoid(z)).abs() < 1e-15);
        let one = r.features(&q, &[ev(vec![0.5; 8])]).unwrap();
        assert_eq!(one.evidence_count(), 1);
    }

    #[test]
    fn wrong_feature_count() {
        let r = small(PairVariant::Conv);
        let fs = FeatureSet::<f64> {
            rows: Tensor::zeros(&[3, 8]),
            provenance: vec![Provenance::Null; 3],
        };
        assert!(matches!(r.combine(&fs), Err(ReasonerError::FeatureCount { .. })));
    }

    #[test]
    fn audit_identities() {
        let r = small(PairVariant::Conv);
        let evs: Vec<_> = (0..4).map(|i| ev((0..8).map(|j| ((i * 8 + j) as f64).sin()).collect())).collect();
        let fs = r.features(&[0.2; 8], &evs).unwrap();
        assert_eq!(fs.evidence_count(), 4);
        let (z, _) = r.combine(&fs).unwrap();
        assert_eq!(r.audit_rescore(&fs, &[]).unwrap().0, z);
        assert_eq!(r.audit_rescore(&fs, &[0, 1, 2, 3]).unwrap().0, r.null_logit().unwrap());
        let direct = r.combine(&fs.with_nulls(&[2]).unwrap()).unwrap().0;
        assert_eq!(r.audit_rescore(&fs, &[2]).unwrap().0, direct);
        assert!(matches!(r.audit_rescore(&fs, &[4]), Err(ReasonerError::MaskIndex { .. })));
    }
}
