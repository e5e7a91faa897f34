//! Corpus embedding and the `R2EEMB1` embedding file:
//!
//! ```text
//! "R2EEMB1"  u32 h
//! repeated until EOF: u32 len + passage id, u32 len + answer id, h × f32
//! ```

use std::io::{Read, Write};

use rayon::prelude::*;

use super::{EncoderError, MlmModel};
use crate::corpus::MaskedPassage;
use crate::io_util::{put_string, read_bytes, read_f32, read_string, read_u32};
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 7] = b"R2EEMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPassage<T> {
    pub passage_id: String,
    pub answer_id: String,
    pub vector: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingOutput<T> {
    pub passages: Vec<EmbeddedPassage<T>>,
    /// Passages whose mask fell past the truncation length.
    pub skipped: Vec<String>,
}

const BATCH: usize = 64;

/// Embeds every passage, in input order. Batches run in parallel.
pub fn embed_corpus<T: Scalar>(
    model: &MlmModel<T>,
    passages: &[MaskedPassage],
) -> Result<EmbeddingOutput<T>, EncoderError> {
    let batches: Vec<Vec<Option<EmbeddedPassage<T>>>> = passages
        .par_chunks(BATCH)
        .map(|chunk| {
            chunk
                .iter()
                .map(|p| {
                    let tokens = model.tokenize(&p.masked_text);
                    if tokens.mask_positions.is_empty() {
                        return Ok(None);
                    }
                    Ok(Some(EmbeddedPassage {
                        passage_id: p.passage_id.clone(),
                        answer_id: p.answer_id.clone(),
                        vector: model.encode(&tokens)?,
                    }))
                })
                .collect::<Result<Vec<_>, EncoderError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut out = EmbeddingOutput {
        passages: Vec::with_capacity(passages.len()),
        skipped: Vec::new(),
    };
    for (p, e) in passages.iter().zip(batches.into_iter().flatten()) {
        match e {
            Some(e) => out.passages.push(e),
            None => out.skipped.push(p.passage_id.clone()),
        }
    }
    Ok(out)
}

pub fn write_embeddings<T: Scalar, W: Write>(
    out: &mut W,
    hidden: usize,
    passages: &[EmbeddedPassage<T>],
) -> Result<(), EncoderError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(hidden as u32).to_le_bytes());
    for p in passages {
        if p.vector.len() != hidden {
            return Err(EncoderError::WidthMismatch {
                expected: hidden,
                got: p.vector.len(),
            });
        }
        put_string(&mut buf, &p.passage_id);
        put_string(&mut buf, &p.answer_id);
        for &v in &p.vector {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_embeddings<R: Read>(input: &mut R) -> Result<(usize, Vec<EmbeddedPassage<f32>>), EncoderError> {
    let mut all = Vec::new();
    input.read_to_end(&mut all)?;
    let mut cur = all.as_slice();
    let magic = read_bytes(&mut cur, EMBEDDING_MAGIC.len())?;
    if magic != EMBEDDING_MAGIC {
        return Err(EncoderError::Format("bad embedding magic".into()));
    }
    let h = read_u32(&mut cur)? as usize;
    let mut out = Vec::new();
    while !cur.is_empty() {
        let passage_id = read_string(&mut cur)?;
        let answer_id = read_string(&mut cur)?;
        let mut vector = Vec::with_capacity(h);
        for _ in 0..h {
            vector.push(read_f32(&mut cur)?);
        }
        out.push(EmbeddedPassage {
            passage_id,
            answer_id,
            vector,
        });
    }
    Ok((h, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_roundtrip() {
        let ps = vec![
            EmbeddedPassage {
                passage_id: "p1".to_string(),
                answer_id: "G1".to_string(),
                vector: vec![0.5f64, -1.0],
            },
            EmbeddedPassage {
                passage_id: "p2".to_string(),
                answer_id: "G2".to_string(),
                vector: vec![0.25, 2.0],
            },
        ];
        let mut buf = Vec::new();
        write_embeddings(&mut buf, 2, &ps).unwrap();
        assert_eq!(&buf[..7], b"R2EEMB1");
        let (h, back) = read_embeddings(&mut buf.as_slice()).unwrap();
        assert_eq!(h, 2);
        assert_eq!(back[1].vector, vec![0.25f32, 2.0]);
        assert_eq!(back[0].answer_id, "G1");
        buf.pop();
        assert!(read_embeddings(&mut buf.as_slice()).is_err());
    }
}
