use std::collections::BTreeSet;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::Json;
use r2e_core::attribution::OutputSpace;
use r2e_core::index::MetadataFilter;
use r2e_core::pipeline::{CorpusStats, ExplainOptions, R2eSystem, RankOptions};
use r2e_core::reasoner::Provenance;
use r2e_core::{RankBasis, RankedAnswer};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::sessions::{Session, SharedSession};
use crate::AppState;

/// Exact attribution enumerates `2^k` coalitions; refuse beyond this.
const MAX_EXACT_K: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankRequest {
    pub query: String,
    pub k: Option<usize>,
    pub c: Option<f64>,
    pub top_n: Option<usize>,
    pub basis: Option<RankBasis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub session: String,
    pub query: String,
    pub k: usize,
    pub c: f64,
    pub basis: RankBasis,
    pub total_answers: usize,
    pub answers: Vec<RankedAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub session: String,
    pub answer_id: String,
    pub output_space: Option<OutputSpace>,
    #[serde(rename = "M", alias = "m")]
    pub permutations: Option<usize>,
    pub seed: Option<u64>,
    pub exact: Option<bool>,
}

/// One evidence slot in an explanation. Audited slots stay listed with a
/// zero attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub slot: usize,
    pub passage_id: String,
    pub doc_id: String,
    pub year: Option<u32>,
    pub source: String,
    pub text: String,
    pub similarity: f64,
    pub shapley: f64,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub session: String,
    pub answer_id: String,
    pub output_space: OutputSpace,
    pub baseline: f64,
    pub total: f64,
    pub bias_term: Option<f64>,
    pub permutations: Option<usize>,
    pub seed: u64,
    pub masked_evidence: Vec<usize>,
    pub evidence: Vec<EvidenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRequest {
    pub session: String,
    pub answer_id: String,
    /// The complete set of slots to replace with NULL; it supersedes the
    /// previous mask for this answer.
    pub masked_evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResponse {
    pub session: String,
    pub answer_id: String,
    pub masked_evidence: Vec<usize>,
    /// Probabilities before and after masking.
    pub old_score: f64,
    pub new_score: f64,
    pub delta: f64,
    pub old_logit: f64,
    pub new_logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceParams {
    pub query: String,
    pub k: Option<usize>,
    pub max_year: Option<u32>,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceHitRow {
    pub row: usize,
    pub passage_id: String,
    pub doc_id: String,
    pub year: Option<u32>,
    pub source: String,
    pub text: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceResponse {
    pub answer_id: String,
    pub query: String,
    pub k: usize,
    pub max_year: Option<u32>,
    pub hits: Vec<EvidenceHitRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models_loaded: bool,
    pub sessions: usize,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("malformed_body", e.body_text()))
}

fn system(state: &AppState) -> Result<Arc<R2eSystem<f64>>, ApiError> {
    state.system.clone().ok_or_else(ApiError::models_unavailable)
}

fn session(state: &AppState, id: &str) -> Result<SharedSession, ApiError> {
    state
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found("unknown_session", format!("no live session `{id}`")))
}

fn check_k(k: usize) -> Result<usize, ApiError> {
    if k == 0 {
        return Err(ApiError::bad_request("invalid_parameter", "k must be positive"));
    }
    Ok(k)
}

/// Runs CPU-bound model work off the async executor.
async fn blocking<R: Send + 'static>(f: impl FnOnce() -> Result<R, ApiError> + Send + 'static) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        models_loaded: state.system.is_some(),
        sessions: state.sessions.len(),
    })
}

pub async fn rank(
    State(state): State<AppState>,
    payload: Result<Json<RankRequest>, JsonRejection>,
) -> Result<Json<RankResponse>, ApiError> {
    let req = body(payload)?;
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("empty_query", "query is empty"));
    }
    let c = req.c.unwrap_or(state.defaults.c);
    if !(0.0..=1.0).contains(&c) {
        return Err(ApiError::bad_request("invalid_parameter", format!("c = {c} is outside [0, 1]")));
    }
    let k = check_k(req.k.unwrap_or(state.defaults.k))?;
    let sys = system(&state)?;
    let opts = RankOptions {
        k,
        c,
        basis: req.basis.unwrap_or(RankBasis::Corrected),
    };
    let query = req.query.clone();
    let out = blocking(move || Ok(sys.rank(&query, &opts, None)?)).await?;
    let logits = out.list.entries.iter().map(|e| (e.answer_id.clone(), e.logit)).collect();
    let total_answers = out.list.len();
    let top_n = req.top_n.unwrap_or(total_answers).min(total_answers);
    let answers = out.list.top(top_n).to_vec();
    let id = state
        .sessions
        .insert(Session::new(req.query.clone(), k, c, out.features, logits));
    Ok(Json(RankResponse {
        session: id,
        query: req.query,
        k,
        c,
        basis: opts.basis,
        total_answers,
        answers,
    }))
}

pub async fn explain(
    State(state): State<AppState>,
    payload: Result<Json<ExplainRequest>, JsonRejection>,
) -> Result<Json<ExplainResponse>, ApiError> {
    let req = body(payload)?;
    let sys = system(&state)?;
    let shared = session(&state, &req.session)?;
    let (features, mask, c) = {
        let s = shared.lock().expect("session poisoned");
        let f = s.features.get(&req.answer_id).cloned().ok_or_else(|| {
            ApiError::not_found("unknown_answer", format!("answer `{}` was not scored", req.answer_id))
        })?;
        (f, s.mask_of(&req.answer_id), s.c)
    };
    let exact = req.exact.unwrap_or(false);
    if exact && features.k() > MAX_EXACT_K {
        return Err(ApiError::bad_request(
            "invalid_parameter",
            format!("exact attribution needs k <= {MAX_EXACT_K}, session has k = {}", features.k()),
        ));
    }
    let permutations = req.permutations.unwrap_or(state.defaults.permutations);
    if permutations == 0 {
        return Err(ApiError::bad_request("invalid_parameter", "M must be positive"));
    }
    let opts = ExplainOptions {
        space: req.output_space.unwrap_or(state.defaults.output_space),
        permutations,
        seed: req.seed.unwrap_or(state.defaults.explain_seed),
        exact,
        c,
    };
    let answer = req.answer_id.clone();
    let sys2 = sys.clone();
    let masked_mask = mask.clone();
    let (explanation, original) = blocking(move || {
        let masked = features.with_nulls(&masked_mask).map_err(r2e_core::pipeline::PipelineError::from)?;
        Ok((sys2.explain(&answer, &masked, &opts)?, features))
    })
    .await?;
    let mut evidence: Vec<EvidenceRow> = explanation
        .evidence
        .iter()
        .map(|e| {
            let passage = match &original.provenance[e.slot] {
                Provenance::Evidence { passage, .. } => passage.clone(),
                Provenance::Null => unreachable!("explanations list evidence slots only"),
            };
            EvidenceRow {
                slot: e.slot,
                passage_id: e.passage_id.clone(),
                doc_id: passage.doc_id,
                year: passage.year,
                source: passage.source,
                text: e.text.clone(),
                similarity: e.similarity,
                shapley: e.shapley,
                masked: false,
            }
        })
        .collect();
    for &slot in &mask {
        if let Provenance::Evidence {
            passage, similarity, ..
        } = &original.provenance[slot]
        {
            evidence.push(EvidenceRow {
                slot,
                passage_id: passage.passage_id.clone(),
                doc_id: passage.doc_id.clone(),
                year: passage.year,
                source: passage.source.clone(),
                text: sys.texts.get(&passage.passage_id).cloned().unwrap_or_default(),
                similarity: *similarity,
                shapley: 0.0,
                masked: true,
            });
        }
    }
    evidence.sort_by(|a, b| b.shapley.total_cmp(&a.shapley).then(a.slot.cmp(&b.slot)));
    Ok(Json(ExplainResponse {
        session: req.session,
        answer_id: req.answer_id,
        output_space: explanation.output_space,
        baseline: explanation.baseline,
        total: explanation.total,
        bias_term: explanation.bias_term,
        permutations: explanation.permutations,
        seed: opts.seed,
        masked_evidence: mask,
        evidence,
    }))
}

pub async fn audit(
    State(state): State<AppState>,
    payload: Result<Json<AuditRequest>, JsonRejection>,
) -> Result<Json<AuditResponse>, ApiError> {
    let req = body(payload)?;
    let sys = system(&state)?;
    let shared = session(&state, &req.session)?;
    let mut s = shared.lock().expect("session poisoned");
    let features = s.features.get(&req.answer_id).ok_or_else(|| {
        ApiError::not_found("unknown_answer", format!("answer `{}` was not scored", req.answer_id))
    })?;
    let mask: BTreeSet<usize> = req.masked_evidence.iter().copied().collect();
    let indices: Vec<usize> = mask.iter().copied().collect();
    let (new_logit, new_score) = sys
        .reasoner
        .audit_rescore(features, &indices)
        .map_err(r2e_core::pipeline::PipelineError::from)?;
    let old_logit = s.logits[&req.answer_id];
    let old_score = r2e_core::diffkernel::sigmoid(old_logit);
    s.masks.insert(req.answer_id.clone(), mask);
    Ok(Json(AuditResponse {
        session: req.session,
        answer_id: req.answer_id,
        masked_evidence: indices,
        old_score,
        new_score,
        delta: new_score - old_score,
        old_logit,
        new_logit,
    }))
}

pub async fn evidence(
    State(state): State<AppState>,
    Path(answer_id): Path<String>,
    params: Result<Query<EvidenceParams>, QueryRejection>,
) -> Result<Json<EvidenceResponse>, ApiError> {
    let Query(params) = params.map_err(|e| ApiError::bad_request("malformed_query", e.body_text()))?;
    let sys = system(&state)?;
    sys.check_answer(&answer_id)?;
    let k = check_k(params.k.unwrap_or(state.defaults.k))?;
    let filter = MetadataFilter {
        max_year: params.max_year,
        sources: params.source.clone().map(|s| vec![s]),
    };
    let (answer, query) = (answer_id.clone(), params.query.clone());
    let sys2 = sys.clone();
    let hits = blocking(move || Ok(sys2.evidence(&answer, &query, k, (!filter.is_empty()).then_some(&filter))?)).await?;
    let hits = hits
        .into_iter()
        .map(|h| EvidenceHitRow {
            row: h.row,
            text: sys.texts.get(&h.passage.passage_id).cloned().unwrap_or_default(),
            passage_id: h.passage.passage_id,
            doc_id: h.passage.doc_id,
            year: h.passage.year,
            source: h.passage.source,
            similarity: h.similarity,
        })
        .collect();
    Ok(Json(EvidenceResponse {
        answer_id,
        query: params.query,
        k,
        max_year: params.max_year,
        hits,
    }))
}

pub async fn corpus_stats(State(state): State<AppState>) -> Result<Json<CorpusStats>, ApiError> {
    Ok(Json(system(&state)?.stats()))
}
