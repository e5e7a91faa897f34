use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use r2e_core::corpus::io::{read_documents, write_documents};
use r2e_core::corpus::EntityDictionary;
use r2e_core::eval::{parse_eval_set, write_eval_set, Aggregation, EvalRecord, SynthWorld, SynthWorldConfig};
use r2e_core::index::MetadataFilter;
use r2e_core::pipeline::{
    build_index, evaluate, ingest, load_retriever, train_reasoner_stage, train_retriever, write_index, ArtifactLayout,
    EvaluateOptions, ExplainOptions, IngestOutput, PipelineError, R2eConfig, R2eSystem, RankOptions, INDEXED_SPLITS,
};
use r2e_core::RankBasis;
use serde::Serialize;

use crate::args::{BasisArg, EvaluateArgs, ExplainArgs, IngestArgs, RankArgs, SynthArgs};

fn data_error(message: impl Into<String>) -> PipelineError {
    PipelineError::Data(message.into())
}

fn open(path: &std::path::Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data_error(format!("cannot open {}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), PipelineError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn layout(cfg: &R2eConfig) -> ArtifactLayout {
    ArtifactLayout::new(&cfg.paths.artifacts)
}

pub fn run_ingest(cfg: &R2eConfig, args: &IngestArgs) -> Result<(), PipelineError> {
    let docs = read_documents(open(&args.docs)?)
        .map_err(|e| data_error(format!("{}: {e}", args.docs.display())))?;
    let dict_text = std::fs::read_to_string(&args.dictionary)
        .map_err(|e| data_error(format!("cannot open {}: {e}", args.dictionary.display())))?;
    let dict = EntityDictionary::from_tsv(&dict_text)
        .map_err(|e| data_error(format!("{}: {e}", args.dictionary.display())))?;
    let out = ingest(&docs, &dict, &cfg.splits)?;
    out.write(&layout(cfg))?;
    log::info!("{} documents, {} passages", out.manifest.documents, out.manifest.passages);
    print_json(&out.manifest)
}

pub fn run_train_retriever(cfg: &R2eConfig) -> Result<(), PipelineError> {
    let layout = layout(cfg);
    let corpus = IngestOutput::load(&layout)?;
    let out = train_retriever(&corpus, &cfg.encoder, &cfg.mlm_train, cfg.seed)?;
    out.write(&layout)?;
    print_json(&out.report)
}

#[derive(Serialize)]
struct IndexSummary {
    rows: usize,
    answers: usize,
    checksum: String,
}

pub fn run_build_index(cfg: &R2eConfig) -> Result<(), PipelineError> {
    let layout = layout(cfg);
    let corpus = IngestOutput::load(&layout)?;
    let (model, _) = load_retriever(&layout)?;
    let index = build_index(&model, &corpus.passages_in(&INDEXED_SPLITS))?;
    write_index(&layout, &index)?;
    print_json(&IndexSummary {
        rows: index.total_rows(),
        answers: index.counts().len(),
        checksum: index.checksum(),
    })
}

pub fn run_train_reasoner(cfg: &R2eConfig) -> Result<(), PipelineError> {
    let layout = layout(cfg);
    let corpus = IngestOutput::load(&layout)?;
    let (model, _) = load_retriever(&layout)?;
    layout.require(&layout.index(), "build-index")?;
    let out = train_reasoner_stage(&corpus, &model, &cfg.reasoner, &cfg.reasoner_train, cfg.seed + 1)?;
    out.write(&layout)?;
    print_json(&out.report)
}

pub fn run_rank(cfg: &R2eConfig, args: &RankArgs) -> Result<(), PipelineError> {
    let sys = R2eSystem::<f64>::load(&layout(cfg))?;
    let opts = RankOptions {
        k: cfg.inference.k,
        c: cfg.inference.c,
        basis: match args.basis {
            BasisArg::Corrected => RankBasis::Corrected,
            BasisArg::Uncorrected => RankBasis::Uncorrected,
        },
    };
    let filter = args.max_year.map(|y| MetadataFilter {
        max_year: Some(y),
        sources: None,
    });
    let out = sys.rank(&args.query, &opts, filter.as_ref())?;
    let n = args.top_n.unwrap_or(out.list.len());
    let mut w = BufWriter::new(std::io::stdout().lock());
    for e in out.list.top(n) {
        writeln!(w, "{}", serde_json::to_string(e)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_explain(cfg: &R2eConfig, args: &ExplainArgs) -> Result<(), PipelineError> {
    let sys = R2eSystem::<f64>::load(&layout(cfg))?;
    let (_, _, features) = sys.score_answer(&args.query, &args.answer, cfg.inference.k, None)?;
    let opts = ExplainOptions {
        space: cfg.inference.output_space,
        permutations: cfg.inference.permutations,
        seed: cfg.inference.explain_seed,
        exact: args.exact,
        c: cfg.inference.c,
    };
    print_json(&sys.explain(&args.answer, &features, &opts)?)
}

pub fn evaluate_options(cfg: &R2eConfig, args: &EvaluateArgs) -> EvaluateOptions {
    let defaults = EvaluateOptions::default();
    EvaluateOptions {
        k: cfg.inference.k,
        c: cfg.inference.c,
        cutoffs: args.cutoffs.clone().unwrap_or(defaults.cutoffs),
        aggregation: if args.macro_average {
            Aggregation::Macro
        } else {
            Aggregation::Micro
        },
        before_query_year: args.before_query_year,
    }
}

pub fn run_evaluate(cfg: &R2eConfig, args: &EvaluateArgs) -> Result<(), PipelineError> {
    let text = std::fs::read_to_string(&args.eval_set)
        .map_err(|e| data_error(format!("cannot open {}: {e}", args.eval_set.display())))?;
    let records = parse_eval_set(&text).map_err(|e| data_error(format!("{}: {e}", args.eval_set.display())))?;
    let sys = R2eSystem::<f64>::load(&layout(cfg))?;
    let report = evaluate(&sys, &records, &evaluate_options(cfg, args))?;
    if report.skipped > 0 {
        log::warn!("{} records name unknown answers and were skipped", report.skipped);
    }
    print_json(&report)
}

pub fn run_serve(cfg: &R2eConfig) -> Result<(), PipelineError> {
    let state = r2e_service::AppState::from_config(cfg);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(r2e_service::serve(state, &cfg.server.bind))?;
    Ok(())
}

#[derive(Serialize)]
struct SynthSummary {
    documents: usize,
    entities: usize,
    eval_records: usize,
    files: Vec<String>,
}

/// Writes `docs.jsonl`, `dictionary.tsv`, `eval.csv` (one positive and one
/// negative record per balanced query), `world.json` and `r2e.toml`.
pub fn run_synth(cfg: &R2eConfig, args: &SynthArgs) -> Result<(), PipelineError> {
    let world_cfg = SynthWorldConfig {
        entities: args.entities,
        sentences: args.sentences,
        disjoint: args.disjoint,
        ..SynthWorldConfig::default()
    };
    let world = SynthWorld::new(world_cfg.clone()).map_err(|e| PipelineError::Config(e.to_string()))?;
    let corpus = world.generate(cfg.seed);
    std::fs::create_dir_all(&args.out)?;
    let mut w = BufWriter::new(File::create(args.out.join("docs.jsonl"))?);
    write_documents(&mut w, &corpus.documents)?;
    w.flush()?;
    let dict: String = world.entities.iter().map(|e| format!("{e}\t{e}\n")).collect();
    std::fs::write(args.out.join("dictionary.tsv"), dict)?;
    let n = world.entities.len();
    let mut records = Vec::new();
    for (i, (query, gold)) in world.stratified_queries(args.queries_per_entity, cfg.seed + 1).into_iter().enumerate() {
        let g = world.entities.iter().position(|e| *e == gold).expect("query entity exists");
        let other = world.entities[(g + 1 + i % (n - 1)) % n].clone();
        for (answer_id, label) in [(gold, true), (other, false)] {
            records.push(EvalRecord {
                query: query.clone(),
                answer_id,
                label,
                score: None,
                year: None,
            });
        }
    }
    std::fs::write(args.out.join("eval.csv"), write_eval_set(&records))?;
    std::fs::write(args.out.join("world.json"), serde_json::to_string_pretty(&world)?)?;
    let mut run_cfg = R2eConfig::synth_desk(&world_cfg, cfg.seed);
    run_cfg.paths.artifacts = std::fs::canonicalize(&args.out)?.join("artifacts");
    std::fs::write(args.out.join("r2e.toml"), run_cfg.to_toml())?;
    print_json(&SynthSummary {
        documents: corpus.documents.len(),
        entities: n,
        eval_records: records.len(),
        files: ["docs.jsonl", "dictionary.tsv", "eval.csv", "world.json", "r2e.toml"]
            .map(String::from)
            .to_vec(),
    })
}
