//! Gradient-check cases: one or more per tape primitive, plus the full
//! encoder and reasoner graphs.

use r2e_core::corpus::Vocab;
use r2e_core::diffkernel::{
    gradient_check, layers, GradCheckOptions, GradCheckReport, KernelError, NodeId, ParameterSet, Tape, Tensor,
};
use r2e_core::encoder::{EncoderConfig, MlmModel};
use r2e_core::reasoner::{PairVariant, Reasoner, ReasonerConfig};
use r2e_core::AnswerSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;

pub type Graph = Box<dyn Fn(&mut Tape<'_, f64>) -> Result<NodeId, KernelError>>;

pub struct GradCase {
    pub name: String,
    pub params: ParameterSet<f64>,
    pub graph: Graph,
    pub options: GradCheckOptions,
}

impl GradCase {
    fn new(name: &str, params: ParameterSet<f64>, graph: Graph) -> Self {
        Self {
            name: name.to_string(),
            params,
            graph,
            options: GradCheckOptions::default(),
        }
    }

    pub fn run(&self) -> GradCheckReport {
        gradient_check(&self.graph, &self.params, &self.options).unwrap_or_else(|e| panic!("{}: {e}", self.name))
    }
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any node to a scalar with a fixed random projection so no
/// gradient is trivially uniform.
pub fn project(t: &mut Tape<'_, f64>, x: NodeId, seed: u64) -> Result<NodeId, KernelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.value(x).shape().to_vec();
    let w = t.leaf(random(&mut rng, &shape))?;
    let y = t.mul(x, w)?;
    t.sum(y)
}

pub fn params(specs: &[(&str, &[usize])], seed: u64) -> ParameterSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterSet::new();
    for (name, shape) in specs {
        p.insert(*name, random(&mut rng, shape));
    }
    p
}

fn jitter(p: &mut ParameterSet<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn sampled() -> GradCheckOptions {
    GradCheckOptions {
        max_entries_per_param: Some(6),
        seed: 3,
        ..GradCheckOptions::default()
    }
}

pub fn primitive_cases() -> Vec<GradCase> {
    let mm = || params(&[("a", &[3, 4]), ("b", &[4, 2]), ("c", &[5, 4])], 1);
    let lin = || params(&[("x", &[3, 4]), ("w", &[4, 2]), ("b", &[2]), ("y", &[3, 4])], 2);
    let pt = || params(&[("x", &[2, 5])], 3);
    let sm = || params(&[("x", &[3, 4])], 4);
    let shp = || params(&[("a", &[2, 3]), ("b", &[2, 2]), ("r", &[1, 3]), ("c", &[1, 3])], 7);
    let loss = || params(&[("z", &[1, 5]), ("s", &[1, 1])], 9);
    let mut attention = ParameterSet::new();
    {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        layers::add_attention(&mut attention, "att", 4, &mut rng).unwrap();
        attention.insert("q", random(&mut rng, &[2, 4]));
        attention.insert("kv", random(&mut rng, &[3, 4]));
        jitter(&mut attention, 31);
    }
    vec![
        GradCase::new(
            "matmul",
            mm(),
            Box::new(|t| {
                let (a, b) = (t.param("a")?, t.param("b")?);
                let y = t.matmul(a, b)?;
                project(t, y, 10)
            }),
        ),
        GradCase::new(
            "matmul_nt",
            mm(),
            Box::new(|t| {
                let (a, c) = (t.param("a")?, t.param("c")?);
                let y = t.matmul_nt(a, c)?;
                project(t, y, 11)
            }),
        ),
        GradCase::new(
            "affine",
            lin(),
            Box::new(|t| {
                let (x, w, b) = (t.param("x")?, t.param("w")?, t.param("b")?);
                let z = t.affine(x, w, b)?;
                project(t, z, 12)
            }),
        ),
        GradCase::new(
            "add_mul_scale",
            lin(),
            Box::new(|t| {
                let (x, y) = (t.param("x")?, t.param("y")?);
                let s = t.add(x, y)?;
                let m = t.mul(s, y)?;
                let z = t.scale(m, -1.7)?;
                project(t, z, 13)
            }),
        ),
        GradCase::new(
            "gelu",
            pt(),
            Box::new(|t| {
                let x = t.param("x")?;
                let x3 = t.scale(x, 3.0)?;
                let y = t.gelu(x3)?;
                project(t, y, 14)
            }),
        ),
        GradCase::new(
            "sigmoid",
            pt(),
            Box::new(|t| {
                let x = t.param("x")?;
                let y = t.sigmoid(x)?;
                project(t, y, 15)
            }),
        ),
        GradCase::new(
            "softmax",
            sm(),
            Box::new(|t| {
                let x = t.param("x")?;
                let y = t.softmax_rows(x, None)?;
                project(t, y, 16)
            }),
        ),
        GradCase::new(
            "softmax_masked",
            sm(),
            Box::new(|t| {
                let x = t.param("x")?;
                let y = t.softmax_rows(x, Some(&[true, false, true, true]))?;
                project(t, y, 17)
            }),
        ),
        GradCase::new(
            "layer_norm",
            params(&[("x", &[3, 6]), ("g", &[6]), ("s", &[6])], 5),
            Box::new(|t| {
                let (x, g, s) = (t.param("x")?, t.param("g")?, t.param("s")?);
                let y = t.layer_norm(x, g, s, 1e-5)?;
                project(t, y, 18)
            }),
        ),
        GradCase::new(
            "embedding",
            params(&[("table", &[5, 3])], 6),
            Box::new(|t| {
                let tab = t.param("table")?;
                let y = t.embedding(tab, &[4, 0, 4, 2])?;
                project(t, y, 19)
            }),
        ),
        GradCase::new(
            "slice_concat_cols",
            shp(),
            Box::new(|t| {
                let (a, b) = (t.param("a")?, t.param("b")?);
                let s = t.slice_cols(a, 1, 2)?;
                let cat = t.concat_cols(&[s, b, a])?;
                project(t, cat, 20)
            }),
        ),
        GradCase::new(
            "repeat_concat_rows_reshape",
            shp(),
            Box::new(|t| {
                let (a, r) = (t.param("a")?, t.param("r")?);
                let rep = t.repeat_rows(r, 3)?;
                let cat = t.concat_rows(&[a, rep])?;
                let flat = t.reshape(cat, vec![3, 5])?;
                project(t, flat, 21)
            }),
        ),
        GradCase::new(
            "where_rows_mean_rows",
            shp(),
            Box::new(|t| {
                let (a, c) = (t.param("a")?, t.param("c")?);
                let w = t.where_rows(a, c, &[true, false])?;
                let m = t.mean_rows(w, &[0, 1])?;
                let m2 = t.mean_rows(a, &[1])?;
                let both = t.concat_rows(&[m, m2])?;
                project(t, both, 22)
            }),
        ),
        GradCase::new(
            "conv1x1",
            params(&[("x", &[2, 7]), ("w", &[3, 2]), ("b", &[3])], 8),
            Box::new(|t| {
                let (x, w, b) = (t.param("x")?, t.param("w")?, t.param("b")?);
                let y = t.conv1x1(x, w, b)?;
                project(t, y, 23)
            }),
        ),
        GradCase::new(
            "cross_entropy",
            loss(),
            Box::new(|t| {
                let z = t.param("z")?;
                t.cross_entropy(z, 3)
            }),
        ),
        GradCase::new(
            "bce_positive",
            loss(),
            Box::new(|t| {
                let s = t.param("s")?;
                let s = t.scale(s, 2.5)?;
                t.bce_with_logits(s, 1.0)
            }),
        ),
        GradCase::new(
            "bce_negative",
            loss(),
            Box::new(|t| {
                let s = t.param("s")?;
                let s = t.scale(s, 2.5)?;
                t.bce_with_logits(s, 0.0)
            }),
        ),
        GradCase::new(
            "sum",
            loss(),
            Box::new(|t| {
                let z = t.param("z")?;
                t.sum(z)
            }),
        ),
        GradCase::new(
            "multihead_attention",
            attention,
            Box::new(|t| {
                let (q, kv) = (t.param("q")?, t.param("kv")?);
                let y = layers::multihead_attention(t, "att", q, kv, 2, Some(&[true, true, false]))?;
                project(t, y, 24)
            }),
        ),
    ]
}

fn encoder_case(padded: bool) -> GradCase {
    let vocab = Vocab::from_tokens(["alpha", "beta", "gamma", "delta"].map(String::from));
    let cfg = EncoderConfig {
        layers: 2,
        heads: 2,
        hidden: 8,
        intermediate: 12,
        max_len: 8,
        ..Default::default()
    };
    let mut model = MlmModel::<f64>::init(cfg, vocab, AnswerSet::new(["A", "B", "C"]), 4).unwrap();
    // Larger weights than the 0.02 init so every path carries signal.
    jitter(&mut model.params, 5);
    let tokens = model.tokenize("alpha [MASK] gamma beta");
    let params = model.params.clone();
    let graph: Graph = Box::new(move |t| {
        let e = model
            .encode_on(t, &tokens, padded)
            .map_err(|e| KernelError::Checkpoint(e.to_string()))?;
        let z = model.logits_on(t, e).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
        t.cross_entropy(z, 1)
    });
    let mut case = GradCase::new(if padded { "encoder_padded" } else { "encoder" }, params, graph);
    case.options = sampled();
    case
}

fn reasoner_case(variant: PairVariant) -> GradCase {
    let cfg = ReasonerConfig {
        hidden: 4,
        k: 3,
        heads: 2,
        inducing_points: 2,
        pair_variant: variant,
        ..Default::default()
    };
    let mut model = Reasoner::<f64>::init(cfg, 6).unwrap();
    jitter(&mut model.params, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let query = [0.3, -0.5, 0.9, 0.1];
    let evidence = random(&mut rng, &[2, 4]);
    let params = model.params.clone();
    let graph: Graph = Box::new(move |t| {
        let f = model.pair_features_on(t, &query, &evidence)?;
        let pad = t.leaf(Tensor::zeros(&[1, 4]))?;
        let x = t.concat_rows(&[f, pad])?;
        let z = model.combine_on(t, x, &[false, true, true])?;
        t.bce_with_logits(z, 1.0)
    });
    let name = match variant {
        PairVariant::Conv => "reasoner_conv",
        PairVariant::Hadamard => "reasoner_hadamard",
    };
    let mut case = GradCase::new(name, params, graph);
    case.options = sampled();
    case
}

pub fn model_cases() -> Vec<GradCase> {
    vec![
        encoder_case(false),
        encoder_case(true),
        reasoner_case(PairVariant::Conv),
        reasoner_case(PairVariant::Hadamard),
    ]
}
