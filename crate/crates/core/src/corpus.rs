//! Synthetic style-transfer corpus and the toy end-to-end pipeline.
//!
//! Each example pairs a short polite-suffix response (chosen; no
//! non-vocalizable characters) with the same content wrapped in markdown
//! bullet markup (rejected). A base model is first warmed up with
//! supervised training on the written-style targets so it reproduces the
//! markdown register; that checkpoint becomes the frozen reference, and
//! preference training then moves decodes toward the spoken register.

use crate::align::{
    tokenize_pair, train, train_sft, AlignConfig, AlignError, PreferenceExample,
    RawPreferenceExample, SftConfig, SftExample, TrainReport,
};
use crate::metrics::nv_percent;
use crate::tinylm::{greedy_decode, ModelConfig, ModelParams, TokenSequence, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Size and seed of a generated corpus.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { train_pairs: 500, heldout_pairs: 100, seed: 7 }
    }
}

/// A generated corpus in both raw-text and tokenized form, with the
/// character vocabulary covering every example.
pub struct StyleCorpus {
    pub train_raw: Vec<RawPreferenceExample>,
    pub heldout_raw: Vec<RawPreferenceExample>,
    pub vocab: Vocab,
    pub train: Vec<PreferenceExample>,
    pub heldout: Vec<PreferenceExample>,
}

const SYLLABLES: &[char] = &[
    'あ', 'い', 'う', 'え', 'お', 'か', 'き', 'く', 'け', 'こ', 'さ', 'し', 'す', 'せ', 'そ',
    'た', 'ち', 'つ', 'て', 'と', 'な', 'に', 'ぬ', 'ね', 'の', 'は', 'ひ', 'ふ', 'へ', 'ほ',
    'ま', 'み', 'む', 'め', 'も', 'や', 'ゆ', 'よ', 'ら', 'り', 'る', 'れ', 'ろ', 'わ',
];

fn random_syllables(rng: &mut ChaCha12Rng, len: usize) -> String {
    (0..len).map(|_| *SYLLABLES.choose(rng).expect("non-empty pool")).collect()
}

fn generate_split(rng: &mut ChaCha12Rng, n: usize) -> Vec<RawPreferenceExample> {
    (0..n)
        .map(|i| {
            let prompt_len = rng.gen_range(3..=5);
            let content_len = rng.gen_range(4..=7);
            let prompt = format!("{}か", random_syllables(rng, prompt_len));
            let content = random_syllables(rng, content_len);
            RawPreferenceExample {
                id: Some(format!("synth-{i:04}")),
                prompt,
                chosen: format!("{content}です。"),
                rejected: format!("- **{content}**"),
            }
        })
        .collect()
}

/// Deterministically generates the corpus and its vocabulary.
pub fn generate_style_corpus(spec: &CorpusSpec) -> Result<StyleCorpus, AlignError> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let train_raw = generate_split(&mut rng, spec.train_pairs);
    let heldout_raw = generate_split(&mut rng, spec.heldout_pairs);
    let mut texts = Vec::new();
    for ex in train_raw.iter().chain(&heldout_raw) {
        texts.push(ex.prompt.clone());
        texts.push(ex.chosen.clone());
        texts.push(ex.rejected.clone());
    }
    let vocab = Vocab::from_corpus(&texts)?;
    let train = train_raw.iter().map(|r| tokenize_pair(r, &vocab)).collect::<Result<_, _>>()?;
    let heldout =
        heldout_raw.iter().map(|r| tokenize_pair(r, &vocab)).collect::<Result<_, _>>()?;
    Ok(StyleCorpus { train_raw, heldout_raw, vocab, train, heldout })
}

/// Everything needed to reproduce one toy run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyPipelineConfig {
    pub model: ModelConfig,
    pub init_seed: u64,
    pub warmup: SftConfig,
    pub align: AlignConfig,
    /// Greedy-decode budget for the style probe.
    pub decode_max_len: usize,
    /// Held-out prompts decoded for the NV% probe.
    pub decode_prompts: usize,
}

impl Default for ToyPipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy_default(),
            init_seed: 0,
            warmup: SftConfig::default(),
            align: AlignConfig::default(),
            decode_max_len: 24,
            decode_prompts: 32,
        }
    }
}

/// Mean NV% over greedy decodes of the given prompts.
pub fn mean_decode_nv(
    params: &ModelParams,
    vocab: &Vocab,
    prompts: &[TokenSequence],
    max_len: usize,
) -> Result<f64, AlignError> {
    if prompts.is_empty() {
        return Err(AlignError::EmptyDataset);
    }
    let mut total = 0.0;
    for prompt in prompts {
        let out = greedy_decode(params, vocab, prompt, max_len)?;
        total += nv_percent(&vocab.decode_text(&out.ids));
    }
    Ok(total / prompts.len() as f64)
}

/// Warm-up: supervised training on the written-style (rejected) targets,
/// all parameters trainable. The result stands in for a pretrained
/// checkpoint that speaks the markdown register.
pub fn warmup_reference(
    corpus: &StyleCorpus,
    model: ModelConfig,
    init_seed: u64,
    warmup: &SftConfig,
) -> Result<ModelParams, AlignError> {
    let init = ModelParams::init(model, corpus.vocab.size(), init_seed)?;
    let data: Vec<SftExample> = corpus
        .train
        .iter()
        .map(|ex| SftExample { prompt: ex.prompt.clone(), target: ex.rejected.clone() })
        .collect();
    let (reference, _) = train_sft(&init, &corpus.vocab, &data, warmup)?;
    Ok(reference)
}

/// Result of the full toy pipeline.
pub struct ToyRunResult {
    pub reference: ModelParams,
    pub policy: ModelParams,
    pub report: TrainReport,
    /// Mean NV% of greedy decodes before preference training.
    pub nv_before: f64,
    /// Mean NV% of greedy decodes after preference training.
    pub nv_after: f64,
}

/// Warm-up, snapshot the reference, preference-train, and probe decode
/// style before and after.
pub fn run_toy_pipeline(
    corpus: &StyleCorpus,
    config: &ToyPipelineConfig,
) -> Result<ToyRunResult, AlignError> {
    let reference = warmup_reference(corpus, config.model, config.init_seed, &config.warmup)?;
    let probe: Vec<TokenSequence> = corpus
        .heldout
        .iter()
        .take(config.decode_prompts.max(1))
        .map(|ex| ex.prompt.clone())
        .collect();
    let nv_before = mean_decode_nv(&reference, &corpus.vocab, &probe, config.decode_max_len)?;
    let (policy, report) = train(
        &reference,
        &reference,
        &corpus.vocab,
        &corpus.train,
        &corpus.heldout,
        &config.align,
    )?;
    let nv_after = mean_decode_nv(&policy, &corpus.vocab, &probe, config.decode_max_len)?;
    Ok(ToyRunResult { reference, policy, report, nv_before, nv_after })
}
