//! End-to-end runner: generate, pre-train, fine-tune, evaluate.

use crate::config::{ConfigError, ExperimentConfig};
use crate::corpus::{load_dataset, merge, sample_kshot, CorpusError, Dataset, RelationSchema};
use crate::evalkit::{evaluate, EvalError, EvalResult};
use crate::genkit::{
    augment_dataset, generate_explanations, Augmentation, ExplanationCorpus, GenError, GenerationBackend,
    GenerationReport,
};
use crate::neuralcore::{build_vocab, tokenize, verbalize_relation, Model, ModelConfig, Vocabulary, PREFIX_LEN};
use crate::seed::derive_seed;
use crate::trainloop::{
    finetune, pretrain, FinetuneOutcome, PretrainExample, RelationModel, TrainError, TrainReport,
};

const KSHOT_STREAM: u64 = 1;
const GEN_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const PRETRAIN_STREAM: u64 = 4;
const FINETUNE_STREAM: u64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] CorpusError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Per-stage seeds derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub kshot: u64,
    pub generation: u64,
    pub init: u64,
    pub pretrain: u64,
    pub finetune: u64,
}

impl StageSeeds {
    pub fn new(run_seed: u64) -> Self {
        StageSeeds {
            kshot: derive_seed(&[run_seed, KSHOT_STREAM]),
            generation: derive_seed(&[run_seed, GEN_STREAM]),
            init: derive_seed(&[run_seed, INIT_STREAM]),
            pretrain: derive_seed(&[run_seed, PRETRAIN_STREAM]),
            finetune: derive_seed(&[run_seed, FINETUNE_STREAM]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub schema: RelationSchema,
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        cfg.check_paths()?;
        let schema = RelationSchema::load(&cfg.data.schema)?;
        let train = load_dataset(&cfg.data.train, &schema)?;
        let val = cfg.data.val.as_ref().map(|p| load_dataset(p, &schema)).transpose()?;
        let test = load_dataset(&cfg.data.test, &schema)?;
        Ok(Inputs {
            schema,
            train,
            val,
            test,
        })
    }
}

/// Output of the generation stage.
#[derive(Debug, Clone)]
pub struct Generated {
    pub golden: Dataset,
    pub explanations: ExplanationCorpus,
    pub synthetic: Dataset,
    pub report: GenerationReport,
}

impl Generated {
    /// Golden K-shot set plus accepted synthetic samples.
    pub fn finetune_set(&self) -> Result<Dataset, CorpusError> {
        merge(&self.golden, &self.synthetic)
    }
}

fn backend_for(cfg: &ExperimentConfig, seeds: &StageSeeds) -> GenerationBackend {
    let mut b = cfg.backend.clone();
    b.seed = derive_seed(&[seeds.generation, cfg.backend.seed]);
    b
}

pub fn generate(cfg: &ExperimentConfig, train: &Dataset) -> Result<Generated, PipelineError> {
    let seeds = StageSeeds::new(cfg.seed);
    let golden = sample_kshot(train, cfg.k(), seeds.kshot);
    let schema = train.schema.clone();
    let wants_explanations = cfg.ablation.use_explanations && cfg.ablation.use_pretrain;
    let wants_synthetic = cfg.ablation.use_synthetic && cfg.synthetic_budget() > 0;
    let generator = if (wants_explanations || wants_synthetic) && !golden.is_empty() {
        Some(backend_for(cfg, &seeds).build()?)
    } else {
        None
    };
    let explanations = match &generator {
        Some(g) if wants_explanations => generate_explanations(&golden, g.as_ref(), cfg.explanations_per_relation())?,
        _ => ExplanationCorpus::default(),
    };
    let Augmentation { synthetic, report, .. } = match &generator {
        Some(g) if wants_synthetic => augment_dataset(&golden, g.as_ref(), cfg.synthetic_budget(), &cfg.augment_options())?,
        _ => Augmentation {
            synthetic: Dataset::new(schema, Vec::new(), "synthetic")?,
            candidates: Vec::new(),
            report: GenerationReport::default(),
        },
    };
    Ok(Generated {
        golden,
        explanations,
        synthetic,
        report,
    })
}

/// Tokens seen by training: golden and synthetic sentences, explanation
/// texts and verbalized relation labels.
pub fn build_vocabulary(cfg: &ExperimentConfig, g: &Generated) -> Vocabulary {
    let lower = |toks: &[String]| toks.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>();
    let mut corpus: Vec<Vec<String>> = Vec::new();
    corpus.extend(g.golden.instances.iter().map(|i| lower(&i.tokens)));
    corpus.extend(g.synthetic.instances.iter().map(|i| lower(&i.tokens)));
    corpus.extend(g.explanations.records.iter().map(|r| tokenize(&r.text)));
    corpus.extend(g.golden.schema.relations.iter().map(|r| verbalize_relation(r)));
    build_vocab(&corpus, cfg.model.vocab_min_count)
}

pub fn model_config(cfg: &ExperimentConfig, vocab: &Vocabulary, schema: &RelationSchema) -> ModelConfig {
    ModelConfig {
        encoder: cfg.encoder.clone(),
        vocab_size: vocab.len(),
        n_relations: schema.relations.len(),
        representation: cfg.model.representation,
        tie_mslm_head: cfg.model.tie_mslm_head,
    }
}

pub fn pretrain_examples(cfg: &ExperimentConfig, g: &Generated) -> Vec<PretrainExample> {
    let max_tokens = cfg.encoder.max_len - PREFIX_LEN;
    let mut out: Vec<PretrainExample> =
        g.golden.instances.iter().map(|i| PretrainExample::from_instance(i, max_tokens)).collect();
    if cfg.ablation.use_synthetic {
        out.extend(g.synthetic.instances.iter().map(|i| PretrainExample::from_instance(i, max_tokens)));
    }
    if cfg.ablation.use_explanations {
        out.extend(
            g.explanations
                .records
                .iter()
                .map(|r| PretrainExample::from_explanation(r, max_tokens)),
        );
    }
    out
}

/// Freshly initialized model, pre-trained unless pre-training is ablated.
pub fn run_pretrain(
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
    g: &Generated,
) -> Result<(Model, TrainReport), PipelineError> {
    let seeds = StageSeeds::new(cfg.seed);
    let mut model = Model::new(model_config(cfg, vocab, &g.golden.schema), seeds.init).map_err(TrainError::from)?;
    if !cfg.ablation.use_pretrain {
        return Ok((
            model,
            TrainReport {
                seed: seeds.pretrain,
                ..Default::default()
            },
        ));
    }
    let examples = pretrain_examples(cfg, g);
    let report = pretrain(&mut model, vocab, &examples, &cfg.pretrain_config(), seeds.pretrain)?;
    Ok((model, report))
}

pub fn run_finetune(
    cfg: &ExperimentConfig,
    model: Model,
    vocab: &Vocabulary,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<FinetuneOutcome, PipelineError> {
    let seeds = StageSeeds::new(cfg.seed);
    Ok(finetune(model, vocab, train, val, &cfg.finetune_config(), seeds.finetune)?)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub generated: Generated,
    pub pretrain_report: TrainReport,
    pub finetune: FinetuneOutcome,
    pub model: RelationModel,
    pub eval: EvalResult,
}

pub fn run(cfg: &ExperimentConfig) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    run_with(cfg, &inputs)
}

pub fn run_with(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<PipelineRun, PipelineError> {
    let generated = generate(cfg, &inputs.train)?;
    let vocab = build_vocabulary(cfg, &generated);
    let (model, pretrain_report) = run_pretrain(cfg, &vocab, &generated)?;
    let train_set = generated.finetune_set()?;
    let ft = run_finetune(cfg, model, &vocab, &train_set, inputs.val.as_ref())?;
    let rm = RelationModel {
        model: ft.selected.clone(),
        vocab,
        schema: inputs.schema.clone(),
    };
    let mut eval = evaluate(&rm, &inputs.test)?;
    eval.config_fingerprint = cfg.fingerprint();
    Ok(PipelineRun {
        generated,
        pretrain_report,
        finetune: ft,
        model: rm,
        eval,
    })
}
