//! Teacher-forced training loop: stratified split, mini-batched Adam with
//! linear warm-up, periodic free-running evaluation, checkpointing on the
//! best validation micro-F1, and early stopping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Proposal, TokenizedProposal, Vocabulary};
use crate::idgraph::InterGraph;
use crate::metrics::{f1_report, F1Report, MetricsError};
use crate::model::{ModelConfig, ModelContext, ModelError, PredictOptions, Session};
use crate::seeding::{sub_seed, sub_seed_indexed};
use crate::taxonomy::{encode_topic_path, DisciplineTaxonomy, TaxonomyError, TopicPath};
use crate::tensor::{AdamConfig, ParamStore, TensorError};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid train config: {0}")]
    ConfigInvalid(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Steps of linear warm-up from zero to `lr`.
    pub warmup_steps: u64,
    /// Evaluate every this many epochs.
    pub eval_every: usize,
    /// Non-improving evaluations tolerated before stopping early.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-7,
            batch_size: 16,
            epochs: 200,
            warmup_steps: 100,
            eval_every: 2,
            patience: 20,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.lr < 0.0 {
            return Err(TrainerError::ConfigInvalid("lr must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::ConfigInvalid("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainerError::ConfigInvalid("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// One optimizer step record. Deterministic given the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// One evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_level_micro: Vec<f64>,
    pub per_level_macro: Vec<f64>,
    pub improved: bool,
}

/// Full training log. The step and eval records are deterministic given
/// the seed; wall time is kept out of them so logs compare bitwise.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub checkpoints: Vec<String>,
    pub wall_time_secs: f64,
}

impl TrainLog {
    /// The comparable log body as JSONL (wall time excluded).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::json!({"type": "step", "record": s}).to_string());
            out.push('\n');
        }
        for e in &self.evals {
            out.push_str(&serde_json::json!({"type": "eval", "record": e}).to_string());
            out.push('\n');
        }
        for c in &self.checkpoints {
            out.push_str(&serde_json::json!({"type": "checkpoint", "path": c}).to_string());
            out.push('\n');
        }
        out
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub store: ParamStore,
    pub log: TrainLog,
    pub best_micro_f1: Option<f64>,
}

/// A corpus item prepared for the model.
pub struct PreparedSample {
    pub tokens: TokenizedProposal,
    pub truth: TopicPath,
    /// Level-1 letter key used for stratification.
    pub stratum: String,
}

pub fn prepare_samples(
    corpus: &[Proposal],
    vocab: &Vocabulary,
    taxonomy: &DisciplineTaxonomy,
    doc_len: usize,
) -> Result<Vec<PreparedSample>, TrainerError> {
    corpus
        .iter()
        .map(|p| {
            let truth = encode_topic_path(&p.labels, taxonomy)?;
            let stratum: String = p
                .labels
                .iter()
                .filter_map(|c| c.chars().next())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            Ok(PreparedSample {
                tokens: tokenize(p, vocab, doc_len),
                truth,
                stratum,
            })
        })
        .collect()
}

/// Deterministic stratified 80/20 split by level-1 letter set: each stratum
/// is shuffled with a seed-derived stream and its tail fifth goes to
/// validation.
pub fn split_train_val(samples: &[PreparedSample], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        strata.entry(&s.stratum).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (stratum, mut idxs) in strata {
        let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(seed, &format!("split-{stratum}")));
        idxs.shuffle(&mut rng);
        let n_val = idxs.len() / 5;
        let cut = idxs.len() - n_val;
        train.extend_from_slice(&idxs[..cut]);
        val.extend_from_slice(&idxs[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Effective learning rate with linear warm-up (`step` is 1-based).
pub fn warmup_lr(base: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        base
    } else {
        base * step as f64 / warmup_steps as f64
    }
}

/// Free-running evaluation of the current parameters.
pub fn evaluate_during_training(
    ctx: &ModelContext,
    store: &ParamStore,
    samples: &[PreparedSample],
    indices: &[usize],
) -> Result<F1Report, TrainerError> {
    if indices.is_empty() {
        return Err(TrainerError::EmptyEvalSet);
    }
    let opts = PredictOptions::default();
    let mut preds = Vec::with_capacity(indices.len());
    let mut truths = Vec::with_capacity(indices.len());
    for &i in indices {
        let prediction = ctx.predict(store, &samples[i].tokens, None, &opts)?;
        preds.push(prediction.path);
        truths.push(samples[i].truth.clone());
    }
    Ok(f1_report(&preds, &truths, ctx.taxonomy)?)
}

/// Train on the corpus. When `out_dir` is given, the best checkpoint is
/// written there as `checkpoint.bin`.
pub fn train(
    corpus: &[Proposal],
    taxonomy: &DisciplineTaxonomy,
    graph: &InterGraph,
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainerError> {
    train_cfg.validate()?;
    let cfg = ModelConfig {
        vocab_size: vocab.size(),
        ..model_cfg.clone()
    };
    let ctx = ModelContext::new(cfg, taxonomy, graph)?;
    let samples = prepare_samples(corpus, vocab, taxonomy, ctx.cfg.doc_len)?;
    let (train_idx, val_idx) = split_train_val(&samples, train_cfg.seed);

    let store = ctx.init_params(sub_seed(train_cfg.seed, "init"));
    let mut log = TrainLog::default();
    let started = std::time::Instant::now();

    let ckpt_path: Option<PathBuf> = out_dir.map(|d| d.join("checkpoint.bin"));
    let mut best_micro: Option<f64> = None;
    let mut best_snapshot: Option<Vec<(String, Vec<usize>, Vec<f64>)>> = None;
    let mut stale_evals = 0usize;
    let mut step: u64 = 0;
    let adam_base = AdamConfig {
        lr: train_cfg.lr,
        weight_decay: train_cfg.weight_decay,
        ..AdamConfig::default()
    };

    let mut order_rng = ChaCha12Rng::seed_from_u64(sub_seed(train_cfg.seed, "order"));
    'epochs: for epoch in 0..train_cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut order_rng);
        for batch in order.chunks(train_cfg.batch_size) {
            step += 1;
            let mut batch_loss = 0.0;
            for &i in batch {
                let session = Session::train(
                    &store,
                    sub_seed_indexed(train_cfg.seed, "dropout", step ^ (i as u64) << 20),
                );
                let loss = ctx.forward_train(&session, &samples[i].tokens, &samples[i].truth)?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(TrainerError::NonFiniteLoss { step });
                }
                batch_loss += value;
                // mean aggregation: seed each sample's backward with 1/batch
                session.tape.backward_seeded(&loss, 1.0 / batch.len() as f64)?;
            }
            let lr = warmup_lr(train_cfg.lr, step, train_cfg.warmup_steps);
            store.adam_step(&AdamConfig { lr, ..adam_base })?;
            log.steps.push(StepRecord {
                step,
                epoch,
                lr,
                loss: batch_loss / batch.len() as f64,
            });
        }

        let last_epoch = epoch + 1 == train_cfg.epochs;
        if (epoch + 1) % train_cfg.eval_every == 0 || last_epoch {
            let report = evaluate_during_training(&ctx, &store, &samples, &val_idx)?;
            let improved = best_micro.map_or(true, |b| report.micro_f1 > b);
            log.evals.push(EvalRecord {
                step,
                epoch,
                micro_f1: report.micro_f1,
                macro_f1: report.macro_f1,
                per_level_micro: report.per_level_micro.clone(),
                per_level_macro: report.per_level_macro.clone(),
                improved,
            });
            if improved {
                best_micro = Some(report.micro_f1);
                stale_evals = 0;
                if let Some(path) = &ckpt_path {
                    store.save(path)?;
                    log.checkpoints.push("checkpoint.bin".to_string());
                } else {
                    best_snapshot = Some(
                        store
                            .cells()
                            .map(|(n, c)| (n.clone(), c.shape().to_vec(), c.value_snapshot()))
                            .collect(),
                    );
                }
            } else {
                stale_evals += 1;
                if stale_evals > train_cfg.patience {
                    break 'epochs;
                }
            }
        }
    }

    // restore the best parameters when they were kept in memory
    if let Some(snapshot) = best_snapshot {
        for (name, _, value) in snapshot {
            store.get(&name)?.set_value(value);
        }
    }
    log.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        store,
        log,
        best_micro_f1: best_micro,
    })
}
