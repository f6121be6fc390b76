//! The level-wise proposal classifier.
//!
//! Four stages per prediction step:
//! - document encoding: per-document word transformers fused with type
//!   rows through a document-level transformer, repeated per layer;
//! - knowledge encoding: the prediction history embedded by graph
//!   convolutions over sampled neighborhoods of the interdisciplinary graph;
//! - fusion: self-attention over the history rows, cross-attention into
//!   the document rows, feed-forward, each with residual + layer norm;
//! - level head: mean-pooled fusion state through a per-level two-layer
//!   head with sigmoid outputs, slot 0 reserved for the stop marker.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TokenizedProposal, DOC_TYPES};
use crate::idgraph::{sample_neighborhood, IdgraphError, InterGraph};
use crate::seeding::sub_seed;
use crate::taxonomy::{DisciplineTaxonomy, LevelSet, NodeId, TaxonomyError, TopicPath, ROOT_ID};
use crate::tensor::{
    feed_forward, gcn_forward, multi_head_attention, positional_encoding, transformer_block,
    AttentionParams, AttnTrace, FeedForwardParams, GcnParams, Init, LayerNormParams, ParamCell,
    ParamStore, Tape, Tensor, TensorError, TransformerBlockParams, LN_EPS,
};

/// Probability clamp applied to head outputs and log terms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Idgraph(#[from] IdgraphError),
    #[error("invalid model config: {0}")]
    ConfigInvalid(String),
    #[error("incoherent history: {0}")]
    IncoherentHistory(String),
    #[error("unknown discipline id {0}")]
    UnknownDiscipline(NodeId),
    #[error("level {level} outside 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
    #[error("incoherent given prefix: {0}")]
    IncoherentGiven(String),
}

/// Attention score divisor choice: the square root of the head count (as
/// the block is specified here) or of the key dimension (the conventional
/// alternative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnDivisor {
    HeadCount,
    KeyDim,
}

/// Model hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden width h.
    pub hidden: usize,
    /// Document-encoder block count.
    pub sie_layers: usize,
    /// Fusion block count.
    pub if_layers: usize,
    /// Graph hops, which is also the GCN layer count.
    pub gcn_hops: usize,
    pub heads: usize,
    pub doc_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    /// Label-selection cutoff (inclusive).
    pub threshold: f64,
    pub attn_divisor: AttnDivisor,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale defaults: small enough to train on one core in minutes.
    pub fn desk() -> Self {
        Self {
            hidden: 32,
            sie_layers: 2,
            if_layers: 2,
            gcn_hops: 1,
            heads: 4,
            doc_len: 32,
            vocab_size: 0,
            dropout: 0.2,
            threshold: 0.5,
            attn_divisor: AttnDivisor::HeadCount,
        }
    }

    /// The published full-scale profile (kept for reference runs).
    pub fn paper_profile() -> Self {
        Self {
            hidden: 64,
            sie_layers: 8,
            if_layers: 8,
            gcn_hops: 1,
            heads: 8,
            doc_len: 200,
            vocab_size: 0,
            dropout: 0.2,
            threshold: 0.5,
            attn_divisor: AttnDivisor::HeadCount,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("hidden", self.hidden),
            ("sie_layers", self.sie_layers),
            ("if_layers", self.if_layers),
            ("gcn_hops", self.gcn_hops),
            ("heads", self.heads),
            ("doc_len", self.doc_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::ConfigInvalid(format!("{name} must be positive")));
            }
        }
        if self.hidden % 2 != 0 {
            return Err(ModelError::ConfigInvalid(
                "hidden must be even for positional encoding".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::ConfigInvalid("dropout must lie in [0,1)".into()));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(ModelError::ConfigInvalid(
                "threshold must lie in (0,1)".into(),
            ));
        }
        Ok(())
    }

    fn divisor(&self) -> f64 {
        match self.attn_divisor {
            AttnDivisor::HeadCount => (self.heads as f64).sqrt(),
            AttnDivisor::KeyDim => (self.hidden as f64).sqrt(),
        }
    }
}

/// Slot layout of the per-level heads: slot 0 is the stop marker, the
/// remaining slots are the level's disciplines in code order.
#[derive(Debug, Clone)]
pub struct LevelIndex {
    per_level: Vec<Vec<NodeId>>,
}

impl LevelIndex {
    pub fn new(t: &DisciplineTaxonomy) -> Self {
        Self {
            per_level: (1..=t.depth()).map(|k| t.level_nodes(k).to_vec()).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.per_level.len()
    }

    /// Head width at `level`: label count plus the stop slot.
    pub fn width(&self, level: usize) -> usize {
        self.per_level[level - 1].len() + 1
    }

    pub fn slot_of(&self, level: usize, id: NodeId) -> Option<usize> {
        self.per_level[level - 1].binary_search(&id).ok().map(|i| i + 1)
    }

    pub fn id_at(&self, level: usize, slot: usize) -> NodeId {
        self.per_level[level - 1][slot - 1]
    }

    /// 0/1 target vector for a truth level set.
    pub fn targets(&self, level: usize, set: &LevelSet) -> Vec<f64> {
        let mut out = vec![0.0; self.width(level)];
        if set.stop {
            out[0] = 1.0;
        }
        for id in &set.labels {
            let slot = self.slot_of(level, *id).expect("label belongs to level");
            out[slot] = 1.0;
        }
        out
    }
}

/// Forward-pass context: parameter bindings plus the dropout stream.
///
/// Training sessions record every parameter on the tape; evaluation
/// sessions bind constants and record nothing.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    train: bool,
    rng: Option<RefCell<ChaCha12Rng>>,
    cache: RefCell<HashMap<String, Tensor>>,
}

impl<'a> Session<'a> {
    pub fn train(store: &'a ParamStore, dropout_seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            train: true,
            rng: Some(RefCell::new(ChaCha12Rng::seed_from_u64(dropout_seed))),
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn eval(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            train: false,
            rng: None,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn p(&self, name: &str) -> Result<Tensor, ModelError> {
        if let Some(t) = self.cache.borrow().get(name) {
            return Ok(t.clone());
        }
        let cell: &Rc<ParamCell> = self.store.get(name)?;
        let bound = if self.train {
            self.tape.param(cell)
        } else {
            self.tape.constant_param(cell)
        };
        self.cache.borrow_mut().insert(name.to_string(), bound.clone());
        Ok(bound)
    }

    fn dropout_rng(&self) -> Option<&RefCell<ChaCha12Rng>> {
        self.rng.as_ref()
    }
}

/// Per-fusion-layer attention traces for one prediction step.
#[derive(Debug, Clone)]
pub struct IfLayerTrace {
    /// Self-attention over the history rows (`k x k`).
    pub history: AttnTrace,
    /// Cross-attention into the document rows (`k x |T|`).
    pub doc_type: AttnTrace,
}

/// One prediction step: probabilities, the thresholded selection, and the
/// fusion attention traces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub level: usize,
    /// Length `|C_k| + 1`; index 0 is the stop probability.
    pub probs: Vec<f64>,
    pub selected: LevelSet,
    pub traces: Vec<IfLayerTrace>,
}

/// A completed prediction with its per-step outputs.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub path: TopicPath,
    pub steps: Vec<StepOutput>,
}

#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    /// Drop threshold-passing labels whose parent was not predicted at the
    /// previous level.
    pub coherence_filter: bool,
    /// Override of the config threshold.
    pub threshold: Option<f64>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            coherence_filter: true,
            threshold: None,
        }
    }
}

/// Immutable per-run assembly of config, taxonomy, graph and head layout.
pub struct ModelContext<'a> {
    pub cfg: ModelConfig,
    pub taxonomy: &'a DisciplineTaxonomy,
    pub graph: &'a InterGraph,
    pub levels: LevelIndex,
}

impl<'a> ModelContext<'a> {
    pub fn new(
        cfg: ModelConfig,
        taxonomy: &'a DisciplineTaxonomy,
        graph: &'a InterGraph,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            taxonomy,
            graph,
            levels: LevelIndex::new(taxonomy),
        })
    }

    /// Create and initialize every parameter of the model.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let h = self.cfg.hidden;
        let uni = |fan_in: usize| Init::UniformFanIn { fan_in };

        store.insert_init("embed.words", vec![self.cfg.vocab_size, h], uni(h), seed);
        store.insert_init("embed.types", vec![DOC_TYPES.len(), h], uni(h), seed);

        for l in 0..self.cfg.sie_layers {
            init_block(&mut store, &format!("sie.{l}.word."), &self.cfg, seed);
            store.insert_init(
                &format!("sie.{l}.vec.w"),
                vec![self.cfg.doc_len * h, h],
                uni(self.cfg.doc_len * h),
                seed,
            );
            store.insert_init(&format!("sie.{l}.vec.b"), vec![h], Init::Zeros, seed);
            init_block(&mut store, &format!("sie.{l}.doc."), &self.cfg, seed);
        }

        store.insert_init("ike.root", vec![1, h], uni(h), seed);
        store.insert_init("ike.nodes", vec![self.taxonomy.len(), h], uni(h), seed);
        for l in 0..self.cfg.gcn_hops {
            store.insert_init(&format!("ike.gcn.{l}"), vec![h, h], uni(h), seed);
        }

        for l in 0..self.cfg.if_layers {
            init_attention(&mut store, &format!("if.{l}.self."), &self.cfg, seed);
            init_layer_norm(&mut store, &format!("if.{l}.ln1."), h, seed);
            init_attention(&mut store, &format!("if.{l}.cross."), &self.cfg, seed);
            init_layer_norm(&mut store, &format!("if.{l}.ln2."), h, seed);
            init_feed_forward(&mut store, &format!("if.{l}.ff."), h, seed);
            init_layer_norm(&mut store, &format!("if.{l}.ln3."), h, seed);
        }

        for k in 1..=self.levels.depth() {
            let width = self.levels.width(k);
            store.insert_init(&format!("lp.{k}.w1"), vec![h, h], uni(h), seed);
            store.insert_init(&format!("lp.{k}.b1"), vec![h], Init::Zeros, seed);
            store.insert_init(&format!("lp.{k}.w2"), vec![h, width], uni(h), seed);
            store.insert_init(&format!("lp.{k}.b2"), vec![width], Init::Zeros, seed);
        }
        store
    }

    fn attention_params(
        &self,
        s: &Session,
        prefix: &str,
    ) -> Result<AttentionParams, ModelError> {
        let mut wq = Vec::with_capacity(self.cfg.heads);
        let mut wk = Vec::with_capacity(self.cfg.heads);
        let mut wv = Vec::with_capacity(self.cfg.heads);
        for i in 0..self.cfg.heads {
            wq.push(s.p(&format!("{prefix}wq{i}"))?);
            wk.push(s.p(&format!("{prefix}wk{i}"))?);
            wv.push(s.p(&format!("{prefix}wv{i}"))?);
        }
        Ok(AttentionParams {
            wq,
            wk,
            wv,
            wo: s.p(&format!("{prefix}wo"))?,
        })
    }

    fn layer_norm_params(&self, s: &Session, prefix: &str) -> Result<LayerNormParams, ModelError> {
        Ok(LayerNormParams {
            gain: s.p(&format!("{prefix}gain"))?,
            bias: s.p(&format!("{prefix}bias"))?,
        })
    }

    fn feed_forward_params(
        &self,
        s: &Session,
        prefix: &str,
    ) -> Result<FeedForwardParams, ModelError> {
        Ok(FeedForwardParams {
            w1: s.p(&format!("{prefix}w1"))?,
            b1: s.p(&format!("{prefix}b1"))?,
            w2: s.p(&format!("{prefix}w2"))?,
            b2: s.p(&format!("{prefix}b2"))?,
        })
    }

    fn block_params(
        &self,
        s: &Session,
        prefix: &str,
    ) -> Result<TransformerBlockParams, ModelError> {
        Ok(TransformerBlockParams {
            attention: self.attention_params(s, &format!("{prefix}attn."))?,
            ln1: self.layer_norm_params(s, &format!("{prefix}ln1."))?,
            ff: self.feed_forward_params(s, &format!("{prefix}ff."))?,
            ln2: self.layer_norm_params(s, &format!("{prefix}ln2."))?,
        })
    }

    /// Word stage of one encoder layer: the per-document transformer,
    /// applied to each document independently.
    fn word_stage(
        &self,
        s: &Session,
        layer: usize,
        docs: &[Tensor],
    ) -> Result<Vec<Tensor>, ModelError> {
        let block = self.block_params(s, &format!("sie.{layer}.word."))?;
        docs.iter()
            .map(|doc| {
                Ok(transformer_block(
                    &s.tape,
                    doc,
                    &block,
                    self.cfg.divisor(),
                    self.cfg.dropout,
                    s.dropout_rng(),
                )?
                .0)
            })
            .collect()
    }

    /// Encode the proposal documents into one row per document type.
    pub fn sie_forward(
        &self,
        s: &Session,
        tp: &TokenizedProposal,
    ) -> Result<Tensor, ModelError> {
        let h = self.cfg.hidden;
        assert_eq!(tp.docs.len(), DOC_TYPES.len(), "document count is fixed");
        let pe = positional_encoding(self.cfg.doc_len, h)?;
        let word_table = s.p("embed.words")?;
        let type_table = s.p("embed.types")?;

        let mut docs = Vec::with_capacity(tp.docs.len());
        for ids in &tp.docs {
            assert_eq!(ids.len(), self.cfg.doc_len, "documents are padded");
            let ids: Vec<usize> = ids.iter().map(|t| *t as usize).collect();
            let embedded = s.tape.gather_rows(&word_table, &ids)?;
            docs.push(s.tape.add(&embedded, &pe)?);
        }
        let mut type_rows: Vec<Tensor> = (0..tp.docs.len())
            .map(|i| s.tape.gather_rows(&type_table, &[i]))
            .collect::<Result<_, _>>()?;

        let mut doc_matrix = None;
        for layer in 0..self.cfg.sie_layers {
            docs = self.word_stage(s, layer, &docs)?;

            // fuse: flatten each document, project to width h, add the
            // type row carried over from the previous layer
            let vec_w = s.p(&format!("sie.{layer}.vec.w"))?;
            let vec_b = s.p(&format!("sie.{layer}.vec.b"))?;
            let mut fused = Vec::with_capacity(docs.len());
            for (doc, type_row) in docs.iter().zip(&type_rows) {
                let flat = s.tape.flatten_row(doc);
                let projected = s.tape.add_row_bias(&s.tape.matmul(&flat, &vec_w)?, &vec_b)?;
                fused.push(s.tape.add(&projected, type_row)?);
            }
            let stacked = s.tape.concat_rows(&fused)?;

            let block = self.block_params(s, &format!("sie.{layer}.doc."))?;
            let out = transformer_block(
                &s.tape,
                &stacked,
                &block,
                self.cfg.divisor(),
                self.cfg.dropout,
                s.dropout_rng(),
            )?
            .0;
            type_rows = (0..tp.docs.len())
                .map(|i| s.tape.gather_rows(&out, &[i]))
                .collect::<Result<_, _>>()?;
            doc_matrix = Some(out);
        }
        Ok(doc_matrix.expect("at least one encoder layer"))
    }

    /// Embed the prediction history: one row per previous level, the root
    /// via its own embedding and every later set by graph convolution over
    /// its sampled neighborhood followed by mean pooling of the centrals.
    pub fn ike_forward(
        &self,
        s: &Session,
        history: &[LevelSet],
    ) -> Result<Tensor, ModelError> {
        if history.is_empty() {
            return Err(ModelError::IncoherentHistory("empty history".into()));
        }
        let mut rows = Vec::with_capacity(history.len());
        for (i, set) in history.iter().enumerate() {
            if i == 0 {
                if set.labels.iter().copied().collect::<Vec<_>>() != [ROOT_ID] {
                    return Err(ModelError::IncoherentHistory(
                        "history must start at the root set".into(),
                    ));
                }
                rows.push(s.p("ike.root")?);
                continue;
            }
            if set.labels.is_empty() {
                return Err(ModelError::IncoherentHistory(format!(
                    "history set {i} has no labels"
                )));
            }
            for id in &set.labels {
                if *id == ROOT_ID || *id as usize > self.taxonomy.len() {
                    return Err(ModelError::UnknownDiscipline(*id));
                }
            }
            let hood = sample_neighborhood(self.graph, &set.labels, self.cfg.gcn_hops)?;
            let node_table = s.p("ike.nodes")?;
            let member_rows: Vec<usize> =
                hood.members.iter().map(|id| *id as usize - 1).collect();
            let features = s.tape.gather_rows(&node_table, &member_rows)?;
            let gcn = GcnParams {
                layers: (0..self.cfg.gcn_hops)
                    .map(|l| s.p(&format!("ike.gcn.{l}")))
                    .collect::<Result<_, _>>()?,
            };
            let propagated = gcn_forward(&s.tape, &hood.adjacency, &features, &gcn)?;
            let central_rows: Vec<usize> = set
                .labels
                .iter()
                .map(|id| hood.member_index(*id).expect("central is a member"))
                .collect();
            let centrals = s.tape.gather_rows(&propagated, &central_rows)?;
            rows.push(s.tape.mean_rows(&centrals)?);
        }
        Ok(s.tape.concat_rows(&rows)?)
    }

    /// Fuse history rows with the document rows.
    pub fn if_forward(
        &self,
        s: &Session,
        history: &Tensor,
        documents: &Tensor,
    ) -> Result<(Tensor, Vec<IfLayerTrace>), ModelError> {
        let k = history.shape()[0];
        let pe = positional_encoding(k, self.cfg.hidden)?;
        let mut state = s.tape.add(history, &pe)?;
        let mut traces = Vec::with_capacity(self.cfg.if_layers);
        let divisor = self.cfg.divisor();
        for l in 0..self.cfg.if_layers {
            let self_attn = self.attention_params(s, &format!("if.{l}.self."))?;
            let (self_out, history_trace) =
                multi_head_attention(&s.tape, &state, &state, &state, &self_attn, divisor)?;
            let self_out = s.tape.dropout(&self_out, self.cfg.dropout, s.dropout_rng());
            let ln1 = self.layer_norm_params(s, &format!("if.{l}.ln1."))?;
            let mixed = s
                .tape
                .layer_norm(&s.tape.add(&state, &self_out)?, &ln1.gain, &ln1.bias, LN_EPS)?;

            let cross_attn = self.attention_params(s, &format!("if.{l}.cross."))?;
            let (cross_out, doc_trace) = multi_head_attention(
                &s.tape, &mixed, documents, documents, &cross_attn, divisor,
            )?;
            let cross_out = s.tape.dropout(&cross_out, self.cfg.dropout, s.dropout_rng());
            let ln2 = self.layer_norm_params(s, &format!("if.{l}.ln2."))?;
            let fused = s.tape.layer_norm(
                &s.tape.add(&mixed, &cross_out)?,
                &ln2.gain,
                &ln2.bias,
                LN_EPS,
            )?;

            let ff = self.feed_forward_params(s, &format!("if.{l}.ff."))?;
            let ff_out = s
                .tape
                .dropout(&feed_forward(&s.tape, &fused, &ff)?, self.cfg.dropout, s.dropout_rng());
            let ln3 = self.layer_norm_params(s, &format!("if.{l}.ln3."))?;
            state = s.tape.layer_norm(
                &s.tape.add(&fused, &ff_out)?,
                &ln3.gain,
                &ln3.bias,
                LN_EPS,
            )?;
            traces.push(IfLayerTrace {
                history: history_trace,
                doc_type: doc_trace,
            });
        }
        Ok((state, traces))
    }

    /// Level head: mean-pool the fusion rows, apply the level-specific
    /// two-layer head, and squash to per-slot probabilities.
    pub fn lp_forward(
        &self,
        s: &Session,
        state: &Tensor,
        level: usize,
    ) -> Result<Tensor, ModelError> {
        if level < 1 || level > self.levels.depth() {
            return Err(ModelError::LevelOutOfRange {
                level,
                depth: self.levels.depth(),
            });
        }
        let pooled = s.tape.mean_rows(state)?;
        let w1 = s.p(&format!("lp.{level}.w1"))?;
        let b1 = s.p(&format!("lp.{level}.b1"))?;
        let w2 = s.p(&format!("lp.{level}.w2"))?;
        let b2 = s.p(&format!("lp.{level}.b2"))?;
        let hid = s.tape.relu(&s.tape.add_row_bias(&s.tape.matmul(&pooled, &w1)?, &b1)?);
        let logits = s.tape.add_row_bias(&s.tape.matmul(&hid, &w2)?, &b2)?;
        Ok(s.tape.clamp(&s.tape.sigmoid(&logits), PROB_EPS, 1.0 - PROB_EPS))
    }

    /// One prediction step under a given history; shared by training and
    /// inference.
    fn step(
        &self,
        s: &Session,
        documents: &Tensor,
        history: &[LevelSet],
        level: usize,
    ) -> Result<(Tensor, Vec<IfLayerTrace>), ModelError> {
        let knowledge = self.ike_forward(s, history)?;
        let (state, traces) = self.if_forward(s, &knowledge, documents)?;
        let probs = self.lp_forward(s, &state, level)?;
        Ok((probs, traces))
    }

    /// Teacher-forced total loss: the document matrix is computed once and
    /// each level conditions on the ground-truth ancestor sets.
    pub fn forward_train(
        &self,
        s: &Session,
        tp: &TokenizedProposal,
        truth: &TopicPath,
    ) -> Result<Tensor, ModelError> {
        if truth.levels.len() < 2 {
            return Err(ModelError::IncoherentHistory(
                "truth path has no predictable levels".into(),
            ));
        }
        let documents = self.sie_forward(s, tp)?;
        let mut total: Option<Tensor> = None;
        for k in 1..truth.levels.len() {
            let (probs, _) = self.step(s, &documents, &truth.levels[..k], k)?;
            let targets = self.levels.targets(k, &truth.levels[k]);
            let loss = level_loss(&s.tape, &probs, &targets)?;
            total = Some(match total {
                None => loss,
                Some(acc) => s.tape.add(&acc, &loss)?,
            });
        }
        Ok(total.expect("at least one level"))
    }

    /// Free-running prediction from the root (or from a coherent given
    /// prefix). Levels are predicted top-down until the surviving label set
    /// is empty or the maximum depth is reached; the final set always
    /// carries the stop marker.
    pub fn predict(
        &self,
        store: &ParamStore,
        tp: &TokenizedProposal,
        given: Option<&TopicPath>,
        opts: &PredictOptions,
    ) -> Result<Prediction, ModelError> {
        let s = Session::eval(store);
        let threshold = opts.threshold.unwrap_or(self.cfg.threshold);
        let depth = self.levels.depth();

        let mut levels: Vec<LevelSet> = match given {
            None => vec![LevelSet::labels_only([ROOT_ID])],
            Some(prefix) => {
                validate_given(prefix, self.taxonomy)?;
                prefix.levels.clone()
            }
        };
        let mut steps = Vec::new();
        let start = levels.len();

        if start > depth {
            // full-depth prefix: nothing to predict, terminate explicitly
            levels.last_mut().expect("prefix is non-empty").stop = true;
            return Ok(Prediction {
                path: TopicPath { levels },
                steps,
            });
        }

        let documents = self.sie_forward(&s, tp)?;
        for k in start..=depth {
            let (probs_t, traces) = self.step(&s, &documents, &levels[..k], k)?;
            let probs = probs_t.data().to_vec();
            let stop_selected = probs[0] >= threshold;
            let mut selected: BTreeSet<NodeId> = (1..self.levels.width(k))
                .filter(|slot| probs[*slot] >= threshold)
                .map(|slot| self.levels.id_at(k, slot))
                .collect();
            if opts.coherence_filter && k > 1 {
                let parents = &levels[k - 1].labels;
                selected.retain(|id| parents.contains(&self.taxonomy.by_id(*id).parent));
            }
            steps.push(StepOutput {
                level: k,
                probs,
                selected: LevelSet {
                    labels: selected.clone(),
                    stop: stop_selected,
                },
                traces,
            });
            if selected.is_empty() {
                levels.push(LevelSet::stop_only());
                break;
            }
            let terminal = k == depth;
            levels.push(LevelSet {
                labels: selected,
                // the stop marker lives in the last set only; a co-selected
                // stop below the maximum depth does not halt open paths
                stop: terminal,
            });
            if terminal {
                break;
            }
        }
        Ok(Prediction {
            path: TopicPath { levels },
            steps,
        })
    }
}

/// Negative log-likelihood of one level: `-sum(Y log y + (1-Y) log(1-y))`
/// with log arguments clamped at [`PROB_EPS`].
pub fn level_loss(tape: &Tape, probs: &Tensor, targets: &[f64]) -> Result<Tensor, ModelError> {
    Ok(tape.bce_nll(probs, targets, PROB_EPS)?)
}

fn init_attention(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, seed: u64) {
    let h = cfg.hidden;
    for i in 0..cfg.heads {
        for kind in ["wq", "wk", "wv"] {
            store.insert_init(
                &format!("{prefix}{kind}{i}"),
                vec![h, h],
                Init::UniformFanIn { fan_in: h },
                seed,
            );
        }
    }
    store.insert_init(
        &format!("{prefix}wo"),
        vec![cfg.heads * h, h],
        Init::UniformFanIn { fan_in: cfg.heads * h },
        seed,
    );
}

fn init_layer_norm(store: &mut ParamStore, prefix: &str, h: usize, seed: u64) {
    store.insert_init(&format!("{prefix}gain"), vec![h], Init::Ones, seed);
    store.insert_init(&format!("{prefix}bias"), vec![h], Init::Zeros, seed);
}

fn init_feed_forward(store: &mut ParamStore, prefix: &str, h: usize, seed: u64) {
    store.insert_init(
        &format!("{prefix}w1"),
        vec![h, h],
        Init::UniformFanIn { fan_in: h },
        seed,
    );
    store.insert_init(&format!("{prefix}b1"), vec![h], Init::Zeros, seed);
    store.insert_init(
        &format!("{prefix}w2"),
        vec![h, h],
        Init::UniformFanIn { fan_in: h },
        seed,
    );
    store.insert_init(&format!("{prefix}b2"), vec![h], Init::Zeros, seed);
}

fn init_block(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, seed: u64) {
    init_attention(store, &format!("{prefix}attn."), cfg, seed);
    init_layer_norm(store, &format!("{prefix}ln1."), cfg.hidden, seed);
    init_feed_forward(store, &format!("{prefix}ff."), cfg.hidden, seed);
    init_layer_norm(store, &format!("{prefix}ln2."), cfg.hidden, seed);
}

fn validate_given(prefix: &TopicPath, t: &DisciplineTaxonomy) -> Result<(), ModelError> {
    let err = |msg: String| Err(ModelError::IncoherentGiven(msg));
    let Some(first) = prefix.levels.first() else {
        return err("empty prefix".into());
    };
    if first.labels.iter().copied().collect::<Vec<_>>() != [ROOT_ID] || first.stop {
        return err("prefix must start with the root set".into());
    }
    for (k, set) in prefix.levels.iter().enumerate().skip(1) {
        if set.stop {
            return err(format!("prefix carries a stop marker at level {k}"));
        }
        if set.labels.is_empty() {
            return err(format!("prefix level {k} is empty"));
        }
        for id in &set.labels {
            let node = t.by_id(*id);
            if node.level as usize != k {
                return err(format!("{} is not a level-{k} label", node.code));
            }
            if k > 1 && !prefix.levels[k - 1].labels.contains(&node.parent) {
                return err(format!("parent of {} missing from level {}", node.code, k - 1));
            }
        }
    }
    Ok(())
}

/// Gradient verification over the assembled model.
pub mod gradcheck {
    use super::*;
    use crate::corpus::{generate_corpus, tokenize, CorpusConfig, Vocabulary};
    use crate::idgraph::{build_graph, collect_topic_stats};
    use crate::taxonomy::{encode_topic_path, fixture_taxonomy};
    use crate::tensor::check_coordinates;
    use rand::seq::SliceRandom;
    use rand::Rng;

    /// Finite-difference step mandated for the check.
    pub const FD_STEP: f64 = 1e-6;

    #[derive(Debug, Clone)]
    pub struct GradCheckOutcome {
        pub checked: usize,
        pub worst_rel_error: f64,
        pub worst_param: String,
        pub tolerance: f64,
        /// Coordinates checked per top-level parameter group.
        pub per_group: Vec<(String, usize)>,
    }

    impl GradCheckOutcome {
        pub fn passed(&self) -> bool {
            self.worst_rel_error <= self.tolerance
        }
    }

    /// Build a small pipeline on the fixture taxonomy, accumulate analytic
    /// gradients of the teacher-forced loss on one full-depth sample, and
    /// compare at least `samples` coordinates (stratified over the five
    /// parameter groups) against central differences.
    pub fn run(
        cfg: &ModelConfig,
        seed: u64,
        samples: usize,
        tolerance: f64,
    ) -> Result<GradCheckOutcome, ModelError> {
        // dropout must be off: the loss is re-evaluated under perturbation
        let cfg = ModelConfig {
            dropout: 0.0,
            ..cfg.clone()
        };
        let taxonomy = fixture_taxonomy();
        let corpus_cfg = CorpusConfig {
            seed: sub_seed(seed, "gradcheck-corpus"),
            size: 6,
            doc_len: cfg.doc_len,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&taxonomy, &corpus_cfg).expect("generator config is valid");
        let vocab = Vocabulary::build(&corpus);
        let cfg = ModelConfig {
            vocab_size: vocab.size(),
            ..cfg
        };
        let stats = collect_topic_stats(&corpus, &taxonomy)?;
        let graph = build_graph(&stats, &taxonomy, 0.1, 0.1)?;
        let ctx = ModelContext::new(cfg, &taxonomy, &graph)?;
        let store = ctx.init_params(sub_seed(seed, "gradcheck-init"));

        // an interdisciplinary sample exercises multi-label levels
        let sample = corpus
            .iter()
            .max_by_key(|p| p.labels.len())
            .expect("corpus non-empty");
        let tp = tokenize(sample, &vocab, ctx.cfg.doc_len);
        let truth = encode_topic_path(&sample.labels, &taxonomy)?;

        store.zero_grads();
        let session = Session::train(&store, sub_seed(seed, "gradcheck-dropout"));
        let loss = ctx.forward_train(&session, &tp, &truth)?;
        session.tape.backward(&loss)?;

        // stratified coordinate sampling over the parameter groups
        let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(seed, "gradcheck-sample"));
        let mut groups: HashMap<String, Vec<(String, usize)>> = HashMap::new();
        for (name, cell) in store.cells() {
            let group = name.split('.').next().unwrap_or(name).to_string();
            let grads = cell.grad_snapshot();
            let candidates = groups.entry(group).or_default();
            // prefer live coordinates; fall back to arbitrary ones
            let mut live: Vec<usize> =
                (0..cell.len()).filter(|i| grads[*i].abs() > 1e-6).collect();
            if live.is_empty() {
                live = (0..cell.len()).collect();
            }
            live.shuffle(&mut rng);
            for idx in live.into_iter().take(48) {
                candidates.push((name.clone(), idx));
            }
        }
        let mut group_names: Vec<String> = groups.keys().cloned().collect();
        group_names.sort();
        let per_group_target = samples.div_ceil(group_names.len());
        let mut coords = Vec::new();
        for gname in &group_names {
            let pool = groups.get_mut(gname).unwrap();
            pool.shuffle(&mut rng);
            let take = per_group_target.min(pool.len());
            coords.extend(pool.drain(..take));
        }
        // top up from any group if rounding left us short
        while coords.len() < samples {
            let gname = &group_names[rng.gen_range(0..group_names.len())];
            if let Some(c) = groups.get_mut(gname).and_then(|p| p.pop()) {
                coords.push(c);
            } else if groups.values().all(|p| p.is_empty()) {
                break;
            }
        }
        let per_group: Vec<(String, usize)> = group_names
            .iter()
            .map(|g| {
                let n = coords
                    .iter()
                    .filter(|(name, _)| name.split('.').next() == Some(g.as_str()))
                    .count();
                (g.clone(), n)
            })
            .collect();

        let loss_fn = || {
            let session = Session::eval(&store);
            ctx.forward_train(&session, &tp, &truth)
                .expect("loss evaluates")
                .item()
        };
        let checks = check_coordinates(&store, &coords, FD_STEP, loss_fn);
        let worst = checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .expect("at least one coordinate");
        Ok(GradCheckOutcome {
            checked: checks.len(),
            worst_rel_error: worst.rel_error,
            worst_param: format!("{}[{}]", worst.param, worst.coord),
            tolerance,
            per_group,
        })
    }
}
