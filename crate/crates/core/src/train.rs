//! Training loop, streaming evaluation, and the ablation grid.
//!
//! Memory updates are deferred by one batch: a batch's events are stored
//! as pending raw material and applied on the tape at the start of the
//! next step, so the message, update, and time-encoding parameters all
//! receive gradients while predictions only ever see pre-batch memory.

use crate::decoder::{self, sample_negatives};
use crate::error::{Error, Result};
use crate::graph::{Event, NodeId, TemporalGraph};
use crate::memory::{
    aggregate, apply_events, commit_updates, compute_raw_messages, update_memory_on_tape,
    Aggregator, MemoryInit, MemoryState, MessageVariant, UpdaterKind,
};
use crate::metrics::{self, MetricsReport};
use crate::model::{embed_node, ModelDims, ModelParams, StateLookup};
use crate::tensor::{AdamHyper, AdamState, Scalar, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::ops::Range;

/// How the relevant set is defined during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalProtocol {
    /// Each event is a query; its true destination competes against
    /// sampled negatives.
    OnePositive,
    /// Each source queried once; every destination it cites within the
    /// split is relevant, candidates are all other nodes.
    AllReferences,
}

/// Which chronological split to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub d_mem: usize,
    pub d_time: usize,
    pub d_out: usize,
    pub d_dec: usize,
    pub heads: usize,
    pub n_neighbors: usize,
    pub message: MessageVariant,
    pub aggregator: Aggregator,
    pub memory_init: MemoryInit,
    pub updater: UpdaterKind,
    /// Negatives per positive in the training loss.
    pub negatives_per_positive: usize,
    /// Sampled negatives per query during evaluation.
    pub eval_negatives: usize,
    /// Cutoffs for precision/recall, strictly ascending.
    pub k_list: Vec<usize>,
    pub seed: u64,
    pub split: (f64, f64, f64),
    pub protocol: EvalProtocol,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 100,
            learning_rate: 1e-3,
            d_mem: 32,
            d_time: 32,
            d_out: 32,
            d_dec: 32,
            heads: 2,
            n_neighbors: 10,
            message: MessageVariant::SelfLearned,
            aggregator: Aggregator::Last,
            memory_init: MemoryInit::Features,
            updater: UpdaterKind::Gru,
            negatives_per_positive: 6,
            eval_negatives: 49,
            k_list: vec![10, 20, 50],
            seed: 7,
            split: (0.70, 0.15, 0.15),
            protocol: EvalProtocol::OnePositive,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_neighbors", self.n_neighbors),
            ("negatives_per_positive", self.negatives_per_positive),
            ("eval_negatives", self.eval_negatives),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.k_list.is_empty() {
            return Err(Error::InvalidConfig("k_list must be non-empty".into()));
        }
        if self.k_list.windows(2).any(|w| w[0] >= w[1]) || self.k_list[0] == 0 {
            return Err(Error::InvalidConfig(format!(
                "k_list must be strictly ascending positive cutoffs, got {:?}",
                self.k_list
            )));
        }
        if self.updater != UpdaterKind::Gru {
            return Err(Error::InvalidConfig(
                "only the GRU memory updater is implemented; rnn/lstm are reserved names".into(),
            ));
        }
        self.dims(None).validate()?;
        Ok(())
    }

    /// Model dimensions for a graph whose features (if any) have the given
    /// width.
    pub fn dims(&self, feat_dim: Option<usize>) -> ModelDims {
        ModelDims {
            d_mem: self.d_mem,
            d_time: self.d_time,
            d_out: self.d_out,
            d_dec: self.d_dec,
            heads: self.heads,
            message: self.message,
            feat_dim: match self.memory_init {
                MemoryInit::Features => feat_dim,
                MemoryInit::Zeros => None,
            },
        }
    }

    /// Flat `key value` serialization, one pair per line.
    pub fn to_kv(&self) -> String {
        let (a, b, c) = self.split;
        let ks: Vec<String> = self.k_list.iter().map(|k| k.to_string()).collect();
        format!(
            "epochs {}\nbatch_size {}\nlearning_rate {}\nd_mem {}\nd_time {}\nd_out {}\nd_dec {}\nheads {}\nn_neighbors {}\nmessage {}\naggregator {}\nmemory_init {}\nupdater {}\nnegatives_per_positive {}\neval_negatives {}\nk_list {}\nseed {}\nsplit {a},{b},{c}\nprotocol {}\n",
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.d_mem,
            self.d_time,
            self.d_out,
            self.d_dec,
            self.heads,
            self.n_neighbors,
            match self.message {
                MessageVariant::Identity => "identity",
                MessageVariant::SelfLearned => "learned",
            },
            match self.aggregator {
                Aggregator::Mean => "mean",
                Aggregator::Last => "last",
            },
            match self.memory_init {
                MemoryInit::Features => "features",
                MemoryInit::Zeros => "zeros",
            },
            match self.updater {
                UpdaterKind::Gru => "gru",
                UpdaterKind::Rnn => "rnn",
                UpdaterKind::Lstm => "lstm",
            },
            self.negatives_per_positive,
            self.eval_negatives,
            ks.join(","),
            self.seed,
            match self.protocol {
                EvalProtocol::OnePositive => "one-positive",
                EvalProtocol::AllReferences => "all-references",
            },
        )
    }

    /// Apply one `key value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| {
            Error::InvalidConfig(format!("bad value '{value}' for {what}"))
        };
        match key {
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "d_mem" => self.d_mem = value.parse().map_err(|_| bad(key))?,
            "d_time" => self.d_time = value.parse().map_err(|_| bad(key))?,
            "d_out" => self.d_out = value.parse().map_err(|_| bad(key))?,
            "d_dec" => self.d_dec = value.parse().map_err(|_| bad(key))?,
            "heads" => self.heads = value.parse().map_err(|_| bad(key))?,
            "n_neighbors" => self.n_neighbors = value.parse().map_err(|_| bad(key))?,
            "message" => {
                self.message = match value {
                    "identity" => MessageVariant::Identity,
                    "learned" => MessageVariant::SelfLearned,
                    _ => return Err(bad(key)),
                }
            }
            "aggregator" => {
                self.aggregator = match value {
                    "mean" => Aggregator::Mean,
                    "last" => Aggregator::Last,
                    _ => return Err(bad(key)),
                }
            }
            "memory_init" => {
                self.memory_init = match value {
                    "features" => MemoryInit::Features,
                    "zeros" => MemoryInit::Zeros,
                    _ => return Err(bad(key)),
                }
            }
            "updater" => {
                self.updater = match value {
                    "gru" => UpdaterKind::Gru,
                    "rnn" => UpdaterKind::Rnn,
                    "lstm" => UpdaterKind::Lstm,
                    _ => return Err(bad(key)),
                }
            }
            "negatives_per_positive" => {
                self.negatives_per_positive = value.parse().map_err(|_| bad(key))?
            }
            "eval_negatives" => self.eval_negatives = value.parse().map_err(|_| bad(key))?,
            "k_list" => {
                self.k_list = value
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad("k_list")))
                    .collect::<Result<_>>()?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad("split")))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad(key));
                }
                self.split = (parts[0], parts[1], parts[2]);
            }
            "protocol" => {
                self.protocol = match value {
                    "one-positive" => EvalProtocol::OnePositive,
                    "all-references" => EvalProtocol::AllReferences,
                    _ => return Err(bad(key)),
                }
            }
            _ => {
                return Err(Error::InvalidConfig(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }

    /// Parse a flat key-value config text. Blank lines and `#` comments
    /// are skipped; unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or(Error::Parse {
                line: i + 1,
                msg: format!("expected 'key value', got '{line}'"),
            })?;
            cfg.apply_kv(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub val_mrr: f64,
    pub val_ap: f64,
    pub val_auc: f64,
}

/// Everything needed to resume training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainerState<F: Scalar> {
    pub params: ModelParams<F>,
    pub adam: AdamState<F>,
    pub memory: MemoryState<F>,
    pub initial_memory: MemoryState<F>,
    /// Events whose memory update is deferred to the next step.
    pub pending: Vec<Event>,
    pub epoch: usize,
    /// Absolute event index of the next training batch.
    pub cursor: usize,
    pub epoch_loss_accum: f64,
    pub epoch_batches: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochStats>,
    /// Latest event time that contributed to a parameter update.
    pub max_grad_event_time: f64,
    /// Highest event id that contributed to a parameter update; `None`
    /// before the first update.
    pub max_grad_event_id: Option<u64>,
    pub done: bool,
}

/// Outcome of one [`Trainer::step`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// Processed one batch.
    Batch { epoch: usize, loss: f64 },
    /// Finished an epoch (pending flushed, validation recorded).
    EpochEnd(EpochStats),
    /// All epochs complete.
    Finished,
}

pub struct Trainer<'g, F: Scalar> {
    graph: &'g TemporalGraph,
    config: TrainConfig,
    train_range: Range<usize>,
    val_range: Range<usize>,
    test_range: Range<usize>,
    state: TrainerState<F>,
}

impl<'g, F: Scalar> Trainer<'g, F> {
    pub fn new(graph: &'g TemporalGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if !graph.is_frozen() {
            return Err(Error::InvalidArgument(
                "graph must be frozen before training".into(),
            ));
        }
        let features = match config.memory_init {
            MemoryInit::Features => Some(graph.node_features().ok_or_else(|| {
                Error::InvalidConfig(
                    "memory_init=features requires node features on the graph".into(),
                )
            })?),
            MemoryInit::Zeros => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = config.dims(features.map(|f| f.cols()));
        let params = ModelParams::init(dims, &mut rng)?;
        let initial_memory = crate::memory::init_memory(
            graph.node_count(),
            config.d_mem,
            features,
            params.proj.as_ref(),
        )?;
        let tensors = params.tensors();
        let refs: Vec<&crate::tensor::Tensor<F>> = tensors.iter().map(|(_, t)| *t).collect();
        let adam = AdamState::new(
            AdamHyper {
                lr: F::from_f64(config.learning_rate),
                ..AdamHyper::default()
            },
            &refs,
        );
        let (train_range, val_range, test_range) = graph.split_chronological(config.split)?;
        let cursor = train_range.start;
        Ok(Trainer {
            graph,
            config,
            train_range,
            val_range,
            test_range,
            state: TrainerState {
                memory: initial_memory.clone(),
                initial_memory,
                params,
                adam,
                pending: Vec::new(),
                epoch: 0,
                cursor,
                epoch_loss_accum: 0.0,
                epoch_batches: 0,
                rng,
                history: Vec::new(),
                max_grad_event_time: f64::NEG_INFINITY,
                max_grad_event_id: None,
                done: false,
            },
        })
    }

    /// Rebuild a trainer from a restored state (checkpoint resume).
    pub fn from_state(
        graph: &'g TemporalGraph,
        config: TrainConfig,
        state: TrainerState<F>,
    ) -> Result<Self> {
        config.validate()?;
        if !graph.is_frozen() {
            return Err(Error::InvalidArgument(
                "graph must be frozen before training".into(),
            ));
        }
        if state.memory.node_count() != graph.node_count() {
            return Err(Error::Checkpoint(format!(
                "memory holds {} nodes but graph has {}",
                state.memory.node_count(),
                graph.node_count()
            )));
        }
        let (train_range, val_range, test_range) = graph.split_chronological(config.split)?;
        Ok(Trainer {
            graph,
            config,
            train_range,
            val_range,
            test_range,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainerState<F> {
        &self.state
    }

    pub fn into_state(self) -> TrainerState<F> {
        self.state
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.state.history
    }

    /// Process one batch, or close out the epoch when the train range is
    /// exhausted.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.state.done {
            return Ok(StepOutcome::Finished);
        }
        let batch = self
            .graph
            .next_batch(&self.train_range, self.state.cursor, self.config.batch_size)?;
        let events: Vec<Event> = match batch {
            None => return self.finish_epoch().map(StepOutcome::EpochEnd),
            Some(b) => b.events.to_vec(),
        };

        let st = &mut self.state;
        let mut tape = Tape::new();
        let vars = st.params.bind_all(&mut tape);

        // apply last batch's deferred messages on the tape so the memory
        // path receives gradients
        let updates = if st.pending.is_empty() {
            BTreeMap::new()
        } else {
            let msgs = compute_raw_messages(&mut tape, &vars.memory, &st.memory, &st.pending)?;
            let agg = aggregate(&mut tape, &msgs, self.config.aggregator)?;
            update_memory_on_tape(&mut tape, &vars.memory, &st.memory, &agg)?
        };

        let positives: Vec<NodeId> = events.iter().map(|e| e.dst).collect();
        let negatives = sample_negatives(
            &positives,
            self.config.negatives_per_positive,
            self.graph.node_count(),
            &mut st.rng,
        )?;

        let mut lookup = StateLookup::new(&st.memory, &updates);
        let mut pos_logits = Vec::with_capacity(events.len());
        let mut neg_logits = Vec::new();
        for (e, negs) in events.iter().zip(&negatives) {
            let src = embed_node(
                &mut tape,
                &vars,
                &mut lookup,
                self.graph,
                e.src,
                e.t,
                self.config.n_neighbors,
            )?;
            let dst = embed_node(
                &mut tape,
                &vars,
                &mut lookup,
                self.graph,
                e.dst,
                e.t,
                self.config.n_neighbors,
            )?;
            pos_logits.push(decoder::score(&mut tape, &vars.decoder, src, dst)?);
            for &n in negs {
                let nd = embed_node(
                    &mut tape,
                    &vars,
                    &mut lookup,
                    self.graph,
                    n,
                    e.t,
                    self.config.n_neighbors,
                )?;
                neg_logits.push(decoder::score(&mut tape, &vars.decoder, src, nd)?);
            }
        }
        let loss = decoder::bce_loss(&mut tape, &pos_logits, &neg_logits)?;
        let loss_value = tape.value(loss).item().into_f64();
        tape.backward(loss)?;
        let grads = vars.collect_grads(&tape);
        let mut tensors = st.params.tensors_mut();
        let mut refs: Vec<&mut crate::tensor::Tensor<F>> =
            tensors.iter_mut().map(|(_, t)| &mut **t).collect();
        st.adam.step(&mut refs, &grads)?;
        drop(tensors);

        commit_updates(&tape, &mut st.memory, &updates)?;
        for e in events.iter().chain(st.pending.iter()) {
            st.max_grad_event_time = st.max_grad_event_time.max(e.t);
            st.max_grad_event_id =
                Some(st.max_grad_event_id.map_or(e.event_id, |m| m.max(e.event_id)));
        }
        st.cursor += events.len();
        st.pending = events;
        st.epoch_loss_accum += loss_value;
        st.epoch_batches += 1;
        Ok(StepOutcome::Batch {
            epoch: st.epoch,
            loss: loss_value,
        })
    }

    fn finish_epoch(&mut self) -> Result<EpochStats> {
        // flush the deferred batch numerically; its gradients already
        // flowed when it was the current batch
        let pending = std::mem::take(&mut self.state.pending);
        apply_events(
            &self.state.params,
            &mut self.state.memory,
            &pending,
            self.config.aggregator,
        )?;

        let report = self.evaluate(EvalSplit::Val)?;
        let stats = EpochStats {
            epoch: self.state.epoch,
            loss: self.state.epoch_loss_accum / (self.state.epoch_batches.max(1)) as f64,
            val_mrr: report.mrr,
            val_ap: report.ap,
            val_auc: report.auc,
        };
        self.state.history.push(stats.clone());
        self.state.epoch += 1;
        if self.state.epoch >= self.config.epochs {
            self.state.done = true;
        } else {
            self.state.memory = self.state.initial_memory.clone();
            self.state.cursor = self.train_range.start;
            self.state.epoch_loss_accum = 0.0;
            self.state.epoch_batches = 0;
        }
        Ok(stats)
    }

    /// Run all remaining epochs.
    pub fn train_to_end(&mut self) -> Result<()> {
        loop {
            if let StepOutcome::Finished = self.step()? {
                return Ok(());
            }
        }
    }

    /// Evaluate on a held-out split. Works on a copy of the memory, so the
    /// training trajectory is unaffected. For the test split, validation
    /// events are replayed into memory first.
    pub fn evaluate(&self, which: EvalSplit) -> Result<MetricsReport> {
        let mut memory = self.state.memory.clone();
        let range = match which {
            EvalSplit::Val => self.val_range.clone(),
            EvalSplit::Test => {
                for e in &self.graph.events()[self.val_range.clone()] {
                    apply_events(
                        &self.state.params,
                        &mut memory,
                        std::slice::from_ref(e),
                        self.config.aggregator,
                    )?;
                }
                self.test_range.clone()
            }
        };
        evaluate_stream(
            self.graph,
            &self.config,
            &self.state.params,
            &mut memory,
            range,
            match which {
                EvalSplit::Val => 1,
                EvalSplit::Test => 2,
            },
        )
    }
}

/// Streaming evaluation over `range`: each event is scored against
/// candidates using only earlier information, then folded into `memory`.
pub fn evaluate_stream<F: Scalar>(
    graph: &TemporalGraph,
    config: &TrainConfig,
    params: &ModelParams<F>,
    memory: &mut MemoryState<F>,
    range: Range<usize>,
    split_tag: u64,
) -> Result<MetricsReport> {
    if range.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    match config.protocol {
        EvalProtocol::OnePositive => {
            evaluate_one_positive(graph, config, params, memory, range, split_tag)
        }
        EvalProtocol::AllReferences => {
            evaluate_all_references(graph, config, params, memory, range)
        }
    }
}

/// Rank of `target` within scored candidates: 1 + number of candidates
/// strictly ahead of it (higher score, or equal score and lower id).
fn rank_of(target: NodeId, target_score: f64, scores: &[(NodeId, f64)]) -> usize {
    1 + scores
        .iter()
        .filter(|&&(v, s)| {
            v != target && (s > target_score || (s == target_score && v < target))
        })
        .count()
}

fn finalize_report(
    ranks: Vec<usize>,
    k_list: &[usize],
    hits_at: BTreeMap<usize, f64>,
    recall_sum: BTreeMap<usize, f64>,
    pooled: Vec<(f64, bool)>,
    pos_scores: Vec<f64>,
    neg_scores: Vec<f64>,
    ap_override: Option<f64>,
    skipped: usize,
    protocol: &str,
) -> Result<MetricsReport> {
    let q = ranks.len() as f64;
    let mrr = metrics::mrr(&ranks)?;
    let mut precision_at = BTreeMap::new();
    let mut recall_at = BTreeMap::new();
    for &k in k_list {
        precision_at.insert(k, hits_at[&k] / q);
        recall_at.insert(k, recall_sum[&k] / q);
    }
    let ap = match ap_override {
        Some(v) => v,
        None => {
            let mut sorted = pooled;
            // ties resolve negatives first so the pooled AP is not
            // flattered by ordering luck
            sorted.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .expect("finite scores")
                    .then(a.1.cmp(&b.1))
            });
            let labels: Vec<bool> = sorted.iter().map(|&(_, l)| l).collect();
            metrics::average_precision(&labels)?
        }
    };
    let auc = metrics::auc(&pos_scores, &neg_scores)?;
    Ok(MetricsReport {
        mrr,
        precision_at,
        recall_at,
        ap,
        auc,
        query_count: ranks.len(),
        skipped,
        protocol: protocol.into(),
    })
}

fn evaluate_one_positive<F: Scalar>(
    graph: &TemporalGraph,
    config: &TrainConfig,
    params: &ModelParams<F>,
    memory: &mut MemoryState<F>,
    range: Range<usize>,
    split_tag: u64,
) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(split_tag));
    let no_updates = BTreeMap::new();
    let mut ranks = Vec::new();
    let mut hits_at: BTreeMap<usize, f64> =
        config.k_list.iter().map(|&k| (k, 0.0)).collect();
    let mut recall_sum = hits_at.clone();
    let mut pooled = Vec::new();
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();

    for e in &graph.events()[range] {
        let negs = sample_negatives(
            &[e.dst],
            config.eval_negatives,
            graph.node_count(),
            &mut rng,
        )?;
        let mut candidates = vec![e.dst];
        candidates.extend(&negs[0]);

        let mut tape = Tape::new();
        let vars = params.bind_all(&mut tape);
        let mut lookup = StateLookup::new(memory, &no_updates);
        let src_emb = embed_node(
            &mut tape,
            &vars,
            &mut lookup,
            graph,
            e.src,
            e.t,
            config.n_neighbors,
        )?;
        let mut scores = Vec::with_capacity(candidates.len());
        for &c in &candidates {
            let c_emb = embed_node(
                &mut tape,
                &vars,
                &mut lookup,
                graph,
                c,
                e.t,
                config.n_neighbors,
            )?;
            let s = decoder::score(&mut tape, &vars.decoder, src_emb, c_emb)?;
            scores.push((c, tape.value(s).item().into_f64()));
        }
        drop(lookup);

        let pos = scores[0].1;
        let rank = rank_of(e.dst, pos, &scores);
        ranks.push(rank);
        for &k in &config.k_list {
            if rank <= k {
                *hits_at.get_mut(&k).unwrap() += 1.0;
                *recall_sum.get_mut(&k).unwrap() += 1.0;
            }
        }
        pooled.push((pos, true));
        pos_scores.push(pos);
        for &(_, s) in &scores[1..] {
            pooled.push((s, false));
            neg_scores.push(s);
        }
        // the positive event becomes history the moment it is scored
        apply_events(params, memory, std::slice::from_ref(e), config.aggregator)?;
    }
    finalize_report(
        ranks,
        &config.k_list,
        hits_at,
        recall_sum,
        pooled,
        pos_scores,
        neg_scores,
        None,
        0,
        "one-positive",
    )
}

fn evaluate_all_references<F: Scalar>(
    graph: &TemporalGraph,
    config: &TrainConfig,
    params: &ModelParams<F>,
    memory: &mut MemoryState<F>,
    range: Range<usize>,
) -> Result<MetricsReport> {
    let events = &graph.events()[range];
    let mut relevant: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in events {
        relevant.entry(e.src).or_default().push(e.dst);
    }

    let no_updates = BTreeMap::new();
    let mut queried: std::collections::BTreeSet<NodeId> = Default::default();
    let mut ranks = Vec::new();
    let mut hits_at: BTreeMap<usize, f64> =
        config.k_list.iter().map(|&k| (k, 0.0)).collect();
    let mut recall_sum = hits_at.clone();
    let mut ap_sum = 0.0;
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    let mut skipped = 0usize;

    for e in events {
        if queried.insert(e.src) {
            let rel: std::collections::BTreeSet<NodeId> =
                relevant[&e.src].iter().copied().collect();
            let candidates: Vec<NodeId> =
                (0..graph.node_count()).filter(|&v| v != e.src).collect();
            if rel.is_empty() {
                skipped += 1;
            } else {
                let mut tape = Tape::new();
                let vars = params.bind_all(&mut tape);
                let mut lookup = StateLookup::new(memory, &no_updates);
                let src_emb = embed_node(
                    &mut tape,
                    &vars,
                    &mut lookup,
                    graph,
                    e.src,
                    e.t,
                    config.n_neighbors,
                )?;
                let mut scores = Vec::with_capacity(candidates.len());
                for &c in &candidates {
                    let c_emb = embed_node(
                        &mut tape,
                        &vars,
                        &mut lookup,
                        graph,
                        c,
                        e.t,
                        config.n_neighbors,
                    )?;
                    let s = decoder::score(&mut tape, &vars.decoder, src_emb, c_emb)?;
                    scores.push((c, tape.value(s).item().into_f64()));
                }
                drop(lookup);

                let mut best_rank = usize::MAX;
                let mut in_top: BTreeMap<usize, usize> =
                    config.k_list.iter().map(|&k| (k, 0)).collect();
                for &(c, s) in &scores {
                    if rel.contains(&c) {
                        let r = rank_of(c, s, &scores);
                        best_rank = best_rank.min(r);
                        for &k in &config.k_list {
                            if r <= k {
                                *in_top.get_mut(&k).unwrap() += 1;
                            }
                        }
                        pos_scores.push(s);
                    } else {
                        neg_scores.push(s);
                    }
                }
                ranks.push(best_rank);
                for &k in &config.k_list {
                    *hits_at.get_mut(&k).unwrap() +=
                        metrics::precision_at_k(in_top[&k].min(k), k)?;
                    *recall_sum.get_mut(&k).unwrap() +=
                        metrics::recall_at_k(in_top[&k].min(rel.len()), rel.len())?;
                }
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0))
                });
                let labels: Vec<bool> =
                    sorted.iter().map(|&(c, _)| rel.contains(&c)).collect();
                ap_sum += metrics::average_precision(&labels)?;
            }
        }
        apply_events(params, memory, std::slice::from_ref(e), config.aggregator)?;
    }
    let q = ranks.len() as f64;
    finalize_report(
        ranks,
        &config.k_list,
        hits_at,
        recall_sum,
        Vec::new(),
        pos_scores,
        neg_scores,
        Some(ap_sum / q),
        skipped,
        "all-references",
    )
}

/// One cell of the design grid: which variants were active plus the
/// resulting test metrics.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub message: MessageVariant,
    pub aggregator: Aggregator,
    pub memory_init: MemoryInit,
    pub report: MetricsReport,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
}

/// Train and evaluate every message/aggregator/initialization combination
/// on the same dataset with the same seed.
pub fn run_ablation<F: Scalar>(
    graph: &TemporalGraph,
    base: &TrainConfig,
) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(8);
    for &message in &[MessageVariant::SelfLearned, MessageVariant::Identity] {
        for &aggregator in &[Aggregator::Last, Aggregator::Mean] {
            for &memory_init in &[MemoryInit::Features, MemoryInit::Zeros] {
                let mut cfg = base.clone();
                cfg.message = message;
                cfg.aggregator = aggregator;
                cfg.memory_init = memory_init;
                let mut trainer: Trainer<'_, F> = Trainer::new(graph, cfg)?;
                trainer.train_to_end()?;
                let report = trainer.evaluate(EvalSplit::Test)?;
                let history = trainer.history();
                cells.push(AblationCell {
                    message,
                    aggregator,
                    memory_init,
                    report,
                    first_epoch_loss: history.first().map(|s| s.loss).unwrap_or(f64::NAN),
                    final_epoch_loss: history.last().map(|s| s.loss).unwrap_or(f64::NAN),
                });
            }
        }
    }
    Ok(cells)
}

/// Render ablation results as CSV, one row per cell.
pub fn ablation_csv(cells: &[AblationCell], k_list: &[usize]) -> String {
    let mut out = String::from("message,aggregator,memory_init,mrr");
    for &k in k_list {
        out.push_str(&format!(",recall@{k}"));
    }
    for &k in k_list {
        out.push_str(&format!(",precision@{k}"));
    }
    out.push('\n');
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:.6}",
            match c.message {
                MessageVariant::Identity => "identity",
                MessageVariant::SelfLearned => "learned",
            },
            match c.aggregator {
                Aggregator::Mean => "mean",
                Aggregator::Last => "last",
            },
            match c.memory_init {
                MemoryInit::Features => "features",
                MemoryInit::Zeros => "zeros",
            },
            c.report.mrr
        ));
        for &k in k_list {
            out.push_str(&format!(",{:.6}", c.report.recall_at.get(&k).copied().unwrap_or(f64::NAN)));
        }
        for &k in k_list {
            out.push_str(&format!(",{:.6}", c.report.precision_at.get(&k).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}
