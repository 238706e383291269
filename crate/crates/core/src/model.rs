//! All learnable weights gathered into one container, with stable
//! parameter ordering for the optimizer and checkpoints, plus the
//! embed-and-score path shared by training, evaluation, and
//! recommendation queries.

use crate::decoder::{self, DecoderParams, DecoderVars, ScoredCandidate};
use crate::error::{Error, Result};
use crate::graph::{NodeId, TemporalGraph, Time};
use crate::memory::{
    GruParams, MemoryState, MemoryVars, MessageEncoderParams, MessageVariant, TimeEncoderParams,
};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::transformer::{self, HeadParams, TransformerParams, TransformerVars};
use rand::Rng;
use std::collections::BTreeMap;

/// Model dimensions and structural choices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub d_mem: usize,
    pub d_time: usize,
    pub d_out: usize,
    pub d_dec: usize,
    pub heads: usize,
    pub message: MessageVariant,
    /// Raw feature dimension, when feature-initialized memory is used.
    pub feat_dim: Option<usize>,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_mem", self.d_mem),
            ("d_time", self.d_time),
            ("d_out", self.d_out),
            ("d_dec", self.d_dec),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_mem % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "heads ({}) must divide d_mem ({})",
                self.heads, self.d_mem
            )));
        }
        Ok(())
    }

    /// GRU input width: identity messages pass the raw concatenation,
    /// self-learned messages are re-encoded to d_mem.
    pub fn message_dim(&self) -> usize {
        match self.message {
            MessageVariant::Identity => 2 * self.d_mem + self.d_time,
            MessageVariant::SelfLearned => self.d_mem,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Scalar> {
    pub dims: ModelDims,
    /// Feature projection `[feat_dim, d_mem]`, present iff `feat_dim` is.
    pub proj: Option<Tensor<F>>,
    pub time_enc: TimeEncoderParams<F>,
    pub msg_enc: Option<MessageEncoderParams<F>>,
    pub gru: GruParams<F>,
    pub transformer: TransformerParams<F>,
    pub decoder: DecoderParams<F>,
}

fn fan_in_uniform<F: Scalar>(rng: &mut impl Rng, shape: &[usize]) -> Tensor<F> {
    let fan_in = shape[0];
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| F::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

impl<F: Scalar> ModelParams<F> {
    /// Fresh parameters: weight matrices uniform in ±1/sqrt(fan_in),
    /// biases zero, time encoder on its geometric ladder.
    pub fn init(dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let d_mem = dims.d_mem;
        let d_head = d_mem / dims.heads;
        let msg_in = 2 * d_mem + dims.d_time;
        let gru_in = dims.message_dim();

        let proj = dims
            .feat_dim
            .map(|fd| fan_in_uniform(rng, &[fd, d_mem]));
        let msg_enc = match dims.message {
            MessageVariant::Identity => None,
            MessageVariant::SelfLearned => Some(MessageEncoderParams {
                w: fan_in_uniform(rng, &[msg_in, d_mem]),
                b: Tensor::zeros(&[d_mem]),
            }),
        };
        let gru = GruParams {
            w_ir: fan_in_uniform(rng, &[gru_in, d_mem]),
            w_hr: fan_in_uniform(rng, &[d_mem, d_mem]),
            w_iz: fan_in_uniform(rng, &[gru_in, d_mem]),
            w_hz: fan_in_uniform(rng, &[d_mem, d_mem]),
            w_in: fan_in_uniform(rng, &[gru_in, d_mem]),
            w_hn: fan_in_uniform(rng, &[d_mem, d_mem]),
            b_ir: Tensor::zeros(&[d_mem]),
            b_hr: Tensor::zeros(&[d_mem]),
            b_iz: Tensor::zeros(&[d_mem]),
            b_hz: Tensor::zeros(&[d_mem]),
            b_in: Tensor::zeros(&[d_mem]),
            b_hn: Tensor::zeros(&[d_mem]),
        };
        let transformer = TransformerParams {
            heads: (0..dims.heads)
                .map(|_| HeadParams {
                    w1: fan_in_uniform(rng, &[d_mem, d_head]),
                    w2: fan_in_uniform(rng, &[d_mem, d_head]),
                    w3: fan_in_uniform(rng, &[d_mem, d_head]),
                    w4: fan_in_uniform(rng, &[d_mem, d_head]),
                    w6: fan_in_uniform(rng, &[dims.d_time, d_head]),
                })
                .collect(),
            combiner: fan_in_uniform(rng, &[dims.heads * d_head, dims.d_out]),
        };
        let decoder = DecoderParams {
            w_src: fan_in_uniform(rng, &[dims.d_out, dims.d_dec]),
            b_src: Tensor::zeros(&[dims.d_dec]),
            w_dst: fan_in_uniform(rng, &[dims.d_out, dims.d_dec]),
            b_dst: Tensor::zeros(&[dims.d_dec]),
            w_out: fan_in_uniform(rng, &[2 * dims.d_dec, 1]),
            b_out: Tensor::zeros(&[1]),
        };
        let time_enc = TimeEncoderParams::init(dims.d_time);
        Ok(ModelParams {
            dims,
            proj,
            time_enc,
            msg_enc,
            gru,
            transformer,
            decoder,
        })
    }

    /// Named parameter tensors in a stable order shared by the optimizer
    /// and the checkpoint format.
    pub fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = Vec::new();
        if let Some(p) = &self.proj {
            out.push(("proj".into(), p));
        }
        out.push(("time.omega".into(), &self.time_enc.omega));
        out.push(("time.phase".into(), &self.time_enc.phase));
        if let Some(m) = &self.msg_enc {
            out.push(("msg.w".into(), &m.w));
            out.push(("msg.b".into(), &m.b));
        }
        let g = &self.gru;
        for (name, t) in [
            ("gru.w_ir", &g.w_ir),
            ("gru.w_hr", &g.w_hr),
            ("gru.w_iz", &g.w_iz),
            ("gru.w_hz", &g.w_hz),
            ("gru.w_in", &g.w_in),
            ("gru.w_hn", &g.w_hn),
            ("gru.b_ir", &g.b_ir),
            ("gru.b_hr", &g.b_hr),
            ("gru.b_iz", &g.b_iz),
            ("gru.b_hz", &g.b_hz),
            ("gru.b_in", &g.b_in),
            ("gru.b_hn", &g.b_hn),
        ] {
            out.push((name.into(), t));
        }
        for (i, h) in self.transformer.heads.iter().enumerate() {
            for (name, t) in [
                ("w1", &h.w1),
                ("w2", &h.w2),
                ("w3", &h.w3),
                ("w4", &h.w4),
                ("w6", &h.w6),
            ] {
                out.push((format!("attn.{i}.{name}"), t));
            }
        }
        out.push(("attn.combiner".into(), &self.transformer.combiner));
        let d = &self.decoder;
        for (name, t) in [
            ("dec.w_src", &d.w_src),
            ("dec.b_src", &d.b_src),
            ("dec.w_dst", &d.w_dst),
            ("dec.b_dst", &d.b_dst),
            ("dec.w_out", &d.w_out),
            ("dec.b_out", &d.b_out),
        ] {
            out.push((name.into(), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = Vec::new();
        if let Some(p) = &mut self.proj {
            out.push(("proj".into(), p));
        }
        out.push(("time.omega".into(), &mut self.time_enc.omega));
        out.push(("time.phase".into(), &mut self.time_enc.phase));
        if let Some(m) = &mut self.msg_enc {
            out.push(("msg.w".into(), &mut m.w));
            out.push(("msg.b".into(), &mut m.b));
        }
        let g = &mut self.gru;
        for (name, t) in [
            ("gru.w_ir", &mut g.w_ir),
            ("gru.w_hr", &mut g.w_hr),
            ("gru.w_iz", &mut g.w_iz),
            ("gru.w_hz", &mut g.w_hz),
            ("gru.w_in", &mut g.w_in),
            ("gru.w_hn", &mut g.w_hn),
            ("gru.b_ir", &mut g.b_ir),
            ("gru.b_hr", &mut g.b_hr),
            ("gru.b_iz", &mut g.b_iz),
            ("gru.b_hz", &mut g.b_hz),
            ("gru.b_in", &mut g.b_in),
            ("gru.b_hn", &mut g.b_hn),
        ] {
            out.push((name.into(), t));
        }
        for (i, h) in self.transformer.heads.iter_mut().enumerate() {
            for (name, t) in [
                ("w1", &mut h.w1),
                ("w2", &mut h.w2),
                ("w3", &mut h.w3),
                ("w4", &mut h.w4),
                ("w6", &mut h.w6),
            ] {
                out.push((format!("attn.{i}.{name}"), t));
            }
        }
        out.push(("attn.combiner".into(), &mut self.transformer.combiner));
        let d = &mut self.decoder;
        for (name, t) in [
            ("dec.w_src", &mut d.w_src),
            ("dec.b_src", &mut d.b_src),
            ("dec.w_dst", &mut d.w_dst),
            ("dec.b_dst", &mut d.b_dst),
            ("dec.w_out", &mut d.w_out),
            ("dec.b_out", &mut d.b_out),
        ] {
            out.push((name.into(), t));
        }
        out
    }

    /// Bind only the memory-side parameters.
    pub fn bind_memory(&self, tape: &mut Tape<F>) -> MemoryVars {
        MemoryVars {
            time_enc: self.time_enc.bind(tape),
            gru: self.gru.bind(tape),
            msg_enc: self.msg_enc.as_ref().map(|m| m.bind(tape)),
        }
    }

    /// Bind every parameter as a tape leaf, in [`ModelParams::tensors`]
    /// order, so gradients can be collected positionally.
    pub fn bind_all(&self, tape: &mut Tape<F>) -> ModelVars {
        let mut ordered = Vec::new();
        let mut leaf = |tape: &mut Tape<F>, t: &Tensor<F>| {
            let v = tape.leaf(t.clone());
            ordered.push(v);
            v
        };
        let proj = self.proj.as_ref().map(|p| leaf(tape, p));
        let time_enc = crate::memory::TimeEncoderVars {
            omega: leaf(tape, &self.time_enc.omega),
            phase: leaf(tape, &self.time_enc.phase),
        };
        let msg_enc = self.msg_enc.as_ref().map(|m| crate::memory::MessageEncoderVars {
            w: leaf(tape, &m.w),
            b: leaf(tape, &m.b),
        });
        let g = &self.gru;
        let gru = crate::memory::GruVars {
            w_ir: leaf(tape, &g.w_ir),
            w_hr: leaf(tape, &g.w_hr),
            w_iz: leaf(tape, &g.w_iz),
            w_hz: leaf(tape, &g.w_hz),
            w_in: leaf(tape, &g.w_in),
            w_hn: leaf(tape, &g.w_hn),
            b_ir: leaf(tape, &g.b_ir),
            b_hr: leaf(tape, &g.b_hr),
            b_iz: leaf(tape, &g.b_iz),
            b_hz: leaf(tape, &g.b_hz),
            b_in: leaf(tape, &g.b_in),
            b_hn: leaf(tape, &g.b_hn),
        };
        let heads = self
            .transformer
            .heads
            .iter()
            .map(|h| crate::transformer::HeadVars {
                w1: leaf(tape, &h.w1),
                w2: leaf(tape, &h.w2),
                w3: leaf(tape, &h.w3),
                w4: leaf(tape, &h.w4),
                w6: leaf(tape, &h.w6),
            })
            .collect();
        let combiner = leaf(tape, &self.transformer.combiner);
        let d = &self.decoder;
        let decoder = DecoderVars {
            w_src: leaf(tape, &d.w_src),
            b_src: leaf(tape, &d.b_src),
            w_dst: leaf(tape, &d.w_dst),
            b_dst: leaf(tape, &d.b_dst),
            w_out: leaf(tape, &d.w_out),
            b_out: leaf(tape, &d.b_out),
        };
        ModelVars {
            proj,
            memory: MemoryVars {
                time_enc,
                gru,
                msg_enc,
            },
            transformer: TransformerVars { heads, combiner },
            decoder,
            ordered,
        }
    }
}

/// Tape handles for every parameter plus the positional order used for
/// gradient collection.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub proj: Option<Var>,
    pub memory: MemoryVars,
    pub transformer: TransformerVars,
    pub decoder: DecoderVars,
    ordered: Vec<Var>,
}

impl ModelVars {
    /// Gradients aligned with [`ModelParams::tensors`]; `None` for
    /// parameters the loss did not reach.
    pub fn collect_grads<F: Scalar>(&self, tape: &Tape<F>) -> Vec<Option<Tensor<F>>> {
        self.ordered
            .iter()
            .map(|&v| tape.grad(v).cloned())
            .collect()
    }
}

/// Memory row lookup that prefers in-batch updated states over committed
/// memory, caching constant leaves so each row is inserted once.
pub struct StateLookup<'a, F: Scalar> {
    memory: &'a MemoryState<F>,
    updates: &'a BTreeMap<NodeId, (Var, Time)>,
    cache: BTreeMap<NodeId, Var>,
}

impl<'a, F: Scalar> StateLookup<'a, F> {
    pub fn new(
        memory: &'a MemoryState<F>,
        updates: &'a BTreeMap<NodeId, (Var, Time)>,
    ) -> Self {
        StateLookup {
            memory,
            updates,
            cache: BTreeMap::new(),
        }
    }

    pub fn state_var(&mut self, tape: &mut Tape<F>, v: NodeId) -> Var {
        if let Some(&(var, _)) = self.updates.get(&v) {
            return var;
        }
        *self.cache.entry(v).or_insert_with(|| {
            tape.leaf(Tensor::vector(self.memory.state_row(v).to_vec()))
        })
    }
}

/// Embed `node` at query time `t` using the frozen graph's temporal
/// neighbors and the given state lookup.
pub fn embed_node<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ModelVars,
    lookup: &mut StateLookup<'_, F>,
    graph: &TemporalGraph,
    node: NodeId,
    t: Time,
    n_neighbors: usize,
) -> Result<Var> {
    let neighbors = graph.temporal_neighbors(node, t, n_neighbors);
    transformer::embed(
        tape,
        &vars.transformer,
        &vars.memory.time_enc,
        &mut |tape, v| lookup.state_var(tape, v),
        node,
        &neighbors,
    )
}

/// Score candidate destinations for `src` at time `t` and return the top
/// `k`, ranked by logit descending with ties broken by node id.
pub fn recommend<F: Scalar>(
    params: &ModelParams<F>,
    memory: &MemoryState<F>,
    graph: &TemporalGraph,
    src: NodeId,
    t: Time,
    candidates: &[NodeId],
    k: usize,
    n_neighbors: usize,
) -> Result<Vec<ScoredCandidate<F>>> {
    if src >= memory.node_count() {
        return Err(Error::InvalidArgument(format!("unknown source node {src}")));
    }
    for &v in std::iter::once(&src).chain(candidates) {
        if v >= memory.node_count() {
            return Err(Error::InvalidArgument(format!("unknown candidate {v}")));
        }
        if memory.last_update(v) > t {
            return Err(Error::InvalidArgument(format!(
                "query at t={t} precedes node {v}'s last memory update {}",
                memory.last_update(v)
            )));
        }
    }
    let mut tape = Tape::new();
    let vars = params.bind_all(&mut tape);
    let updates = BTreeMap::new();
    let mut lookup = StateLookup::new(memory, &updates);
    let src_emb = embed_node(&mut tape, &vars, &mut lookup, graph, src, t, n_neighbors)?;
    let mut logits: BTreeMap<NodeId, F> = BTreeMap::new();
    for &c in candidates {
        let c_emb = embed_node(&mut tape, &vars, &mut lookup, graph, c, t, n_neighbors)?;
        let s = decoder::score(&mut tape, &vars.decoder, src_emb, c_emb)?;
        logits.insert(c, tape.value(s).item());
    }
    decoder::rank_candidates(candidates, k, |v| Ok(logits[&v]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{Aggregator, MemoryInit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(message: MessageVariant) -> ModelDims {
        ModelDims {
            d_mem: 4,
            d_time: 2,
            d_out: 4,
            d_dec: 3,
            heads: 2,
            message,
            feat_dim: None,
        }
    }

    #[test]
    fn init_rejects_indivisible_heads() {
        let mut d = dims(MessageVariant::Identity);
        d.heads = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ModelParams::<f64>::init(d, &mut rng).is_err());
    }

    #[test]
    fn tensor_order_is_stable_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::<f64>::init(dims(MessageVariant::SelfLearned), &mut rng).unwrap();
        let names: Vec<String> = p.tensors().iter().map(|(n, _)| n.clone()).collect();
        let mut p2 = p.clone();
        let names_mut: Vec<String> = p2.tensors_mut().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"msg.w".to_string()));
        assert!(names.contains(&"attn.1.w6".to_string()));
        // binding order matches
        let mut tape = Tape::new();
        let vars = p.bind_all(&mut tape);
        assert_eq!(vars.ordered.len(), names.len());
        for (i, (_, t)) in p.tensors().iter().enumerate() {
            assert_eq!(tape.value(vars.ordered[i]).shape(), t.shape());
        }
    }

    #[test]
    fn recommend_orders_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::<f64>::init(dims(MessageVariant::Identity), &mut rng).unwrap();
        let mut g = TemporalGraph::new();
        g.add_event(0, 1, 1.0, None).unwrap();
        g.add_event(1, 2, 2.0, None).unwrap();
        g.add_event(0, 3, 3.0, None).unwrap();
        g.freeze(None);
        let mut memory = MemoryState::<f64>::zeros(4, 4);
        crate::memory::apply_events(&params, &mut memory, g.events(), Aggregator::Last).unwrap();

        let got = recommend(&params, &memory, &g, 0, 10.0, &[1, 2, 3], 2, 5).unwrap();
        assert_eq!(got.len(), 2);
        // agrees with brute-force full ranking
        let all = recommend(&params, &memory, &g, 0, 10.0, &[1, 2, 3], 10, 5).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(&all[..2], &got[..]);
        for w in all.windows(2) {
            assert!(
                w[0].score > w[1].score || (w[0].score == w[1].score && w[0].dst < w[1].dst)
            );
        }
        for c in &all {
            assert!(c.probability > 0.0 && c.probability < 1.0);
        }

        assert!(recommend(&params, &memory, &g, 99, 10.0, &[1], 1, 5).is_err());
        assert!(recommend(&params, &memory, &g, 0, 10.0, &[1], 0, 5).is_err());
        // querying before the memory's last update is a leakage signal
        assert!(recommend(&params, &memory, &g, 0, 0.5, &[1], 1, 5).is_err());
        let _ = MemoryInit::Zeros;
    }

    #[test]
    fn full_score_path_gradient_check() {
        // small end-to-end graph: message -> GRU -> attention -> decoder
        use crate::decoder::{bce_loss, score};
        use crate::graph::Event;
        use crate::memory::{aggregate, compute_raw_messages, update_memory_on_tape, Aggregator};
        use crate::tensor::grad_check;

        let d = dims(MessageVariant::SelfLearned);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = ModelParams::<f64>::init(d, &mut rng).unwrap();

        let mut g = TemporalGraph::new();
        g.add_event(0, 1, 1.0, None).unwrap();
        g.add_event(1, 2, 2.0, None).unwrap();
        g.add_event(3, 4, 2.5, None).unwrap();
        g.add_event(2, 0, 3.0, None).unwrap();
        g.freeze(None);
        let mut memory = MemoryState::<f64>::zeros(5, 4);
        crate::memory::apply_events(&params, &mut memory, &g.events()[..2], Aggregator::Mean)
            .unwrap();

        let pending: Vec<Event> = g.events()[2..].to_vec();
        let inputs: Vec<Tensor<f64>> = params.tensors().iter().map(|(_, t)| (*t).clone()).collect();
        let template = params.clone();
        let graph = &g;
        let memory = &memory;
        let err = grad_check(
            move |tape, vars| {
                // rebuild a params view whose leaves are the checked inputs
                let mut p = template.clone();
                for (i, (_, t)) in p.tensors_mut().into_iter().enumerate() {
                    *t = tape.value(vars[i]).clone();
                }
                let mut mv = p.bind_all(tape);
                // splice the checked vars in as the bound leaves
                mv.ordered.clone_from(&vars.to_vec());
                let rebound = ModelVars {
                    proj: mv.proj,
                    memory: rebind_memory(&p, vars),
                    transformer: rebind_transformer(&p, vars),
                    decoder: rebind_decoder(&p, vars),
                    ordered: vars.to_vec(),
                };
                let msgs = compute_raw_messages(tape, &rebound.memory, memory, &pending)?;
                let agg = aggregate(tape, &msgs, Aggregator::Mean)?;
                let updates = update_memory_on_tape(tape, &rebound.memory, memory, &agg)?;
                let mut lookup = StateLookup::new(memory, &updates);
                let s_emb = embed_node(tape, &rebound, &mut lookup, graph, 2, 3.5, 5)?;
                let d_emb = embed_node(tape, &rebound, &mut lookup, graph, 4, 3.5, 5)?;
                let n_emb = embed_node(tape, &rebound, &mut lookup, graph, 1, 3.5, 5)?;
                let pos = score(tape, &rebound.decoder, s_emb, d_emb)?;
                let neg = score(tape, &rebound.decoder, s_emb, n_emb)?;
                bce_loss(tape, &[pos], &[neg])
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    // test-only helpers: rebuild var views over an externally-supplied
    // ordered leaf list (used by the gradient check above)
    fn rebind_memory(p: &ModelParams<f64>, vars: &[Var]) -> MemoryVars {
        let mut it = OrderedVars::new(p, vars);
        it.memory()
    }
    fn rebind_transformer(p: &ModelParams<f64>, vars: &[Var]) -> TransformerVars {
        let mut it = OrderedVars::new(p, vars);
        it.memory();
        it.transformer(p)
    }
    fn rebind_decoder(p: &ModelParams<f64>, vars: &[Var]) -> DecoderVars {
        let mut it = OrderedVars::new(p, vars);
        it.memory();
        it.transformer(p);
        it.decoder()
    }

    struct OrderedVars<'a> {
        vars: &'a [Var],
        pos: usize,
        has_proj: bool,
        has_msg: bool,
    }

    impl<'a> OrderedVars<'a> {
        fn new(p: &ModelParams<f64>, vars: &'a [Var]) -> Self {
            OrderedVars {
                vars,
                pos: 0,
                has_proj: p.proj.is_some(),
                has_msg: p.msg_enc.is_some(),
            }
        }
        fn next(&mut self) -> Var {
            let v = self.vars[self.pos];
            self.pos += 1;
            v
        }
        fn memory(&mut self) -> MemoryVars {
            if self.has_proj {
                self.next();
            }
            let time_enc = crate::memory::TimeEncoderVars {
                omega: self.next(),
                phase: self.next(),
            };
            let msg_enc = self.has_msg.then(|| crate::memory::MessageEncoderVars {
                w: self.next(),
                b: self.next(),
            });
            let gru = crate::memory::GruVars {
                w_ir: self.next(),
                w_hr: self.next(),
                w_iz: self.next(),
                w_hz: self.next(),
                w_in: self.next(),
                w_hn: self.next(),
                b_ir: self.next(),
                b_hr: self.next(),
                b_iz: self.next(),
                b_hz: self.next(),
                b_in: self.next(),
                b_hn: self.next(),
            };
            MemoryVars {
                time_enc,
                gru,
                msg_enc,
            }
        }
        fn transformer(&mut self, p: &ModelParams<f64>) -> TransformerVars {
            let heads = (0..p.transformer.heads.len())
                .map(|_| crate::transformer::HeadVars {
                    w1: self.next(),
                    w2: self.next(),
                    w3: self.next(),
                    w4: self.next(),
                    w6: self.next(),
                })
                .collect();
            TransformerVars {
                heads,
                combiner: self.next(),
            }
        }
        fn decoder(&mut self) -> DecoderVars {
            DecoderVars {
                w_src: self.next(),
                b_src: self.next(),
                w_dst: self.next(),
                b_dst: self.next(),
                w_out: self.next(),
                b_out: self.next(),
            }
        }
    }
}
