//! Per-node memory: state vectors, bidirectional messages, mean/last
//! aggregation, a learnable time encoding, and the GRU updater.
//!
//! All model math runs on the differentiation tape. Committed memory is
//! always read as a constant input (no backpropagation through time across
//! batches); gradients flow through the message, aggregation, and update
//! path of the pending batch only.

use crate::error::{Error, Result};
use crate::graph::{Event, NodeId, Time};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::BTreeMap;
use std::io::{Read, Write};

/// How raw messages are encoded before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageVariant {
    /// Plain concatenation of both states and the encoded time gap.
    Identity,
    /// Affine map plus ReLU on top of the concatenation.
    SelfLearned,
}

/// How per-node messages within a batch are collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Mean,
    Last,
}

/// Memory initialization policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryInit {
    /// Project node features into the memory space.
    Features,
    Zeros,
}

/// Recurrent updater selection. Only `Gru` is implemented; the other names
/// are reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdaterKind {
    Gru,
    Rnn,
    Lstm,
}

/// Per-node state matrix plus last-update timestamps.
///
/// `max_written_time` records the largest event time ever committed, which
/// the temporal-hygiene checks use to prove training never touched
/// out-of-split events.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<F: Scalar> {
    d_mem: usize,
    states: Tensor<F>,
    last_update: Vec<Time>,
    max_written_time: Time,
}

/// Opaque checkpoint of a memory state.
#[derive(Debug, Clone)]
pub struct MemorySnapshot<F: Scalar>(MemoryState<F>);

impl<F: Scalar> MemoryState<F> {
    pub fn zeros(node_count: usize, d_mem: usize) -> Self {
        MemoryState {
            d_mem,
            states: Tensor::zeros(&[node_count, d_mem]),
            last_update: vec![0.0; node_count],
            max_written_time: 0.0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.last_update.len()
    }

    pub fn d_mem(&self) -> usize {
        self.d_mem
    }

    pub fn state_row(&self, v: NodeId) -> &[F] {
        self.states.row(v)
    }

    pub fn states(&self) -> &Tensor<F> {
        &self.states
    }

    pub fn last_update(&self, v: NodeId) -> Time {
        self.last_update[v]
    }

    pub fn max_written_time(&self) -> Time {
        self.max_written_time
    }

    pub fn set_row(&mut self, v: NodeId, row: &[F], t: Time) -> Result<()> {
        if row.len() != self.d_mem {
            return Err(Error::ShapeMismatch {
                op: "memory set_row",
                lhs: vec![self.d_mem],
                rhs: vec![row.len()],
            });
        }
        if t < self.last_update[v] {
            return Err(Error::InvalidEvent(format!(
                "memory update for node {v} at t={t} precedes last_update={}",
                self.last_update[v]
            )));
        }
        let d = self.d_mem;
        self.states.data_mut()[v * d..(v + 1) * d].copy_from_slice(row);
        self.last_update[v] = t;
        if t > self.max_written_time {
            self.max_written_time = t;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> MemorySnapshot<F> {
        MemorySnapshot(self.clone())
    }

    pub fn restore(&mut self, snap: &MemorySnapshot<F>) -> Result<()> {
        if snap.0.d_mem != self.d_mem || snap.0.node_count() != self.node_count() {
            return Err(Error::Checkpoint(format!(
                "snapshot shape ({}, {}) does not match memory ({}, {})",
                snap.0.node_count(),
                snap.0.d_mem,
                self.node_count(),
                self.d_mem
            )));
        }
        *self = snap.0.clone();
        Ok(())
    }

    /// Little-endian wire format: d_mem, node_count, precision bits, then
    /// the row-major state matrix and the last-update vector.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_u32::<LittleEndian>(self.d_mem as u32)?;
        w.write_u64::<LittleEndian>(self.node_count() as u64)?;
        w.write_u8(F::BITS)?;
        for &x in self.states.data() {
            w.write_f64::<LittleEndian>(x.into_f64())?;
        }
        for &t in &self.last_update {
            w.write_f64::<LittleEndian>(t)?;
        }
        w.write_f64::<LittleEndian>(self.max_written_time)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let d_mem = r.read_u32::<LittleEndian>()? as usize;
        let node_count = r.read_u64::<LittleEndian>()? as usize;
        let bits = r.read_u8()?;
        if bits != F::BITS {
            return Err(Error::Checkpoint(format!(
                "memory precision {bits} does not match build precision {}",
                F::BITS
            )));
        }
        let mut data = Vec::with_capacity(node_count * d_mem);
        for _ in 0..node_count * d_mem {
            data.push(F::from_f64(r.read_f64::<LittleEndian>()?));
        }
        let mut last_update = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            last_update.push(r.read_f64::<LittleEndian>()?);
        }
        let max_written_time = r.read_f64::<LittleEndian>()?;
        Ok(MemoryState {
            d_mem,
            states: Tensor::from_vec(&[node_count, d_mem], data)?,
            last_update,
            max_written_time,
        })
    }
}

/// Build the initial memory, optionally from node features.
///
/// With features and a projection matrix `[feat_dim, d_mem]`, the initial
/// state is `features · W_proj`. Without a projection the feature dimension
/// must equal `d_mem`. Without features the memory starts at zero.
pub fn init_memory<F: Scalar>(
    node_count: usize,
    d_mem: usize,
    features: Option<&Tensor<f64>>,
    projection: Option<&Tensor<F>>,
) -> Result<MemoryState<F>> {
    let mut mem = MemoryState::zeros(node_count, d_mem);
    let features = match features {
        Some(f) => f,
        None => return Ok(mem),
    };
    if features.rows() != node_count {
        return Err(Error::InvalidArgument(format!(
            "feature rows {} != node count {node_count}",
            features.rows()
        )));
    }
    let feat_dim = features.cols();
    match projection {
        Some(w) => {
            if w.shape() != [feat_dim, d_mem] {
                return Err(Error::ShapeMismatch {
                    op: "init_memory projection",
                    lhs: vec![feat_dim, d_mem],
                    rhs: w.shape().to_vec(),
                });
            }
            for v in 0..node_count {
                let frow = features.row(v);
                let mut out = vec![F::zero(); d_mem];
                for (k, &f) in frow.iter().enumerate() {
                    let fk = F::from_f64(f);
                    if fk == F::zero() {
                        continue;
                    }
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = *o + fk * w.data()[k * d_mem + j];
                    }
                }
                let d = d_mem;
                mem.states.data_mut()[v * d..(v + 1) * d].copy_from_slice(&out);
            }
        }
        None => {
            if feat_dim != d_mem {
                return Err(Error::ShapeMismatch {
                    op: "init_memory",
                    lhs: vec![node_count, feat_dim],
                    rhs: vec![node_count, d_mem],
                });
            }
            for (i, &f) in features.data().iter().enumerate() {
                mem.states.data_mut()[i] = F::from_f64(f);
            }
        }
    }
    Ok(mem)
}

/// Learnable time encoding `phi(dt) = cos(dt * omega + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoderParams<F: Scalar> {
    pub omega: Tensor<F>,
    pub phase: Tensor<F>,
}

impl<F: Scalar> TimeEncoderParams<F> {
    /// Geometric frequency ladder 10^(-k*alpha), alpha = 10/d_time, covering
    /// day-to-decade gaps; phases start at zero.
    pub fn init(d_time: usize) -> Self {
        let alpha = 10.0 / d_time as f64;
        let omega = (0..d_time)
            .map(|k| F::from_f64(10f64.powf(-(k as f64) * alpha)))
            .collect();
        TimeEncoderParams {
            omega: Tensor::vector(omega),
            phase: Tensor::zeros(&[d_time]),
        }
    }

    pub fn d_time(&self) -> usize {
        self.omega.len()
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> TimeEncoderVars {
        TimeEncoderVars {
            omega: tape.leaf(self.omega.clone()),
            phase: tape.leaf(self.phase.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TimeEncoderVars {
    pub omega: Var,
    pub phase: Var,
}

/// `cos(dt * omega + phase)`. Negative gaps signal temporal leakage
/// upstream and are rejected.
pub fn encode_time<F: Scalar>(tape: &mut Tape<F>, enc: &TimeEncoderVars, dt: Time) -> Result<Var> {
    if dt < 0.0 {
        return Err(Error::InvalidEvent(format!(
            "negative time gap {dt}: event precedes the node's last update"
        )));
    }
    let scaled = tape.scale(enc.omega, F::from_f64(dt));
    let arg = tape.add(scaled, enc.phase)?;
    Ok(tape.cos(arg))
}

/// GRU updater weights. Input matrices are `[d_in, d_mem]`, hidden
/// matrices `[d_mem, d_mem]`, applied as `x · W + b` with row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<F: Scalar> {
    pub w_ir: Tensor<F>,
    pub w_hr: Tensor<F>,
    pub w_iz: Tensor<F>,
    pub w_hz: Tensor<F>,
    pub w_in: Tensor<F>,
    pub w_hn: Tensor<F>,
    pub b_ir: Tensor<F>,
    pub b_hr: Tensor<F>,
    pub b_iz: Tensor<F>,
    pub b_hz: Tensor<F>,
    pub b_in: Tensor<F>,
    pub b_hn: Tensor<F>,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_ir: Var,
    pub w_hr: Var,
    pub w_iz: Var,
    pub w_hz: Var,
    pub w_in: Var,
    pub w_hn: Var,
    pub b_ir: Var,
    pub b_hr: Var,
    pub b_iz: Var,
    pub b_hz: Var,
    pub b_in: Var,
    pub b_hn: Var,
}

impl<F: Scalar> GruParams<F> {
    pub fn bind(&self, tape: &mut Tape<F>) -> GruVars {
        GruVars {
            w_ir: tape.leaf(self.w_ir.clone()),
            w_hr: tape.leaf(self.w_hr.clone()),
            w_iz: tape.leaf(self.w_iz.clone()),
            w_hz: tape.leaf(self.w_hz.clone()),
            w_in: tape.leaf(self.w_in.clone()),
            w_hn: tape.leaf(self.w_hn.clone()),
            b_ir: tape.leaf(self.b_ir.clone()),
            b_hr: tape.leaf(self.b_hr.clone()),
            b_iz: tape.leaf(self.b_iz.clone()),
            b_hz: tape.leaf(self.b_hz.clone()),
            b_in: tape.leaf(self.b_in.clone()),
            b_hn: tape.leaf(self.b_hn.clone()),
        }
    }
}

/// One GRU step: gates from the aggregated message `m` and previous state
/// `s_prev`, returning the new state.
pub fn gru_step<F: Scalar>(
    tape: &mut Tape<F>,
    gru: &GruVars,
    m: Var,
    s_prev: Var,
) -> Result<Var> {
    let gate = |tape: &mut Tape<F>, wi: Var, bi: Var, wh: Var, bh: Var| -> Result<Var> {
        let xm = tape.matmul(m, wi)?;
        let xm = tape.add(xm, bi)?;
        let hs = tape.matmul(s_prev, wh)?;
        let hs = tape.add(hs, bh)?;
        tape.add(xm, hs)
    };
    let r_pre = gate(tape, gru.w_ir, gru.b_ir, gru.w_hr, gru.b_hr)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = gate(tape, gru.w_iz, gru.b_iz, gru.w_hz, gru.b_hz)?;
    let z = tape.sigmoid(z_pre);

    let xm = tape.matmul(m, gru.w_in)?;
    let xm = tape.add(xm, gru.b_in)?;
    let hs = tape.matmul(s_prev, gru.w_hn)?;
    let hs = tape.add(hs, gru.b_hn)?;
    let gated = tape.mul(r, hs)?;
    let n_pre = tape.add(xm, gated)?;
    let n = tape.tanh(n_pre);

    // s' = n + z * (s_prev - n)
    let diff = tape.sub(s_prev, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

/// Self-learned message encoder: affine map then ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEncoderParams<F: Scalar> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

#[derive(Debug, Clone, Copy)]
pub struct MessageEncoderVars {
    pub w: Var,
    pub b: Var,
}

impl<F: Scalar> MessageEncoderParams<F> {
    pub fn bind(&self, tape: &mut Tape<F>) -> MessageEncoderVars {
        MessageEncoderVars {
            w: tape.leaf(self.w.clone()),
            b: tape.leaf(self.b.clone()),
        }
    }
}

/// Bound tape handles for every memory-side parameter.
#[derive(Debug, Clone, Copy)]
pub struct MemoryVars {
    pub time_enc: TimeEncoderVars,
    pub gru: GruVars,
    pub msg_enc: Option<MessageEncoderVars>,
}

/// One message headed for `target`, prior to aggregation.
#[derive(Debug, Clone, Copy)]
pub struct RawMessage {
    pub target: NodeId,
    pub payload: Var,
    pub time: Time,
    pub event_id: u64,
}

/// Bidirectional messages for a batch: for `src` cites `dst` at `t`, one
/// message toward each endpoint built from both committed states and the
/// encoded per-node staleness gap. Two messages per event.
pub fn compute_raw_messages<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &MemoryVars,
    memory: &MemoryState<F>,
    events: &[Event],
) -> Result<Vec<RawMessage>> {
    let mut out = Vec::with_capacity(events.len() * 2);
    let mut state_leaf = BTreeMap::new();
    for e in events {
        for &(target, other) in &[(e.src, e.dst), (e.dst, e.src)] {
            let last = memory.last_update(target);
            if e.t < last {
                return Err(Error::InvalidEvent(format!(
                    "event at t={} precedes node {target}'s last update {last}",
                    e.t
                )));
            }
            let s_t = *state_leaf.entry(target).or_insert_with(|| {
                tape.leaf(Tensor::vector(memory.state_row(target).to_vec()))
            });
            let s_o = *state_leaf
                .entry(other)
                .or_insert_with(|| tape.leaf(Tensor::vector(memory.state_row(other).to_vec())));
            let phi = encode_time(tape, &vars.time_enc, e.t - last)?;
            let cat = tape.concat(s_t, s_o, 0)?;
            let cat = tape.concat(cat, phi, 0)?;
            let payload = match &vars.msg_enc {
                None => cat,
                Some(enc) => {
                    let affine = tape.matmul(cat, enc.w)?;
                    let affine = tape.add(affine, enc.b)?;
                    tape.relu(affine)
                }
            };
            out.push(RawMessage {
                target,
                payload,
                time: e.t,
                event_id: e.event_id,
            });
        }
    }
    Ok(out)
}

/// Collapse a batch's messages per target node.
///
/// Mean: arithmetic mean of payloads, effective time = latest event time.
/// Last: payload of the greatest `(time, event_id)`, effective time = its
/// event time. Nodes with no messages are absent from the output.
pub fn aggregate<F: Scalar>(
    tape: &mut Tape<F>,
    messages: &[RawMessage],
    mode: Aggregator,
) -> Result<BTreeMap<NodeId, (Var, Time)>> {
    let mut grouped: BTreeMap<NodeId, Vec<&RawMessage>> = BTreeMap::new();
    for m in messages {
        grouped.entry(m.target).or_default().push(m);
    }
    let mut out = BTreeMap::new();
    for (node, msgs) in grouped {
        match mode {
            Aggregator::Mean => {
                let mut acc = msgs[0].payload;
                for m in &msgs[1..] {
                    acc = tape.add(acc, m.payload)?;
                }
                let mean = tape.scale(acc, F::from_f64(1.0 / msgs.len() as f64));
                let t_eff = msgs
                    .iter()
                    .map(|m| m.time)
                    .fold(f64::NEG_INFINITY, f64::max);
                out.insert(node, (mean, t_eff));
            }
            Aggregator::Last => {
                let latest = msgs
                    .iter()
                    .max_by(|a, b| {
                        a.time
                            .partial_cmp(&b.time)
                            .expect("finite times")
                            .then(a.event_id.cmp(&b.event_id))
                    })
                    .expect("nonempty group");
                out.insert(node, (latest.payload, latest.time));
            }
        }
    }
    Ok(out)
}

/// Run the GRU on each aggregated message against the committed state.
/// Returns the new state vars with their effective times; committed memory
/// is not modified (see [`commit_updates`]).
pub fn update_memory_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &MemoryVars,
    memory: &MemoryState<F>,
    aggregated: &BTreeMap<NodeId, (Var, Time)>,
) -> Result<BTreeMap<NodeId, (Var, Time)>> {
    let mut out = BTreeMap::new();
    for (&node, &(msg, t_eff)) in aggregated {
        if t_eff < memory.last_update(node) {
            return Err(Error::InvalidEvent(format!(
                "aggregated time {t_eff} precedes node {node}'s last update {}",
                memory.last_update(node)
            )));
        }
        let s_prev = tape.leaf(Tensor::vector(memory.state_row(node).to_vec()));
        let s_new = gru_step(tape, &vars.gru, msg, s_prev)?;
        out.insert(node, (s_new, t_eff));
    }
    Ok(out)
}

/// Write updated state values back into the memory.
pub fn commit_updates<F: Scalar>(
    tape: &Tape<F>,
    memory: &mut MemoryState<F>,
    updates: &BTreeMap<NodeId, (Var, Time)>,
) -> Result<()> {
    for (&node, &(var, t_eff)) in updates {
        let row = tape.value(var).data().to_vec();
        memory.set_row(node, &row, t_eff)?;
    }
    Ok(())
}

/// Numeric convenience: messages + aggregation + GRU + commit on a
/// throwaway tape, used when replaying events without gradients.
pub fn apply_events<F: Scalar>(
    params: &crate::model::ModelParams<F>,
    memory: &mut MemoryState<F>,
    events: &[Event],
    aggregator: Aggregator,
) -> Result<()> {
    if events.is_empty() {
        return Ok(());
    }
    let mut tape = Tape::new();
    let vars = params.bind_memory(&mut tape);
    let msgs = compute_raw_messages(&mut tape, &vars, memory, events)?;
    let agg = aggregate(&mut tape, &msgs, aggregator)?;
    let updates = update_memory_on_tape(&mut tape, &vars, memory, &agg)?;
    commit_updates(&tape, memory, &updates)
}
