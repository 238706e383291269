//! Single-layer multi-head graph transformer convolution over temporal
//! neighbors. Queries come from the center node's memory; keys and values
//! mix neighbor memory with the encoded edge recency, scaled by 1/sqrt(d).

use crate::error::{Error, Result};
use crate::graph::{NodeId, Time};
use crate::memory::{encode_time, TimeEncoderVars};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// One attention head: `w1..w4` map memory to the head dimension, `w6`
/// maps the time encoding. The same `w6` feeds both key and value.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<F: Scalar> {
    pub w1: Tensor<F>,
    pub w2: Tensor<F>,
    pub w3: Tensor<F>,
    pub w4: Tensor<F>,
    pub w6: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<F: Scalar> {
    pub heads: Vec<HeadParams<F>>,
    /// `[h * d_head, d_out]`, combines concatenated head outputs.
    pub combiner: Tensor<F>,
}

impl<F: Scalar> TransformerParams<F> {
    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn d_head(&self) -> usize {
        self.heads[0].w1.cols()
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> TransformerVars {
        TransformerVars {
            heads: self
                .heads
                .iter()
                .map(|h| HeadVars {
                    w1: tape.leaf(h.w1.clone()),
                    w2: tape.leaf(h.w2.clone()),
                    w3: tape.leaf(h.w3.clone()),
                    w4: tape.leaf(h.w4.clone()),
                    w6: tape.leaf(h.w6.clone()),
                })
                .collect(),
            combiner: tape.leaf(self.combiner.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w1: Var,
    pub w2: Var,
    pub w3: Var,
    pub w4: Var,
    pub w6: Var,
}

#[derive(Debug, Clone)]
pub struct TransformerVars {
    pub heads: Vec<HeadVars>,
    pub combiner: Var,
}

/// A temporal neighbor as produced by the graph store: id, event time, and
/// the positive gap to the query time.
pub type Neighbor = (NodeId, Time, f64);

fn head_terms<F: Scalar>(
    tape: &mut Tape<F>,
    head: &HeadVars,
    s_j: Var,
    phi: Var,
) -> Result<(Var, Var)> {
    let w6phi = tape.matmul(phi, head.w6)?;
    let kj = tape.matmul(s_j, head.w4)?;
    let key = tape.add(kj, w6phi)?;
    let vj = tape.matmul(s_j, head.w2)?;
    let value = tape.add(vj, w6phi)?;
    Ok((key, value))
}

/// Embed one node at query time `t`. `state_of` supplies the (possibly
/// tape-updated) memory row for any node id. With no neighbors only the
/// skip path contributes.
pub fn embed<F: Scalar>(
    tape: &mut Tape<F>,
    params: &TransformerVars,
    time_enc: &TimeEncoderVars,
    state_of: &mut dyn FnMut(&mut Tape<F>, NodeId) -> Var,
    node: NodeId,
    neighbors: &[Neighbor],
) -> Result<Var> {
    let s_i = state_of(tape, node);
    let neighbor_states: Vec<Var> = neighbors
        .iter()
        .map(|&(j, _, _)| state_of(tape, j))
        .collect();
    let phis: Vec<Var> = neighbors
        .iter()
        .map(|&(_, _, dt)| encode_time(tape, time_enc, dt))
        .collect::<Result<_>>()?;

    let mut head_outputs: Option<Var> = None;
    for head in &params.heads {
        let skip = tape.matmul(s_i, head.w1)?;
        let out = if neighbors.is_empty() {
            skip
        } else {
            let d_head = tape.value(skip).len();
            let inv_sqrt_d = F::from_f64(1.0 / (d_head as f64).sqrt());
            let q = tape.matmul(s_i, head.w3)?;
            let mut logits: Option<Var> = None;
            let mut values = Vec::with_capacity(neighbors.len());
            for (&s_j, &phi) in neighbor_states.iter().zip(&phis) {
                let (key, value) = head_terms(tape, head, s_j, phi)?;
                let logit = tape.dot(q, key)?;
                let logit = tape.scale(logit, inv_sqrt_d);
                logits = Some(match logits {
                    None => logit,
                    Some(acc) => tape.concat(acc, logit, 0)?,
                });
                values.push(value);
            }
            let alpha = tape.softmax(logits.expect("nonempty neighbors"), 0)?;
            let mut acc = skip;
            for (j, &value) in values.iter().enumerate() {
                let a_j = tape.gather(alpha, &[j])?;
                let weighted = tape.mul(a_j, value)?;
                acc = tape.add(acc, weighted)?;
            }
            acc
        };
        head_outputs = Some(match head_outputs {
            None => out,
            Some(acc) => tape.concat(acc, out, 0)?,
        });
    }
    let cat = head_outputs.expect("at least one head");
    let out = tape.matmul(cat, params.combiner)?;
    if tape.value(out).data().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite embedding for node {node}"
        )));
    }
    Ok(out)
}

/// Per-head attention coefficient vectors over `neighbors` (diagnostic).
/// Empty neighbor list yields empty vectors.
pub fn attention_weights<F: Scalar>(
    tape: &mut Tape<F>,
    params: &TransformerVars,
    time_enc: &TimeEncoderVars,
    state_of: &mut dyn FnMut(&mut Tape<F>, NodeId) -> Var,
    node: NodeId,
    neighbors: &[Neighbor],
) -> Result<Vec<Vec<F>>> {
    if neighbors.is_empty() {
        return Ok(vec![Vec::new(); params.heads.len()]);
    }
    let s_i = state_of(tape, node);
    let neighbor_states: Vec<Var> = neighbors
        .iter()
        .map(|&(j, _, _)| state_of(tape, j))
        .collect();
    let phis: Vec<Var> = neighbors
        .iter()
        .map(|&(_, _, dt)| encode_time(tape, time_enc, dt))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let q = tape.matmul(s_i, head.w3)?;
        let d_head = tape.value(q).len();
        let inv_sqrt_d = F::from_f64(1.0 / (d_head as f64).sqrt());
        let mut logits: Option<Var> = None;
        for (&s_j, &phi) in neighbor_states.iter().zip(&phis) {
            let (key, _) = head_terms(tape, head, s_j, phi)?;
            let logit = tape.dot(q, key)?;
            let logit = tape.scale(logit, inv_sqrt_d);
            logits = Some(match logits {
                None => logit,
                Some(acc) => tape.concat(acc, logit, 0)?,
            });
        }
        let alpha = tape.softmax(logits.expect("nonempty"), 0)?;
        out.push(tape.value(alpha).data().to_vec());
    }
    Ok(out)
}
