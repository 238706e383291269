//! Recommendation head: two-tower affine scoring of (source, destination)
//! embedding pairs, uniform negative sampling, and the logit-space
//! binary cross-entropy loss.

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<F: Scalar> {
    /// `[d_out, d_dec]`
    pub w_src: Tensor<F>,
    pub b_src: Tensor<F>,
    pub w_dst: Tensor<F>,
    pub b_dst: Tensor<F>,
    /// `[2 * d_dec, 1]`
    pub w_out: Tensor<F>,
    pub b_out: Tensor<F>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub w_src: Var,
    pub b_src: Var,
    pub w_dst: Var,
    pub b_dst: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl<F: Scalar> DecoderParams<F> {
    pub fn bind(&self, tape: &mut Tape<F>) -> DecoderVars {
        DecoderVars {
            w_src: tape.leaf(self.w_src.clone()),
            b_src: tape.leaf(self.b_src.clone()),
            w_dst: tape.leaf(self.w_dst.clone()),
            b_dst: tape.leaf(self.b_dst.clone()),
            w_out: tape.leaf(self.w_out.clone()),
            b_out: tape.leaf(self.b_out.clone()),
        }
    }
}

/// `W_out · ReLU(concat(W_i · src + b_i, W_j · dst + b_j)) + b_out`,
/// a scalar logit.
pub fn score<F: Scalar>(
    tape: &mut Tape<F>,
    dec: &DecoderVars,
    src_emb: Var,
    dst_emb: Var,
) -> Result<Var> {
    let s = tape.matmul(src_emb, dec.w_src)?;
    let s = tape.add(s, dec.b_src)?;
    let d = tape.matmul(dst_emb, dec.w_dst)?;
    let d = tape.add(d, dec.b_dst)?;
    let cat = tape.concat(s, d, 0)?;
    let act = tape.relu(cat);
    let out = tape.matmul(act, dec.w_out)?;
    tape.add(out, dec.b_out)
}

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate<F: Scalar> {
    pub dst: NodeId,
    /// Raw logit, unbounded.
    pub score: F,
    pub probability: F,
}

/// Uniform negatives over `0..universe`, `k` per positive, resampled on
/// collision with that positive's true destination.
pub fn sample_negatives(
    positives: &[NodeId],
    k: usize,
    universe: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<NodeId>>> {
    if universe <= 1 {
        return Err(Error::InvalidArgument(format!(
            "negative sampling needs a universe larger than 1, got {universe}"
        )));
    }
    Ok(positives
        .iter()
        .map(|&pos| {
            (0..k)
                .map(|_| loop {
                    let cand = rng.random_range(0..universe);
                    if cand != pos {
                        break cand;
                    }
                })
                .collect()
        })
        .collect())
}

/// Mean of `-log sigma(pos)` plus mean of `-log(1 - sigma(neg))`, computed
/// in logit space via softplus.
pub fn bce_loss<F: Scalar>(tape: &mut Tape<F>, pos: &[Var], neg: &[Var]) -> Result<Var> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "bce_loss requires at least one positive and one negative logit".into(),
        ));
    }
    let stack = |tape: &mut Tape<F>, logits: &[Var]| -> Result<Var> {
        let mut acc = logits[0];
        for &l in &logits[1..] {
            acc = tape.concat(acc, l, 0)?;
        }
        Ok(acc)
    };
    let pos_stack = stack(tape, pos)?;
    let neg_stack = stack(tape, neg)?;
    let neg_pos = tape.neg(pos_stack);
    let pos_term = tape.softplus(neg_pos); // -log sigma(x) = softplus(-x)
    let neg_term = tape.softplus(neg_stack); // -log(1 - sigma(x)) = softplus(x)
    let pm = tape.mean(pos_term);
    let nm = tape.mean(neg_term);
    tape.add(pm, nm)
}

/// Rank candidates by a scoring function: logit descending, ties broken by
/// node id ascending; returns the top `k`.
pub fn rank_candidates<F: Scalar>(
    candidates: &[NodeId],
    k: usize,
    mut scorer: impl FnMut(NodeId) -> Result<F>,
) -> Result<Vec<ScoredCandidate<F>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    let mut scored: Vec<ScoredCandidate<F>> = candidates
        .iter()
        .map(|&dst| {
            let s = scorer(dst)?;
            let probability = F::one() / (F::one() + (-s).exp());
            Ok(ScoredCandidate {
                dst,
                score: s,
                probability,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.dst.cmp(&b.dst))
    });
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dec_scalar() -> DecoderParams<f64> {
        DecoderParams {
            w_src: Tensor::scalar(1.0),
            b_src: Tensor::zeros(&[1]),
            w_dst: Tensor::scalar(1.0),
            b_dst: Tensor::zeros(&[1]),
            w_out: Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap(),
            b_out: Tensor::zeros(&[1]),
        }
    }

    #[test]
    fn zero_output_weights_give_bias() {
        let mut dec = dec_scalar();
        dec.w_out = Tensor::zeros(&[2, 1]);
        let mut tape = Tape::new();
        let dv = dec.bind(&mut tape);
        let s = tape.leaf(Tensor::scalar(2.0));
        let d = tape.leaf(Tensor::scalar(3.0));
        let out = score(&mut tape, &dv, s, d).unwrap();
        assert_eq!(tape.value(out).item(), 0.0);
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let dec = dec_scalar();
        let mut tape = Tape::new();
        let dv = dec.bind(&mut tape);
        let s = tape.leaf(Tensor::scalar(-2.0));
        let d = tape.leaf(Tensor::scalar(-3.0));
        let out = score(&mut tape, &dv, s, d).unwrap();
        assert_eq!(tape.value(out).item(), 0.0);
    }

    #[test]
    fn scalar_towers_hand_computed() {
        let dec = dec_scalar();
        let mut tape = Tape::new();
        let dv = dec.bind(&mut tape);
        let s = tape.leaf(Tensor::scalar(2.0));
        let d = tape.leaf(Tensor::scalar(3.0));
        let out = score(&mut tape, &dv, s, d).unwrap();
        assert_eq!(tape.value(out).item(), 5.0);
    }

    #[test]
    fn forced_negative_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = sample_negatives(&[1], 1, 2, &mut rng).unwrap();
        assert_eq!(negs, vec![vec![0]]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            sample_negatives(&[3, 7, 3], 5, 50, &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn tiny_universe_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_negatives(&[0], 1, 1, &mut rng).is_err());
    }

    #[test]
    fn sampling_uniform_within_three_sigma() {
        let universe = 20;
        let positive = 5;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let negs = sample_negatives(&vec![positive; n], 1, universe, &mut rng).unwrap();
        let mut counts = vec![0usize; universe];
        for ns in &negs {
            counts[ns[0]] += 1;
        }
        assert_eq!(counts[positive], 0);
        let p = 1.0 / (universe - 1) as f64;
        let expect = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            if i == positive {
                continue;
            }
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma,
                "bin {i}: {c} vs {expect} ± {sigma}"
            );
        }
    }

    #[test]
    fn bce_all_zero_logits() {
        let mut tape = Tape::<f64>::new();
        let z1 = tape.leaf(Tensor::scalar(0.0));
        let z2 = tape.leaf(Tensor::scalar(0.0));
        let loss = bce_loss(&mut tape, &[z1], &[z2]).unwrap();
        assert!((tape.value(loss).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_confident_correct_predictions_vanish() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::scalar(30.0));
        let n = tape.leaf(Tensor::scalar(-30.0));
        let loss = bce_loss(&mut tape, &[p], &[n]).unwrap();
        assert!(tape.value(loss).item() < 1e-10);
    }

    #[test]
    fn bce_matches_direct_formula_on_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pos: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let neg: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut tape = Tape::<f64>::new();
            let pv: Vec<Var> = pos.iter().map(|&x| tape.leaf(Tensor::scalar(x))).collect();
            let nv: Vec<Var> = neg.iter().map(|&x| tape.leaf(Tensor::scalar(x))).collect();
            let loss = bce_loss(&mut tape, &pv, &nv).unwrap();
            let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
            let direct = pos.iter().map(|&x| -(sig(x).ln())).sum::<f64>() / pos.len() as f64
                + neg.iter().map(|&x| -((1.0 - sig(x)).ln())).sum::<f64>() / neg.len() as f64;
            assert!((tape.value(loss).item() - direct).abs() < 1e-10);
            assert!(tape.value(loss).item() >= 0.0);
        }
    }

    #[test]
    fn bce_rejects_empty_sides() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::scalar(0.0));
        assert!(bce_loss(&mut tape, &[], &[p]).is_err());
        assert!(bce_loss(&mut tape, &[p], &[]).is_err());
    }

    #[test]
    fn bce_gradient_through_score_matches_finite_differences() {
        use crate::tensor::grad_check;
        let err = grad_check(
            |tape, vars| {
                let dv = DecoderVars {
                    w_src: vars[0],
                    b_src: vars[1],
                    w_dst: vars[2],
                    b_dst: vars[3],
                    w_out: vars[4],
                    b_out: vars[5],
                };
                let pos = score(tape, &dv, vars[6], vars[7])?;
                let neg = score(tape, &dv, vars[6], vars[8])?;
                bce_loss(tape, &[pos], &[neg])
            },
            &[
                Tensor::from_vec(&[2, 2], vec![0.3, -0.4, 0.5, 0.2]).unwrap(),
                Tensor::vector(vec![0.1, -0.1]),
                Tensor::from_vec(&[2, 2], vec![-0.2, 0.6, 0.4, -0.3]).unwrap(),
                Tensor::vector(vec![0.05, 0.15]),
                Tensor::from_vec(&[4, 1], vec![0.7, -0.5, 0.3, 0.9]).unwrap(),
                Tensor::vector(vec![0.0]),
                Tensor::vector(vec![0.8, -0.6]),
                Tensor::vector(vec![0.4, 0.9]),
                Tensor::vector(vec![-0.7, 0.2]),
            ],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn ranking_full_list_and_ties() {
        let scores = [(0, 1.0), (1, 3.0), (2, 3.0), (3, -1.0)];
        let ranked = rank_candidates(&[0, 1, 2, 3], 10, |v| {
            Ok(scores.iter().find(|(id, _)| *id == v).unwrap().1)
        })
        .unwrap();
        let order: Vec<NodeId> = ranked.iter().map(|c| c.dst).collect();
        assert_eq!(order, vec![1, 2, 0, 3]); // tie at 3.0 broken by id
        assert_eq!(ranked.len(), 4);
        assert!(rank_candidates(&[0], 0, |_| Ok(1.0f64)).is_err());
    }

    #[test]
    fn ranking_agrees_with_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let candidates: Vec<NodeId> = (0..100).collect();
            let scores: Vec<f64> = (0..100)
                .map(|_| (rng.random_range(-10..10) as f64) / 2.0) // force ties
                .collect();
            let ranked = rank_candidates(&candidates, 10, |v| Ok(scores[v])).unwrap();
            let mut oracle: Vec<(f64, NodeId)> =
                candidates.iter().map(|&v| (scores[v], v)).collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for (r, o) in ranked.iter().zip(&oracle) {
                assert_eq!(r.dst, o.1);
            }
        }
    }
}
