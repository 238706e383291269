use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Compare analytic gradients against central finite differences.
///
/// `f` builds a scalar-valued expression from leaves inserted for each
/// input. Runs in f64 only; returns the maximum relative error over all
/// input coordinates.
pub fn grad_check<Fun>(f: Fun, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |points: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut max_err = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).cloned();
        for j in 0..input.len() {
            let x = input.data()[j];
            work[i].data_mut()[j] = x + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (fp - fm) / (2.0 * h);
            let ana = analytic.as_ref().map_or(0.0, |g| g.data()[j]);
            let denom = numeric.abs().max(ana.abs()).max(1e-6);
            max_err = max_err.max((numeric - ana).abs() / denom);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_error() {
        let x = Tensor::scalar(0.3);
        let err = grad_check(|tape, vars| Ok(tape.scale(vars[0], 1.0)), &[x], 1e-5).unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        let mut rng = 0x12345u64;
        let mut next = || {
            // xorshift, plenty for test data
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng % 2000) as f64 / 1000.0 - 1.0
        };
        let a = Tensor::from_vec(&[4, 4], (0..16).map(|_| next()).collect()).unwrap();
        let b = Tensor::from_vec(&[4, 4], (0..16).map(|_| next()).collect()).unwrap();
        let c = Tensor::from_vec(&[4, 4], (0..16).map(|_| next()).collect()).unwrap();
        let err = grad_check(
            |tape, vars| {
                let ab = tape.matmul(vars[0], vars[1])?;
                let s = tape.tanh(ab);
                let abc = tape.matmul(s, vars[2])?;
                let sq = tape.mul(abc, abc)?;
                Ok(tape.sum(sq))
            },
            &[a, b, c],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn detects_wrong_backward_rule() {
        // Sensitivity check: the closure reports a 5%-off value on every
        // call after the first, so the analytic pass and the numeric evals
        // see inconsistent functions. The harness must flag it.
        use std::cell::Cell;
        let x = Tensor::vector(vec![0.7, -0.4, 1.2]);
        let first = Cell::new(true);
        let err = grad_check(
            |tape, vars| {
                let y = tape.tanh(vars[0]);
                let s = tape.sum(y);
                let c = if first.replace(false) { 1.0 } else { 1.05 };
                Ok(tape.scale(s, c))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "harness failed to detect mutation: {err}");
    }
}
