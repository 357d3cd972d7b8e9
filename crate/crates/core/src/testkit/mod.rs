//! Test support shared by unit, integration and acceptance tests: the
//! finite-difference oracle, a primitive-op gradient suite, and a synthetic
//! restaurant-domain corpus in the bAbI dialog file format.

pub mod fixtures;
pub mod gradcheck;
pub mod synthetic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grad::{Activation, GradError, Tensor};
use gradcheck::{check_gradients, random_tensor, GradCheckReport};

/// Runs `trials` randomized finite-difference checks for every primitive op
/// and returns the worst report per op.
pub fn primitive_gradient_suite(
    trials: usize,
    seed: u64,
) -> Result<Vec<(&'static str, GradCheckReport)>, GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<(&'static str, GradCheckReport)> = Vec::new();
    let mut record = |name: &'static str, r: GradCheckReport| {
        match results.iter_mut().find(|(n, _)| *n == name) {
            Some((_, acc)) => {
                acc.max_rel_error = acc.max_rel_error.max(r.max_rel_error);
                acc.checked += r.checked;
            }
            None => results.push((name, r)),
        }
    };

    for trial in 0..trials {
        let s = seed.wrapping_add(trial as u64);
        let (m, k, n) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));

        let a = random_tensor(&mut rng, &[m, k], 1.0);
        let b = random_tensor(&mut rng, &[k, n], 1.0);
        record("matmul", check_gradients(&[a, b], s, |g, x| g.matmul(x[0], x[1]))?);

        let v = random_tensor(&mut rng, &[k], 1.0);
        let b = random_tensor(&mut rng, &[k, n], 1.0);
        record("matmul(vector)", check_gradients(&[v, b], s, |g, x| g.matmul(x[0], x[1]))?);

        let x = random_tensor(&mut rng, &[m, n], 1.0);
        let bias = random_tensor(&mut rng, &[n], 1.0);
        record("add_bias", check_gradients(&[x, bias], s, |g, x| g.add_bias(x[0], x[1]))?);

        let a = random_tensor(&mut rng, &[n], 1.0);
        let b = random_tensor(&mut rng, &[n], 1.0);
        record("add", check_gradients(&[a.clone(), b.clone()], s, |g, x| g.add(x[0], x[1]))?);
        record("mul", check_gradients(&[a, b], s, |g, x| g.mul(x[0], x[1]))?);

        for (name, kind) in [
            ("relu", Activation::Relu),
            ("tanh", Activation::Tanh),
            ("sigmoid", Activation::Sigmoid),
        ] {
            let x = random_tensor(&mut rng, &[m, n], 2.0);
            record(name, check_gradients(&[x], s, move |g, x| g.activation(kind, x[0]))?);
        }

        let mut parts: Vec<Tensor> = Vec::new();
        for _ in 0..rng.random_range(1..4) {
            let len = rng.random_range(1..4);
            parts.push(random_tensor(&mut rng, &[len], 1.0));
        }
        record("concat", check_gradients(&parts, s, |g, x| g.concat(x))?);

        let (t, d, w, f) =
            (rng.random_range(1..7), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        for (name, act) in [("conv1d_maxpool(relu)", Activation::Relu), ("conv1d_maxpool(identity)", Activation::Identity)] {
            let seq = random_tensor(&mut rng, &[t, d], 1.0);
            let filters = random_tensor(&mut rng, &[w, d, f], 1.0);
            let bias = random_tensor(&mut rng, &[f], 0.5);
            record(name, check_gradients(&[seq, filters, bias], s, move |g, x| g.conv1d_maxpool(x[0], x[1], x[2], act))?);
        }

        let (di, h) = (rng.random_range(1..4), rng.random_range(1..4));
        let lstm_inputs = [
            random_tensor(&mut rng, &[di], 1.0),
            random_tensor(&mut rng, &[2, h], 1.0),
            random_tensor(&mut rng, &[di, 4 * h], 1.0),
            random_tensor(&mut rng, &[h, 4 * h], 1.0),
            random_tensor(&mut rng, &[4 * h], 1.0),
        ];
        record("lstm_step", check_gradients(&lstm_inputs, s, |g, x| g.lstm_step(x[0], x[1], x[2], x[3], x[4]))?);
        // two chained steps exercise the state path
        record(
            "lstm_step(chained)",
            check_gradients(&lstm_inputs, s, |g, x| {
                let s1 = g.lstm_step(x[0], x[1], x[2], x[3], x[4])?;
                g.lstm_step(x[0], s1, x[2], x[3], x[4])
            })?,
        );
        let state = random_tensor(&mut rng, &[2, h], 1.0);
        record("lstm_hidden", check_gradients(&[state], s, |g, x| g.lstm_hidden(x[0]))?);

        let x = random_tensor(&mut rng, &[m, n], 1.0);
        record("dropout", check_gradients(&[x], s, |g, x| g.dropout(x[0], 0.7))?);

        let classes = rng.random_range(2..7);
        let logits = random_tensor(&mut rng, &[classes], 2.0);
        let gold = rng.random_range(0..classes);
        record("softmax_xent", check_gradients(std::slice::from_ref(&logits), s, move |g, x| g.softmax_xent(x[0], gold, None))?);
        let mut mask = vec![true; classes];
        let banned = (gold + 1) % classes;
        mask[banned] = false;
        record(
            "softmax_xent(masked)",
            check_gradients(&[logits], s, move |g, x| g.softmax_xent(x[0], gold, Some(&mask)))?,
        );

        let x = random_tensor(&mut rng, &[m, n], 1.0);
        record("sum", check_gradients(std::slice::from_ref(&x), s, |g, x| g.sum(x[0]))?);
        let factor = rng.random_range(-2.0..2.0);
        record("scale", check_gradients(&[x], s, move |g, x| g.scale(x[0], factor))?);
        let scalars: Vec<Tensor> = (0..3).map(|_| Tensor::scalar(rng.random_range(-1.0..1.0))).collect();
        record("mean", check_gradients(&scalars, s, |g, x| g.mean(x))?);
    }
    Ok(results)
}
