//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grad::{GradError, Graph, Mode, NodeId, ParamStore, Tensor};

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor: gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic input gradients of `build` against central differences.
///
/// `build` receives the graph and one `input` node per tensor in `inputs` and
/// returns any output node; the output is projected onto a fixed random
/// direction to get a scalar loss. The graph is rebuilt in train mode with the
/// same `seed` for every evaluation so dropout masks stay fixed.
pub fn check_gradients<F>(inputs: &[Tensor], seed: u64, build: F) -> Result<GradCheckReport, GradError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, GradError>,
{
    let store = ParamStore::new();
    let eval = |values: &[Tensor]| -> Result<(f64, Option<crate::grad::Gradients>, Vec<NodeId>), GradError> {
        let mut g = Graph::new(&store, Mode::Train, seed);
        let ids = values.iter().map(|t| g.input(t.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = build(&mut g, &ids)?;
        let shape = g.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let n: usize = shape.iter().product();
        let dir = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let dir = g.constant(dir)?;
        let prod = g.mul(out, dir)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss).item();
        Ok((value, Some(g.backward(loss)?), ids))
    };

    let (_, grads, ids) = eval(inputs)?;
    let grads = grads.expect("backward ran");
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0 };
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.input(ids[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            let numeric = (eval(&plus)?.0 - eval(&minus)?.0) / (2.0 * FD_STEP);
            let err = relative_error(analytic.data()[k], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Uniform random tensor in `[-scale, scale)`.
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect())
        .expect("shape and data agree")
}
