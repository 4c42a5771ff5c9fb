//! Central finite-difference verification of tape gradients.

use crate::tensor::Tensor;

use super::{NodeId, Tape};

/// Builds a scalar-rooted graph from leaf tensors. The builder must push the
/// leaves in order and return the scalar root.
pub type GraphBuilder = dyn Fn(&mut Tape<f64>, &[NodeId]) -> NodeId;

/// Relative error between analytic and finite-difference values:
/// |a - f| / max(|a|, |f|, floor).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Max relative error over every entry of every input tensor, comparing
/// analytic gradients with central differences of the rebuilt graph.
pub fn max_grad_error(build: &GraphBuilder, inputs: &[Tensor<f64>], eps: f64) -> f64 {
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.value(root).data()[0]
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &ids);
    let grads = tape.backward(root);

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let analytic = grads.of(ids[ti], input.shape());
        for ei in 0..input.len() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let plus = eval(&work);
            work[ti].data_mut()[ei] = orig - eps;
            let minus = eval(&work);
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.data()[ei], numeric, 1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
