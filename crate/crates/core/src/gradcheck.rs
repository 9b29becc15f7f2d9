//! Central finite differences, the reference the tape's gradients are checked against.

use crate::autodiff::{Graph, Parameter, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate `i`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor<f64>) -> f64, at: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let mut probe = at.clone();
    let mut grad = Tensor::zeros(at.shape());
    for i in 0..at.numel() {
        let x0 = at.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = f(&probe);
        probe.data_mut()[i] = x0 - eps;
        let down = f(&probe);
        probe.data_mut()[i] = x0;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Five-point stencil
/// `(-f(x + 2 eps) + 8 f(x + eps) - 8 f(x - eps) + f(x - 2 eps)) / (12 eps)`;
/// truncation error is fourth order, so larger steps keep roundoff low.
pub fn finite_diff_grad5(mut f: impl FnMut(&Tensor<f64>) -> f64, at: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let mut probe = at.clone();
    let mut grad = Tensor::zeros(at.shape());
    for i in 0..at.numel() {
        let x0 = at.data()[i];
        let mut eval = |d: f64| {
            probe.data_mut()[i] = x0 + d;
            f(&probe)
        };
        let v = -eval(2.0 * eps) + 8.0 * eval(eps) - 8.0 * eval(-eps) + eval(-2.0 * eps);
        probe.data_mut()[i] = x0;
        grad.data_mut()[i] = v / (12.0 * eps);
    }
    grad
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`: the error relative to the
/// reference gradient's scale.
pub fn relative_error(a: &Tensor<f64>, reference: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(a.shape(), reference.shape());
    let diff = a
        .data()
        .iter()
        .zip(reference.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    diff / reference.max_abs().max(floor)
}

/// Compares tape gradients of `loss` against five-point differences for every
/// parameter in `params`. Returns the relative error of the whole gradient
/// vector: the largest absolute deviation over all parameters divided by the
/// largest reference magnitude.
pub fn check_parameters(
    params: &[Parameter<f64>],
    eps: f64,
    loss: impl Fn(&Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |ps: &[Parameter<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let l = loss(&tape, &vars)?;
        let v = tape.value_ref(l).item();
        Ok(v)
    };
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let l = loss(&tape, &vars)?;
    let grads = tape.backward(l)?;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (k, p) in params.iter().enumerate() {
        let analytic = &grads.iter().find(|(n, _)| *n == p.name).expect("registered").1;
        let mut probe = params.to_vec();
        let mut failed = None;
        let numeric = finite_diff_grad5(
            |t| {
                probe[k].value = t.clone();
                eval(&probe).unwrap_or_else(|e| {
                    failed.get_or_insert(e);
                    f64::NAN
                })
            },
            &p.value,
            eps,
        );
        if let Some(e) = failed {
            return Err(e);
        }
        scale = scale.max(numeric.max_abs());
        diff = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, b)| (a - b).abs())
            .fold(diff, f64::max);
    }
    Ok(diff / scale.max(1e-8))
}
