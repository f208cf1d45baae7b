//! Finite-difference verification of analytic gradients in 64-bit mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn scalar_of(v: &Var<f64>) -> Result<f64> {
    let t = v.value();
    if t.len() != 1 {
        return Err(Error::Shape(format!("grad_check needs a scalar graph output, got {:?}", t.shape())));
    }
    let s = t.data()[0];
    if !s.is_finite() {
        return Err(Error::Numeric("non-finite graph output".into()));
    }
    Ok(s)
}

/// Compares gradients of the scalar graph `f` with respect to each input
/// flagged in `wrt` against central differences with step `eps`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], wrt: &[bool], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    if inputs.len() != wrt.len() {
        return Err(Error::Shape("one wrt flag per input required".into()));
    }
    if let Some(i) = inputs.iter().position(|t| !t.is_finite()) {
        return Err(Error::Numeric(format!("input {i} has non-finite entries")));
    }
    let vars: Vec<Var<f64>> = inputs
        .iter()
        .zip(wrt)
        .map(|(t, &g)| if g { Var::param(t.clone()) } else { Var::constant(t.clone()) })
        .collect();
    let out = f(&vars)?;
    scalar_of(&out)?;
    let grads = out.backward();
    drop(out);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe: Vec<Var<f64>> = inputs.iter().cloned().map(Var::constant).collect();
    for (i, input) in inputs.iter().enumerate() {
        if !wrt[i] {
            continue;
        }
        let analytic = grads
            .get(&vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        if !analytic.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for input {i}")));
        }
        let mut shifted = input.clone();
        for k in 0..input.len() {
            let orig = input.data()[k];
            shifted.data_mut()[k] = orig + eps;
            probe[i] = Var::constant(shifted.clone());
            let plus = scalar_of(&f(&probe)?)?;
            shifted.data_mut()[k] = orig - eps;
            probe[i] = Var::constant(shifted.clone());
            let minus = scalar_of(&f(&probe)?)?;
            shifted.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = rel_error(analytic.data()[k], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, k));
            }
        }
        probe[i] = Var::constant(input.clone());
    }
    Ok(report)
}

/// Uniform `[-1, 1)` tensor from a seed.
pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Random projection weights scaled by `1/sqrt(len)` for reducing an output
/// to a scalar.
pub fn projection_weights(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let t = random_tensor(shape, seed ^ 0x5eed);
    let scale = 1.0 / (t.len() as f64).sqrt();
    t.map(|v| v * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::kernels::{ConvSpec, Padding};
    use crate::nn::var;

    #[test]
    fn linear_graph_is_exact() {
        let x = random_tensor([2, 1, 1, 3], 1);
        let w = random_tensor([1, 1, 3, 4], 2);
        let b = random_tensor([1, 1, 1, 4], 3);
        let proj = projection_weights([2, 1, 1, 4], 4);
        let r = grad_check(
            |v| var::weighted_sum(&var::dense(&v[0], &v[1], &v[2])?, &proj),
            &[x, w, b],
            &[true, true, true],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coordinates, 6 + 12 + 4);
    }

    #[test]
    fn conv_tanh() {
        let x = random_tensor([1, 6, 6, 2], 5);
        let w = random_tensor([3, 3, 2, 3], 6);
        let b = random_tensor([1, 1, 1, 3], 7);
        let proj = projection_weights([1, 6, 6, 3], 8);
        let spec = ConvSpec::new(3, 3, 1, 1, Padding::Same);
        let r = grad_check(
            |v| var::weighted_sum(&var::tanh(&var::conv2d(&v[0], &v[1], &v[2], spec)?), &proj),
            &[x, w, b],
            &[true, true, true],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let mut x = random_tensor([1, 1, 1, 2], 1);
        x.data_mut()[0] = f64::NAN;
        let r = grad_check(|v| Ok(var::channel_sum(&v[0])), &[x], &[true], DEFAULT_EPS);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn overflowing_graph_is_numeric_error() {
        let x = Tensor::full([1, 1, 1, 1], 1e300);
        let w = Tensor::full([1, 1, 1, 1], 1e300);
        let b = Tensor::zeros([1, 1, 1, 1]);
        let r = grad_check(|v| var::dense(&v[0], &v[1], &v[2]), &[x, w, b], &[true, true, true], DEFAULT_EPS);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
