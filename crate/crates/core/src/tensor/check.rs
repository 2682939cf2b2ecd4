//! Finite-difference gradient verification.

use super::Tensor;
use crate::error::Result;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A container of named learnable tensors. Implemented by the model's
/// parameter struct; keeps this module free of model-specific types.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn zero_grads(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.zero_grad();
        }
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Evaluation mode passed to the closure under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Only the scalar value is needed.
    ValueOnly,
    /// The closure must also accumulate d(value)/d(param) into each
    /// parameter's gradient buffer.
    ValueAndGrad,
}

/// Compares analytic gradients against central finite differences.
///
/// `f` evaluates a deterministic scalar of the parameters; in
/// [`GradMode::ValueAndGrad`] it must accumulate gradients into the
/// parameters' buffers. Up to `per_tensor` entries of each tensor are probed
/// (all of them when the tensor is small), chosen by the seeded rng. Returns
/// the maximum relative error `|analytic - cd| / max(|analytic|, |cd|, 1e-12)`.
pub fn grad_check<P, F>(
    mut f: F,
    params: &mut P,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<f64>
where
    P: ParamSet,
    F: FnMut(&mut P, GradMode) -> Result<f64>,
{
    params.zero_grads();
    f(params, GradMode::ValueAndGrad)?;
    let analytic: Vec<Vec<f64>> = params
        .tensors()
        .iter()
        .map(|(name, t)| {
            t.grad()
                .unwrap_or_else(|| panic!("parameter {name} has no gradient buffer"))
                .to_vec()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<Vec<usize>> = params
        .tensors()
        .iter()
        .map(|(_, t)| {
            let mut idx: Vec<usize> = (0..t.numel()).collect();
            if idx.len() > per_tensor {
                idx.shuffle(&mut rng);
                idx.truncate(per_tensor);
                idx.sort_unstable();
            }
            idx
        })
        .collect();

    let mut max_rel = 0.0f64;
    for (ti, entries) in plan.iter().enumerate() {
        for &ei in entries {
            let orig = params.tensors()[ti].1.data()[ei];
            params.tensors_mut()[ti].1.data_mut()[ei] = orig + eps;
            let up = f(params, GradMode::ValueOnly)?;
            params.tensors_mut()[ti].1.data_mut()[ei] = orig - eps;
            let down = f(params, GradMode::ValueOnly)?;
            params.tensors_mut()[ti].1.data_mut()[ei] = orig;

            let cd = (up - down) / (2.0 * eps);
            let a = analytic[ti][ei];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
