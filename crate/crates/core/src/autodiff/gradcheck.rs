//! Central finite-difference checking of reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::graph::{Graph, NodeId};
use crate::autodiff::params::{Param, ParamStore};
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Maximum accepted relative error.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor so vanishing gradients are compared absolutely.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
    /// Coordinates whose stencil crossed a kink and were replaced.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR)
}

fn eval<F>(store: &ParamStore<f64>, build: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    if g.value(loss).len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar loss".into()));
    }
    Ok((g.scalar(loss), g.kink_pattern()))
}

/// Compares analytic gradients of `build`'s scalar output against central
/// differences for every parameter in `store`.
///
/// Tensors with more than `max_coords` values are checked on a random subset
/// of that many coordinates. `build` must be deterministic.
pub fn check<F, R>(name: &str, store: &mut ParamStore<f64>, max_coords: usize, rng: &mut R, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
    R: Rng + ?Sized,
{
    check_against(name, store, max_coords, rng, &build, &build, |_| true)
}

/// Like [`check`], but differentiates `analytic` and finite-differences
/// `numeric`, restricted to the parameters `select` accepts.
///
/// This is how layers that deliberately alter their backward pass (gradient
/// reversal) are verified: `numeric` is the function whose true derivative the
/// altered gradient should equal.
///
/// A coordinate whose `+h` or `-h` evaluation flips any kink (see
/// [`Graph::kink_pattern`]) is not differentiable over the stencil; it is
/// skipped, counted, and replaced by another coordinate of the same tensor.
pub fn check_against<F, G, S, R>(
    name: &str,
    store: &mut ParamStore<f64>,
    max_coords: usize,
    rng: &mut R,
    analytic: F,
    numeric: G,
    select: S,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
    G: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
    S: Fn(&Param<f64>) -> bool,
    R: Rng + ?Sized,
{
    let grads: Vec<Vec<f64>> = {
        let mut g = Graph::new(&*store);
        let loss = analytic(&mut g)?;
        let grads = g.backward(loss)?;
        store
            .iter()
            .map(|(id, p)| grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
            .collect()
    };
    let (_, base_pattern) = eval(store, &numeric)?;

    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
        skipped_kinks: 0,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| select(p)).map(|(id, _)| id).collect();
    for id in ids {
        let len = store.tensor(id).len();
        let mut order: Vec<usize> = (0..len).collect();
        if len > max_coords {
            order.shuffle(rng);
        }
        let mut done = 0;
        for i in order {
            if done == max_coords {
                break;
            }
            let original = store.tensor(id).data()[i];
            store.get_mut(id).tensor.data_mut()[i] = original + FD_STEP;
            let (plus, plus_pattern) = eval(store, &numeric)?;
            store.get_mut(id).tensor.data_mut()[i] = original - FD_STEP;
            let (minus, minus_pattern) = eval(store, &numeric)?;
            store.get_mut(id).tensor.data_mut()[i] = original;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            done += 1;

            let fd = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(grads[id.index()][i], fd);
            report.coordinates += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.worst_values = (grads[id.index()][i], fd);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::ParamGroup;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_sum_gradient_is_outer_structure_of_input() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", ParamGroup::Head, Tensor::from_f64([2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap())
            .unwrap();
        let b = store.insert("b", ParamGroup::Head, Tensor::zeros([3])).unwrap();
        let x = Tensor::from_f64([2, 2], &[1.0, 2.0, -3.0, 0.5]).unwrap();
        let build = |g: &mut Graph<'_, f64>| {
            let xn = g.input(x.clone())?;
            let (wn, bn) = (g.param(w), g.param(b));
            let y = g.dense(xn, wn, bn)?;
            g.sum(y)
        };
        {
            let mut g = Graph::new(&store);
            let loss = build(&mut g).unwrap();
            let grads = g.backward(loss).unwrap();
            // dL/dW[i][j] = sum over batch of x[n][i]
            assert_eq!(grads.param(w).unwrap(), &[-2.0, -2.0, -2.0, 2.5, 2.5, 2.5]);
            assert_eq!(grads.param(b).unwrap(), &[2.0, 2.0, 2.0]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = check("dense", &mut store, 64, &mut rng, build).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn relative_error_uses_floor_for_tiny_values() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.0 + 1e-6) < 2e-6);
        assert!(relative_error(1e-9, 2e-9) < 1e-2);
    }
}
