use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdError, Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients of a scalar-valued graph against central
/// finite differences at 64-bit precision.
///
/// `build` must be deterministic (no fresh dropout masks) and is re-run
/// twice per checked coordinate. Up to `max_coords_per_param` coordinates
/// of each parameter are checked, sampled without replacement using `seed`
/// (0 checks every coordinate). The relative error of a coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<B>(
    store: &mut ParamStore<f64>,
    mut build: B,
    eps: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, AdError>
where
    B: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    let eval = |store: &ParamStore<f64>, build: &mut B| -> Result<f64, AdError> {
        let mut g = Graph::new();
        let loss = build(&mut g, store);
        Ok(g.value(loss)?.item())
    };

    let mut graph = Graph::new();
    let loss = build(&mut graph, store);
    let analytic = graph.backward(loss)?;
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_err = 0.0f64;
    let mut coords_checked = 0usize;
    for idx in 0..store.len() {
        let id = ParamId(idx);
        let len = store.value(id).len();
        let mut coords: Vec<usize> = (0..len).collect();
        if max_coords_per_param > 0 && len > max_coords_per_param {
            coords.shuffle(&mut rng);
            coords.truncate(max_coords_per_param);
        }
        for c in coords {
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + eps;
            let plus = eval(store, &mut build)?;
            store.value_mut(id).data_mut()[c] = orig - eps;
            let minus = eval(store, &mut build)?;
            store.value_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[c]);
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            coords_checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        coords_checked,
    })
}
