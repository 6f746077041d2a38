//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;

use super::graph::{Graph, ParamStore, Var};
use super::rng::seeded;
use crate::error::{Error, Result};

/// Which coordinates of each parameter to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// At most this many coordinates per parameter, chosen by a seeded RNG.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let v = g.value(loss).scalar().ok_or_else(|| {
        Error::Dimension(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            g.value(loss).shape()
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Validity(format!("loss is not finite: {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `f` with central differences of
/// step `epsilon` and returns the worst relative error found.
///
/// `f` must be deterministic: build it with dropout disabled.
pub fn gradcheck<F>(f: F, store: &ParamStore, epsilon: f64, coverage: Coverage) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss, store)?;
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut probe = store.clone();
    for id in 0..store.len() {
        let n = store.value(id).len();
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Sample { per_param, seed } => {
                let mut rng = seeded(seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut picked = sample(&mut rng, n, per_param.min(n)).into_vec();
                picked.sort_unstable();
                picked
            }
        };
        for c in coords {
            let original = store.value(id).data()[c];
            probe.value_mut(id).data_mut()[c] = original + epsilon;
            let plus = eval_loss(&f, &probe)?;
            probe.value_mut(id).data_mut()[c] = original - epsilon;
            let minus = eval_loss(&f, &probe)?;
            probe.value_mut(id).data_mut()[c] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[c]);
            let err = relative_error(analytic, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_owned();
                report.worst_index = c;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
