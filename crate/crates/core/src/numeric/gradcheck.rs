//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, TensorError, Var};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|analytic − fd| / (|fd| + 1e-8)`.
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (fd.abs() + 1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<WorstEntry>,
}

impl GradCheckReport {
    /// True when every checked entry is within `tolerance`.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some(WorstEntry {
                name: name.to_string(),
                index,
                analytic,
                numeric,
            });
        }
    }
}

/// Checks gradients of `f` with respect to every entry of every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.gradients(loss)?;

    let eval = |vals: &[Tensor]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = vals.iter().map(|v| t.constant(v.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[which].shape()));
        for i in 0..inputs[which].len() {
            let orig = work[which].data()[i];
            work[which].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[which].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[which].data_mut()[i] = orig;
            report.record(
                &format!("input{which}"),
                i,
                analytic.data()[i],
                (up - down) / (2.0 * step),
            );
        }
    }
    Ok(report)
}

/// Checks parameter gradients of a scalar-valued `f`.
///
/// With `samples = Some(n)`, `n` entries are drawn uniformly (seeded) from the
/// flattened parameter set; otherwise every entry is checked.
pub fn check_params<F, E>(
    store: &mut ParamStore,
    mut f: F,
    samples: Option<usize>,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut flat: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in store.iter().enumerate() {
        flat.extend((0..p.value.len()).map(|i| (pi, i)));
    }
    let chosen: Vec<(usize, usize)> = match samples {
        Some(n) if n < flat.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picks = sample(&mut rng, flat.len(), n).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|j| flat[j]).collect()
        }
        _ => flat,
    };

    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheckReport::new();
    for (pi, i) in chosen {
        let id = ids[pi];
        let analytic = store.get(id).grad.data()[i];
        let orig = store.get(id).value.data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + step;
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        let up = t.value(l).item();
        store.get_mut(id).value.data_mut()[i] = orig - step;
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        let down = t.value(l).item();
        store.get_mut(id).value.data_mut()[i] = orig;
        let name = store.get(id).name.clone();
        report.record(&name, i, analytic, (up - down) / (2.0 * step));
    }
    Ok(report)
}
