//! Central finite-difference oracle for graph gradients.
//!
//! The analytic side runs through [`Graph::backward`] at the precision under
//! test. The numeric side re-evaluates the forward pass in `f64` with
//! perturbed inputs, so it never touches the backward code.

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::{Real, Tensor};

/// Denominator floor for relative errors: `|a - n| / max(|a|, |n|, FLOOR)`.
pub const REL_FLOOR: f64 = 1e-3;

/// Scalar function of graph inputs, evaluable at any precision.
pub trait ScalarFn {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<Var>;
}

/// Scalar function of a parameter store (plus fixed data captured inside).
pub trait ParamFn {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var>;
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub probes: usize,
    pub max_rel_err: f64,
    /// `(analytic, numeric)` at the worst probe.
    pub worst: (f64, f64),
}

impl Report {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = rel_err(analytic, numeric);
        self.probes += 1;
        if err >= self.max_rel_err {
            self.max_rel_err = err;
            self.worst = (analytic, numeric);
        }
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn step_for(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

fn eval_inputs<F: ScalarFn>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f.eval(&mut g, &vars)?;
    g.value(out).item()
}

/// Compare analytic gradients at precision `T` with `f64` central differences
/// on `probes` randomly chosen input coordinates.
pub fn check_inputs<T: Real, F: ScalarFn>(
    f: &F,
    inputs: &[Tensor<f64>],
    probes: usize,
    rng: &mut Rng,
) -> Result<Report> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.cast())).collect();
    let out = f.eval(&mut g, &vars)?;
    let grads = g.backward(out)?;
    // Numeric side sees exactly the values the analytic side saw.
    let base: Vec<Tensor<f64>> = vars.iter().map(|&v| g.value(v).cast()).collect();
    let mut report = Report::default();
    for _ in 0..probes {
        let which = rng.below(base.len());
        let idx = rng.below(base[which].len());
        let analytic = grads.wrt(vars[which]).map_or(0.0, |t| t.data()[idx].as_f64());
        let x0 = base[which].data()[idx];
        let h = step_for(x0);
        let mut plus = base.clone();
        plus[which].data_mut()[idx] = x0 + h;
        let mut minus = base.clone();
        minus[which].data_mut()[idx] = x0 - h;
        let numeric = (eval_inputs(f, &plus)? - eval_inputs(f, &minus)?) / (2.0 * h);
        report.record(analytic, numeric);
    }
    Ok(report)
}

fn eval_params<F: ParamFn>(f: &F, store: &ParamStore<f64>) -> Result<f64> {
    let mut g = Graph::inference(store);
    let out = f.eval(&mut g)?;
    g.value(out).item()
}

/// Finite-difference check of parameter gradients. `probes` lists the
/// `(parameter, flat index)` coordinates to test.
pub fn check_params<T: Real, F: ParamFn>(
    f: &F,
    store: &ParamStore<T>,
    probes: &[(ParamId, usize)],
) -> Result<Report> {
    let grads = {
        let mut g = Graph::with_params(store);
        let out = f.eval(&mut g)?;
        g.backward(out)?
    };
    let base = store.cast::<f64>();
    let mut report = Report::default();
    for &(id, idx) in probes {
        let analytic = grads.param(id).map_or(0.0, |t| t.data()[idx].as_f64());
        let x0 = base.value(id).data()[idx];
        let h = step_for(x0);
        let mut plus = base.clone();
        plus.get_mut(id).value.data_mut()[idx] = x0 + h;
        let mut minus = base.clone();
        minus.get_mut(id).value.data_mut()[idx] = x0 - h;
        let numeric = (eval_params(f, &plus)? - eval_params(f, &minus)?) / (2.0 * h);
        report.record(analytic, numeric);
    }
    Ok(report)
}

/// Pick `n` random trainable `(parameter, index)` coordinates.
pub fn random_param_probes<T: Real>(store: &ParamStore<T>, n: usize, rng: &mut Rng) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    (0..n)
        .map(|_| {
            let id = ids[rng.below(ids.len())];
            (id, rng.below(store.value(id).len()))
        })
        .collect()
}
