//! Central-difference gradient verification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter; smaller tensors are checked fully.
    pub max_coords_per_param: usize,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero in both routes do not divide by zero.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_coords_per_param: 8,
            abs_floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares `analytic` gradients against `(f(θ+εe) − f(θ−εe)) / 2ε` for sampled
/// coordinates of every parameter named in `analytic`.
///
/// `f` must be deterministic; it is evaluated twice at the unperturbed point
/// and any mismatch is reported as an error. The store is restored exactly.
pub fn grad_check<F>(
    store: &mut ParameterStore,
    analytic: &Gradients,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let first = f(store)?;
    let second = f(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut rng = RngStream::new(cfg.seed, "grad-check");
    let mut params = Vec::with_capacity(analytic.len());
    for (name, grad) in analytic {
        let len = store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.clone()))?
            .len();
        if grad.len() != len {
            return Err(Error::Mismatch(format!(
                "gradient for `{name}` has {} entries, parameter has {len}",
                grad.len()
            )));
        }
        let coords = if len <= cfg.max_coords_per_param {
            (0..len).collect()
        } else {
            rng.sample_indices(len, cfg.max_coords_per_param)
        };

        let mut check = ParamCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for c in coords {
            let original = store.get(name).expect("checked").data()[c];
            store.get_mut(name).expect("checked").data_mut()[c] = original + cfg.eps;
            let plus = f(store);
            store.get_mut(name).expect("checked").data_mut()[c] = original - cfg.eps;
            let minus = f(store);
            store.get_mut(name).expect("checked").data_mut()[c] = original;
            let numeric = (plus? - minus?) / (2.0 * cfg.eps);
            let a = grad[c];
            let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
            let rel = (a - numeric).abs() / denom;
            if rel >= check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_coord = c;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }

    let coords_checked = params.iter().map(|p| p.coords_checked).sum();
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        coords_checked,
        max_rel_error,
        tol: cfg.tol,
    })
}
