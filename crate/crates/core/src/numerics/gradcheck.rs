use std::fmt;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Settings for [`gradcheck`].
#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Central-difference step `h`.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Magnitudes below this are compared absolutely: the relative error is
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Restrict the check to these parameters (all when `None`).
    pub only: Option<Vec<ParamId>>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            only: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error > self.tolerance)
    }

    pub fn checked_entries(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            let flag = if p.max_rel_error <= self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<32} {:>6} entries  max_rel={:.3e}  max_abs={:.3e}  {flag}",
                p.name, p.entries, p.max_rel_error, p.max_abs_error
            )?;
        }
        write!(
            f,
            "max relative error {:.3e} (tolerance {:.1e}): {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn loss_value<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    g.value(loss)
        .scalar_value()
        .ok_or_else(|| Error::Contract("gradcheck function must return a scalar".into()))
}

/// Compares taped gradients of the scalar built by `f` against central
/// differences `(f(θ+h) - f(θ-h)) / 2h`, entry by entry.
///
/// Parameter values are restored exactly afterwards.
pub fn gradcheck<F>(store: &mut ParamStore, f: F, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if opts.step <= 0.0 {
        return Err(Error::Contract("gradcheck step must be positive".into()));
    }
    let analytic: Vec<(ParamId, Option<super::Matrix>)> = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        let grads = g.backward(loss)?;
        store
            .ids()
            .map(|id| (id, grads.param(id).cloned()))
            .collect()
    };

    let ids: Vec<ParamId> = match &opts.only {
        Some(list) => list.clone(),
        None => store.ids().collect(),
    };
    let mut report = GradcheckReport {
        params: Vec::with_capacity(ids.len()),
        tolerance: opts.tolerance,
    };
    for id in ids {
        let n = store.value(id).len();
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            entries: n,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for k in 0..n {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + opts.step;
            let plus = loss_value(store, &f);
            store.value_mut(id).data_mut()[k] = original - opts.step;
            let minus = loss_value(store, &f);
            store.value_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let taped = analytic[id.0].1.as_ref().map_or(0.0, |m| m.data()[k]);
            let abs = (taped - numeric).abs();
            let rel = abs / taped.abs().max(numeric.abs()).max(opts.floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
        }
        report.params.push(check);
    }
    Ok(report)
}
