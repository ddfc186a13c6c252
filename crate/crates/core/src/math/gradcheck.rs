use serde::Serialize;

use super::{Gradients, MathError, ParamStore, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
    /// Blocks with no scalars.
    pub skipped: Vec<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(|b| !b.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `analytic` against central differences of `loss` for every
/// scalar in `params`. Each scalar is restored after probing.
pub fn grad_check<F>(
    params: &mut ParamStore,
    analytic: &Gradients,
    mut loss: F,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> f64,
{
    if options.step.is_nan() || options.step <= 0.0 {
        return Err(MathError::BadStep(options.step));
    }
    let first = loss(params);
    let second = loss(params);
    if first.to_bits() != second.to_bits() {
        return Err(MathError::NonDeterministic { first, second });
    }

    let ids: Vec<_> = params.ids().collect();
    let mut blocks = Vec::new();
    let mut skipped = Vec::new();
    for id in ids {
        let name = params.get(id).name.clone();
        let n = params.get(id).value.values().len();
        if n == 0 {
            skipped.push(name);
            continue;
        }
        let mut worst = BlockReport {
            name,
            scalars: n,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for k in 0..n {
            let original = params.get(id).value.values()[k];
            params.get_mut(id).value.values_mut()[k] = original + options.step;
            let plus = loss(params);
            params.get_mut(id).value.values_mut()[k] = original - options.step;
            let minus = loss(params);
            params.get_mut(id).value.values_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic.get(id)[k];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || k == 0 {
                worst.max_rel_error = err;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        worst.passed = worst.max_rel_error < options.tolerance;
        blocks.push(worst);
    }
    Ok(GradCheckReport {
        tolerance: options.tolerance,
        blocks,
        skipped,
    })
}
