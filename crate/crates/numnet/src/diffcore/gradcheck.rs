//! Finite-difference gradient checking.
//!
//! Central differences (f(x+h) - f(x-h)) / 2h against the tape's backward
//! pass, entry by entry, with a seeded sample of at most `sample_cap`
//! entries per parameter. Relative error uses max(|analytic|, |numeric|, 1)
//! as the denominator.

use super::params::ParamStore;
use super::tape::Gradients;
use super::DiffError;
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub finite: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub h: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.finite && p.max_rel_error <= self.tol)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.partial_cmp(&b.max_rel_error).unwrap())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "gradient check: h={:.1e} tol={:.1e}\n",
            self.h, self.tol
        ));
        for p in &self.params {
            let status = if p.finite && p.max_rel_error <= self.tol {
                "PASS"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "  [{status}] {:<28} entries={:<4} max_rel_err={:.3e}\n",
                p.name, p.entries_checked, p.max_rel_error
            ));
        }
        out.push_str(if self.passed() { "RESULT: PASS\n" } else { "RESULT: FAIL\n" });
        out
    }
}

/// Check analytic gradients of a deterministic scalar function of the
/// parameter store. `eval` recomputes the loss; `analytic` produces the
/// backward gradients once. Runs in whatever scalar width the store uses;
/// call it on an f64 store for reliable numerics.
pub fn grad_check(
    params: &mut ParamStore<f64>,
    eval: &mut dyn FnMut(&ParamStore<f64>) -> Result<f64, DiffError>,
    analytic: &mut dyn FnMut(&ParamStore<f64>) -> Result<Gradients<f64>, DiffError>,
    h: f64,
    tol: f64,
    sample_cap: usize,
    seed: u64,
) -> Result<GradCheckReport, DiffError> {
    let grads = analytic(params)?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut checks = Vec::with_capacity(names.len());
    let mut rng = RngStream::new(seed, "gradcheck-sample", 0);

    for name in names {
        let grad = grads.get(&name).ok_or_else(|| {
            DiffError::Contract(format!("grad_check: no gradient reported for '{name}'"))
        })?;
        let n = grad.len();
        let picks = rng.sample_indices(n, sample_cap.min(n));
        let mut max_rel = 0.0f64;
        let mut finite = true;
        for &flat in &picks {
            let orig = params.get(&name).data()[flat];
            params.get_mut(&name).data_mut()[flat] = orig + h;
            let plus = eval(params)?;
            params.get_mut(&name).data_mut()[flat] = orig - h;
            let minus = eval(params)?;
            params.get_mut(&name).data_mut()[flat] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[flat];
            if !numeric.is_finite() || !a.is_finite() {
                finite = false;
                max_rel = f64::INFINITY;
                break;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
        checks.push(ParamCheck {
            name,
            entries_checked: picks.len(),
            max_rel_error: max_rel,
            finite,
        });
    }
    Ok(GradCheckReport {
        params: checks,
        tol,
        h,
    })
}
