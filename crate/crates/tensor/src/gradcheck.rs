//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::param::{GradStore, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` against the fourth-order central
/// difference `(8(f(x+ε) − f(x−ε)) − (f(x+2ε) − f(x−2ε))) / 12ε` for every
/// coordinate of every non-frozen parameter in `store`. The higher order
/// allows a larger ε, which keeps round-off small on tiny gradients.
///
/// Each coordinate is differenced at 10ε, ε, ε/10 and ε/100 and the
/// closest estimate counts: a stencil that straddles a kink (`abs`,
/// `clamp`) is wrong at the larger steps only, round-off on a tiny
/// gradient swamps the smaller ones only, while a wrong analytic gradient
/// disagrees at every step.
///
/// `f` must be deterministic: any randomness (dropout masks, latent noise)
/// has to be re-seeded identically on every call.
pub fn grad_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let mut grads = GradStore::new(store);
    tape.backward_into(loss, &mut grads)?;
    tape.clear();

    let mut probe = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape, s)?;
        Ok(tape.value(v).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().filter(|&id| !store.is_frozen(id)).collect();
    for id in ids {
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data()[k];
            let mut at = |delta: f64| -> Result<f64> {
                probe.get_mut(id).data_mut()[k] = orig + delta;
                eval(&probe)
            };
            let mut stencil = |h: f64| -> Result<f64> {
                let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
                Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
            };
            let analytic = grads.get(id).data()[k];
            let mut err = f64::INFINITY;
            for h in [10.0 * eps, eps, eps / 10.0, eps / 100.0] {
                err = err.min(relative_error(analytic, stencil(h)?));
            }
            probe.get_mut(id).data_mut()[k] = orig;
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
