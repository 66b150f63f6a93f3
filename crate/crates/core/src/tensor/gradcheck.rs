use super::{Gradients, ParamId, ParamStore, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares analytic gradients with five-point central differences of
/// `loss`, whose truncation error is fourth order in `step`.
///
/// `params` may use a different precision than `analytic`; evaluating the
/// loss in `f64` gives an oracle for gradients computed in `f32`. An empty
/// `coords` checks every coordinate.
pub fn finite_diff_check<U, A, E, F>(
    params: &ParamStore<U>,
    analytic: &Gradients<A>,
    mut loss: F,
    step: f64,
    coords: &[(ParamId, usize)],
) -> Result<GradCheckReport, E>
where
    U: Scalar,
    A: Scalar,
    F: FnMut(&ParamStore<U>) -> Result<f64, E>,
{
    let all: Vec<(ParamId, usize)>;
    let coords = if coords.is_empty() {
        all = params
            .iter()
            .flat_map(|(id, _, t)| (0..t.len()).map(move |i| (id, i)))
            .collect();
        &all[..]
    } else {
        coords
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for &(id, i) in coords {
        let orig = params.get(id).data()[i];
        let mut at = |k: f64| {
            work.get_mut(id).data_mut()[i] = U::of(orig.as_f64() + k * step);
            loss(&work)
        };
        let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        work.get_mut(id).data_mut()[i] = orig;

        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
        let a = analytic.get(id).data()[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((params.name(id).to_string(), i));
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
