//! Central finite-difference check of analytic gradients in `f64`.

/// Denominator floor for the relative error; components where both the
/// analytic and numeric gradient are below this are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose stencil left the smooth piece containing the point.
    pub skipped: usize,
    /// `(index, analytic, numeric)` for every checked coordinate.
    pub comparisons: Vec<(usize, f64, f64)>,
}

impl GradCheck {
    /// Worst relative error with the denominator floored at `floor` instead
    /// of [`REL_ERR_FLOOR`].
    pub fn max_rel_err_floored(&self, floor: f64) -> f64 {
        self.comparisons
            .iter()
            .map(|&(_, a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.comparisons.iter().map(|&(_, a, n)| (a - n).abs()).fold(0.0, f64::max)
    }
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// Only the coordinates in `coords` are probed (all of them when `None`).
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], step: f64, coords: Option<&[usize]>) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_piecewise(|x| (f(x), 0), point, analytic, step, coords)
}

/// Like [`grad_check`] for piecewise-smooth functions.
///
/// `f` returns the value and a signature of the active piece (for example a
/// hash of activation signs). A coordinate is skipped when either stencil
/// point lands on a different piece than `point`, since a central difference
/// across a kink does not estimate the derivative.
pub fn grad_check_piecewise<F>(mut f: F, point: &[f64], analytic: &[f64], step: f64, coords: Option<&[usize]>) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, u64),
{
    assert_eq!(point.len(), analytic.len(), "gradient length must match point");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let (_, piece) = f(point);
    let mut x = point.to_vec();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
        comparisons: Vec::new(),
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let (plus, p_plus) = f(&x);
        x[i] = orig - step;
        let (minus, p_minus) = f(&x);
        x[i] = orig;
        if p_plus != piece || p_minus != piece {
            out.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        out.checked += 1;
        out.comparisons.push((i, analytic[i], numeric));
        if err > out.max_rel_err || out.worst_index.is_none() {
            out.max_rel_err = err;
            out.worst_index = Some(i);
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}
