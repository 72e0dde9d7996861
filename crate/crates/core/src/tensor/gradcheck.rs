use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing autodiff gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and finite-difference values at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    /// Coordinates skipped because a ReLU input changed sign within `±h`,
    /// where central differences do not estimate the derivative.
    pub skipped: usize,
    pub tol: f64,
}

impl GradCheckReport {
    /// Error below tolerance, with at most 5% of coordinates skipped.
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol && self.checked > 0 && self.skipped * 20 <= self.checked + self.skipped
    }

    /// Folds another report into this one (keeps the worst coordinate).
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
            self.worst_values = other.worst_values;
        }
    }
}

/// Denominator floor of [`relative_error`]. Central differences in f64
/// carry about 1e-10 of round-off for O(1) losses, so gradients smaller
/// than this are compared on an absolute scale of `floor * tol`.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRADIENT_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_FLOOR)
}

fn eval_with_pattern(store: &ParamStore, f: &mut impl FnMut(&mut Tape, &ParamStore) -> Result<Var>) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let t = tape.value(loss);
    if t.shape() != [1, 1] {
        return Err(Error::NonScalarLoss(t.rows(), t.cols()));
    }
    Ok((t.data()[0], tape.relu_pattern()))
}

#[cfg(test)]
fn eval(store: &ParamStore, f: &mut impl FnMut(&mut Tape, &ParamStore) -> Result<Var>) -> Result<f64> {
    Ok(eval_with_pattern(store, f)?.0)
}

/// Gradients of every parameter in `store` (zeros where unreachable).
pub fn analytic_gradients(store: &ParamStore, f: &mut impl FnMut(&mut Tape, &ParamStore) -> Result<Var>) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let mut scratch = store.clone();
    scratch.zero_grad();
    grads.accumulate_into(&mut scratch);
    Ok(scratch.iter().map(|p| p.grad.clone()).collect())
}

/// Coordinates checked for a parameter of `len` values: all of them, or an
/// evenly strided subset of at most `limit`.
fn coordinates(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
        _ => (0..len).collect(),
    }
}

/// Central-difference check of `f`'s gradient with respect to every
/// parameter in `store` at step `h`.
///
/// `max_coords` caps how many coordinates per parameter are perturbed.
pub fn grad_check(
    store: &mut ParamStore,
    mut f: impl FnMut(&mut Tape, &ParamStore) -> Result<Var>,
    h: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(store, &mut f)?;
    let (_, base_pattern) = eval_with_pattern(store, &mut f)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, worst_values: None, checked: 0, skipped: 0, tol };
    let ids: Vec<ParamId> = store.ids().collect();
    for (id, ad) in ids.into_iter().zip(&analytic) {
        for idx in coordinates(ad.len(), max_coords) {
            let original = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = original + h;
            let plus = eval_with_pattern(store, &mut f);
            store.get_mut(id).value.data_mut()[idx] = original - h;
            let minus = eval_with_pattern(store, &mut f);
            store.get_mut(id).value.data_mut()[idx] = original;
            let ((plus, p_pattern), (minus, m_pattern)) = (plus?, minus?);
            if p_pattern != base_pattern || m_pattern != base_pattern {
                report.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            let err = relative_error(ad.data()[idx], fd);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), idx));
                report.worst_values = Some((ad.data()[idx], fd));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7]).unwrap()).unwrap();
        let report = grad_check(
            &mut store,
            |tape, s| {
                let x = tape.constant(Tensor::row(vec![1.5, -2.0]));
                let wv = tape.param(s, w);
                let y = tape.matmul(x, wv)?;
                tape.sum(y)
            },
            1e-5,
            1e-10,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 6);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![0.4, -0.3])).unwrap();
        let mut f = |tape: &mut Tape, s: &ParamStore| {
            let wv = tape.param(s, w);
            let y = tape.sigmoid(wv)?;
            tape.sum(y)
        };
        let mut ad = analytic_gradients(&store, &mut f).unwrap();
        ad[0].data_mut()[1] *= 1.5;
        let fd = {
            let h = 1e-5;
            let mut plus = store.clone();
            plus.get_mut(w).value.data_mut()[1] += h;
            let mut minus = store.clone();
            minus.get_mut(w).value.data_mut()[1] -= h;
            (eval(&plus, &mut f).unwrap() - eval(&minus, &mut f).unwrap()) / (2.0 * h)
        };
        assert!(relative_error(ad[0].data()[1], fd) > 1e-4);
    }

    #[test]
    fn relu_kink_inside_the_step_is_skipped() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![1e-7, 0.5])).unwrap();
        let report = grad_check(
            &mut store,
            |tape, s| {
                let wv = tape.param(s, w);
                let y = tape.relu(wv)?;
                tape.sum(y)
            },
            1e-5,
            1e-6,
            None,
        )
        .unwrap();
        assert_eq!((report.checked, report.skipped), (1, 1));
        assert!(!report.passed());
    }

    #[test]
    fn strided_coordinates_are_bounded() {
        assert_eq!(coordinates(10, Some(3)), vec![0, 3, 6]);
        assert_eq!(coordinates(2, Some(5)), vec![0, 1]);
    }
}
