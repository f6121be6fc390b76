//! Central finite-difference verification of analytic gradients.

use super::param::ParamStore;

/// Relative-error denominator floor: coordinates whose analytic and
/// numerical gradients are both tiny compare against this scale instead of
/// each other, keeping finite-difference noise from dominating the ratio.
pub const REL_DENOMINATOR_FLOOR: f64 = 1e-3;

/// Outcome for one checked parameter coordinate.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compare the analytic gradients already accumulated in the store against
/// central differences of `loss_fn` with the given step. Parameter values
/// are perturbed in place and restored exactly.
pub fn check_coordinates(
    store: &ParamStore,
    coords: &[(String, usize)],
    step: f64,
    mut loss_fn: impl FnMut() -> f64,
) -> Vec<CoordCheck> {
    let mut out = Vec::with_capacity(coords.len());
    for (name, idx) in coords {
        let cell = store.get(name).expect("checked parameter exists");
        let original = cell.value_at(*idx);
        cell.set_value_at(*idx, original + step);
        let loss_plus = loss_fn();
        cell.set_value_at(*idx, original - step);
        let loss_minus = loss_fn();
        cell.set_value_at(*idx, original);

        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let analytic = cell.grad_at(*idx);
        let denom = numeric.abs().max(analytic.abs()).max(REL_DENOMINATOR_FLOOR);
        out.push(CoordCheck {
            param: name.clone(),
            coord: *idx,
            analytic,
            numeric,
            rel_error: (numeric - analytic).abs() / denom,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn detects_correct_and_broken_gradients() {
        let mut store = ParamStore::new();
        let w = store.insert_raw("w", vec![2], vec![0.3, -0.8]).unwrap();

        // loss = sum(sigmoid(w) * 2)
        let loss_fn = {
            let w = std::rc::Rc::clone(&w);
            move || {
                let tape = Tape::new();
                let wt = Tensor::from_vec(vec![2], w.value_snapshot());
                tape.sum_all(&tape.scale(&tape.sigmoid(&wt), 2.0)).item()
            }
        };

        // correct analytic gradient
        {
            let tape = Tape::new();
            let wt = tape.param(&w);
            let loss = tape.sum_all(&tape.scale(&tape.sigmoid(&wt), 2.0));
            tape.backward(&loss).unwrap();
        }
        let coords = vec![("w".to_string(), 0), ("w".to_string(), 1)];
        let checks = check_coordinates(&store, &coords, 1e-6, loss_fn.clone());
        assert!(checks.iter().all(|c| c.rel_error < 1e-8));

        // corrupt the gradient: the check must notice
        w.zero_grad();
        w.accumulate_grad(&[1.0, 1.0]);
        let checks = check_coordinates(&store, &coords, 1e-6, loss_fn);
        assert!(checks.iter().any(|c| c.rel_error > 1e-2));
    }
}
