//! Central-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all input elements.
    pub max_rel_error: f64,
    /// Distance of the base point from the nearest ReLU or pooling kink;
    /// a point is trustworthy only when this exceeds `10 h`.
    pub kink_margin: f64,
    pub elements: usize,
}

impl GradCheck {
    pub fn is_smooth(&self, h: f64) -> bool {
        self.kink_margin > 10.0 * h
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// `(f(x + h) - f(x - h)) / 2h` for every element of every input.
///
/// `f` receives the inputs as trainable leaves and must return a node with
/// a single element.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, f: F) -> GradCheck
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Var,
{
    assert!(h > 0.0, "step must be positive");
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param_owned(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.scalar(out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param_owned(t.clone())).collect();
    let out = f(&mut g, &vars);
    assert_eq!(g.value(out).len(), 1, "grad_check needs a scalar objective");
    g.backward(out);
    let kink_margin = g.kink_margin();

    let mut work = inputs.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut elements = 0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for (k, a) in analytic.into_iter().enumerate() {
            let base = inputs[i].data()[k];
            work[i].data_mut()[k] = base + h;
            let up = eval(&work);
            work[i].data_mut()[k] = base - h;
            let down = eval(&work);
            work[i].data_mut()[k] = base;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            max_rel_error = max_rel_error.max(rel);
            elements += 1;
        }
    }
    GradCheck {
        max_rel_error,
        kink_margin,
        elements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let w = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75]).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, -3.0]);
        let report = grad_check(&[w, x], 1e-5, |g, v| {
            let y = g.affine(v[0], v[1], None);
            g.weighted_sum(y, vec![1.0, -2.0])
        });
        assert_eq!(report.elements, 9);
        assert!(report.max_rel_error <= 1e-9, "{report:?}");
    }

    #[test]
    fn relu_reports_kink_margin() {
        let x = Tensor::vector(vec![0.5, -0.25, 1e-7]);
        let report = grad_check(&[x], 1e-5, |g, v| {
            let y = g.relu(v[0]);
            g.weighted_sum(y, vec![1.0, 1.0, 1.0])
        });
        assert_eq!(report.kink_margin, 1e-7);
        assert!(!report.is_smooth(1e-5));
    }
}
