//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::Result;

/// Differences below this are compared in absolute rather than relative terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because `x ± h` crossed a ReLU or max-pool decision.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<B>(build: &B, inputs: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let loss = build(&mut g, &vars)?;
    Ok((g.value(loss).item()?, g.decision_signature()))
}

/// Compares `∂loss/∂inputs[i]` with central differences of step `h` on up
/// to `coords` randomly chosen entries of every input in `wrt`.
pub fn check_gradients<B, R>(
    build: B,
    inputs: &[Tensor<f64>],
    wrt: &[usize],
    h: f64,
    coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| g.leaf(t.clone(), wrt.contains(&i))).collect();
    let loss = build(&mut g, &vars)?;
    let base_sig = g.decision_signature();
    g.backward(loss)?;

    let mut report = GradCheckReport::default();
    for &i in wrt {
        let analytic = g.grad(vars[i]).unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let n = inputs[i].len();
        for k in sample(rng, n, coords.min(n)) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            let (lp, sp) = evaluate(&build, &plus)?;
            let (lm, sm) = evaluate(&build, &minus)?;
            if sp != base_sig || sm != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn catches_a_wrong_gradient_and_accepts_a_right_one() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let good = |g: &mut Graph<f64>, v: &[Var]| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        };
        let r = check_gradients(good, &[x.clone()], &[0], 1e-4, 4, &mut rng_for(1, &[])).unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-6);
        // A loss detached from the input has zero analytic gradient but a real numeric one.
        let bad = |g: &mut Graph<f64>, v: &[Var]| {
            let sq = g.mul(v[0], v[0])?;
            let s = g.sum(sq);
            let shifted = g.value(s).item()? * 2.0;
            Ok(g.leaf(Tensor::scalar(shifted), false))
        };
        let r = check_gradients(bad, &[x], &[0], 1e-4, 4, &mut rng_for(1, &[])).unwrap();
        assert!(r.max_rel_error > 0.5);
    }

    #[test]
    fn relu_kinks_are_skipped() {
        let x = Tensor::new(vec![3], vec![0.0, 1e-6, 1.0]).unwrap();
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let r = g.relu(v[0]);
            Ok(g.sum(r))
        };
        let r = check_gradients(f, &[x], &[0], 1e-4, 3, &mut rng_for(1, &[])).unwrap();
        assert_eq!(r.skipped_kinks, 2);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-9);
    }
}
