//! Central finite-difference verification of tape gradients.

use super::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// Outcome of comparing analytic and numeric gradients over one or more tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_a − g_n| / max(1e-8, |g_a| + |g_n|)` over all checked elements.
    pub max_rel_error: f64,
    /// `(tensor index, element index)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub elements: usize,
}

/// Halvings of the step allowed when successive estimates disagree.
const MAX_REFINEMENTS: usize = 14;

fn stencil(p1: f64, m1: f64, p2: f64, m2: f64, h: f64) -> f64 {
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Numeric derivative along one coordinate, `at(k)` evaluating `f` at `x0 + k·h₀`.
///
/// The loss is only piecewise smooth (ReLU, max-pooling), so a stencil that
/// straddles a kink returns a blend of two slopes. The step is halved until
/// three successive estimates (`h`, `h/2`, `h/4`) agree, and the one at `h` is
/// returned since it carries the least rounding error. Agreement is judged
/// between numeric estimates alone, never against the analytic value.
fn refined_stencil(at: &mut impl FnMut(f64) -> Result<f64>, step: f64, scale: f64) -> Result<f64> {
    let (mut p1, mut m1) = (at(1.0)?, at(-1.0)?);
    let mut k = 1.0;
    let mut estimates = vec![stencil(p1, m1, at(2.0)?, at(-2.0)?, step)];
    let mut agreeing = 0;
    for _ in 0..MAX_REFINEMENTS {
        k *= 0.5;
        let (q1, n1) = (at(k)?, at(-k)?);
        let h = k * step;
        let fine = stencil(q1, n1, p1, m1, h);
        let coarse = estimates[estimates.len() - 1];
        let noise = 8.0 * f64::EPSILON * scale.max(1.0) / h;
        let agree = (coarse - fine).abs() <= noise || relative_error(coarse, fine) <= 1e-7;
        agreeing = if agree { agreeing + 1 } else { 0 };
        (p1, m1) = (q1, n1);
        estimates.push(fine);
        if agreeing == 2 {
            return Ok(estimates[estimates.len() - 3]);
        }
    }
    Ok(estimates[estimates.len() - 1])
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the gradient of the scalar `f(θ)` with respect to `θ`.
///
/// `f` receives a fresh tape and the leaf holding `θ` and must return a
/// single-element node. Only 64-bit tensors are accepted. Numeric gradients use
/// the fourth-order central stencil
/// `(8·(f(θ+h) − f(θ−h)) − (f(θ+2h) − f(θ−2h))) / 12h`, starting at `h = eps`
/// and halving the step until successive estimates agree.
pub fn finite_difference_check<T, F>(f: F, theta: &Tensor<T>, eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    finite_difference_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(theta),
        eps,
    )
}

/// Multi-argument form of [`finite_difference_check`]: perturbs every element
/// of every tensor in `thetas`.
pub fn finite_difference_check_many<T, F>(
    f: F,
    thetas: &[Tensor<T>],
    eps: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if T::BITS != 64 {
        return Err(TensorError::PrecisionRefused { bits: T::BITS });
    }
    if !(eps > 0.0) {
        return Err(TensorError::Invalid(format!(
            "step must be positive, got {eps}"
        )));
    }
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item()?.to_f64_lossy())
    };

    let first = eval(thetas)?;
    let second = eval(thetas)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = thetas.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<T>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        elements: 0,
    };
    let mut work: Vec<Tensor<T>> = thetas.to_vec();
    for (ti, grads) in analytic.iter().enumerate() {
        for (ei, g) in grads.iter().enumerate() {
            let orig = work[ti].data()[ei];
            let x0 = orig.to_f64_lossy();
            let mut at = |k: f64| -> Result<f64> {
                work[ti].data_mut()[ei] = T::from_f64_lossy(x0 + k * eps);
                eval(&work)
            };
            let numeric = refined_stencil(&mut at, eps, first.abs())?;
            work[ti].data_mut()[ei] = orig;
            let a = g.to_f64_lossy();
            let err = relative_error(a, numeric);
            report.elements += 1;
            if err > report.max_rel_error || report.elements == 1 {
                report.max_rel_error = err;
                report.worst = (ti, ei);
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = Tensor::<f64>::from_fn(&[10], |_| rng.gen_range(-2.0..2.0)).unwrap();
        let r = finite_difference_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                tape.sum(sq)
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn single_precision_is_refused() {
        let theta = Tensor::<f32>::zeros(&[2]).unwrap();
        let err = finite_difference_check(|tape, x| tape.sum(x), &theta, 1e-3).unwrap_err();
        assert_eq!(err, TensorError::PrecisionRefused { bits: 32 });
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let theta = Tensor::<f64>::zeros(&[2]).unwrap();
        let err = finite_difference_check(
            |tape, x| {
                let k = calls.fetch_add(1, Ordering::SeqCst) as f64;
                let s = tape.sum(x)?;
                let c = tape.constant(Tensor::scalar(k));
                tape.add(s, c)
            },
            &theta,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonDeterministic { .. }));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        use std::sync::Arc;
        let theta = Tensor::<f64>::new(&[3], vec![0.3, -0.2, 1.1]).unwrap();
        let r = finite_difference_check(
            |tape, x| {
                let y = tape.custom(
                    "bad_square",
                    &[x],
                    Arc::new(|xs| Ok(super::super::kernels::pointwise::map(xs[0], |v| v * v))),
                    Arc::new(|xs, _, g| {
                        vec![xs[0]
                            .data()
                            .iter()
                            .zip(g)
                            .map(|(v, g)| 3.0 * v * g)
                            .collect()]
                    }),
                )?;
                tape.sum(y)
            },
            &theta,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
