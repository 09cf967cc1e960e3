//! Gradient descent with momentum and step halving.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub momentum: f64,
    /// Max-norm of the first update; the learning rate is derived from it.
    pub initial_step: f64,
    /// Stop once the learning rate has been halved below this fraction of
    /// its initial value.
    pub min_step_ratio: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            initial_step: 0.5,
            min_step_ratio: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    /// Loss of the current (last accepted) iterate.
    pub loss: f64,
    pub accepted: bool,
    pub learning_rate: f64,
}

/// Result of one objective evaluation.
pub trait Evaluation {
    fn loss(&self) -> f64;

    /// Whether the iterate may be accepted at all, independent of its loss.
    fn admissible(&self) -> bool {
        true
    }
}

impl Evaluation for (f64, Vec<f64>) {
    fn loss(&self) -> f64 {
        self.0
    }
}

/// Minimizes from `x0` for at most `iters` trial steps.
///
/// `forward` evaluates the objective and `gradient` differentiates an
/// evaluation; gradients are only requested for accepted iterates. An
/// admissible trial that does not increase the loss is accepted; otherwise the learning rate
/// is halved and the momentum buffer cleared. `on_step` sees the initial
/// evaluation (iteration 0) and every trial, together with the current
/// iterate.
pub fn minimize<E: Evaluation>(
    x0: Vec<f64>,
    iters: usize,
    cfg: &DescentConfig,
    mut forward: impl FnMut(&[f64]) -> Result<E>,
    mut gradient: impl FnMut(&E) -> Result<Vec<f64>>,
    mut on_step: impl FnMut(&StepRecord, &E),
) -> Result<(Vec<f64>, E)> {
    let mut x = x0;
    let mut cur = forward(&x)?;
    if !cur.loss().is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    on_step(
        &StepRecord {
            iteration: 0,
            loss: cur.loss(),
            accepted: true,
            learning_rate: 0.0,
        },
        &cur,
    );
    if iters == 0 {
        return Ok((x, cur));
    }
    let mut grad = gradient(&cur)?;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if gmax == 0.0 || !gmax.is_finite() {
        return Ok((x, cur));
    }
    let lr0 = cfg.initial_step / gmax;
    let mut lr = lr0;
    let mut m = vec![0.0; x.len()];
    let mut trial = vec![0.0; x.len()];
    for it in 1..=iters {
        for ((mi, gi), (ti, xi)) in m.iter_mut().zip(&grad).zip(trial.iter_mut().zip(&x)) {
            *mi = cfg.momentum * *mi + gi;
            *ti = xi - lr * *mi;
        }
        let accepted = if trial.iter().all(|v| v.is_finite()) {
            let cand = forward(&trial)?;
            if cand.loss().is_finite() && cand.loss() <= cur.loss() && cand.admissible() {
                std::mem::swap(&mut x, &mut trial);
                cur = cand;
                true
            } else {
                false
            }
        } else {
            false
        };
        if accepted {
            grad = gradient(&cur)?;
        } else {
            lr *= 0.5;
            m.iter_mut().for_each(|v| *v = 0.0);
        }
        on_step(
            &StepRecord {
                iteration: it,
                loss: cur.loss(),
                accepted,
                learning_rate: lr,
            },
            &cur,
        );
        if lr < lr0 * cfg.min_step_ratio {
            break;
        }
    }
    Ok((x, cur))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_monotonically() {
        let target = [3.0, -1.0, 0.5];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let l = x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b) * 10.0).sum();
            Ok((l, x.iter().zip(&target).map(|(a, b)| 20.0 * (a - b)).collect()))
        };
        let mut losses = vec![];
        let (x, e) = minimize(vec![0.0; 3], 300, &DescentConfig::default(), f, |e| Ok(e.1.clone()), |r, _| {
            losses.push(r.loss)
        })
        .unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(e.0 < 1e-8, "{}", e.0);
        assert!((x[0] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_stays_put() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((1.0, vec![0.0, 0.0])) };
        let (x, e) = minimize(vec![1.0, 2.0], 10, &DescentConfig::default(), f, |e| Ok(e.1.clone()), |_, _| {}).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert_eq!(e.0, 1.0);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(
            minimize(vec![0.0], 10, &DescentConfig::default(), f, |e| Ok(e.1.clone()), |_, _| {}),
            Err(Error::NonFiniteLoss { .. })
        ));
    }
}
