//! First-order optimizers, variance-map bounding and the finite-difference
//! gradient checker used to verify every analytic gradient in the crate.

use crate::error::{ensure_same, Error, Result};
use crate::softrender::logistic;
use crate::tensorgrid::VarianceMap;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_VAR_LO: f64 = 0.25;
pub const DEFAULT_VAR_HI: f64 = 4.0;

/// `params - lr * grads`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    ensure_same("sgd gradient length", grads.len(), params.len())?;
    if !(lr > 0.0) {
        return Err(Error::Input(format!("learning rate must be positive, got {lr}")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure_same("adam parameter length", params.len(), self.m.len())?;
        ensure_same("adam gradient length", grads.len(), self.m.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `lo + (hi - lo) * logistic(raw)`, always strictly inside `(lo, hi)` for
/// finite input.
pub fn bound_value(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * logistic(raw)
}

/// Derivative of [`bound_value`] w.r.t. `raw`.
pub fn bound_value_grad(raw: f64, lo: f64, hi: f64) -> f64 {
    let s = logistic(raw);
    (hi - lo) * s * (1.0 - s)
}

/// Inverse of [`bound_value`] for `lo < v < hi`.
pub fn unbound_value(v: f64, lo: f64, hi: f64) -> f64 {
    let s = (v - lo) / (hi - lo);
    (s / (1.0 - s)).ln()
}

pub fn bound_variance(raw: &[f64], height: usize, width: usize, lo: f64, hi: f64) -> Result<VarianceMap> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Input(format!("variance bounds need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    VarianceMap::new(height, width, raw.iter().map(|&r| bound_value(r, lo, hi)).collect())
}

/// Result of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// Per coordinate the error is `|a - n| / max(|a|, |n|, 1e-12)`; the maximum
/// is reported.
pub fn fd_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    analytic: &[f64],
    point: &[f64],
    h: f64,
) -> Result<FdReport> {
    ensure_same("analytic gradient length", analytic.len(), point.len())?;
    if !(h > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
    }
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    let mut worst = (0.0f64, 0usize);
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let plus = f(&x)?;
        x[i] = point[i] - h;
        let minus = f(&x)?;
        x[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite evaluation around coordinate {i}")));
        }
        let n = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
        if err > worst.0 {
            worst = (err, i);
        }
        numeric.push(n);
    }
    Ok(FdReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut p = [1.0];
        sgd_step(&mut p, &[2.0], 0.1).unwrap();
        assert_eq!(p, [0.8]);
        sgd_step(&mut p, &[0.0], 0.1).unwrap();
        assert_eq!(p, [0.8]);

        let mut x = [1.0];
        for _ in 0..2 {
            let g = [2.0 * x[0]];
            sgd_step(&mut x, &g, 0.5).unwrap();
        }
        assert_eq!(x, [0.0]);
        assert!(sgd_step(&mut x, &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn adam_first_step_and_zero_grad() {
        for g in [3.0, -0.01, 1e4] {
            let mut opt = Adam::new(1, 0.1);
            let mut p = [0.0];
            opt.step(&mut p, &[g]).unwrap();
            let d = -p[0] * g.signum();
            assert!((0.0999..=0.1).contains(&d), "{d}");
        }
        let mut opt = Adam::new(2, 0.1);
        let mut p = [1.0, -2.0];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut opt = Adam::new(1, 0.1);
        let mut x = [0.0];
        for _ in 0..500 {
            let g = [2.0 * (x[0] - 3.0)];
            opt.step(&mut x, &g).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 0.01, "{}", x[0]);
    }

    #[test]
    fn bound_limits_and_midpoint() {
        assert_eq!(bound_value(0.0, 0.25, 4.0), 2.125);
        assert!((bound_value(-800.0, 0.25, 4.0) - 0.25).abs() < 1e-300);
        assert_eq!(bound_value(800.0, 0.25, 4.0), 4.0);
        assert!((bound_value(unbound_value(1.0, 0.25, 4.0), 0.25, 4.0) - 1.0).abs() < 1e-15);
        assert!(bound_variance(&[0.0], 1, 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn fd_check_examples() {
        let r = fd_check(|x| Ok(x[0] * x[0]), &[6.0], &[3.0], DEFAULT_FD_STEP).unwrap();
        assert!(r.max_rel_error < 1e-9);

        let pt = [0.3, -1.2, 2.5, 0.01];
        let grad: Vec<f64> = pt.iter().map(|v| 2.0 * v).collect();
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum::<f64>());
        assert!(fd_check(f, &grad, &pt, DEFAULT_FD_STEP).unwrap().max_rel_error < 1e-8);

        let wrong: Vec<f64> = grad.iter().map(|g| 2.0 * g).collect();
        let r = fd_check(f, &wrong, &pt, DEFAULT_FD_STEP).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);

        let bad = fd_check(|x| Ok(if x[0] < 1.0 { f64::NAN } else { x[0] }), &[1.0], &[1.0], 1e-5);
        assert!(matches!(bad, Err(Error::Numeric(_))));
    }
}
