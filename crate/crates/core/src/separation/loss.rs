//! Waveform loss: mean squared error plus a weighted phase term comparing
//! the cosine and sine of instantaneous phases.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::ops::Real;
use crate::error::{Error, Result};

/// Discrete Hilbert transform of fixed length: spectrum multiplied by
/// `-i·sign(k)`, with DC and Nyquist removed. The operator is real and
/// antisymmetric, so its adjoint is its negative.
pub struct HilbertPlan<F: Real> {
    n: usize,
    forward: Arc<dyn Fft<F>>,
    inverse: Arc<dyn Fft<F>>,
}

impl<F: Real> HilbertPlan<F> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn apply(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.n, "trace length differs from plan");
        let n = self.n;
        let mut buf: Vec<Complex<F>> = x.iter().map(|&v| Complex::new(v, F::zero())).collect();
        self.forward.process(&mut buf);
        let scale = F::one() / F::lit(n as f64);
        for (k, b) in buf.iter_mut().enumerate() {
            let upper = k < n.div_ceil(2);
            *b = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                Complex::new(F::zero(), F::zero())
            } else if upper {
                // -i * (re + i im) = im - i re
                Complex::new(b.im * scale, -b.re * scale)
            } else {
                Complex::new(-b.im * scale, b.re * scale)
            };
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }
}

fn wrap<F: Real>(theta: F) -> F {
    // atan2 yields [-pi, pi]; fold -pi onto pi
    if theta <= F::lit(-PI) {
        F::lit(PI)
    } else {
        theta
    }
}

/// Instantaneous phase in `(-pi, pi]`; zero where the analytic signal
/// vanishes.
pub fn phase<F: Real>(trace: &[F]) -> Vec<F> {
    if trace.is_empty() {
        return Vec::new();
    }
    let h = HilbertPlan::new(trace.len()).apply(trace);
    trace
        .iter()
        .zip(&h)
        .map(|(&x, &y)| if x == F::zero() && y == F::zero() { F::zero() } else { wrap(y.atan2(x)) })
        .collect()
}

/// Unit phasor `(cos, sin)` of `x + i h`, `(1, 0)` at the origin.
fn phasor<F: Real>(x: F, h: F) -> (F, F, F) {
    let m = (x * x + h * h).sqrt();
    if m == F::zero() {
        (F::one(), F::zero(), m)
    } else {
        (x / m, h / m, m)
    }
}

fn check(pred: &[impl Sized], label: &[impl Sized], trace_len: usize) -> Result<()> {
    if pred.len() != label.len() {
        return Err(Error::shape(format!("{} samples", label.len()), format!("{}", pred.len())));
    }
    if trace_len == 0 || !pred.len().is_multiple_of(trace_len) || pred.is_empty() {
        return Err(Error::shape(
            format!("a multiple of the trace length {trace_len}"),
            format!("{}", pred.len()),
        ));
    }
    Ok(())
}

/// Loss value only. Traces are consecutive runs of `trace_len` samples.
pub fn loss<F: Real>(pred: &[F], label: &[F], trace_len: usize, alpha: F) -> Result<F> {
    Ok(loss_and_grad_inner(pred, label, trace_len, alpha, false)?.0)
}

/// Loss value and its gradient with respect to `pred`.
pub fn loss_and_grad<F: Real>(pred: &[F], label: &[F], trace_len: usize, alpha: F) -> Result<(F, Vec<F>)> {
    loss_and_grad_inner(pred, label, trace_len, alpha, true)
}

fn loss_and_grad_inner<F: Real>(
    pred: &[F],
    label: &[F],
    trace_len: usize,
    alpha: F,
    want_grad: bool,
) -> Result<(F, Vec<F>)> {
    check(pred, label, trace_len)?;
    let total = F::lit(pred.len() as f64);
    let plan = HilbertPlan::<F>::new(trace_len);
    let two = F::lit(2.0);
    let mut mse = F::zero();
    let mut pmse = F::zero();
    let mut grad = if want_grad { vec![F::zero(); pred.len()] } else { Vec::new() };
    let use_phase = alpha != F::zero();

    for (i, (p, y)) in pred.chunks(trace_len).zip(label.chunks(trace_len)).enumerate() {
        for (a, b) in p.iter().zip(y) {
            mse = mse + (*a - *b) * (*a - *b);
        }
        if want_grad {
            let g = &mut grad[i * trace_len..(i + 1) * trace_len];
            for ((gi, a), b) in g.iter_mut().zip(p).zip(y) {
                *gi = two * (*a - *b) / total;
            }
        }
        if !use_phase {
            continue;
        }
        let hp = plan.apply(p);
        let hy = plan.apply(y);
        let mut gh = if want_grad { vec![F::zero(); trace_len] } else { Vec::new() };
        for k in 0..trace_len {
            let (uc, us, m) = phasor(p[k], hp[k]);
            let (vc, vs, _) = phasor(y[k], hy[k]);
            let (dc, ds) = (uc - vc, us - vs);
            pmse = pmse + dc * dc + ds * ds;
            if want_grad && m > F::zero() {
                // d|u - v|^2 / d(x, h) = (I - u u^T) 2 (u - v) / m
                let s = alpha / total;
                let dot = uc * dc + us * ds;
                grad[i * trace_len + k] = grad[i * trace_len + k] + s * two * (dc - uc * dot) / m;
                gh[k] = s * two * (ds - us * dot) / m;
            }
        }
        if want_grad {
            // H^T = -H
            let back = plan.apply(&gh);
            for (gi, b) in grad[i * trace_len..(i + 1) * trace_len].iter_mut().zip(back) {
                *gi = *gi - b;
            }
        }
    }
    Ok(((mse + alpha * pmse) / total, grad))
}
