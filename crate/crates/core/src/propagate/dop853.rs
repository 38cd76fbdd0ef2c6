//! Explicit Runge–Kutta steppers on complex state vectors: adaptive
//! Dormand–Prince 8(5,3) with Hairer's error estimate, and classical RK4.

use super::tableau::{A, B, BHH, C, ER};
use super::{IntegratorSettings, Method, Stats};
use crate::error::{Error, Result};
use crate::space::{C64, ZERO};

/// `dy/dt = f(t, y)` on `C^n`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]);
}

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.333;
const FAC_MAX: f64 = 6.0;
const MIN_STEP_REL: f64 = 1e-14;

/// Integrates from `t0` to `t1`, stopping exactly at every time in `stops`
/// (sorted, inside the interval) to call `observe`. `observe` may mutate
/// the state, e.g. to apply an instantaneous pulse, and may abort by
/// returning an error.
pub fn integrate<S, F>(
    sys: &mut S,
    y: &mut [C64],
    t0: f64,
    t1: f64,
    stops: &[f64],
    settings: &IntegratorSettings,
    max_step: f64,
    mut observe: F,
) -> Result<Stats>
where
    S: OdeSystem,
    F: FnMut(f64, &mut [C64], &mut Stats) -> Result<()>,
{
    let mut stats = Stats::default();
    let mut targets: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < t1).collect();
    targets.push(t1);
    match settings.method {
        Method::AdaptiveRk => dop853(sys, y, t0, &targets, settings, max_step, &mut stats, &mut observe)?,
        Method::FixedRk4 => rk4(sys, y, t0, &targets, max_step, &mut stats, &mut observe)?,
    }
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn dop853<S, F>(
    sys: &mut S,
    y: &mut [C64],
    t0: f64,
    targets: &[f64],
    settings: &IntegratorSettings,
    max_step: f64,
    stats: &mut Stats,
    observe: &mut F,
) -> Result<()>
where
    S: OdeSystem,
    F: FnMut(f64, &mut [C64], &mut Stats) -> Result<()>,
{
    let n = sys.dim();
    let mut k: Vec<Vec<C64>> = (0..12).map(|_| vec![ZERO; n]).collect();
    let mut tmp = vec![ZERO; n];
    let mut y_new = vec![ZERO; n];
    let mut t = t0;
    let mut h = max_step.min(settings.initial_step.unwrap_or(max_step));
    let mut fresh = true;
    let (rtol, atol) = (settings.rel_tol, settings.abs_tol);

    for &target in targets {
        let span = (target - t0).abs().max(1.0e-300);
        while t < target {
            if fresh {
                sys.rhs(t, y, &mut k[0]);
                stats.evaluations += 1;
                fresh = false;
            }
            if target - t <= MIN_STEP_REL * span {
                // stops closer than rounding are merged
                t = target;
                break;
            }
            let last = t + 1.01 * h >= target;
            let step = if last { target - t } else { h };
            if step < MIN_STEP_REL * span {
                return Err(Error::StepUnderflow { t });
            }
            for s in 1..12 {
                let row = A[s - 1];
                for i in 0..n {
                    let mut acc = ZERO;
                    for (j, &a) in row.iter().enumerate() {
                        if a != 0.0 {
                            acc += k[j][i] * a;
                        }
                    }
                    tmp[i] = y[i] + acc * step;
                }
                sys.rhs(t + C[s] * step, &tmp, &mut k[s]);
            }
            stats.evaluations += 11;

            let mut err = 0.0;
            let mut err2 = 0.0;
            for i in 0..n {
                let mut inc = ZERO;
                let mut e = ZERO;
                for s in 0..12 {
                    if B[s] != 0.0 {
                        inc += k[s][i] * B[s];
                    }
                    if ER[s] != 0.0 {
                        e += k[s][i] * ER[s];
                    }
                }
                y_new[i] = y[i] + inc * step;
                let sk = atol + rtol * y[i].norm().max(y_new[i].norm());
                let e2 = inc - k[0][i] * BHH[0] - k[8][i] * BHH[1] - k[11][i] * BHH[2];
                err2 += (e2.norm() / sk).powi(2);
                err += (e.norm() / sk).powi(2);
            }
            let mut deno = err + 0.01 * err2;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let err = step.abs() * err * (1.0 / (deno * n as f64)).sqrt();

            let fac11 = err.powf(0.125);
            let fac = (fac11 / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            if err <= 1.0 {
                stats.accepted += 1;
                t = if last { target } else { t + step };
                y.copy_from_slice(&y_new);
                sys.rhs(t, y, &mut k[0]);
                stats.evaluations += 1;
                let grown = step / fac;
                // a step shortened only to land on the target says nothing
                // about the next one
                h = if last && step < h { h } else { grown.min(max_step) };
            } else {
                stats.rejected += 1;
                h = step / (fac11 / SAFETY).min(1.0 / FAC_MIN);
            }
            if stats.accepted + stats.rejected > settings.max_steps {
                return Err(Error::StepUnderflow { t });
            }
        }
        let before: Vec<C64> = y.to_vec();
        observe(t, y, stats)?;
        if y != before.as_slice() {
            fresh = true;
        }
    }
    Ok(())
}

fn rk4<S, F>(
    sys: &mut S,
    y: &mut [C64],
    t0: f64,
    targets: &[f64],
    max_step: f64,
    stats: &mut Stats,
    observe: &mut F,
) -> Result<()>
where
    S: OdeSystem,
    F: FnMut(f64, &mut [C64], &mut Stats) -> Result<()>,
{
    let n = sys.dim();
    let mut k: Vec<Vec<C64>> = (0..4).map(|_| vec![ZERO; n]).collect();
    let mut tmp = vec![ZERO; n];
    let mut t = t0;
    for &target in targets {
        let steps = ((target - t) / max_step).ceil().max(1.0) as u64;
        let h = (target - t) / steps as f64;
        for m in 0..steps {
            let ts = t + m as f64 * h;
            sys.rhs(ts, y, &mut k[0]);
            for i in 0..n {
                tmp[i] = y[i] + k[0][i] * (0.5 * h);
            }
            sys.rhs(ts + 0.5 * h, &tmp, &mut k[1]);
            for i in 0..n {
                tmp[i] = y[i] + k[1][i] * (0.5 * h);
            }
            sys.rhs(ts + 0.5 * h, &tmp, &mut k[2]);
            for i in 0..n {
                tmp[i] = y[i] + k[2][i] * h;
            }
            sys.rhs(ts + h, &tmp, &mut k[3]);
            for i in 0..n {
                y[i] += (k[0][i] + (k[1][i] + k[2][i]) * 2.0 + k[3][i]) * (h / 6.0);
            }
            stats.evaluations += 4;
            stats.accepted += 1;
        }
        t = target;
        observe(t, y, stats)?;
    }
    Ok(())
}
