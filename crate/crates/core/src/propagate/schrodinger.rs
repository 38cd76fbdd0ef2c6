use super::dop853::{integrate, OdeSystem};
use super::{Evolution, IntegratorSettings, Plan, Stats, DRIFT_ABORT};
use crate::drive::Hamiltonian;
use crate::error::{Error, Result};
use crate::space::{StateVector, C64, NORM_TOL, ZERO};

/// `dψ/dt = −iH(t)ψ`
struct Schrodinger<'a, H: Hamiltonian + ?Sized> {
    h: &'a H,
    coef: Vec<C64>,
    dim: usize,
}

impl<H: Hamiltonian + ?Sized> OdeSystem for Schrodinger<'_, H> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        self.h.apply(t, y, &mut self.coef, dy);
        for z in dy.iter_mut() {
            *z = C64::new(z.im, -z.re);
        }
    }
}

fn norm_drift(y: &[C64]) -> f64 {
    (y.iter().map(C64::norm_sqr).sum::<f64>() - 1.0).abs()
}

/// Integrates the Schrödinger equation from `t0` to `t1`, stopping at every
/// time in `plan`. Aborts when the norm drifts by more than 10⁻⁶.
pub fn integrate_schrodinger<H: Hamiltonian + ?Sized>(
    h: &H,
    psi0: &StateVector,
    t0: f64,
    t1: f64,
    settings: &IntegratorSettings,
    plan: &Plan,
) -> Result<Evolution<StateVector>> {
    settings.validate()?;
    let dims = h.dims();
    if psi0.dims() != dims {
        return Err(Error::DimensionMismatch { expected: dims.dim(), found: psi0.dims().dim() });
    }
    let deviation = (psi0.norm() - 1.0).abs();
    if deviation > NORM_TOL {
        return Err(Error::Normalization { deviation });
    }
    if !(t1 >= t0) {
        return Err(Error::InvalidParameter(format!("end time {t1} before start {t0}")));
    }

    let mut y: Vec<C64> = psi0.amplitudes().iter().copied().collect();
    let mut samples = Vec::new();
    let mut drift = 0.0f64;
    let mut checkpoint = |t: f64, y: &mut [C64], samples: &mut Vec<(f64, StateVector)>| -> Result<()> {
        let d = norm_drift(y);
        drift = drift.max(d);
        if d > DRIFT_ABORT {
            return Err(Error::NormDrift { t, drift: d });
        }
        for k in plan.kicks.iter().filter(|k| k.time == t) {
            let v = k.op.matrix() * nalgebra::DVector::from_column_slice(y);
            y.copy_from_slice(v.as_slice());
        }
        if plan.samples.iter().any(|&s| s == t) {
            let amps = nalgebra::DVector::from_column_slice(y);
            samples.push((t, StateVector::from_amplitudes(dims, amps)?));
        }
        Ok(())
    };

    checkpoint(t0, &mut y, &mut samples)?;
    let mut stats = Stats::default();
    if t1 > t0 {
        let mut sys = Schrodinger { h, coef: vec![ZERO; h.terms().len()], dim: dims.dim() };
        let max_step = settings.step_bound(h.max_frequency(), t1 - t0);
        stats = integrate(&mut sys, &mut y, t0, t1, &plan.stops(), settings, max_step, |t, y, _| {
            checkpoint(t, y, &mut samples)
        })?;
    }
    stats.max_drift = drift;
    stats.min_eigenvalue = 1.0;
    let state = StateVector::from_amplitudes(dims, nalgebra::DVector::from_vec(y))?;
    Ok(Evolution { state, samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::TermHamiltonian;
    use crate::propagate::{Kick, Method};
    use crate::space::{
        global_rotation, number, pauli_sum, Axis, Operator, PauliKind, SpaceDescriptor, SpinBasis,
    };

    fn dims() -> SpaceDescriptor {
        SpaceDescriptor::new(4).unwrap()
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let d = dims();
        let h = TermHamiltonian::constant(d, Operator::zeros(d), 0.0);
        let psi = StateVector::basis(d, SpinBasis::UpDown, 2).unwrap();
        let out = integrate_schrodinger(&h, &psi, 0.0, 3.0, &Default::default(), &Plan::default()).unwrap();
        assert!((out.state.overlap(&psi).norm() - 1.0).abs() < 1e-14);
        assert!(out.state.amplitudes().iter().zip(psi.amplitudes().iter()).all(|(a, b)| (a - b).norm() < 1e-14));
    }

    #[test]
    fn number_operator_gives_global_phase() {
        let d = dims();
        let nu = 2.0 * std::f64::consts::PI * 1.3;
        let h = TermHamiltonian::constant(d, number(d).scale(C64::from(nu)), nu);
        let psi = StateVector::basis(d, SpinBasis::DownDown, 1).unwrap();
        let t = 0.77;
        let out = integrate_schrodinger(&h, &psi, 0.0, t, &Default::default(), &Plan::default()).unwrap();
        let amp = psi.overlap(&out.state);
        assert!((amp - C64::from_polar(1.0, -nu * t)).norm() < 1e-9, "{amp}");
        assert!((out.state.norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn matches_matrix_exponential() {
        let d = dims();
        let sx = pauli_sum(d, Axis::X, PauliKind::Symmetric).unwrap();
        let sz = pauli_sum(d, Axis::Z, PauliKind::Symmetric).unwrap();
        let hm = &(&sx.scale(C64::from(0.7)) + &sz.scale(C64::from(-0.3))) + &number(d).scale(C64::from(1.1));
        let h = TermHamiltonian::constant(d, hm.clone(), 2.0);
        let psi = StateVector::basis(d, SpinBasis::DownDown, 0).unwrap();
        let out = integrate_schrodinger(&h, &psi, 0.0, 5.0, &Default::default(), &Plan::default()).unwrap();
        let want = hm.propagator(5.0).apply(&psi);
        assert!((out.state.overlap(&want).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn samples_and_kicks() {
        let d = dims();
        let h = TermHamiltonian::constant(d, Operator::zeros(d), 0.0);
        let psi = StateVector::basis(d, SpinBasis::DownDown, 0).unwrap();
        let flip = global_rotation(d, Axis::X, std::f64::consts::PI);
        let plan = Plan {
            samples: vec![0.0, 0.5, 1.0],
            kicks: vec![Kick { time: 0.5, op: flip }],
            breakpoints: vec![],
        };
        let out = integrate_schrodinger(&h, &psi, 0.0, 1.0, &Default::default(), &plan).unwrap();
        assert_eq!(out.samples.len(), 3);
        let up = StateVector::basis(d, SpinBasis::UpUp, 0).unwrap();
        assert!((out.samples[0].1.overlap(&psi).norm() - 1.0).abs() < 1e-14);
        assert!((out.samples[1].1.overlap(&up).norm() - 1.0).abs() < 1e-14);
        assert!((out.state.overlap(&up).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_unnormalized_input() {
        let d = dims();
        let h = TermHamiltonian::constant(d, Operator::zeros(d), 0.0);
        let psi = StateVector::basis(d, SpinBasis::DownDown, 0).unwrap().scaled(C64::from(1.1));
        assert!(matches!(
            integrate_schrodinger(&h, &psi, 0.0, 1.0, &Default::default(), &Plan::default()),
            Err(Error::Normalization { .. })
        ));
    }

    #[test]
    fn norm_drift_aborts() {
        // a non-Hermitian generator grows the norm
        let d = dims();
        let op = Operator::identity(d).scale(C64::new(0.0, 1.0));
        let h = TermHamiltonian::constant(d, op, 1.0);
        let psi = StateVector::basis(d, SpinBasis::DownDown, 0).unwrap();
        let plan = Plan::samples(vec![0.5]);
        assert!(matches!(
            integrate_schrodinger(&h, &psi, 0.0, 1.0, &Default::default(), &plan),
            Err(Error::NormDrift { .. })
        ));
    }

    #[test]
    fn rk4_agrees_with_adaptive() {
        let d = dims();
        let sx = pauli_sum(d, Axis::X, PauliKind::Symmetric).unwrap();
        let h = TermHamiltonian::new(d, vec![sx], 3.0, |t, c| c[0] = C64::from((3.0 * t).cos()));
        let psi = StateVector::basis(d, SpinBasis::DownDown, 0).unwrap();
        let a = integrate_schrodinger(&h, &psi, 0.0, 2.0, &Default::default(), &Plan::default()).unwrap();
        let rk4 = IntegratorSettings { method: Method::FixedRk4, max_step: Some(1e-3), ..Default::default() };
        let b = integrate_schrodinger(&h, &psi, 0.0, 2.0, &rk4, &Plan::default()).unwrap();
        assert!((a.state.overlap(&b.state).norm() - 1.0).abs() < 1e-10);
    }
}
