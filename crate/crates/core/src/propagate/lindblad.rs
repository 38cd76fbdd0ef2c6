use nalgebra::DMatrix;

use super::dop853::{integrate, OdeSystem};
use super::{CollapseSet, Evolution, IntegratorSettings, Plan, Stats, POSITIVITY_TOL};
use crate::drive::Hamiltonian;
use crate::error::{Error, Result};
use crate::space::{ladder, number, DensityMatrix, Ladder, SparseOperator, C64, HERMITIAN_TOL, ZERO};

/// One dissipator `γ(LρL† − ½{L†L, ρ})`.
struct Channel {
    rate: f64,
    jump: SparseOperator,
    jump_dag: SparseOperator,
    decay: SparseOperator,
}

struct Master<'a, H: Hamiltonian + ?Sized> {
    h: &'a H,
    channels: Vec<Channel>,
    coef: Vec<C64>,
    scratch: Vec<C64>,
    n: usize,
}

impl<H: Hamiltonian + ?Sized> OdeSystem for Master<'_, H> {
    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn rhs(&mut self, t: f64, rho: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        self.h.coefficients(t, &mut self.coef);
        let mi = C64::new(0.0, -1.0);
        for (op, &c) in self.h.terms().iter().zip(&self.coef) {
            if c != ZERO {
                op.left_mul_add(mi * c, rho, out);
                op.right_mul_add(-mi * c, rho, out);
            }
        }
        for ch in &self.channels {
            self.scratch.iter_mut().for_each(|z| *z = ZERO);
            ch.jump.left_mul_add(C64::from(1.0), rho, &mut self.scratch);
            ch.jump_dag.right_mul_add(C64::from(ch.rate), &self.scratch, out);
            ch.decay.left_mul_add(C64::from(-0.5 * ch.rate), rho, out);
            ch.decay.right_mul_add(C64::from(-0.5 * ch.rate), rho, out);
        }
    }
}

fn channel(rate: f64, jump: DMatrix<C64>) -> Channel {
    let dag = jump.adjoint();
    let decay = &dag * &jump;
    Channel {
        rate,
        jump: SparseOperator::from_dense(&jump),
        jump_dag: SparseOperator::from_dense(&dag),
        decay: SparseOperator::from_dense(&decay),
    }
}

fn check_density(rho: &DensityMatrix, t: f64, stats: &mut Stats) -> Result<()> {
    let drift = (rho.trace() - C64::from(1.0)).norm();
    stats.max_drift = stats.max_drift.max(drift);
    if drift > POSITIVITY_TOL {
        return Err(Error::NormDrift { t, drift });
    }
    stats.max_hermiticity_defect = stats.max_hermiticity_defect.max(rho.hermiticity_defect());
    let min_eig = rho.min_eigenvalue();
    stats.min_eigenvalue = stats.min_eigenvalue.min(min_eig);
    if min_eig < -POSITIVITY_TOL {
        return Err(Error::Positivity { min_eig });
    }
    Ok(())
}

/// Integrates `ρ̇ = −i[H, ρ] + ṅ(D[a] + D[a†])ρ + Γ_d D[a†a]ρ` and checks
/// trace and positivity at every sample and at the end.
pub fn integrate_lindblad<H: Hamiltonian + ?Sized>(
    h: &H,
    rho0: &DensityMatrix,
    collapse: &CollapseSet,
    t0: f64,
    t1: f64,
    settings: &IntegratorSettings,
    plan: &Plan,
) -> Result<Evolution<DensityMatrix>> {
    settings.validate()?;
    collapse.validate()?;
    let dims = h.dims();
    if rho0.dims() != dims {
        return Err(Error::DimensionMismatch { expected: dims.dim(), found: rho0.dims().dim() });
    }
    let deviation = (rho0.trace() - C64::from(1.0)).norm();
    if deviation > POSITIVITY_TOL {
        return Err(Error::Normalization { deviation });
    }
    if rho0.hermiticity_defect() > HERMITIAN_TOL {
        return Err(Error::InvalidParameter("initial density matrix is not Hermitian".into()));
    }
    if !(t1 >= t0) {
        return Err(Error::InvalidParameter(format!("end time {t1} before start {t0}")));
    }

    let n = dims.dim();
    let mut channels = Vec::new();
    if collapse.heating_rate > 0.0 {
        channels.push(channel(collapse.heating_rate, ladder(dims, Ladder::Lower).into_matrix()));
        channels.push(channel(collapse.heating_rate, ladder(dims, Ladder::Raise).into_matrix()));
    }
    if collapse.dephasing_rate > 0.0 {
        channels.push(channel(collapse.dephasing_rate, number(dims).into_matrix()));
    }

    // row-major flattening: y[r·n + c] = ρ[r, c]
    let to_flat = |m: &DMatrix<C64>| -> Vec<C64> { m.transpose().as_slice().to_vec() };
    let from_flat = |y: &[C64]| DMatrix::from_row_slice(n, n, y);

    let mut y = to_flat(rho0.matrix());
    let mut samples = Vec::new();
    let mut stats = Stats { min_eigenvalue: 1.0, ..Default::default() };
    let checkpoint = |t: f64, y: &mut [C64], stats: &mut Stats, samples: &mut Vec<(f64, DensityMatrix)>| -> Result<()> {
        let mut rho = from_flat(y);
        let kicks: Vec<_> = plan.kicks.iter().filter(|k| k.time == t).collect();
        let sampled = plan.samples.iter().any(|&s| s == t);
        if !kicks.is_empty() || sampled {
            check_density(&DensityMatrix::from_matrix(dims, rho.clone())?, t, stats)?;
        }
        if !kicks.is_empty() {
            for k in kicks {
                rho = k.op.matrix() * rho * k.op.matrix().adjoint();
            }
            y.copy_from_slice(&to_flat(&rho));
        }
        if sampled {
            samples.push((t, DensityMatrix::from_matrix(dims, rho)?));
        }
        Ok(())
    };

    checkpoint(t0, &mut y, &mut stats, &mut samples)?;
    if t1 > t0 {
        let mut sys = Master {
            h,
            channels,
            coef: vec![ZERO; h.terms().len()],
            scratch: vec![ZERO; n * n],
            n,
        };
        let max_step = settings.step_bound(h.max_frequency(), t1 - t0);
        let mut local = stats;
        let run = integrate(&mut sys, &mut y, t0, t1, &plan.stops(), settings, max_step, |t, y, _| {
            checkpoint(t, y, &mut local, &mut samples)
        })?;
        stats = Stats {
            accepted: run.accepted,
            rejected: run.rejected,
            evaluations: run.evaluations,
            ..local
        };
    }
    let state = DensityMatrix::from_matrix(dims, from_flat(&y))?;
    check_density(&state, t1, &mut stats)?;
    Ok(Evolution { state, samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::TermHamiltonian;
    use crate::propagate::integrate_schrodinger;
    use crate::space::{
        pauli_sum, Axis, Operator, PauliKind, SpaceDescriptor, SpinBasis, StateVector,
    };

    fn dims() -> SpaceDescriptor {
        SpaceDescriptor::new(5).unwrap()
    }

    #[test]
    fn closed_system_matches_schrodinger() {
        let d = dims();
        let sz = pauli_sum(d, Axis::Z, PauliKind::Symmetric).unwrap();
        let sx = pauli_sum(d, Axis::X, PauliKind::Symmetric).unwrap();
        let a = ladder(d, Ladder::Lower);
        let ad = ladder(d, Ladder::Raise);
        let ops = vec![&sz * &a, &sz * &ad, sx];
        let h = TermHamiltonian::new(d, ops, 2.0, |t, c| {
            let f = C64::from_polar(0.4, -2.0 * t);
            c[0] = f;
            c[1] = f.conj();
            c[2] = C64::from(0.3 * t.cos());
        });
        let psi = StateVector::basis(d, SpinBasis::DownUp, 0).unwrap();
        let pure = integrate_schrodinger(&h, &psi, 0.0, 3.0, &Default::default(), &Plan::default()).unwrap();
        let mixed =
            integrate_lindblad(&h, &psi.to_density(), &CollapseSet::default(), 0.0, 3.0, &Default::default(), &Plan::default())
                .unwrap();
        let f = mixed.state.expectation(&Operator::from_matrix(d, pure.state.to_density().matrix().clone()).unwrap());
        assert!((f.re - 1.0).abs() < 1e-9, "{f}");
        assert!(mixed.stats.max_hermiticity_defect < 1e-12);
    }

    #[test]
    fn dephasing_decays_mode_coherence() {
        let d = dims();
        let h = TermHamiltonian::constant(d, Operator::zeros(d), 0.0);
        let mut m = DMatrix::zeros(d.dim(), d.dim());
        let (i0, i1) = (d.index(SpinBasis::DownDown, 0), d.index(SpinBasis::DownDown, 1));
        for (r, c) in [(i0, i0), (i0, i1), (i1, i0), (i1, i1)] {
            m[(r, c)] = C64::from(0.5);
        }
        let rho = DensityMatrix::from_matrix(d, m).unwrap();
        let gamma = 0.8;
        let collapse = CollapseSet { heating_rate: 0.0, dephasing_rate: gamma };
        let t = 1.7;
        let out = integrate_lindblad(&h, &rho, &collapse, 0.0, t, &Default::default(), &Plan::default()).unwrap();
        let coh = out.state.matrix()[(i0, i1)];
        assert!((coh.re - 0.5 * (-gamma * t / 2.0).exp()).abs() < 1e-10, "{coh}");
        assert!((out.state.matrix()[(i1, i1)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heating_initial_slope() {
        let d = SpaceDescriptor::new(8).unwrap();
        let h = TermHamiltonian::constant(d, Operator::zeros(d), 0.0);
        let rho = StateVector::basis(d, SpinBasis::DownDown, 0).unwrap().to_density();
        let ndot = 2.0;
        let collapse = CollapseSet { heating_rate: ndot, dephasing_rate: 0.0 };
        let n_op = number(d);
        let t = 1e-4;
        let out = integrate_lindblad(&h, &rho, &collapse, 0.0, t, &Default::default(), &Plan::default()).unwrap();
        let n = out.state.expectation(&n_op).re;
        // the symmetric channel pair gives d⟨n⟩/dt = ṅ(⟨n⟩+1) − ṅ⟨n⟩ = ṅ exactly
        assert!((n / t - ndot).abs() < 1e-6 * ndot, "{}", n / t);
        let long = integrate_lindblad(&h, &rho, &collapse, 0.0, 0.3, &Default::default(), &Plan::default()).unwrap();
        assert!(long.state.expectation(&n_op).re > n);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let d = dims();
        let h = TermHamiltonian::constant(d, Operator::zeros(d), 0.0);
        let rho = StateVector::basis(d, SpinBasis::DownDown, 0).unwrap().to_density();
        let bad = CollapseSet { heating_rate: -1.0, dephasing_rate: 0.0 };
        assert!(integrate_lindblad(&h, &rho, &bad, 0.0, 1.0, &Default::default(), &Plan::default()).is_err());
        let half = DensityMatrix::from_matrix(d, rho.matrix() * C64::from(0.5)).unwrap();
        assert!(matches!(
            integrate_lindblad(&h, &half, &CollapseSet::default(), 0.0, 1.0, &Default::default(), &Plan::default()),
            Err(Error::Normalization { .. })
        ));
    }
}
