//! Time evolution of state vectors and density matrices under a
//! [`Hamiltonian`](crate::drive::Hamiltonian), the exact bichromatic frame
//! transform, and the closed-form spin-dependent displacement.

pub mod dop853;
pub mod frame;
mod lindblad;
mod schrodinger;
pub mod sdf;
mod tableau;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Operator;

pub use lindblad::integrate_lindblad;
pub use schrodinger::integrate_schrodinger;

/// Relative drift of ‖ψ‖ or tr ρ that aborts a run.
pub const DRIFT_ABORT: f64 = 1e-6;
/// Allowed trace error and negative eigenvalue for density matrices.
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AdaptiveRk,
    FixedRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper step bound in seconds; `None` means `2π/(20 f_max)`.
    pub max_step: Option<f64>,
    pub initial_step: Option<f64>,
    /// Evenly spaced samples recorded by trajectory runs.
    pub sample_count: usize,
    pub max_steps: u64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            method: Method::AdaptiveRk,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: None,
            initial_step: None,
            sample_count: 200,
            max_steps: 200_000_000,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter("integrator tolerances must be positive".into()));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("max_step {h} must be positive")));
            }
        }
        Ok(())
    }

    /// Step bound for a Hamiltonian whose fastest angular frequency is
    /// `max_freq`, never longer than the interval itself.
    pub fn step_bound(&self, max_freq: f64, span: f64) -> f64 {
        let auto = if max_freq > 0.0 { 2.0 * std::f64::consts::PI / (20.0 * max_freq) } else { span };
        self.max_step.unwrap_or(auto).min(span).max(f64::MIN_POSITIVE)
    }
}

/// Motional heating `ṅ` (jumps `a` and `a†`) and dephasing `Γ_d` (jump `a†a`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapseSet {
    pub heating_rate: f64,
    pub dephasing_rate: f64,
}

impl CollapseSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.heating_rate >= 0.0 && self.dephasing_rate >= 0.0) {
            return Err(Error::InvalidParameter("collapse rates must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.heating_rate == 0.0 && self.dephasing_rate == 0.0
    }
}

/// Instantaneous unitary applied at `time`, after any sample there.
#[derive(Debug, Clone)]
pub struct Kick {
    pub time: f64,
    pub op: Operator,
}

/// Times at which the integrator must stop.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    /// States are recorded here (after any kick at the same instant).
    pub samples: Vec<f64>,
    pub kicks: Vec<Kick>,
    /// Non-smooth points of the Hamiltonian; stopping there keeps the
    /// step controller from straddling a kink.
    pub breakpoints: Vec<f64>,
}

impl Plan {
    pub fn samples(samples: Vec<f64>) -> Self {
        Self { samples, ..Default::default() }
    }

    fn stops(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .samples
            .iter()
            .chain(self.breakpoints.iter())
            .copied()
            .chain(self.kicks.iter().map(|k| k.time))
            .collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub accepted: u64,
    pub rejected: u64,
    pub evaluations: u64,
    /// Largest |‖ψ‖² − 1| or |tr ρ − 1| seen at a check point.
    pub max_drift: f64,
    /// Largest Hermiticity defect of ρ seen at a check point.
    pub max_hermiticity_defect: f64,
    /// Smallest eigenvalue of ρ seen at a check point (1 for state vectors).
    pub min_eigenvalue: f64,
}

/// `n` evenly spaced times in `[t0, t1]`, both ends included.
pub fn even_samples(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t1],
        _ => (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Result of an integration: final state, requested samples, statistics.
#[derive(Debug, Clone)]
pub struct Evolution<S> {
    pub state: S,
    pub samples: Vec<(f64, S)>,
    pub stats: Stats,
}
