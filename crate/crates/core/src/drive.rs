//! Time-dependent Hamiltonians in the lab frame, the qubit/motion rotating
//! frame, the bichromatic interaction picture and the near-resonant
//! two-tone reduction, together with pulse envelopes.
//!
//! Every builder returns a [`TermHamiltonian`]: a fixed list of sparse
//! operators with time-dependent complex coefficients. The integrators
//! only ever see that representation.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bessel::bessel_j_upto;
use crate::design::{GateMode, GateParams, Tone};
use crate::error::{Error, Result};
use crate::space::{
    ladder, number, pauli_difference, pauli_sum, Axis, Ladder, Operator, PauliKind, SpaceDescriptor,
    SparseOperator, C64, ZERO,
};

/// Series order used whenever the caller does not ask for one.
pub const DEFAULT_SERIES_ORDER: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeShape {
    Blackman,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSchedule {
    pub ramp_time: f64,
    pub shape: EnvelopeShape,
}

impl EnvelopeSchedule {
    pub const fn rectangular() -> Self {
        Self { ramp_time: 0.0, shape: EnvelopeShape::Rectangular }
    }

    pub const fn blackman(ramp_time: f64) -> Self {
        Self { ramp_time, shape: EnvelopeShape::Blackman }
    }

    /// Ramp duration actually used; rectangular edges take no time.
    pub fn effective_ramp(&self) -> f64 {
        match self.shape {
            EnvelopeShape::Rectangular => 0.0,
            EnvelopeShape::Blackman => self.ramp_time,
        }
    }
}

impl Default for EnvelopeSchedule {
    fn default() -> Self {
        Self::blackman(20e-6)
    }
}

/// Rising edge measured from its start at `t = 0`.
pub fn envelope_value(t: f64, schedule: &EnvelopeSchedule) -> f64 {
    let tr = schedule.effective_ramp();
    if t >= tr {
        1.0
    } else if t <= 0.0 {
        0.0
    } else {
        let u = PI * t / tr;
        // the ramp is monotone, so clamping only removes rounding below zero
        (0.42 - 0.5 * u.cos() + 0.08 * (2.0 * u).cos()).clamp(0.0, 1.0)
    }
}

/// Pulse layout: microwaves ramp up, then one gradient pulse per segment,
/// then the microwaves ramp down. Instantaneous spin rotations sit at the
/// segment boundaries, where the gradient is off.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTimeline {
    schedule: EnvelopeSchedule,
    starts: Vec<f64>,
    lengths: Vec<f64>,
    /// Gradient carrier phase of each pulse.
    phases: Vec<f64>,
    total: f64,
}

impl PulseTimeline {
    /// `segment_lengths` are the nominal gradient durations; with Blackman
    /// edges each gradient pulse has a plateau of `length − ramp_time` so
    /// that its spectrum vanishes wherever a rectangle of `length` does.
    pub fn new(schedule: EnvelopeSchedule, segment_lengths: &[f64]) -> Result<Self> {
        Self::with_dwell(schedule, segment_lengths, 0.0)
    }

    /// As [`new`](Self::new) with an extra microwave-only `dwell` before the
    /// first and after the last gradient pulse.
    pub fn with_dwell(schedule: EnvelopeSchedule, segment_lengths: &[f64], dwell: f64) -> Result<Self> {
        if !(dwell >= 0.0 && dwell.is_finite()) {
            return Err(Error::InvalidParameter(format!("dwell {dwell} must be non-negative")));
        }
        if segment_lengths.is_empty() {
            return Err(Error::InvalidParameter("timeline needs at least one segment".into()));
        }
        let tr = schedule.effective_ramp();
        if tr < 0.0 || !tr.is_finite() {
            return Err(Error::InvalidParameter(format!("ramp time {tr}")));
        }
        let mut starts = Vec::with_capacity(segment_lengths.len());
        let mut s = tr + dwell;
        for &l in segment_lengths {
            if !(l > 0.0) || l < tr {
                return Err(Error::InvalidParameter(format!(
                    "segment length {l:e} s shorter than the {tr:e} s ramp"
                )));
            }
            starts.push(s);
            s += l + tr;
        }
        Ok(Self {
            schedule,
            starts,
            lengths: segment_lengths.to_vec(),
            phases: vec![0.0; segment_lengths.len()],
            total: s + dwell + tr,
        })
    }

    /// Sets the gradient carrier phase `φ_i` of each pulse, so that pulse
    /// `i` oscillates as `cos(ω_g t + φ_i)`.
    pub fn with_carrier_phases(mut self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.lengths.len() {
            return Err(Error::DimensionMismatch { expected: self.lengths.len(), found: phases.len() });
        }
        self.phases = phases.to_vec();
        Ok(self)
    }

    /// Carrier phase of the pulse active at `t`, 0 between pulses.
    pub fn carrier_phase(&self, t: f64) -> f64 {
        self.active(t).map_or(0.0, |i| self.phases[i])
    }

    fn active(&self, t: f64) -> Option<usize> {
        let tr = self.schedule.effective_ramp();
        (0..self.starts.len()).find(|&i| t >= self.starts[i] && t < self.starts[i] + self.lengths[i] + tr)
    }

    /// Single uninterrupted gradient pulse of length `t_gate`.
    pub fn single(schedule: EnvelopeSchedule, t_gate: f64) -> Result<Self> {
        Self::new(schedule, &[t_gate])
    }

    pub fn schedule(&self) -> EnvelopeSchedule {
        self.schedule
    }

    pub fn carrier_phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let tr = self.schedule.effective_ramp();
        self.starts.iter().zip(&self.lengths).map(move |(&s, &l)| (s, s + l + tr))
    }

    /// Instants between consecutive gradient pulses.
    pub fn boundaries(&self) -> Vec<f64> {
        self.starts.iter().skip(1).copied().collect()
    }

    /// Every instant where an envelope changes its functional form.
    pub fn breakpoints(&self) -> Vec<f64> {
        let tr = self.schedule.effective_ramp();
        let mut out = vec![0.0, tr];
        for (&s, &l) in self.starts.iter().zip(&self.lengths) {
            out.extend([s, s + tr, s + l, s + l + tr]);
        }
        out.push(self.total - tr);
        out.push(self.total);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * self.total);
        out
    }

    /// The falling edge mirrors the rising one, so anything accumulated
    /// during the ramps is echoed by an odd number of π pulses.
    pub fn microwave(&self, t: f64) -> f64 {
        envelope_value(t, &self.schedule).min(envelope_value(self.total - t, &self.schedule))
    }

    /// Each gradient pulse is a rectangle of its nominal length smoothed by
    /// the ramp derivative, so the falling edge is `1 − a` rather than the
    /// mirrored rise. That keeps the Fourier zeros of the rectangle, and with
    /// them exact loop closure.
    pub fn gradient(&self, t: f64) -> f64 {
        match self.active(t) {
            Some(i) => {
                let (s, l) = (self.starts[i], self.lengths[i]);
                envelope_value(t - s, &self.schedule) - envelope_value(t - s - l, &self.schedule)
            }
            None => 0.0,
        }
    }

    pub fn is_rectangular(&self) -> bool {
        self.schedule.effective_ramp() == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientWaveform {
    Oscillating,
    Static,
}

/// Field amplitudes and frequencies, all angular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub gradient_rabi: f64,
    pub microwave_rabi: f64,
    pub motional_freq: f64,
    pub gradient_freq: f64,
    /// Microwave pairs `(c_n, δ_n)`.
    pub tones: Vec<(f64, f64)>,
    pub waveform: GradientWaveform,
    pub microwave_axis: Axis,
    pub gradient_axis: Axis,
}

impl DriveConfig {
    pub fn from_params(p: &GateParams) -> Self {
        Self {
            gradient_rabi: p.gradient_rabi,
            microwave_rabi: p.microwave_rabi,
            motional_freq: p.motional_freq,
            gradient_freq: p.gradient_freq,
            tones: vec![(1.0, p.detuning)],
            waveform: GradientWaveform::Oscillating,
            microwave_axis: Axis::X,
            gradient_axis: Axis::Z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.microwave_axis == Axis::Z {
            return Err(Error::InvalidParameter("microwave axis must be x or y".into()));
        }
        for (name, v) in [
            ("gradient Rabi frequency", self.gradient_rabi),
            ("microwave Rabi frequency", self.microwave_rabi),
            ("gradient frequency", self.gradient_freq),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative (got {v})")));
            }
        }
        if !(self.motional_freq > 0.0) {
            return Err(Error::InvalidParameter("motional frequency must be positive".into()));
        }
        if self.waveform == GradientWaveform::Oscillating && !(self.gradient_freq > 0.0) {
            return Err(Error::InvalidParameter("oscillating gradient needs ω_g > 0".into()));
        }
        for &(c, d) in &self.tones {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter(format!("tone detuning {d} must be positive")));
            }
            if !(0.1..=10.0).contains(&c.abs()) {
                log::warn!("tone amplitude {c} is far from order unity");
            }
        }
        Ok(())
    }

    fn gradient_profile(&self, t: f64, phase: f64) -> f64 {
        match self.waveform {
            GradientWaveform::Oscillating => (self.gradient_freq * t + phase).cos(),
            GradientWaveform::Static => 1.0,
        }
    }
}

/// Qubit-shift, motional and residual-field imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Qubit shift amplitude ε.
    pub epsilon: f64,
    /// Qubit shift oscillation frequency ω_ε; 0 is static.
    pub epsilon_freq: f64,
    pub symmetry: ShiftSymmetry,
    /// Motional frequency offset ν.
    pub motional_offset: f64,
    /// Residual homogeneous field amplitude Ω_z at ω_g.
    pub residual_field: f64,
    /// Heating rate ṅ in quanta/s.
    pub heating_rate: f64,
    /// Motional dephasing rate Γ_d in 1/s.
    pub dephasing_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftSymmetry {
    Symmetric,
    Antisymmetric,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            epsilon_freq: 0.0,
            symmetry: ShiftSymmetry::Symmetric,
            motional_offset: 0.0,
            residual_field: 0.0,
            heating_rate: 0.0,
            dephasing_rate: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("epsilon frequency", self.epsilon_freq),
            ("residual field", self.residual_field),
            ("heating rate", self.heating_rate),
            ("dephasing rate", self.dephasing_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative (got {v})")));
            }
        }
        if !self.motional_offset.is_finite() {
            return Err(Error::InvalidParameter("motional offset must be finite".into()));
        }
        Ok(())
    }

    pub fn is_dissipative(&self) -> bool {
        self.heating_rate > 0.0 || self.dephasing_rate > 0.0
    }
}

type CoefFn = dyn Fn(f64, &mut [C64]) + Send + Sync;

/// `H(t) = Σ_k c_k(t) A_k` with fixed sparse `A_k`.
#[derive(Clone)]
pub struct TermHamiltonian {
    dims: SpaceDescriptor,
    ops: Vec<SparseOperator>,
    coef: Arc<CoefFn>,
    max_freq: f64,
}

impl std::fmt::Debug for TermHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TermHamiltonian")
            .field("dims", &self.dims)
            .field("terms", &self.ops.len())
            .field("max_freq", &self.max_freq)
            .finish()
    }
}

/// Time-dependent operator in sparse-term form.
pub trait Hamiltonian: Send + Sync {
    fn dims(&self) -> SpaceDescriptor;
    fn terms(&self) -> &[SparseOperator];
    /// Writes `c_k(t)` into `out`, one entry per term.
    fn coefficients(&self, t: f64, out: &mut [C64]);
    /// Largest angular frequency present, used to bound the step size.
    fn max_frequency(&self) -> f64;

    /// `out = H(t)·ψ`
    fn apply(&self, t: f64, psi: &[C64], coef: &mut [C64], out: &mut [C64]) {
        self.coefficients(t, coef);
        out.iter_mut().for_each(|z| *z = ZERO);
        for (op, &c) in self.terms().iter().zip(coef.iter()) {
            if c != ZERO {
                op.apply_add(c, psi, out);
            }
        }
    }

    fn matrix(&self, t: f64) -> Operator {
        let dims = self.dims();
        let mut coef = vec![ZERO; self.terms().len()];
        self.coefficients(t, &mut coef);
        let mut m = nalgebra::DMatrix::zeros(dims.dim(), dims.dim());
        for (op, &c) in self.terms().iter().zip(&coef) {
            for &(r, col, v) in op.entries() {
                m[(r, col)] += c * v;
            }
        }
        Operator::from_matrix(dims, m).expect("terms share the descriptor")
    }
}

impl Hamiltonian for TermHamiltonian {
    fn dims(&self) -> SpaceDescriptor {
        self.dims
    }

    fn terms(&self) -> &[SparseOperator] {
        &self.ops
    }

    fn coefficients(&self, t: f64, out: &mut [C64]) {
        (self.coef)(t, out)
    }

    fn max_frequency(&self) -> f64 {
        self.max_freq
    }
}

impl TermHamiltonian {
    pub fn new<F>(dims: SpaceDescriptor, ops: Vec<Operator>, max_freq: f64, coef: F) -> Self
    where
        F: Fn(f64, &mut [C64]) + Send + Sync + 'static,
    {
        let ops = ops.iter().map(Operator::to_sparse).collect();
        Self { dims, ops, coef: Arc::new(coef), max_freq }
    }

    /// Time-independent Hamiltonian.
    pub fn constant(dims: SpaceDescriptor, op: Operator, max_freq: f64) -> Self {
        Self::new(dims, vec![op], max_freq, |_, c| c[0] = C64::new(1.0, 0.0))
    }

    /// `H(t) + G(t)`
    pub fn sum(self, other: TermHamiltonian) -> TermHamiltonian {
        let n = self.ops.len();
        let (a, b) = (self.coef.clone(), other.coef.clone());
        let mut ops = self.ops;
        ops.extend(other.ops);
        TermHamiltonian {
            dims: self.dims,
            ops,
            coef: Arc::new(move |t, out: &mut [C64]| {
                let (l, r) = out.split_at_mut(n);
                a(t, l);
                b(t, r);
            }),
            max_freq: self.max_freq.max(other.max_freq),
        }
    }

    pub fn nnz(&self) -> usize {
        self.ops.iter().map(SparseOperator::nnz).sum()
    }
}

/// Spin operator along `axis`, either `σ₁ + σ₂` or `σ₁ − σ₂`.
fn spin_op(dims: SpaceDescriptor, axis: Axis, symmetry: ShiftSymmetry) -> Operator {
    match symmetry {
        ShiftSymmetry::Symmetric => pauli_sum(dims, axis, PauliKind::Symmetric).expect("symmetric"),
        ShiftSymmetry::Antisymmetric => pauli_difference(dims, axis),
    }
}

/// `(k, ε_ijk)` for the axis completing `(i, j)`; `None` when `i = j`.
fn levi_civita(i: Axis, j: Axis) -> Option<(Axis, f64)> {
    use Axis::*;
    match (i, j) {
        (X, Y) => Some((Z, 1.0)),
        (Y, Z) => Some((X, 1.0)),
        (Z, X) => Some((Y, 1.0)),
        (Y, X) => Some((Z, -1.0)),
        (Z, Y) => Some((X, -1.0)),
        (X, Z) => Some((Y, -1.0)),
        _ => None,
    }
}

/// Bessel expansion of the bichromatic rotation: `U†O_jU = C(t)O_j + s·D(t)O_k`
/// with `C = J₀ + 2ΣJ_{2n}cos(2nδt)` and `D = 2ΣJ_{2n−1}sin((2n−1)δt)`.
#[derive(Debug, Clone)]
pub struct BesselSeries {
    coeffs: Vec<f64>,
    freq: f64,
}

impl BesselSeries {
    pub fn new(x: f64, freq: f64, order: usize) -> Result<Self> {
        Ok(Self { coeffs: bessel_j_upto(order, x)?, freq })
    }

    /// `(C(t), D(t))`
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (s1, c1) = (self.freq * t).sin_cos();
        let (mut ck, mut sk) = (1.0, 0.0);
        let mut c = self.coeffs[0];
        let mut d = 0.0;
        for (n, &jn) in self.coeffs.iter().enumerate().skip(1) {
            let next_c = ck * c1 - sk * s1;
            sk = sk * c1 + ck * s1;
            ck = next_c;
            if n % 2 == 0 {
                c += 2.0 * jn * ck;
            } else {
                d += 2.0 * jn * sk;
            }
        }
        (c, d)
    }

    pub fn coefficient(&self, n: usize) -> f64 {
        self.coeffs.get(n).copied().unwrap_or(0.0)
    }
}

fn mode_part(dims: SpaceDescriptor) -> (Operator, Operator) {
    (ladder(dims, Ladder::Lower), ladder(dims, Ladder::Raise))
}

fn noise_max_freq(noise: &NoiseSpec, drive_gradient_freq: f64) -> f64 {
    let mut f = noise.epsilon_freq.max(noise.motional_offset.abs());
    if noise.residual_field > 0.0 {
        f = f.max(drive_gradient_freq);
    }
    f
}

/// Full lab-frame Hamiltonian including the qubit splitting `ω₀`.
pub fn h_lab(dims: SpaceDescriptor, drive: &DriveConfig, omega_0: f64, timeline: &PulseTimeline) -> Result<TermHamiltonian> {
    drive.validate()?;
    let (a, ad) = mode_part(dims);
    let sz = pauli_sum(dims, Axis::Z, PauliKind::Symmetric)?;
    let sj = pauli_sum(dims, drive.gradient_axis, PauliKind::Symmetric)?;
    let si = pauli_sum(dims, drive.microwave_axis, PauliKind::Symmetric)?;
    let h0 = &sz.scale(C64::from(omega_0 / 2.0)) + &number(dims).scale(C64::from(drive.motional_freq));
    let grad = &sj * &(&a + &ad);
    let d = drive.clone();
    let tl = timeline.clone();
    let max_tone = drive.tones.iter().fold(0.0f64, |m, t| m.max(t.1));
    let max_freq = (omega_0 + max_tone)
        .max(drive.motional_freq)
        .max(drive.gradient_freq)
        .max(4.0 * drive.microwave_rabi);
    Ok(TermHamiltonian::new(dims, vec![h0, grad, si], max_freq, move |t, c| {
        c[0] = C64::new(1.0, 0.0);
        c[1] = C64::from(2.0 * d.gradient_rabi * tl.gradient(t) * d.gradient_profile(t, tl.carrier_phase(t)));
        let mw: f64 = d
            .tones
            .iter()
            .map(|&(cn, dn)| cn * (((omega_0 + dn) * t).cos() + ((omega_0 - dn) * t).cos()))
            .sum();
        c[2] = C64::from(2.0 * d.microwave_rabi * tl.microwave(t) * mw);
    }))
}

/// Rotating-frame Hamiltonian: [`h_lab`] with the terms near `2ω₀` dropped,
/// so each microwave pair contributes `2Ω_μ c_n cos(δ_n t) S_i`. Noise
/// terms are added on top.
pub fn h_rwa(
    dims: SpaceDescriptor,
    drive: &DriveConfig,
    noise: &NoiseSpec,
    timeline: &PulseTimeline,
) -> Result<TermHamiltonian> {
    drive.validate()?;
    noise.validate()?;
    let (a, ad) = mode_part(dims);
    let i_axis = drive.microwave_axis;
    let sj = pauli_sum(dims, drive.gradient_axis, PauliKind::Symmetric)?;
    let si = pauli_sum(dims, i_axis, PauliKind::Symmetric)?;
    let sz = pauli_sum(dims, Axis::Z, PauliKind::Symmetric)?;
    let shift = spin_op(dims, Axis::Z, noise.symmetry);
    let ops = vec![si, &sj * &a, &sj * &ad, shift, sz, number(dims)];

    let d = drive.clone();
    let n = *noise;
    let tl = timeline.clone();
    let max_tone = drive.tones.iter().fold(0.0f64, |m, t| m.max(t.1));
    let max_freq = (drive.motional_freq + drive.gradient_freq)
        .max(max_tone)
        .max(4.0 * drive.microwave_rabi)
        .max(noise_max_freq(noise, drive.gradient_freq));
    Ok(TermHamiltonian::new(dims, ops, max_freq, move |t, c| {
        let mw: f64 = d.tones.iter().map(|&(cn, dn)| cn * (dn * t).cos()).sum();
        c[0] = C64::from(2.0 * d.microwave_rabi * tl.microwave(t) * mw);
        let eg = tl.gradient(t);
        let phase = tl.carrier_phase(t);
        let g = 2.0 * d.gradient_rabi * eg * d.gradient_profile(t, phase);
        let rot = C64::from_polar(1.0, -d.motional_freq * t);
        c[1] = rot * g;
        c[2] = rot.conj() * g;
        c[3] = C64::from(0.5 * n.epsilon * (n.epsilon_freq * t).cos());
        c[4] = C64::from(2.0 * n.residual_field * eg * (d.gradient_freq * t + phase).cos());
        c[5] = C64::from(n.motional_offset);
    }))
}

/// Bichromatic interaction picture, Bessel series truncated at `series_order`.
/// Requires a single microwave pair switched on abruptly.
pub fn h_bip(
    dims: SpaceDescriptor,
    drive: &DriveConfig,
    noise: &NoiseSpec,
    timeline: &PulseTimeline,
    series_order: usize,
) -> Result<TermHamiltonian> {
    drive.validate()?;
    noise.validate()?;
    let &[(cn, delta)] = drive.tones.as_slice() else {
        return Err(Error::InvalidParameter("bichromatic frame needs exactly one microwave pair".into()));
    };
    if !timeline.is_rectangular() {
        return Err(Error::InvalidParameter(
            "bichromatic frame is only implemented for a rectangular microwave envelope".into(),
        ));
    }
    let x = 4.0 * drive.microwave_rabi * cn / delta;
    if x.abs() > 5.0 && series_order < 10 {
        return Err(Error::InvalidParameter(format!(
            "series order {series_order} is not converged for 4Ω_μ/δ = {x:.3}"
        )));
    }
    let series = BesselSeries::new(x, delta, series_order)?;
    let (a, ad) = mode_part(dims);
    let i_axis = drive.microwave_axis;
    let j_axis = drive.gradient_axis;

    let sj = pauli_sum(dims, j_axis, PauliKind::Symmetric)?;
    let (sk, sign_g) = match levi_civita(i_axis, j_axis) {
        Some((k, eps)) => (pauli_sum(dims, k, PauliKind::Symmetric)?, -eps),
        None => (Operator::zeros(dims), 0.0),
    };
    let (z_perp, eps_z) = levi_civita(i_axis, Axis::Z).expect("microwave axis is x or y");
    let sz = pauli_sum(dims, Axis::Z, PauliKind::Symmetric)?;
    let szk = pauli_sum(dims, z_perp, PauliKind::Symmetric)?;
    let shift = spin_op(dims, Axis::Z, noise.symmetry);
    let shift_k = spin_op(dims, z_perp, noise.symmetry);
    let ops = vec![
        &sj * &a,
        &sj * &ad,
        &sk * &a,
        &sk * &ad,
        shift,
        shift_k,
        sz,
        szk,
        number(dims),
    ];

    let d = drive.clone();
    let n = *noise;
    let tl = timeline.clone();
    let sign_z = -eps_z;
    let mw_on = timeline.total();
    let max_freq = (drive.motional_freq + drive.gradient_freq + series_order as f64 * delta)
        .max(noise_max_freq(noise, drive.gradient_freq) + series_order as f64 * delta);
    Ok(TermHamiltonian::new(dims, ops, max_freq, move |t, c| {
        let (cc, dd) = if (0.0..=mw_on).contains(&t) { series.eval(t) } else { (1.0, 0.0) };
        let eg = tl.gradient(t);
        let phase = tl.carrier_phase(t);
        let g = 2.0 * d.gradient_rabi * eg * d.gradient_profile(t, phase);
        let rot = C64::from_polar(1.0, -d.motional_freq * t);
        c[0] = rot * (g * cc);
        c[1] = rot.conj() * (g * cc);
        c[2] = rot * (g * sign_g * dd);
        c[3] = rot.conj() * (g * sign_g * dd);
        let e = 0.5 * n.epsilon * (n.epsilon_freq * t).cos();
        c[4] = C64::from(e * cc);
        c[5] = C64::from(e * sign_z * dd);
        let r = 2.0 * n.residual_field * eg * (d.gradient_freq * t + phase).cos();
        c[6] = C64::from(r * cc);
        c[7] = C64::from(r * sign_z * dd);
        c[8] = C64::from(n.motional_offset);
    }))
}

/// Harmonic of `δ` closest to `ω`.
fn nearest_harmonic(omega: f64, delta: f64) -> usize {
    (omega / delta).round() as usize
}

/// Slow coefficient of a `cos(ωt + φ)` drive seen through the bichromatic
/// frame, keeping only harmonic `m`. Returns `(z part, perpendicular part)`.
fn resonant_harmonic(t: f64, omega: f64, phase: f64, delta: f64, m: usize, jm: f64) -> (f64, f64) {
    if m == 0 {
        (jm * (omega * t + phase).cos(), 0.0)
    } else if m % 2 == 0 {
        (jm * ((omega - m as f64 * delta) * t + phase).cos(), 0.0)
    } else {
        (0.0, jm * ((m as f64 * delta - omega) * t - phase).sin())
    }
}

/// Two-tone (or single-tone) spin-dependent force kept after dropping all
/// off-resonant sidebands, with the noise reduced the same way.
pub fn h_resonant(
    dims: SpaceDescriptor,
    params: &GateParams,
    noise: &NoiseSpec,
    timeline: &PulseTimeline,
) -> Result<TermHamiltonian> {
    h_resonant_tones(dims, params, &params.tones(), &params.carrier_signs(), noise, timeline)
}

/// Resonant form with an explicit tone list, e.g. for ratio-tuned or
/// hand-built force spectra. Tone `k` picks up `carrier_signs[k]·φ_i` from
/// the gradient carrier phase of pulse `i`.
pub fn h_resonant_tones(
    dims: SpaceDescriptor,
    params: &GateParams,
    tones: &[Tone],
    carrier_signs: &[f64],
    noise: &NoiseSpec,
    timeline: &PulseTimeline,
) -> Result<TermHamiltonian> {
    noise.validate()?;
    if carrier_signs.len() != tones.len() {
        return Err(Error::DimensionMismatch { expected: tones.len(), found: carrier_signs.len() });
    }
    let signs = carrier_signs.to_vec();
    for tn in tones {
        if !(tn.detuning > 0.0) {
            return Err(Error::InvalidParameter(format!("tone detuning {} must be positive", tn.detuning)));
        }
    }
    let (a, ad) = mode_part(dims);
    let sz = pauli_sum(dims, Axis::Z, PauliKind::Symmetric)?;
    let sy = pauli_sum(dims, Axis::Y, PauliKind::Symmetric)?;
    let shift = spin_op(dims, Axis::Z, noise.symmetry);
    let shift_y = spin_op(dims, Axis::Y, noise.symmetry);
    let ops = vec![&sz * &a, &sz * &ad, shift, shift_y, sz, sy, number(dims)];

    let delta = params.detuning;
    let x = params.bessel_arg;
    let m_eps = nearest_harmonic(noise.epsilon_freq, delta);
    let m_res = nearest_harmonic(params.gradient_freq, delta);
    let tones = tones.to_vec();
    let n = *noise;
    let tl = timeline.clone();
    let omega_g = params.gradient_freq;
    let mut max_freq = tones.iter().fold(0.0f64, |m, t| m.max(t.detuning));
    max_freq = max_freq
        .max((noise.epsilon_freq - m_eps as f64 * delta).abs())
        .max(noise.motional_offset.abs());
    if noise.residual_field > 0.0 {
        max_freq = max_freq.max((omega_g - m_res as f64 * delta).abs());
    }
    let order = m_eps.max(m_res).max(1);
    if order > crate::bessel::MAX_ORDER {
        return Err(Error::OutOfRange(format!("harmonic {order} beyond supported Bessel order")));
    }
    Ok(TermHamiltonian::new(dims, ops, max_freq, move |t, c| {
        let eg = tl.gradient(t);
        let phase = tl.carrier_phase(t);
        let mut f = ZERO;
        for (tn, sign) in tones.iter().zip(&signs) {
            f += C64::from_polar(tn.amplitude, -(tn.detuning * t + tn.phase + sign * phase));
        }
        c[0] = f * eg;
        c[1] = f.conj() * eg;
        // the Bessel argument follows the microwave envelope adiabatically
        let xe = x * tl.microwave(t);
        let je = if n.epsilon > 0.0 { crate::bessel::bessel_j(m_eps, xe).unwrap_or(0.0) } else { 0.0 };
        let (ez, ey) = resonant_harmonic(t, n.epsilon_freq, 0.0, delta, m_eps, je);
        c[2] = C64::from(0.5 * n.epsilon * ez);
        c[3] = C64::from(0.5 * n.epsilon * ey);
        let jr = if n.residual_field > 0.0 { crate::bessel::bessel_j(m_res, xe).unwrap_or(0.0) } else { 0.0 };
        let (rz, ry) = resonant_harmonic(t, omega_g, phase, delta, m_res, jr);
        let w = 2.0 * n.residual_field * eg;
        c[4] = C64::from(w * rz);
        c[5] = C64::from(w * ry);
        c[6] = C64::from(n.motional_offset);
    }))
}

/// Spin factor `U†S_zU` for several bichromatic pairs about x, from the
/// product of their Jacobi–Anger series, each truncated at `order`.
pub fn multi_pair_spin_factor(
    dims: SpaceDescriptor,
    t: f64,
    pairs: &[(f64, f64)],
    microwave_rabi: f64,
    order: usize,
) -> Result<Operator> {
    let (re, im) = multi_pair_coefficients(t, pairs, microwave_rabi, order)?;
    let sz = pauli_sum(dims, Axis::Z, PauliKind::Symmetric)?;
    let sy = pauli_sum(dims, Axis::Y, PauliKind::Symmetric)?;
    Ok(&sz.scale(C64::from(re)) + &sy.scale(C64::from(im)))
}

/// `(S_z coefficient, S_y coefficient)` of the multi-pair spin factor.
pub fn multi_pair_coefficients(t: f64, pairs: &[(f64, f64)], microwave_rabi: f64, order: usize) -> Result<(f64, f64)> {
    let mut prod = C64::new(1.0, 0.0);
    for &(c, d) in pairs {
        let x = 4.0 * microwave_rabi * c / d;
        let (cc, ss) = BesselSeries::new(x, d, order)?.eval(t);
        prod *= C64::new(cc, ss);
    }
    Ok((prod.re, prod.im))
}

/// First-order weak-field form `S_z + (4Ω_μ/ω_r)S_y Σ c_k sin(δ_k t)`.
pub fn multi_pair_first_order(
    dims: SpaceDescriptor,
    t: f64,
    pairs: &[(f64, f64)],
    microwave_rabi: f64,
    motional_freq: f64,
) -> Result<Operator> {
    let sz = pauli_sum(dims, Axis::Z, PauliKind::Symmetric)?;
    let sy = pauli_sum(dims, Axis::Y, PauliKind::Symmetric)?;
    let s: f64 = pairs.iter().map(|&(c, d)| c * (d * t).sin()).sum();
    Ok(&sz + &sy.scale(C64::from(4.0 * microwave_rabi / motional_freq * s)))
}

/// Short label used in tables.
pub fn mode_label(params: &GateParams) -> String {
    match params.mode {
        GateMode::IddSingle => "idd-single".into(),
        GateMode::IddJ => format!("idd-{}", params.j),
        GateMode::RatioTuned => format!("ratio-{}", params.j),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::solve_idd_j;
    use crate::propagate::frame::bichromatic_frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TWO_PI: f64 = 2.0 * PI;

    fn dims() -> SpaceDescriptor {
        SpaceDescriptor::new(4).unwrap()
    }

    /// Unit-scale drive with a non-trivial Bessel argument.
    fn toy_drive() -> DriveConfig {
        DriveConfig {
            gradient_rabi: 0.05,
            microwave_rabi: 1.3,
            motional_freq: 10.0,
            gradient_freq: 3.0,
            tones: vec![(1.0, 2.0)],
            waveform: GradientWaveform::Oscillating,
            microwave_axis: Axis::X,
            gradient_axis: Axis::Z,
        }
    }

    fn toy_noise() -> NoiseSpec {
        NoiseSpec {
            epsilon: 0.4,
            epsilon_freq: 1.7,
            symmetry: ShiftSymmetry::Antisymmetric,
            motional_offset: 0.02,
            residual_field: 0.3,
            ..Default::default()
        }
    }

    #[test]
    fn envelope_values() {
        let s = EnvelopeSchedule::blackman(20e-6);
        assert_eq!(envelope_value(0.0, &s), 0.0);
        assert!((envelope_value(20e-6, &s) - 1.0).abs() < 1e-15);
        // 0.42 − 0.5·cos(π/2) + 0.08·cos(π)
        assert!((envelope_value(10e-6, &s) - 0.34).abs() < 1e-14);
        assert_eq!(envelope_value(5.0, &EnvelopeSchedule::rectangular()), 1.0);
        // C¹ at both ends of the ramp
        let h = 1e-9;
        let slope0 = envelope_value(h, &s) / h;
        let slope1 = (1.0 - envelope_value(20e-6 - h, &s)) / h;
        assert!(slope0 * 20e-6 < 1e-3 && slope1 * 20e-6 < 1e-3);
    }

    #[test]
    fn timeline_layout() {
        let tr = 20e-6;
        let tl = PulseTimeline::new(EnvelopeSchedule::blackman(tr), &[1e-3, 1e-3]).unwrap();
        assert!((tl.total() - (4.0 * tr + 2e-3)).abs() < 1e-15);
        assert_eq!(tl.boundaries(), vec![tr + 1e-3 + tr]);
        // gradient off whenever the microwaves are ramping and at the boundary
        assert_eq!(tl.gradient(0.5 * tr), 0.0);
        assert_eq!(tl.gradient(tl.boundaries()[0]), 0.0);
        assert!((tl.microwave(tl.boundaries()[0]) - 1.0).abs() < 1e-15);
        assert!((tl.gradient(tr + 0.5e-3) - 1.0).abs() < 1e-15);
        assert!(tl.microwave(tl.total()).abs() < 1e-15);
        assert!(PulseTimeline::new(EnvelopeSchedule::blackman(tr), &[1e-6]).is_err());
        assert!(PulseTimeline::new(EnvelopeSchedule::blackman(tr), &[]).is_err());
    }

    #[test]
    fn dwell_and_carrier_phases() {
        let tr = 20e-6;
        let dwell = 3e-6;
        let tl = PulseTimeline::with_dwell(EnvelopeSchedule::blackman(tr), &[1e-3, 1e-3], dwell)
            .unwrap()
            .with_carrier_phases(&[0.4, -1.1])
            .unwrap();
        assert!((tl.total() - (4.0 * tr + 2e-3 + 2.0 * dwell)).abs() < 1e-15);
        assert!((tl.boundaries()[0] - 0.5 * tl.total()).abs() < 1e-15);
        assert_eq!(tl.gradient(tr + 0.5 * dwell), 0.0);
        assert!((tl.microwave(tr + 0.5 * dwell) - 1.0).abs() < 1e-15);
        for t in [0.3 * tl.total(), 0.7 * tl.total(), tr + 0.2 * dwell] {
            assert!((tl.microwave(t) - tl.microwave(tl.total() - t)).abs() < 1e-15);
        }
        assert_eq!(tl.carrier_phase(0.25 * tl.total()), 0.4);
        assert_eq!(tl.carrier_phase(0.75 * tl.total()), -1.1);
        assert_eq!(tl.carrier_phase(0.5 * tr), 0.0);
        assert!(tl.clone().with_carrier_phases(&[0.0]).is_err());
        assert!(PulseTimeline::with_dwell(EnvelopeSchedule::blackman(tr), &[1e-3], -1e-6).is_err());
    }

    #[test]
    fn gradient_pulse_spectrum_keeps_rectangle_zeros() {
        let tr = 0.3;
        let l = 2.0;
        let tl = PulseTimeline::single(EnvelopeSchedule::blackman(tr), l).unwrap();
        let (a, b) = tl.segments().next().unwrap();
        for m in 1..5 {
            let mu = TWO_PI * m as f64 / l;
            let n = 20000;
            let h = (b - a) / n as f64;
            let integral: C64 = (0..n)
                .map(|i| {
                    let t = a + (i as f64 + 0.5) * h;
                    C64::from_polar(tl.gradient(t) * h, mu * t)
                })
                .sum();
            assert!(integral.norm() < 1e-7, "m={m}: {integral}");
        }
    }

    #[test]
    fn builders_are_hermitian() {
        let d = dims();
        let tl = PulseTimeline::single(EnvelopeSchedule::rectangular(), 20.0).unwrap();
        let drive = toy_drive();
        let noise = toy_noise();
        let params = solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 2, 2, 3).unwrap();
        let ptl = PulseTimeline::single(EnvelopeSchedule::blackman(20e-6), params.t_gate).unwrap();
        let hs: Vec<TermHamiltonian> = vec![
            h_lab(d, &drive, 40.0, &tl).unwrap(),
            h_rwa(d, &drive, &noise, &tl).unwrap(),
            h_bip(d, &drive, &noise, &tl, DEFAULT_SERIES_ORDER).unwrap(),
            h_resonant(d, &params, &noise, &ptl).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for h in &hs {
            for _ in 0..20 {
                let t = rng.random_range(0.0..20.0);
                assert!(h.matrix(t).hermiticity_defect() < 1e-12);
            }
        }
    }

    #[test]
    fn bichromatic_frame_reproduces_series_hamiltonian() {
        let d = dims();
        let tl = PulseTimeline::single(EnvelopeSchedule::rectangular(), 50.0).unwrap();
        let drive = toy_drive();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for symmetry in [ShiftSymmetry::Symmetric, ShiftSymmetry::Antisymmetric] {
            let noise = NoiseSpec { symmetry, ..toy_noise() };
            let rwa = h_rwa(d, &drive, &noise, &tl).unwrap();
            let bip = h_bip(d, &drive, &noise, &tl, DEFAULT_SERIES_ORDER).unwrap();
            let si = pauli_sum(d, Axis::X, PauliKind::Symmetric).unwrap();
            let delta = drive.tones[0].1;
            for _ in 0..100 {
                let t = rng.random_range(0.0..50.0);
                let u = bichromatic_frame(d, t, drive.microwave_rabi, delta, Axis::X);
                let mw = si.scale(C64::from(2.0 * drive.microwave_rabi * (delta * t).cos()));
                let rest = &rwa.matrix(t) - &mw;
                let want = &(&u.adjoint() * &rest) * &u;
                let diff = (&want - &bip.matrix(t)).max_abs();
                assert!(diff < 1e-10 * want.max_abs().max(1.0), "t={t}: {diff}");
            }
        }
    }

    #[test]
    fn zero_microwaves_leave_the_gradient_unchanged() {
        let d = dims();
        let tl = PulseTimeline::single(EnvelopeSchedule::rectangular(), 10.0).unwrap();
        let drive = DriveConfig { microwave_rabi: 0.0, ..toy_drive() };
        let noise = NoiseSpec::default();
        let rwa = h_rwa(d, &drive, &noise, &tl).unwrap();
        let bip = h_bip(d, &drive, &noise, &tl, 5).unwrap();
        for &t in &[0.3, 4.4, 9.1] {
            assert!((&rwa.matrix(t) - &bip.matrix(t)).max_abs() < 1e-14);
        }
    }

    #[test]
    fn idd_point_removes_static_coupling_to_first_order() {
        let x3 = crate::bessel::j0_zero(3).unwrap();
        let delta = 2.0;
        let s = BesselSeries::new(x3, delta, DEFAULT_SERIES_ORDER).unwrap();
        assert!(s.coefficient(0).abs() < 1e-14);
        // the time average of C over one period is J₀
        let n = 4000;
        let avg: f64 = (0..n).map(|i| s.eval((i as f64 + 0.5) / n as f64 * TWO_PI / delta).0).sum::<f64>() / n as f64;
        assert!(avg.abs() < 1e-12, "{avg}");
    }

    #[test]
    fn motional_offset_only() {
        let d = dims();
        let tl = PulseTimeline::single(EnvelopeSchedule::rectangular(), 10.0).unwrap();
        let drive = DriveConfig { gradient_rabi: 0.0, microwave_rabi: 0.0, ..toy_drive() };
        let noise = NoiseSpec { motional_offset: 0.7, ..Default::default() };
        let h = h_rwa(d, &drive, &noise, &tl).unwrap();
        let want = number(d).scale(C64::from(0.7));
        assert!((&h.matrix(2.0) - &want).max_abs() < 1e-15);
    }

    #[test]
    fn bip_rejects_ramped_or_multi_pair_drives() {
        let d = dims();
        let ramped = PulseTimeline::single(EnvelopeSchedule::blackman(1.0), 10.0).unwrap();
        let rect = PulseTimeline::single(EnvelopeSchedule::rectangular(), 10.0).unwrap();
        let noise = NoiseSpec::default();
        assert!(h_bip(d, &toy_drive(), &noise, &ramped, 40).is_err());
        let two = DriveConfig { tones: vec![(1.0, 2.0), (1.0, 3.0)], ..toy_drive() };
        assert!(h_bip(d, &two, &noise, &rect, 40).is_err());
        let strong = DriveConfig { microwave_rabi: 3.0, ..toy_drive() };
        assert!(h_bip(d, &strong, &noise, &rect, 6).is_err());
    }

    #[test]
    fn resonant_form_commutes_with_sz_and_averages_out() {
        let d = dims();
        let p = solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 2, 2, 3).unwrap();
        let tl = PulseTimeline::single(EnvelopeSchedule::rectangular(), p.t_gate).unwrap();
        let noise = NoiseSpec { epsilon: 50.0, ..Default::default() };
        let h = h_resonant(d, &p, &noise, &tl).unwrap();
        let sz = pauli_sum(d, Axis::Z, PauliKind::Symmetric).unwrap();
        let n = 2000;
        let mut avg = Operator::zeros(d);
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64 * p.t_loop;
            let m = h.matrix(t);
            assert!(m.commutator(&sz).max_abs() < 1e-12);
            avg = &avg + &m;
        }
        // static ε reaches the resonant form as J₀(x) S_z, which vanishes at
        // the IDD point; the tones average out over one loop
        assert!(avg.max_abs() / (n as f64) < 1e-9 * p.gradient_rabi);
        let h0 = h.matrix(0.0);
        let a = ladder(d, Ladder::Lower);
        let coupling = &sz * &a;
        let amp = p.gradient_rabi * (p.j4() + p.j8());
        let want = &coupling.scale(C64::from(amp)) + &coupling.adjoint().scale(C64::from(amp));
        assert!((&h0 - &want).max_abs() < 1e-9 * amp);
    }

    #[test]
    fn residual_field_reduces_to_half_loop_frequency() {
        let p = solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 2, 2, 3).unwrap();
        let m = nearest_harmonic(p.gradient_freq, p.detuning);
        assert_eq!(m, 2);
        let jm = crate::bessel::bessel_j(2, p.bessel_arg).unwrap();
        let n = 4000;
        let mut integral = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64 * p.t_loop;
            let (z, y) = resonant_harmonic(t, p.gradient_freq, 0.0, p.detuning, m, jm);
            assert_eq!(y, 0.0);
            assert!((z - jm * (p.loop_detuning * t / 2.0).cos()).abs() < 1e-9);
            integral += z * p.t_loop / n as f64;
        }
        // ∫₀^{T_loop} J₂ cos(Δt/2) dt = (2/Δ) J₂ sin(π)
        assert!(integral.abs() < 1e-9 * p.t_loop);
    }

    #[test]
    fn multi_pair_factor_matches_matrix_exponential() {
        let d = SpaceDescriptor::new(2).unwrap();
        let pairs = [(1.0, 3.0), (-2.0, 2.0)];
        let rabi = 0.6;
        let sz = pauli_sum(d, Axis::Z, PauliKind::Symmetric).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = rng.random_range(0.0..20.0);
            let mut u = Operator::identity(d);
            for &(c, delta) in &pairs {
                u = &u * &bichromatic_frame(d, t, rabi * c, delta, Axis::X);
            }
            let want = &(&u.adjoint() * &sz) * &u;
            let got = multi_pair_spin_factor(d, t, &pairs, rabi, DEFAULT_SERIES_ORDER).unwrap();
            assert!((&want - &got).max_abs() < 1e-10);
        }
    }

    #[test]
    fn first_order_multi_pair_error_is_quadratic() {
        let d = SpaceDescriptor::new(2).unwrap();
        let wr = 1.0;
        // detunings this close to ω_r make the 1/δ_k versus 1/ω_r difference
        // negligible next to the quadratic term
        let pairs = [(1.0, wr * (1.0 - 1e-7)), (-2.0, wr * (1.0 - 2e-7))];
        let err = |r: f64| {
            let mut worst = 0.0f64;
            for i in 0..200 {
                let t = i as f64 * 0.37;
                let full = multi_pair_spin_factor(d, t, &pairs, r * wr, DEFAULT_SERIES_ORDER).unwrap();
                let first = multi_pair_first_order(d, t, &pairs, r * wr, wr).unwrap();
                worst = worst.max((&full - &first).max_abs());
            }
            worst
        };
        let (e1, e2) = (err(1e-2), err(2e-2));
        let order = (e2 / e1).log2();
        assert!((order - 2.0).abs() < 0.2, "{order}");
    }
}
