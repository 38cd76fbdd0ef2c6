//! Gate sequences (sandwich rotations, loops, Walsh π pulses) and the
//! parameter sweeps built on them.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::bessel_j;
use crate::design::{solve_idd_j, solve_idd_j_at, solve_idd_single, GateMode, GateParams, Tone, TARGET_PHASE};
use crate::drive::{
    h_bip, h_resonant, h_rwa, multi_pair_coefficients, DriveConfig, EnvelopeSchedule, GradientWaveform, NoiseSpec,
    PulseTimeline, ShiftSymmetry, TermHamiltonian, DEFAULT_SERIES_ORDER,
};
use crate::error::{Error, Result};
use crate::propagate::frame::{bichromatic_frame, envelope_angle};
use crate::propagate::sdf::{analytic_sdf_interval, compose, enveloped_sdf, Branches, SdfPoint};
use crate::propagate::{
    even_samples, integrate_lindblad, integrate_schrodinger, CollapseSet, Evolution, IntegratorSettings, Kick, Plan,
    Stats,
};
use crate::space::{
    bell_overlap, global_rotation, phi_plus, single_rotation, spin_overlap, Axis, DensityMatrix, Operator,
    QuantumState, SpaceDescriptor, SpinBasis, StateVector, C64, DEFAULT_FOCK_DIM, ZERO,
};

/// Picture in which the gate is propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Rotating frame of the qubit; all drive terms kept.
    Rwa,
    /// Bichromatic interaction picture with the Bessel series.
    Bip,
    /// Resonant sidebands only.
    Resonant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub params: GateParams,
    pub noise: NoiseSpec,
    /// 0: one uninterrupted pulse; 1: two half-gates with a global π pulse
    /// between them.
    pub walsh_index: u8,
    pub frame: Frame,
    pub envelope: EnvelopeSchedule,
    pub fock_dim: usize,
    pub settings: IntegratorSettings,
    pub series_order: usize,
    /// Rescale Ω_g so that the ramped pulses still give the target phase.
    pub phase_compensation: bool,
    /// Nudge the design so that `δt_G ∈ 2πℤ`.
    pub commensurate: bool,
}

impl SequenceSpec {
    /// Defaults: Walsh modulation when K is even, resonant frame,
    /// 20 μs Blackman edges.
    pub fn new(params: GateParams) -> Self {
        let walsh_index = if params.loops % 2 == 0 { 1 } else { 0 };
        Self {
            params,
            noise: NoiseSpec::default(),
            walsh_index,
            frame: Frame::Resonant,
            envelope: EnvelopeSchedule::default(),
            fock_dim: DEFAULT_FOCK_DIM,
            settings: IntegratorSettings::default(),
            series_order: DEFAULT_SERIES_ORDER,
            phase_compensation: true,
            commensurate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.settings.validate()?;
        SpaceDescriptor::new(self.fock_dim)?;
        match self.walsh_index {
            0 => {}
            1 if self.params.loops % 2 == 0 => {}
            1 => return Err(Error::InvalidParameter("Walsh index 1 needs an even loop count".into())),
            w => return Err(Error::InvalidParameter(format!("Walsh index {w} is not supported"))),
        }
        Ok(())
    }

    /// Frequencies and rates divided by `factor`, times multiplied by it.
    pub fn scaled(&self, factor: f64) -> Self {
        let n = &self.noise;
        let scale_t = |t: Option<f64>| t.map(|v| v * factor);
        Self {
            params: self.params.scaled(factor),
            noise: NoiseSpec {
                epsilon: n.epsilon / factor,
                epsilon_freq: n.epsilon_freq / factor,
                motional_offset: n.motional_offset / factor,
                residual_field: n.residual_field / factor,
                heating_rate: n.heating_rate / factor,
                dephasing_rate: n.dephasing_rate / factor,
                ..*n
            },
            envelope: EnvelopeSchedule { ramp_time: self.envelope.ramp_time * factor, ..self.envelope },
            settings: IntegratorSettings {
                max_step: scale_t(self.settings.max_step),
                initial_step: scale_t(self.settings.initial_step),
                ..self.settings
            },
            ..self.clone()
        }
    }
}

/// Pulse layout derived from a [`SequenceSpec`].
#[derive(Debug, Clone)]
pub struct Sequence {
    /// Design actually driven, after the commensurate nudge and phase
    /// compensation.
    pub params: GateParams,
    pub timeline: PulseTimeline,
    /// Global π pulses about x between loop segments.
    pub flips: Vec<f64>,
    /// Whether a final π pulse undoes an odd number of flips.
    pub end_flip: bool,
    pub gradient_scale: f64,
}

pub fn build_sequence(spec: &SequenceSpec) -> Result<Sequence> {
    spec.validate()?;
    let mut params = if spec.commensurate { spec.params.commensurate()? } else { spec.params.clone() };
    let segments = if spec.walsh_index == 1 { 2 } else { 1 };
    let lengths = vec![params.t_gate / segments as f64; segments];
    let timeline = gate_timeline(&params, spec.envelope, &lengths)?;
    let mut gradient_scale = 1.0;
    if spec.phase_compensation && !timeline.is_rectangular() && params.gradient_rabi > 0.0 {
        let phase = segment_points(&params, &timeline)?.iter().fold(0.0, |acc, p| acc + p.phase);
        if !(phase > 0.0) {
            return Err(Error::Infeasible(format!("ramped pulses give geometric phase {phase:e}")));
        }
        gradient_scale = (TARGET_PHASE / phase).sqrt();
        params = params.with_gradient_scale(gradient_scale);
    }
    let flips = timeline.boundaries();
    let end_flip = flips.len() % 2 == 1;
    Ok(Sequence { params, timeline, flips, end_flip, gradient_scale })
}

/// Ramped layouts get a microwave-only dwell at both ends so that the
/// whole sequence spans a half-odd number of microwave periods; errors
/// picked up on the ramps then echo. Each gradient pulse starts its carrier so
/// that the slow beat `ω_g − mδ` has zero phase at the centre of its
/// rising edge.
fn gate_timeline(params: &GateParams, envelope: EnvelopeSchedule, lengths: &[f64]) -> Result<PulseTimeline> {
    let plain = PulseTimeline::new(envelope, lengths)?;
    let delta = params.detuning;
    let timeline = if plain.is_rectangular() || !(delta > 0.0) {
        plain
    } else {
        // δT ≡ π (mod 2π) makes the microwave drive odd about T/2, so its
        // net rotation vanishes and the dressed frame retraces itself
        let period = 2.0 * std::f64::consts::PI / delta;
        let total = plain.total();
        let extra = ((total / period - 0.5).ceil() + 0.5) * period - total;
        PulseTimeline::with_dwell(envelope, lengths, 0.5 * extra)?
    };
    let tr = envelope.effective_ramp();
    let m = if delta > 0.0 { (params.gradient_freq / delta).round() } else { 0.0 };
    let beat = params.gradient_freq - m * delta;
    let phases: Vec<f64> = timeline.segments().map(|(s, _)| -(beat * (s + 0.5 * tr)).rem_euclid(2.0 * std::f64::consts::PI)).collect();
    timeline.with_carrier_phases(&phases)
}

/// Tones of pulse `i`, shifted by its gradient carrier phase.
fn segment_tones(params: &GateParams, timeline: &PulseTimeline, i: usize) -> Vec<Tone> {
    let phi = timeline.carrier_phases()[i];
    params
        .tones()
        .into_iter()
        .zip(params.carrier_signs())
        .map(|(t, sign)| Tone { phase: t.phase + sign * phi, ..t })
        .collect()
}

/// Force displacement and phase over each gradient segment.
fn segment_points(params: &GateParams, timeline: &PulseTimeline) -> Result<Vec<SdfPoint>> {
    let breaks = timeline.breakpoints();
    timeline
        .segments()
        .enumerate()
        .map(|(i, (s, e))| {
            let tones = segment_tones(params, timeline, i);
            if timeline.is_rectangular() {
                analytic_sdf_interval(&tones, s, e)
            } else {
                let inner: Vec<f64> = breaks.iter().copied().filter(|&b| b > s && b < e).collect();
                enveloped_sdf(&tones, |t| timeline.gradient(t), s, e, &inner)
            }
        })
        .collect()
}

/// Opening sandwich rotation `exp(+iπS_y/4)`.
pub fn opening_rotation(dims: SpaceDescriptor) -> Operator {
    global_rotation(dims, Axis::Y, -std::f64::consts::FRAC_PI_2)
}

/// Closing sandwich rotation `exp(−iπS_y/4)`.
pub fn closing_rotation(dims: SpaceDescriptor) -> Operator {
    global_rotation(dims, Axis::Y, std::f64::consts::FRAC_PI_2)
}

/// Global π pulse `exp(−iπS_x/2)`.
pub fn walsh_flip(dims: SpaceDescriptor) -> Operator {
    global_rotation(dims, Axis::X, std::f64::consts::PI)
}

/// Two-qubit global rotation restricted to the spin space.
fn spin_rotation(axis: Axis, angle: f64) -> Matrix4<C64> {
    let r = single_rotation(axis, angle);
    r.kronecker(&r)
}

/// Noise-free gate evaluated from the closed-form displacement of each loop
/// segment, independent of any time stepping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticGate {
    pub fidelity: f64,
    /// Total geometric phase per unit `S_z²`.
    pub phase: f64,
    /// Largest residual displacement per unit `S_z` at a segment end.
    pub closure: f64,
}

/// Ignores the noise model and the frame.
pub fn analytic_gate(spec: &SequenceSpec) -> Result<AnalyticGate> {
    let seq = build_sequence(spec)?;
    let points = segment_points(&seq.params, &seq.timeline)?;
    let ground = Vector4::new(C64::from(1.0), ZERO, ZERO, ZERO);
    let mut branches = Branches::from_spin(&(spin_rotation(Axis::Y, -std::f64::consts::FRAC_PI_2) * ground));
    let flip = spin_rotation(Axis::X, std::f64::consts::PI);
    let mut total = SdfPoint::ZERO;
    let mut closure = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        branches.apply_force(*p);
        total = compose(total, *p);
        closure = closure.max(p.alpha.norm());
        if i + 1 < points.len() {
            branches.apply_permutation(&flip)?;
        }
    }
    if seq.end_flip {
        branches.apply_permutation(&flip)?;
    }
    let rho = branches.spin_density(&spin_rotation(Axis::Y, std::f64::consts::FRAC_PI_2));
    Ok(AnalyticGate { fidelity: spin_overlap(&rho, &phi_plus()), phase: total.phase, closure })
}

/// Final state of a simulated gate.
#[derive(Debug, Clone)]
pub enum GateState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl GateState {
    fn transform(&self, u: &Operator) -> Self {
        match self {
            GateState::Pure(psi) => GateState::Pure(u.apply(psi)),
            GateState::Mixed(rho) => GateState::Mixed(u.conjugate(rho)),
        }
    }

    pub fn bell_fidelity(&self) -> Result<f64> {
        match self {
            GateState::Pure(psi) => bell_overlap(psi),
            GateState::Mixed(rho) => bell_overlap(rho),
        }
    }

    pub fn spin_density(&self) -> Matrix4<C64> {
        match self {
            GateState::Pure(psi) => psi.spin_density(),
            GateState::Mixed(rho) => rho.spin_density(),
        }
    }

    /// `⟨a⟩` conditioned on the spin block `spin`; zero for an empty block.
    pub fn conditional_mean(&self, spin: SpinBasis) -> C64 {
        let f = self.dims().fock_dim();
        let base = spin.index() * f;
        let (mut weight, mut sum) = (0.0, ZERO);
        match self {
            GateState::Pure(psi) => {
                let v = psi.amplitudes();
                for n in 0..f {
                    weight += v[base + n].norm_sqr();
                    if n + 1 < f {
                        sum += v[base + n].conj() * v[base + n + 1] * ((n + 1) as f64).sqrt();
                    }
                }
            }
            GateState::Mixed(rho) => {
                let m = rho.matrix();
                for n in 0..f {
                    weight += m[(base + n, base + n)].re;
                    if n + 1 < f {
                        sum += m[(base + n + 1, base + n)] * ((n + 1) as f64).sqrt();
                    }
                }
            }
        }
        if weight > 1e-14 {
            sum / weight
        } else {
            ZERO
        }
    }

    /// Unconditional `⟨a⟩`.
    pub fn mean(&self) -> C64 {
        SpinBasis::ALL
            .iter()
            .map(|&s| self.conditional_mean(s) * self.block_weight(s))
            .sum()
    }

    fn block_weight(&self, spin: SpinBasis) -> f64 {
        self.spin_density()[(spin.index(), spin.index())].re
    }

    pub fn dims(&self) -> SpaceDescriptor {
        match self {
            GateState::Pure(psi) => psi.dims(),
            GateState::Mixed(rho) => rho.dims(),
        }
    }
}

/// Conditional displacements of the `↑↑` and `↓↓` branches at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub up_re: f64,
    pub up_im: f64,
    pub down_re: f64,
    pub down_im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub stats: Stats,
    /// Total pulse duration including ramps.
    pub duration: f64,
    pub gradient_scale: f64,
    /// Microwave rotation angle left over at the end of the pulse.
    pub frame_angle: f64,
    pub fock_dim: usize,
    /// Largest population in the top Fock level of any branch.
    pub top_fock_population: f64,
}

#[derive(Debug, Clone)]
pub struct GateResult {
    pub fidelity: f64,
    pub final_state: GateState,
    pub trajectory: Vec<TrajectoryPoint>,
    pub diagnostics: Diagnostics,
}

impl GateResult {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }
}

fn hamiltonian(spec: &SequenceSpec, seq: &Sequence, dims: SpaceDescriptor) -> Result<TermHamiltonian> {
    match spec.frame {
        Frame::Rwa => h_rwa(dims, &DriveConfig::from_params(&seq.params), &spec.noise, &seq.timeline),
        Frame::Bip => h_bip(dims, &DriveConfig::from_params(&seq.params), &spec.noise, &seq.timeline, spec.series_order),
        Frame::Resonant => h_resonant(dims, &seq.params, &spec.noise, &seq.timeline),
    }
}

struct Run {
    state: GateState,
    samples: Vec<(f64, GateState)>,
    stats: Stats,
}

fn from_evolution<S>(ev: Evolution<S>, wrap: fn(S) -> GateState) -> Run {
    Run {
        state: wrap(ev.state),
        samples: ev.samples.into_iter().map(|(t, s)| (t, wrap(s))).collect(),
        stats: ev.stats,
    }
}

/// Propagates `initial` through the loop segments and Walsh flips, and
/// returns states in the frame of [`h_rwa`].
fn evolve(spec: &SequenceSpec, seq: &Sequence, initial: &StateVector) -> Result<Run> {
    let dims = initial.dims();
    let h = hamiltonian(spec, seq, dims)?;
    let total = seq.timeline.total();
    let flip = walsh_flip(dims);
    let plan = Plan {
        samples: even_samples(0.0, total, spec.settings.sample_count),
        kicks: seq.flips.iter().map(|&time| Kick { time, op: flip.clone() }).collect(),
        breakpoints: seq.timeline.breakpoints(),
    };
    let collapse = CollapseSet { heating_rate: spec.noise.heating_rate, dephasing_rate: spec.noise.dephasing_rate };
    let mut run = if collapse.is_empty() {
        from_evolution(integrate_schrodinger(&h, initial, 0.0, total, &spec.settings, &plan)?, GateState::Pure)
    } else {
        let rho = initial.to_density();
        from_evolution(
            integrate_lindblad(&h, &rho, &collapse, 0.0, total, &spec.settings, &plan)?,
            GateState::Mixed,
        )
    };
    if spec.frame == Frame::Bip {
        let p = &seq.params;
        let back = |t: f64| bichromatic_frame(dims, t, p.microwave_rabi, p.detuning, Axis::X);
        for (t, s) in &mut run.samples {
            *s = s.transform(&back(*t));
        }
        run.state = run.state.transform(&back(total));
    }
    Ok(run)
}

fn top_fock_population(state: &GateState) -> f64 {
    let f = state.dims().fock_dim();
    SpinBasis::ALL
        .iter()
        .map(|s| {
            let i = s.index() * f + f - 1;
            match state {
                GateState::Pure(psi) => psi.amplitudes()[i].norm_sqr(),
                GateState::Mixed(rho) => rho.matrix()[(i, i)].re,
            }
        })
        .fold(0.0, f64::max)
}

/// Bell-state preparation: opening π/2 rotation, loops with Walsh flips,
/// closing π/2 rotation, fidelity against `(|↓↓⟩ + i|↑↑⟩)/√2`.
pub fn run_gate(spec: &SequenceSpec) -> Result<GateResult> {
    let seq = build_sequence(spec)?;
    let dims = SpaceDescriptor::new(spec.fock_dim)?;
    let start = opening_rotation(dims).apply(&StateVector::basis(dims, SpinBasis::DownDown, 0)?);
    let run = evolve(spec, &seq, &start)?;

    let trajectory = run
        .samples
        .iter()
        .map(|(t, s)| {
            let (up, down) = (s.conditional_mean(SpinBasis::UpUp), s.conditional_mean(SpinBasis::DownDown));
            TrajectoryPoint { t: *t, up_re: up.re, up_im: up.im, down_re: down.re, down_im: down.im }
        })
        .collect();
    let mut top = run.samples.iter().map(|(_, s)| top_fock_population(s)).fold(0.0, f64::max);
    top = top.max(top_fock_population(&run.state));

    let mut last = run.state;
    if seq.end_flip {
        last = last.transform(&walsh_flip(dims));
    }
    let last = last.transform(&closing_rotation(dims));
    let fidelity = last.bell_fidelity()?;
    let frame_angle = match spec.frame {
        Frame::Resonant => 0.0,
        _ => envelope_angle(&seq.timeline, seq.params.microwave_rabi, seq.params.detuning, seq.timeline.total()),
    };
    Ok(GateResult {
        fidelity,
        final_state: last,
        trajectory,
        diagnostics: Diagnostics {
            stats: run.stats,
            duration: seq.timeline.total(),
            gradient_scale: seq.gradient_scale,
            frame_angle,
            fock_dim: spec.fock_dim,
            top_fock_population: top,
        },
    })
}

/// `⟨a⟩(t)` starting from `|branch⟩|0⟩`, without sandwich rotations.
pub fn phase_space_trajectory(spec: &SequenceSpec, branch: SpinBasis) -> Result<Vec<(f64, C64)>> {
    let seq = build_sequence(spec)?;
    let dims = SpaceDescriptor::new(spec.fock_dim)?;
    let run = evolve(spec, &seq, &StateVector::basis(dims, branch, 0)?)?;
    Ok(run.samples.iter().map(|(t, s)| (*t, s.mean())).collect())
}

/// Fidelity at `fock_dim` and at twice that.
pub fn fock_convergence(spec: &SequenceSpec) -> Result<(f64, f64)> {
    let coarse = run_gate(spec)?.fidelity;
    let fine = run_gate(&SequenceSpec { fock_dim: 2 * spec.fock_dim, ..spec.clone() })?.fidelity;
    Ok((coarse, fine))
}

/// Numeric sweep output; `labels`, when present, name the row's gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str], rows: Vec<Vec<f64>>) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows, labels: None }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn check_grid(values: &[f64], name: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} grid is empty")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} value {v} is not finite")));
    }
    Ok(())
}

fn infidelity_with(base: &SequenceSpec, noise: NoiseSpec) -> Result<f64> {
    Ok(run_gate(&SequenceSpec { noise, ..base.clone() })?.infidelity())
}

/// Static qubit shifts: columns `epsilon`, `epsilon_over_rabi`, `infidelity`.
pub fn sweep_static_shift(base: &SequenceSpec, epsilons: &[f64], symmetry: ShiftSymmetry) -> Result<Table> {
    check_grid(epsilons, "epsilon")?;
    let rabi = base.params.gradient_rabi;
    let rows = epsilons
        .par_iter()
        .map(|&eps| {
            let noise = NoiseSpec { epsilon: eps, epsilon_freq: 0.0, symmetry, ..base.noise };
            Ok(vec![eps, eps / rabi, infidelity_with(base, noise)?])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table::new(&["epsilon", "epsilon_over_rabi", "infidelity"], rows))
}

/// Symmetric shifts of amplitude `epsilon` oscillating at each frequency.
pub fn sweep_oscillating_shift(base: &SequenceSpec, freqs: &[f64], epsilon: f64) -> Result<Table> {
    check_grid(freqs, "shift frequency")?;
    let rabi = base.params.gradient_rabi;
    let rows = freqs
        .par_iter()
        .map(|&w| {
            let noise = NoiseSpec { epsilon, epsilon_freq: w, symmetry: ShiftSymmetry::Symmetric, ..base.noise };
            Ok(vec![w, w / rabi, epsilon, infidelity_with(base, noise)?])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table::new(&["omega_eps", "omega_eps_over_rabi", "epsilon", "infidelity"], rows))
}

/// `2πν/(t_G Ω_g²)`
pub fn normalized_offset(nu: f64, params: &GateParams) -> f64 {
    2.0 * std::f64::consts::PI * nu / (params.t_gate * params.gradient_rabi * params.gradient_rabi)
}

/// Motional frequency offsets for several gates; one row per (gate, ν).
pub fn sweep_motional_offset(gates: &[SequenceSpec], nus: &[f64]) -> Result<Table> {
    check_grid(nus, "motional offset")?;
    if gates.is_empty() {
        return Err(Error::InvalidParameter("no gates to sweep".into()));
    }
    let points: Vec<(usize, f64)> = (0..gates.len()).flat_map(|g| nus.iter().map(move |&nu| (g, nu))).collect();
    let rows = points
        .par_iter()
        .map(|&(g, nu)| {
            let spec = &gates[g];
            let noise = NoiseSpec { motional_offset: nu, ..spec.noise };
            Ok(vec![g as f64, nu, nu / spec.params.gradient_rabi, normalized_offset(nu, &spec.params), infidelity_with(spec, noise)?])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&["gate", "nu", "nu_over_rabi", "normalized", "infidelity"], rows);
    table.labels = Some(points.iter().map(|&(g, _)| crate::drive::mode_label(&gates[g].params)).collect());
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Heating,
    Dephasing,
}

/// Same gate family with a different loop count.
pub fn redesign(params: &GateParams, loops: u32) -> Result<GateParams> {
    let (g, wr) = (params.gradient_rabi, params.motional_freq);
    let idd = params.idd_index.unwrap_or(1);
    match params.mode {
        GateMode::IddSingle => solve_idd_single(g, wr, params.gradient_freq, loops, idd),
        GateMode::IddJ => solve_idd_j(g, wr, params.j, loops, idd),
        GateMode::RatioTuned => solve_idd_j_at(g, wr, params.j, loops, params.bessel_arg),
    }
}

/// Infidelity against `x = 2π/(Ω_g t_G)` with `ṅ` or `Γ_d` set to
/// `Ω_g/100π`.
pub fn decoherence_curve(base: &SequenceSpec, loops: &[u32], kind: RateKind) -> Result<Table> {
    if loops.is_empty() {
        return Err(Error::InvalidParameter("loop grid is empty".into()));
    }
    let rate = base.params.gradient_rabi / (100.0 * std::f64::consts::PI);
    let rows = loops
        .par_iter()
        .map(|&k| {
            let params = redesign(&base.params, k)?;
            let mut noise = base.noise;
            match kind {
                RateKind::Heating => noise.heating_rate = rate,
                RateKind::Dephasing => noise.dephasing_rate = rate,
            }
            let walsh_index = if k % 2 == 0 { base.walsh_index } else { 0 };
            let x = 2.0 * std::f64::consts::PI / (params.gradient_rabi * params.t_gate);
            let t_gate = params.t_gate;
            let spec = SequenceSpec { params, noise, walsh_index, ..base.clone() };
            Ok(vec![k as f64, t_gate, x, rate, run_gate(&spec)?.infidelity()])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table::new(&["loops", "t_gate", "x", "rate", "infidelity"], rows))
}

/// Homogeneous field at ω_g; `change` is relative to Ω_z = 0.
pub fn residual_field_experiment(base: &SequenceSpec, amplitudes: &[f64]) -> Result<Table> {
    check_grid(amplitudes, "residual field")?;
    let rabi = base.params.gradient_rabi;
    let baseline = infidelity_with(base, NoiseSpec { residual_field: 0.0, ..base.noise })?;
    let rows = amplitudes
        .par_iter()
        .map(|&oz| {
            let e = infidelity_with(base, NoiseSpec { residual_field: oz, ..base.noise })?;
            Ok(vec![oz, oz / rabi, e, e - baseline])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table::new(&["omega_z", "omega_z_over_rabi", "infidelity", "change"], rows))
}

/// Several microwave pairs near the motional frequency with a static
/// gradient: pair `k` (from 1) has amplitude `c_k` and detuning `ω_r − kΔ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPairSpec {
    pub motional_freq: f64,
    /// `Δ`; chosen so that `ω_r/Δ` is an integer.
    pub loop_detuning: f64,
    pub amplitudes: Vec<f64>,
    pub loops: u32,
    pub fock_dim: usize,
    pub settings: IntegratorSettings,
}

impl MultiPairSpec {
    /// Two pairs with `c = (1, −2)` and `Δ = ω_r/1000`.
    /// `Δ = ω_r·SPACING_RATIO`. The gradient needed for a π/8 phase grows as
    /// `Δ/(Ω_μ/ω_r)`, and its off-resonant `S_z` force leaves an `S_z²` phase
    /// `∝ Δ/((Ω_μ/ω_r)²ω_r)` that does not commute with the gate, so weak
    /// fields need a small spacing. The long gate that results needs tighter
    /// tolerances to keep the norm drift below the invariant check.
    pub fn two_pair(motional_freq: f64) -> Self {
        Self {
            motional_freq,
            loop_detuning: motional_freq * Self::SPACING_RATIO,
            amplitudes: vec![1.0, -2.0],
            loops: 1,
            fock_dim: 8,
            settings: IntegratorSettings { rel_tol: 1e-12, abs_tol: 1e-14, ..IntegratorSettings::default() },
        }
    }

    pub const SPACING_RATIO: f64 = 1e-4;

    fn validate(&self) -> Result<()> {
        if !(self.motional_freq > 0.0 && self.loop_detuning > 0.0) {
            return Err(Error::InvalidParameter("ω_r and Δ must be positive".into()));
        }
        let n = self.amplitudes.len() as f64;
        if self.amplitudes.is_empty() || n * self.loop_detuning >= self.motional_freq {
            return Err(Error::InvalidParameter("every pair needs ω_r − kΔ > 0".into()));
        }
        if self.loops == 0 {
            return Err(Error::InvalidParameter("loop count K must be at least 1".into()));
        }
        SpaceDescriptor::new(self.fock_dim)?;
        self.settings.validate()
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, &c)| (c, self.motional_freq - (k + 1) as f64 * self.loop_detuning))
            .collect()
    }

    /// Ω_g giving phase π/8 under the first-order `S_y` force with tone
    /// amplitudes `4(Ω_μ/ω_r)Ω_g c_k` at `kΔ`.
    pub fn gradient_rabi(&self, field_ratio: f64) -> f64 {
        let weight: f64 = self.amplitudes.iter().enumerate().map(|(k, c)| c * c / (k + 1) as f64).sum();
        self.loop_detuning / (16.0 * field_ratio * (self.loops as f64 * weight).sqrt())
    }

    pub fn t_gate(&self) -> f64 {
        self.loops as f64 * 2.0 * std::f64::consts::PI / self.loop_detuning
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPairResult {
    pub field_ratio: f64,
    pub gradient_rabi: f64,
    pub fidelity: f64,
    /// `|⟨a⟩(t_G)|` on the `S_y = +2` branch.
    pub closure: f64,
    pub max_displacement: f64,
    /// `J₁(4Ω_μc₂/ω_r)J₂(4Ω_μc₁/ω_r)`
    pub residual_predicted: f64,
    /// Same amplitude read off the exact spin factor: minus half its
    /// `sin(ω_r t)` Fourier coefficient.
    pub residual_measured: f64,
    pub trajectory: Vec<(f64, C64)>,
}

/// `(|↓⟩ − i|↑⟩)/√2` on both qubits, the `S_y = +2` eigenstate.
fn sy_plus() -> Vector4<C64> {
    let q = [C64::from(std::f64::consts::FRAC_1_SQRT_2), C64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2)];
    Vector4::from_fn(|i, _| q[i / 2] * q[i % 2])
}

/// Simulates the static-gradient gate for one field ratio `Ω_μ/ω_r`.
pub fn multi_pair_run(spec: &MultiPairSpec, field_ratio: f64) -> Result<MultiPairResult> {
    spec.validate()?;
    if !(field_ratio > 0.0) {
        return Err(Error::InvalidParameter("field ratio must be positive".into()));
    }
    let dims = SpaceDescriptor::new(spec.fock_dim)?;
    let (wr, t_gate) = (spec.motional_freq, spec.t_gate());
    let drive = DriveConfig {
        gradient_rabi: spec.gradient_rabi(field_ratio),
        microwave_rabi: field_ratio * wr,
        motional_freq: wr,
        gradient_freq: 0.0,
        tones: spec.pairs(),
        waveform: GradientWaveform::Static,
        microwave_axis: Axis::X,
        gradient_axis: Axis::Z,
    };
    let timeline = PulseTimeline::single(EnvelopeSchedule::rectangular(), t_gate)?;
    let h = h_rwa(dims, &drive, &NoiseSpec::default(), &timeline)?;

    let gate = integrate_schrodinger(
        &h,
        &StateVector::basis(dims, SpinBasis::DownDown, 0)?,
        0.0,
        t_gate,
        &spec.settings,
        &Plan::default(),
    )?;
    // exp(iπS_y²/8)|↓↓⟩ followed by exp(−iπS_z/4) is the target Bell state
    let fidelity = bell_overlap(&global_rotation(dims, Axis::Z, std::f64::consts::FRAC_PI_2).apply(&gate.state))?;

    let mode0 = nalgebra::DVector::from_fn(spec.fock_dim, |n, _| if n == 0 { C64::from(1.0) } else { ZERO });
    let branch = StateVector::product(dims, &sy_plus(), &mode0)?;
    let plan = Plan::samples(even_samples(0.0, t_gate, spec.settings.sample_count.max(2)));
    let ev = integrate_schrodinger(&h, &branch, 0.0, t_gate, &spec.settings, &plan)?;
    let trajectory: Vec<(f64, C64)> =
        ev.samples.iter().map(|(t, s)| (*t, GateState::Pure(s.clone()).mean())).collect();
    let closure = GateState::Pure(ev.state).mean().norm();
    let max_displacement = trajectory.iter().map(|(_, a)| a.norm()).fold(0.0, f64::max);

    let (residual_predicted, residual_measured) = match spec.amplitudes.as_slice() {
        [c1, c2, ..] => {
            let x = 4.0 * field_ratio;
            let predicted = bessel_j(1, (x * c2).abs())? * c2.signum() * bessel_j(2, (x * c1).abs())?;
            (predicted, -0.5 * sine_coefficient(spec, field_ratio)?)
        }
        _ => (0.0, 0.0),
    };
    Ok(MultiPairResult {
        field_ratio,
        gradient_rabi: drive.gradient_rabi,
        fidelity,
        closure,
        max_displacement,
        residual_predicted,
        residual_measured,
        trajectory,
    })
}

/// `(2/T)∫₀^T c_y(t) sin(ω_r t) dt` over one period `T = 2π/Δ` of the exact
/// product series, by the trapezoidal rule (exact for trigonometric
/// polynomials sampled above their Nyquist rate).
fn sine_coefficient(spec: &MultiPairSpec, field_ratio: f64) -> Result<f64> {
    const ORDER: usize = 40;
    let period = 2.0 * std::f64::consts::PI / spec.loop_detuning;
    let harmonics = spec.motional_freq / spec.loop_detuning;
    let m = (4.0 * (ORDER as f64 + 2.0) * spec.amplitudes.len() as f64 * harmonics).ceil() as usize;
    let pairs = spec.pairs();
    let rabi = field_ratio * spec.motional_freq;
    let mut acc = 0.0;
    for i in 0..m {
        let t = period * i as f64 / m as f64;
        let (_, cy) = multi_pair_coefficients(t, &pairs, rabi, ORDER)?;
        acc += cy * (spec.motional_freq * t).sin();
    }
    Ok(2.0 * acc / m as f64)
}

/// One row per field ratio.
pub fn multi_pair_experiment(spec: &MultiPairSpec, field_ratios: &[f64]) -> Result<(Table, Vec<MultiPairResult>)> {
    check_grid(field_ratios, "field ratio")?;
    let results = field_ratios.par_iter().map(|&r| multi_pair_run(spec, r)).collect::<Result<Vec<_>>>()?;
    let rows = results
        .iter()
        .map(|r| {
            vec![
                r.field_ratio,
                r.gradient_rabi,
                1.0 - r.fidelity,
                r.closure,
                r.max_displacement,
                r.residual_predicted,
                r.residual_measured,
            ]
        })
        .collect();
    let table = Table::new(
        &["field_ratio", "gradient_rabi", "infidelity", "closure", "max_displacement", "residual_predicted", "residual_measured"],
        rows,
    );
    Ok((table, results))
}
