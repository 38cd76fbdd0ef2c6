//! Run configuration: one flat JSON object with dotted keys. Frequencies are
//! given in Hz and converted to angular units when the run is resolved.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::design::{solve_idd_j, solve_idd_single, solve_ratio_tuned, GateParams};
use crate::drive::{EnvelopeSchedule, EnvelopeShape, NoiseSpec, ShiftSymmetry};
use crate::error::{Error, Result};
use crate::drive::DEFAULT_SERIES_ORDER;
use crate::experiments::{Frame, MultiPairSpec, RateKind, SequenceSpec, Table};
use crate::space::DEFAULT_FOCK_DIM;
use crate::propagate::IntegratorSettings;
use crate::space::SpinBasis;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Design,
    Simulate,
    Sweep,
    Trajectory,
    Multipair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    IddJ,
    IddSingle,
    RatioTuned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    StaticShift,
    OscillatingShift,
    MotionalOffset,
    Heating,
    Dephasing,
    ResidualField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    UpUp,
    DownDown,
}

impl Branch {
    pub fn basis(self) -> SpinBasis {
        match self {
            Branch::UpUp => SpinBasis::UpUp,
            Branch::DownDown => SpinBasis::DownDown,
        }
    }
}

fn d_mode() -> Mode {
    Mode::Simulate
}
fn d_gate() -> GateKind {
    GateKind::IddJ
}
fn d_gradient_rabi() -> f64 {
    1e3
}
fn d_motional() -> f64 {
    6.5e6
}
fn d_gradient_freq() -> f64 {
    5e6
}
fn d_j() -> u32 {
    2
}
fn d_loops() -> u32 {
    2
}
fn d_idd() -> usize {
    3
}
fn d_ratio() -> f64 {
    -1.22
}
fn d_bracket() -> (f64, f64) {
    (8.0, 9.5)
}
fn d_ramp() -> f64 {
    20e-6
}
fn d_shape() -> EnvelopeShape {
    EnvelopeShape::Blackman
}
fn d_frame() -> Frame {
    Frame::Resonant
}
fn d_true() -> bool {
    true
}
fn d_fock() -> usize {
    DEFAULT_FOCK_DIM
}
fn d_series() -> usize {
    DEFAULT_SERIES_ORDER
}
fn d_rel_tol() -> f64 {
    IntegratorSettings::default().rel_tol
}
fn d_abs_tol() -> f64 {
    IntegratorSettings::default().abs_tol
}
fn d_samples() -> usize {
    IntegratorSettings::default().sample_count
}
fn d_max_steps() -> u64 {
    IntegratorSettings::default().max_steps
}
fn d_symmetry() -> ShiftSymmetry {
    ShiftSymmetry::Symmetric
}
fn d_pair_ratios() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}
fn d_pair_amplitudes() -> Vec<f64> {
    vec![1.0, -2.0]
}
fn d_pair_loops() -> u32 {
    1
}
fn d_pair_fock() -> usize {
    8
}
fn d_pair_spacing() -> f64 {
    MultiPairSpec::SPACING_RATIO
}
fn d_pair_rel_tol() -> f64 {
    MultiPairSpec::two_pair(1.0).settings.rel_tol
}
fn d_pair_abs_tol() -> f64 {
    MultiPairSpec::two_pair(1.0).settings.abs_tol
}
fn d_branch() -> Branch {
    Branch::UpUp
}
fn d_format() -> OutputFormat {
    OutputFormat::Json
}
fn d_scale() -> f64 {
    1.0
}

/// Every field has a default, so `{}` is the noise-free IDD-2, K = 2 gate
/// at Ω_g/2π = 1 kHz, ω_r/2π = 6.5 MHz with 20 μs Blackman edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_mode")]
    pub mode: Mode,

    #[serde(rename = "drive.gate", default = "d_gate")]
    pub gate: GateKind,
    #[serde(rename = "drive.gradient_rabi_hz", default = "d_gradient_rabi")]
    pub gradient_rabi_hz: f64,
    #[serde(rename = "drive.motional_freq_hz", default = "d_motional")]
    pub motional_freq_hz: f64,
    /// Gradient frequency of the single-tone gate; two-tone gates derive it.
    #[serde(rename = "drive.gradient_freq_hz", default = "d_gradient_freq")]
    pub gradient_freq_hz: f64,
    #[serde(rename = "drive.j", default = "d_j")]
    pub j: u32,
    #[serde(rename = "drive.loops", default = "d_loops")]
    pub loops: u32,
    #[serde(rename = "drive.idd_index", default = "d_idd")]
    pub idd_index: usize,
    /// Target J₈/J₄ of the ratio-tuned gate, searched in `drive.ratio_bracket`.
    #[serde(rename = "drive.ratio", default = "d_ratio")]
    pub ratio: f64,
    #[serde(rename = "drive.ratio_bracket", default = "d_bracket")]
    pub ratio_bracket: (f64, f64),

    #[serde(rename = "noise.epsilon_hz", default)]
    pub epsilon_hz: f64,
    #[serde(rename = "noise.epsilon_freq_hz", default)]
    pub epsilon_freq_hz: f64,
    #[serde(rename = "noise.symmetry", default = "d_symmetry")]
    pub symmetry: ShiftSymmetry,
    #[serde(rename = "noise.motional_offset_hz", default)]
    pub motional_offset_hz: f64,
    #[serde(rename = "noise.residual_field_hz", default)]
    pub residual_field_hz: f64,
    /// Quanta per second.
    #[serde(rename = "noise.heating_rate", default)]
    pub heating_rate: f64,
    /// Per second.
    #[serde(rename = "noise.dephasing_rate", default)]
    pub dephasing_rate: f64,

    #[serde(rename = "envelope.shape", default = "d_shape")]
    pub shape: EnvelopeShape,
    #[serde(rename = "envelope.ramp_time", default = "d_ramp")]
    pub ramp_time: f64,

    /// Defaults to 1 for even K and 0 otherwise.
    #[serde(rename = "sequence.walsh_index", default)]
    pub walsh_index: Option<u8>,
    #[serde(rename = "sequence.frame", default = "d_frame")]
    pub frame: Frame,
    #[serde(rename = "sequence.phase_compensation", default = "d_true")]
    pub phase_compensation: bool,
    #[serde(rename = "sequence.commensurate", default)]
    pub commensurate: bool,
    #[serde(rename = "sequence.fock_dim", default = "d_fock")]
    pub fock_dim: usize,
    #[serde(rename = "sequence.series_order", default = "d_series")]
    pub series_order: usize,

    #[serde(rename = "integrator.rel_tol", default = "d_rel_tol")]
    pub rel_tol: f64,
    #[serde(rename = "integrator.abs_tol", default = "d_abs_tol")]
    pub abs_tol: f64,
    /// Seconds; unset derives it from the fastest term.
    #[serde(rename = "integrator.max_step", default)]
    pub max_step: Option<f64>,
    #[serde(rename = "integrator.samples", default = "d_samples")]
    pub samples: usize,
    #[serde(rename = "integrator.max_steps", default = "d_max_steps")]
    pub max_steps: u64,

    #[serde(rename = "sweep.axis", default)]
    pub sweep_axis: Option<SweepAxis>,
    /// Hz for frequency axes, loop counts for heating and dephasing.
    #[serde(rename = "sweep.grid", default)]
    pub sweep_grid: Vec<f64>,
    /// Grid values are multiples of Ω_g instead of Hz.
    #[serde(rename = "sweep.relative", default)]
    pub sweep_relative: bool,

    #[serde(rename = "trajectory.branch", default = "d_branch")]
    pub branch: Branch,

    #[serde(rename = "multipair.field_ratios", default = "d_pair_ratios")]
    pub pair_ratios: Vec<f64>,
    #[serde(rename = "multipair.amplitudes", default = "d_pair_amplitudes")]
    pub pair_amplitudes: Vec<f64>,
    #[serde(rename = "multipair.loops", default = "d_pair_loops")]
    pub pair_loops: u32,
    #[serde(rename = "multipair.fock_dim", default = "d_pair_fock")]
    pub pair_fock_dim: usize,
    /// Pair spacing Δ as a fraction of the motional frequency.
    #[serde(rename = "multipair.spacing_ratio", default = "d_pair_spacing")]
    pub pair_spacing: f64,
    #[serde(rename = "multipair.rel_tol", default = "d_pair_rel_tol")]
    pub pair_rel_tol: f64,
    #[serde(rename = "multipair.abs_tol", default = "d_pair_abs_tol")]
    pub pair_abs_tol: f64,

    #[serde(rename = "output.path", default)]
    pub out: Option<String>,
    #[serde(rename = "output.format", default = "d_format")]
    pub format: OutputFormat,

    /// Frequencies and rates are divided by this factor and times
    /// multiplied by it when the run is resolved.
    #[serde(default = "d_scale")]
    pub scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be positive and finite (got {v})")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be non-negative and finite (got {v})")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Normalized form with every key present.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Schema checks that need no design solve.
    pub fn validate(&self) -> Result<()> {
        positive("drive.motional_freq_hz", self.motional_freq_hz)?;
        non_negative("drive.gradient_rabi_hz", self.gradient_rabi_hz)?;
        positive("drive.gradient_freq_hz", self.gradient_freq_hz)?;
        if self.j == 0 {
            return Err(config_err("drive.j must be at least 1"));
        }
        if self.loops == 0 {
            return Err(config_err("drive.loops must be at least 1"));
        }
        if self.idd_index == 0 {
            return Err(config_err("drive.idd_index counts from 1"));
        }
        for (name, v) in [
            ("noise.epsilon_hz", self.epsilon_hz),
            ("noise.epsilon_freq_hz", self.epsilon_freq_hz),
            ("noise.residual_field_hz", self.residual_field_hz),
            ("noise.heating_rate", self.heating_rate),
            ("noise.dephasing_rate", self.dephasing_rate),
            ("envelope.ramp_time", self.ramp_time),
        ] {
            non_negative(name, v)?;
        }
        if !self.motional_offset_hz.is_finite() {
            return Err(config_err("noise.motional_offset_hz must be finite"));
        }
        if self.fock_dim < 2 || self.pair_fock_dim < 2 {
            return Err(config_err("Fock dimensions must be at least 2"));
        }
        positive("integrator.rel_tol", self.rel_tol)?;
        positive("integrator.abs_tol", self.abs_tol)?;
        if let Some(h) = self.max_step {
            positive("integrator.max_step", h)?;
        }
        if self.max_steps == 0 {
            return Err(config_err("integrator.max_steps must be at least 1"));
        }
        positive("scale", self.scale)?;
        positive("multipair.rel_tol", self.pair_rel_tol)?;
        positive("multipair.abs_tol", self.pair_abs_tol)?;
        if !(self.pair_spacing > 0.0 && self.pair_spacing < 0.5) {
            return Err(config_err(format!("multipair.spacing_ratio must lie in (0, 0.5) (got {})", self.pair_spacing)));
        }
        if self.mode == Mode::Sweep {
            if self.sweep_axis.is_none() {
                return Err(config_err("sweep mode needs sweep.axis"));
            }
            if self.sweep_grid.is_empty() {
                return Err(config_err("sweep.grid is empty"));
            }
        }
        if let Some(v) = self.sweep_grid.iter().find(|v| !v.is_finite()) {
            return Err(config_err(format!("sweep.grid value {v} is not finite")));
        }
        if matches!(self.sweep_axis, Some(SweepAxis::Heating | SweepAxis::Dephasing))
            && self.sweep_grid.iter().any(|&k| k < 1.0 || k.fract() != 0.0)
        {
            return Err(config_err("loop grids must hold positive integers"));
        }
        if self.mode == Mode::Multipair {
            if self.pair_ratios.is_empty() {
                return Err(config_err("multipair.field_ratios is empty"));
            }
            for &r in &self.pair_ratios {
                positive("multipair.field_ratios", r)?;
            }
            if self.pair_amplitudes.is_empty() || self.pair_loops == 0 {
                return Err(config_err("multipair needs amplitudes and at least one loop"));
            }
        }
        Ok(())
    }

    /// Solves the configured gate in angular units, before scaling.
    fn design_unscaled(&self) -> Result<GateParams> {
        let (g, wr) = (TWO_PI * self.gradient_rabi_hz, TWO_PI * self.motional_freq_hz);
        // Ω_g = 0 still needs a valid resonance layout; solve at unit
        // strength and switch the gradient off afterwards
        let solve_g = if g > 0.0 { g } else { TWO_PI };
        let p = match self.gate {
            GateKind::IddJ => solve_idd_j(solve_g, wr, self.j, self.loops, self.idd_index)?,
            GateKind::IddSingle => {
                solve_idd_single(solve_g, wr, TWO_PI * self.gradient_freq_hz, self.loops, self.idd_index)?
            }
            GateKind::RatioTuned => solve_ratio_tuned(solve_g, wr, self.j, self.loops, self.ratio, self.ratio_bracket)?,
        };
        Ok(if g > 0.0 { p } else { p.with_gradient_scale(0.0) })
    }

    /// Gate design in angular units with the scale factor applied.
    pub fn design(&self) -> Result<GateParams> {
        Ok(self.design_unscaled()?.scaled(self.scale))
    }

    fn noise_unscaled(&self) -> NoiseSpec {
        NoiseSpec {
            epsilon: TWO_PI * self.epsilon_hz,
            epsilon_freq: TWO_PI * self.epsilon_freq_hz,
            symmetry: self.symmetry,
            motional_offset: TWO_PI * self.motional_offset_hz,
            residual_field: TWO_PI * self.residual_field_hz,
            heating_rate: self.heating_rate,
            dephasing_rate: self.dephasing_rate,
        }
    }

    /// Full simulation recipe, scaled.
    pub fn sequence(&self) -> Result<SequenceSpec> {
        let params = self.design_unscaled()?;
        let mut spec = SequenceSpec::new(params);
        spec.noise = self.noise_unscaled();
        if let Some(w) = self.walsh_index {
            spec.walsh_index = w;
        }
        spec.frame = self.frame;
        spec.envelope = EnvelopeSchedule { ramp_time: self.ramp_time, shape: self.shape };
        spec.phase_compensation = self.phase_compensation;
        spec.commensurate = self.commensurate;
        spec.fock_dim = self.fock_dim;
        spec.series_order = self.series_order;
        spec.settings = IntegratorSettings {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            sample_count: self.samples,
            max_steps: self.max_steps,
            ..IntegratorSettings::default()
        };
        let spec = spec.scaled(self.scale);
        spec.validate()?;
        Ok(spec)
    }

    /// Sweep grid in the library's units (rad/s, or raw loop counts).
    pub fn sweep_values(&self, params: &GateParams) -> Result<(SweepAxis, Vec<f64>)> {
        let axis = self.sweep_axis.ok_or_else(|| config_err("sweep mode needs sweep.axis"))?;
        if self.sweep_grid.is_empty() {
            return Err(config_err("sweep.grid is empty"));
        }
        let values = match axis {
            SweepAxis::Heating | SweepAxis::Dephasing => self.sweep_grid.clone(),
            _ if self.sweep_relative => self.sweep_grid.iter().map(|v| v * params.gradient_rabi).collect(),
            _ => self.sweep_grid.iter().map(|v| TWO_PI * v / self.scale).collect(),
        };
        Ok((axis, values))
    }

    pub fn multi_pair(&self) -> Result<MultiPairSpec> {
        let wr = TWO_PI * self.motional_freq_hz / self.scale;
        let mut spec = MultiPairSpec::two_pair(wr);
        spec.amplitudes = self.pair_amplitudes.clone();
        spec.loops = self.pair_loops;
        spec.fock_dim = self.pair_fock_dim;
        spec.loop_detuning = wr * self.pair_spacing;
        spec.settings = IntegratorSettings {
            rel_tol: self.pair_rel_tol,
            abs_tol: self.pair_abs_tol,
            max_step: self.max_step.map(|h| h * self.scale),
            sample_count: self.samples,
            max_steps: self.max_steps,
            ..IntegratorSettings::default()
        };
        Ok(spec)
    }
}

impl RateKind {
    pub fn from_axis(axis: SweepAxis) -> Option<Self> {
        match axis {
            SweepAxis::Heating => Some(RateKind::Heating),
            SweepAxis::Dephasing => Some(RateKind::Dephasing),
            _ => None,
        }
    }
}

/// Locale-independent full precision.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with one `# config:` line holding the resolved configuration.
pub fn table_csv(table: &Table, config: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config: {}", serde_json::to_string(config).expect("config serializes"));
    let mut header: Vec<&str> = Vec::new();
    if table.labels.is_some() {
        header.push("label");
    }
    header.extend(table.columns.iter().map(String::as_str));
    let _ = writeln!(out, "{}", header.join(","));
    for (i, row) in table.rows.iter().enumerate() {
        let mut cells: Vec<String> = Vec::new();
        if let Some(labels) = &table.labels {
            cells.push(labels[i].clone());
        }
        cells.extend(row.iter().map(|&v| format_number(v)));
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.gate, GateKind::IddJ);
        assert_eq!((cfg.j, cfg.loops, cfg.idd_index), (2, 2, 3));
        let p = cfg.design().unwrap();
        assert!((p.gradient_rabi - TWO_PI * 1e3).abs() < 1e-9);
        assert!((p.bessel_arg - 8.653727912911013).abs() < 1e-9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"drive.gradient_rabi": 1000}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(RunConfig::from_json(r#"{"drive.j": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode": "sweep", "sweep.axis": "static_shift"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode": "sweep", "sweep.axis": "heating", "sweep.grid": [1.5]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"scale": 0}"#).is_err());
    }

    #[test]
    fn hertz_become_angular() {
        let cfg = RunConfig::from_json(r#"{"noise.epsilon_hz": 2.0, "noise.heating_rate": 3.0}"#).unwrap();
        let spec = cfg.sequence().unwrap();
        assert!((spec.noise.epsilon - 4.0 * PI).abs() < 1e-12);
        assert_eq!(spec.noise.heating_rate, 3.0);
    }

    #[test]
    fn scale_divides_frequencies_and_stretches_times() {
        let base = RunConfig::default();
        let scaled = RunConfig { scale: 50.0, epsilon_hz: 10.0, ..base.clone() };
        let (a, b) = (base.sequence().unwrap(), scaled.sequence().unwrap());
        assert!((a.params.detuning / b.params.detuning - 50.0).abs() < 1e-9);
        assert!((b.params.t_gate / a.params.t_gate - 50.0).abs() < 1e-9);
        assert!((b.envelope.ramp_time - 50.0 * a.envelope.ramp_time).abs() < 1e-15);
        assert!((b.noise.epsilon - TWO_PI * 10.0 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn relative_grids_multiply_the_gradient_rabi() {
        let cfg = RunConfig {
            mode: Mode::Sweep,
            sweep_axis: Some(SweepAxis::StaticShift),
            sweep_grid: vec![1.0, 30.0],
            sweep_relative: true,
            ..RunConfig::default()
        };
        let p = cfg.design().unwrap();
        let (_, v) = cfg.sweep_values(&p).unwrap();
        assert!((v[1] - 30.0 * p.gradient_rabi).abs() < 1e-9);
    }

    #[test]
    fn csv_embeds_config_and_keeps_precision() {
        let table = Table { columns: vec!["x".into(), "y".into()], rows: vec![vec![0.1, 1.0 / 3.0]], labels: None };
        let csv = table_csv(&table, &RunConfig::default());
        let mut lines = csv.lines();
        let cfg_line = lines.next().unwrap().strip_prefix("# config: ").unwrap();
        assert_eq!(RunConfig::from_json(cfg_line).unwrap(), RunConfig::default());
        assert_eq!(lines.next(), Some("x,y"));
        let cells: Vec<f64> = lines.next().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells, vec![0.1, 1.0 / 3.0]);
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            prop::sample::select(vec![Mode::Design, Mode::Simulate, Mode::Trajectory]),
            prop::sample::select(vec![GateKind::IddJ, GateKind::IddSingle, GateKind::RatioTuned]),
            1e2..1e4f64,
            1..6u32,
            1..9u32,
            1..4usize,
            0.0..1e5f64,
            proptest::option::of(0..2u8),
            prop::sample::select(vec![Frame::Rwa, Frame::Bip, Frame::Resonant]),
            2..20usize,
            proptest::option::of(1e-9..1e-6f64),
            1.0..100.0f64,
        )
            .prop_map(|(mode, gate, g, j, k, idd, eps, walsh, frame, fock, step, scale)| RunConfig {
                mode,
                gate,
                gradient_rabi_hz: g,
                j,
                loops: k,
                idd_index: idd,
                epsilon_hz: eps,
                walsh_index: walsh,
                frame,
                fock_dim: fock,
                max_step: step,
                scale,
                ..RunConfig::default()
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(cfg in arb_config()) {
            let text = cfg.to_json();
            let back = RunConfig::from_json(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_json(), text);
        }
    }
}
