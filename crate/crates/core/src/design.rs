//! Operating-point solver: resonance and loop-closure conditions for the
//! two-tone IDD-j gates and the single-tone J₂ gate.

use serde::{Deserialize, Serialize};

use crate::bessel::{bessel_j, j0_zero, ratio_tuned_mu};
use crate::error::{Error, Result};

/// Accumulated `S_z²` phase giving a maximally entangling `σzσz` gate.
pub const TARGET_PHASE: f64 = std::f64::consts::PI / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    IddJ,
    IddSingle,
    RatioTuned,
}

/// One spin-dependent-force tone `Ω (â e^{−i(μt+φ)} + h.c.)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub amplitude: f64,
    pub detuning: f64,
    pub phase: f64,
}

/// Solved operating point. Frequencies are angular (rad/s), times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub mode: GateMode,
    /// Gradient Rabi frequency Ω_g.
    pub gradient_rabi: f64,
    /// Motional frequency ω_r.
    pub motional_freq: f64,
    /// Microwave detuning δ.
    pub detuning: f64,
    /// Gradient oscillation frequency ω_g.
    pub gradient_freq: f64,
    /// Slow detuning unit Δ.
    pub loop_detuning: f64,
    /// Microwave Rabi frequency Ω_μ.
    pub microwave_rabi: f64,
    /// Bessel argument `4Ω_μ/δ`.
    pub bessel_arg: f64,
    pub j: u32,
    /// Number of loops K.
    pub loops: u32,
    pub idd_index: Option<usize>,
    pub t_loop: f64,
    pub t_gate: f64,
}

/// Residuals of the design identities, each relative to `ω_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignResiduals {
    pub lower_sideband: f64,
    pub upper_sideband: f64,
    pub half_gradient: f64,
    pub closure: f64,
}

impl DesignResiduals {
    pub fn max(&self) -> f64 {
        [self.lower_sideband, self.upper_sideband, self.half_gradient, self.closure]
            .iter()
            .fold(0.0f64, |a, b| a.max(b.abs()))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidParameter(format!("{name} must be positive (got {v})")));
    }
    Ok(())
}

/// Bracketed-sum factor `{J₄²/j + J₈²/(j+1)}^{1/2}` of the closure condition.
fn two_tone_factor(x: f64, j: u32) -> Result<f64> {
    let (j4, j8) = (bessel_j(4, x)?, bessel_j(8, x)?);
    Ok((j4 * j4 / j as f64 + j8 * j8 / (j + 1) as f64).sqrt())
}

/// IDD-j gate at the `idd_index`-th zero of J₀.
pub fn solve_idd_j(gradient_rabi: f64, motional_freq: f64, j: u32, loops: u32, idd_index: usize) -> Result<GateParams> {
    let x = j0_zero(idd_index)?;
    let mut p = solve_idd_j_at(gradient_rabi, motional_freq, j, loops, x)?;
    p.mode = GateMode::IddJ;
    p.idd_index = Some(idd_index);
    Ok(p)
}

/// Two-tone gate at an arbitrary Bessel argument, e.g. one returned by
/// [`ratio_tuned_mu`].
pub fn solve_idd_j_at(gradient_rabi: f64, motional_freq: f64, j: u32, loops: u32, x: f64) -> Result<GateParams> {
    check_positive("gradient Rabi frequency", gradient_rabi)?;
    check_positive("motional frequency", motional_freq)?;
    if j == 0 {
        return Err(Error::InvalidParameter("j must be at least 1".into()));
    }
    if loops == 0 {
        return Err(Error::InvalidParameter("loop count K must be at least 1".into()));
    }
    let k = loops as f64;
    let big = 4.0 * gradient_rabi * k.sqrt() * two_tone_factor(x, j)?;
    two_tone_from_delta(gradient_rabi, motional_freq, j, loops, x, big)
}

fn two_tone_from_delta(
    gradient_rabi: f64,
    motional_freq: f64,
    j: u32,
    loops: u32,
    x: f64,
    big: f64,
) -> Result<GateParams> {
    let jf = j as f64;
    let delta = (2.0 * motional_freq - (2.0 * jf + 1.0) * big) / 12.0;
    let omega_g = motional_freq - 4.0 * delta - jf * big;
    if !(delta > 0.0 && omega_g > 0.0 && big > 0.0) {
        return Err(Error::Infeasible(format!(
            "δ = {delta:e}, ω_g = {omega_g:e}, Δ = {big:e} rad/s; need all positive"
        )));
    }
    let t_loop = 2.0 * std::f64::consts::PI / big;
    Ok(GateParams {
        mode: GateMode::RatioTuned,
        gradient_rabi,
        motional_freq,
        detuning: delta,
        gradient_freq: omega_g,
        loop_detuning: big,
        microwave_rabi: x * delta / 4.0,
        bessel_arg: x,
        j,
        loops,
        idd_index: None,
        t_loop,
        t_gate: loops as f64 * t_loop,
    })
}

/// Two-tone gate tuned so that `J₈/J₄ = target_ratio`.
pub fn solve_ratio_tuned(
    gradient_rabi: f64,
    motional_freq: f64,
    j: u32,
    loops: u32,
    target_ratio: f64,
    bracket: (f64, f64),
) -> Result<GateParams> {
    let x = ratio_tuned_mu(target_ratio, bracket)?;
    solve_idd_j_at(gradient_rabi, motional_freq, j, loops, x)
}

/// Single-tone gate on the J₂ resonance.
pub fn solve_idd_single(
    gradient_rabi: f64,
    motional_freq: f64,
    gradient_freq: f64,
    loops: u32,
    idd_index: usize,
) -> Result<GateParams> {
    check_positive("gradient Rabi frequency", gradient_rabi)?;
    check_positive("motional frequency", motional_freq)?;
    check_positive("gradient frequency", gradient_freq)?;
    if loops == 0 {
        return Err(Error::InvalidParameter("loop count K must be at least 1".into()));
    }
    if gradient_freq >= motional_freq {
        return Err(Error::Infeasible("single-tone gate needs ω_r > ω_g".into()));
    }
    let x = j0_zero(idd_index)?;
    let big = 4.0 * gradient_rabi * (loops as f64).sqrt() * bessel_j(2, x)?.abs();
    single_from_delta(gradient_rabi, motional_freq, gradient_freq, loops, idd_index, x, big)
}

fn single_from_delta(
    gradient_rabi: f64,
    motional_freq: f64,
    gradient_freq: f64,
    loops: u32,
    idd_index: usize,
    x: f64,
    big: f64,
) -> Result<GateParams> {
    let delta = (motional_freq - gradient_freq - big) / 2.0;
    if !(delta > 0.0) {
        return Err(Error::Infeasible(format!("δ = {delta:e} rad/s is not positive")));
    }
    let t_loop = 2.0 * std::f64::consts::PI / big;
    Ok(GateParams {
        mode: GateMode::IddSingle,
        gradient_rabi,
        motional_freq,
        detuning: delta,
        gradient_freq,
        loop_detuning: big,
        microwave_rabi: x * delta / 4.0,
        bessel_arg: x,
        j: 1,
        loops,
        idd_index: Some(idd_index),
        t_loop,
        t_gate: loops as f64 * t_loop,
    })
}

impl GateParams {
    pub fn j4(&self) -> f64 {
        bessel_j(4, self.bessel_arg).expect("design argument in range")
    }

    pub fn j8(&self) -> f64 {
        bessel_j(8, self.bessel_arg).expect("design argument in range")
    }

    pub fn j2(&self) -> f64 {
        bessel_j(2, self.bessel_arg).expect("design argument in range")
    }

    /// Resonant tones `(Ω_k, μ_k)` kept by the near-resonant approximation.
    pub fn tones(&self) -> Vec<Tone> {
        let (g, d) = (self.gradient_rabi, self.loop_detuning);
        match self.mode {
            GateMode::IddSingle => vec![Tone { amplitude: g * self.j2(), detuning: d, phase: 0.0 }],
            GateMode::IddJ | GateMode::RatioTuned => vec![
                Tone { amplitude: g * self.j4(), detuning: self.j as f64 * d, phase: 0.0 },
                Tone { amplitude: g * self.j8(), detuning: (self.j + 1) as f64 * d, phase: 0.0 },
            ],
        }
    }

    /// Sign with which the gradient carrier phase enters each tone of
    /// [`tones`](Self::tones): the lower sidebands (J₂, J₄) see `−φ`, the
    /// J₈ sideband `+φ`.
    pub fn carrier_signs(&self) -> Vec<f64> {
        match self.mode {
            GateMode::IddSingle => vec![-1.0],
            GateMode::IddJ | GateMode::RatioTuned => vec![-1.0, 1.0],
        }
    }

    /// Largest angular frequency in the rotating-frame Hamiltonian.
    pub fn max_frequency(&self) -> f64 {
        let mu = 4.0 * self.microwave_rabi;
        [self.motional_freq + self.gradient_freq, self.detuning, mu]
            .iter()
            .fold(0.0f64, |a, &b| a.max(b))
    }

    pub fn residuals(&self) -> DesignResiduals {
        let (wr, wg, d, b) = (self.motional_freq, self.gradient_freq, self.detuning, self.loop_detuning);
        let jf = self.j as f64;
        match self.mode {
            GateMode::IddSingle => DesignResiduals {
                lower_sideband: (2.0 * d + b - (wr - wg)) / wr,
                upper_sideband: 0.0,
                half_gradient: 0.0,
                closure: (b - 4.0 * self.gradient_rabi * (self.loops as f64).sqrt() * self.j2().abs()) / wr,
            },
            _ => DesignResiduals {
                lower_sideband: (4.0 * d + jf * b - (wr - wg)) / wr,
                upper_sideband: (8.0 * d + (jf + 1.0) * b - (wr + wg)) / wr,
                half_gradient: (d - (wg / 2.0 - b / 4.0)) / wr,
                closure: (b
                    - 4.0
                        * self.gradient_rabi
                        * (self.loops as f64).sqrt()
                        * two_tone_factor(self.bessel_arg, self.j).expect("in range"))
                    / wr,
            },
        }
    }

    /// Number of microwave periods `δt_G/2π`.
    pub fn microwave_periods(&self) -> f64 {
        self.detuning * self.t_gate / (2.0 * std::f64::consts::PI)
    }

    /// Nudge Δ so that `δt_G ∈ 2πℤ` and re-solve Ω_g from the closure
    /// condition. Needed when the microwaves are switched on and off
    /// abruptly; the frame transform then returns to the identity.
    pub fn commensurate(&self) -> Result<GateParams> {
        let k = self.loops as f64;
        let n = (k * self.detuning / self.loop_detuning).round();
        match self.mode {
            GateMode::IddSingle => {
                let big = k * (self.motional_freq - self.gradient_freq) / (2.0 * n + k);
                let rabi = big / (4.0 * k.sqrt() * self.j2().abs());
                single_from_delta(
                    rabi,
                    self.motional_freq,
                    self.gradient_freq,
                    self.loops,
                    self.idd_index.unwrap_or(1),
                    self.bessel_arg,
                    big,
                )
            }
            mode => {
                let jf = self.j as f64;
                let big = 2.0 * k * self.motional_freq / (12.0 * n + k * (2.0 * jf + 1.0));
                let rabi = big / (4.0 * k.sqrt() * two_tone_factor(self.bessel_arg, self.j)?);
                let mut p = two_tone_from_delta(rabi, self.motional_freq, self.j, self.loops, self.bessel_arg, big)?;
                p.mode = mode;
                p.idd_index = self.idd_index;
                Ok(p)
            }
        }
    }

    /// All frequencies divided by `factor`, all times multiplied by it.
    pub fn scaled(&self, factor: f64) -> GateParams {
        GateParams {
            gradient_rabi: self.gradient_rabi / factor,
            motional_freq: self.motional_freq / factor,
            detuning: self.detuning / factor,
            gradient_freq: self.gradient_freq / factor,
            loop_detuning: self.loop_detuning / factor,
            microwave_rabi: self.microwave_rabi / factor,
            t_loop: self.t_loop * factor,
            t_gate: self.t_gate * factor,
            ..self.clone()
        }
    }

    /// Same design with the gradient amplitude multiplied by `factor`; the
    /// resonance frequencies are untouched.
    pub fn with_gradient_scale(&self, factor: f64) -> GateParams {
        GateParams { gradient_rabi: self.gradient_rabi * factor, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    fn default_gate() -> GateParams {
        solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 2, 2, 3).unwrap()
    }

    #[test]
    fn default_idd2_design() {
        let p = default_gate();
        // closed form with J4, J8 at the third J0 zero (scipy)
        let (j4, j8) = (-0.23084002824919142f64, 0.28176383386025794f64);
        let big = 4.0 * TWO_PI * 1e3 * 2f64.sqrt() * (j4 * j4 / 2.0 + j8 * j8 / 3.0).sqrt();
        assert!((p.loop_detuning - big).abs() / big < 1e-12);
        let delta = (2.0 * TWO_PI * 6.5e6 - 5.0 * big) / 12.0;
        assert!((p.detuning - delta).abs() / delta < 1e-12);
        assert!((p.gradient_freq / TWO_PI - 2.1667e6).abs() < 1e3, "{}", p.gradient_freq / TWO_PI);
        let alt = p.motional_freq / 3.0 - (p.j as f64 - 1.0) * p.loop_detuning / 3.0;
        assert!((p.gradient_freq - alt).abs() / p.gradient_freq < 1e-12);
        assert!((p.bessel_arg - 8.653727913).abs() < 1e-8);
        assert!((4.0 * p.microwave_rabi / p.detuning - p.bessel_arg).abs() < 1e-10);
        assert!((p.t_gate - 2.0 * TWO_PI / big).abs() < 1e-15);
        assert!(p.residuals().max() < 1e-12);
    }

    #[test]
    fn doubling_loops_scales_delta_by_sqrt2() {
        let a = solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 2, 2, 3).unwrap();
        let b = solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 2, 4, 3).unwrap();
        assert!((b.loop_detuning / a.loop_detuning - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(solve_idd_j(1.0, 100.0, 0, 2, 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(solve_idd_j(1.0, 100.0, 2, 0, 3), Err(Error::InvalidParameter(_))));
        // Δ swamps ω_r
        assert!(matches!(solve_idd_j(100.0, 100.0, 2, 2, 3), Err(Error::Infeasible(_))));
        assert!(solve_idd_single(1.0, 10.0, 12.0, 2, 1).is_err());
        assert!(solve_idd_j(1.0, 1e4, 1, 1, 11).is_err());
    }

    #[test]
    fn single_tone_design() {
        let p = solve_idd_single(TWO_PI * 1e3, TWO_PI * 6.5e6, TWO_PI * 5e6, 2, 1).unwrap();
        let want = 4.0 * 1e3 * 2f64.sqrt() * 0.4317548070196805;
        assert!((p.loop_detuning / TWO_PI - want).abs() / want < 1e-12);
        let r = 2.0 * p.detuning + p.loop_detuning - (p.motional_freq - p.gradient_freq);
        assert!(r.abs() / p.motional_freq < 1e-15);
        assert_eq!(p.tones().len(), 1);
    }

    #[test]
    fn ratio_tuned_modes() {
        let p = solve_ratio_tuned(TWO_PI * 1e3, TWO_PI * 6.5e6, 1, 1, -2.0, (7.7, 11.0)).unwrap();
        assert!((p.j8() / p.j4() + 2.0).abs() < 1e-10);
        assert_eq!(p.mode, GateMode::RatioTuned);
        assert!(p.residuals().max() < 1e-12);
    }

    #[test]
    fn commensurate_adjustment() {
        for p in [
            default_gate(),
            solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 1, 1, 3).unwrap(),
            solve_idd_single(TWO_PI * 1e3, TWO_PI * 6.5e6, TWO_PI * 5e6, 2, 1).unwrap(),
        ] {
            let q = p.commensurate().unwrap();
            let periods = q.microwave_periods();
            assert!((periods - periods.round()).abs() < 1e-6, "{periods}");
            assert!(q.residuals().max() < 1e-12);
            assert!((q.gradient_rabi / p.gradient_rabi - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn scaling_preserves_dimensionless_products() {
        let p = default_gate();
        let q = p.scaled(50.0);
        assert!((q.detuning * q.t_gate - p.detuning * p.t_gate).abs() < 1e-9);
        assert_eq!(q.bessel_arg, p.bessel_arg);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn design_identities(
            rabi in 1e2f64..1e4,
            ratio in 1e2f64..1e4,
            j in 1u32..=5,
            k in 1u32..=8,
            idd in 1usize..=3,
        ) {
            let p = solve_idd_j(rabi, rabi * ratio * 10.0, j, k, idd).unwrap();
            prop_assert!(p.residuals().max() < 1e-12);
            let alt = p.motional_freq / 3.0 - (j as f64 - 1.0) * p.loop_detuning / 3.0;
            prop_assert!((p.gradient_freq - alt).abs() / p.motional_freq < 1e-12);
        }
    }
}
