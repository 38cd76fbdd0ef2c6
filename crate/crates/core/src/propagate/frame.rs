//! Exact propagator of the symmetric-detuned microwave pair.

use crate::drive::PulseTimeline;
use crate::space::{global_rotation, Axis, Operator, SpaceDescriptor};

/// `exp(−iθS_i)`
pub fn frame_from_angle(dims: SpaceDescriptor, theta: f64, axis: Axis) -> Operator {
    global_rotation(dims, axis, 2.0 * theta)
}

/// Pair angle `(2Ω_μ/δ) sin(δt)` for a rectangular envelope switched on at 0.
pub fn bichromatic_angle(t: f64, microwave_rabi: f64, delta: f64) -> f64 {
    2.0 * microwave_rabi / delta * (delta * t).sin()
}

/// `U(t) = exp(−i(2Ω_μ/δ) sin(δt) S_i)`, the frame that removes
/// `2Ω_μ cos(δt) S_i` from the Hamiltonian.
pub fn bichromatic_frame(dims: SpaceDescriptor, t: f64, microwave_rabi: f64, delta: f64, axis: Axis) -> Operator {
    frame_from_angle(dims, bichromatic_angle(t, microwave_rabi, delta), axis)
}

/// `∫₀^t 2Ω_μ e_μ(t′) cos(δt′) dt′` for the microwave envelope of
/// `timeline`, by composite Gauss–Legendre quadrature on panels much
/// shorter than `1/δ`.
pub fn envelope_angle(timeline: &PulseTimeline, microwave_rabi: f64, delta: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let mut knots: Vec<f64> = timeline.breakpoints().into_iter().filter(|&b| b > 0.0 && b < t).collect();
    knots.insert(0, 0.0);
    knots.push(t);
    let panel = 2.0 * std::f64::consts::PI / delta / 16.0;
    let f = |s: f64| 2.0 * microwave_rabi * timeline.microwave(s) * (delta * s).cos();
    knots.windows(2).map(|w| composite_gauss(&f, w[0], w[1], panel)).sum()
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

fn composite_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panel: f64) -> f64 {
    let n = ((b - a) / panel).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|i| {
            let mid = a + (i as f64 + 0.5) * h;
            GAUSS5.iter().map(|&(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}
