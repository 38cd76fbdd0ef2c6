//! Integer-order Bessel functions of the first kind and their roots.

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 60;
pub const MAX_ARG: f64 = 50.0;

/// Arguments up to this magnitude use the power series.
const SERIES_LIMIT: f64 = 12.0;
const SCAN_STEP: f64 = 0.1;

/// `J_n(x)` for `0 ≤ n ≤ 60`, `|x| ≤ 50`.
pub fn bessel_j(n: usize, x: f64) -> Result<f64> {
    check_domain(n, x)?;
    let v = if x.abs() <= SERIES_LIMIT { series(n, x.abs()) } else { miller(n, x.abs()) };
    Ok(if x < 0.0 && n % 2 == 1 { -v } else { v })
}

/// `[J_0(x), …, J_nmax(x)]`
pub fn bessel_j_upto(nmax: usize, x: f64) -> Result<Vec<f64>> {
    (0..=nmax).map(|n| bessel_j(n, x)).collect()
}

fn check_domain(n: usize, x: f64) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::OutOfRange(format!("Bessel order {n} > {MAX_ORDER}")));
    }
    if !x.is_finite() || x.abs() > MAX_ARG {
        return Err(Error::OutOfRange(format!("Bessel argument {x} outside [-{MAX_ARG}, {MAX_ARG}]")));
    }
    Ok(())
}

/// Ascending series `Σ (−1)^k (x/2)^{2k+n} / (k!(k+n)!)` for `x ≥ 0`.
pub fn series(n: usize, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=n {
        term *= h / k as f64;
    }
    if term == 0.0 {
        return 0.0;
    }
    let q = -h * h;
    let mut sum = term;
    for k in 1.. {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && k as f64 > h {
            break;
        }
    }
    sum
}

/// Miller's downward recurrence normalized by `J_0 + 2ΣJ_{2k} = 1`, `x > 0`.
pub fn miller(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let top = n.max(x.ceil() as usize);
    let mut m = top + 30 + (40.0 * top as f64).sqrt() as usize;
    m += m % 2;
    let (mut jp1, mut j) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    let mut out = 0.0;
    for k in (1..=m).rev() {
        let jm1 = 2.0 * k as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        // `j` now holds the unnormalized J_{k-1}
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            out *= 1e-250;
        }
        let order = k - 1;
        if order == n {
            out = j;
        }
        if order % 2 == 0 && order > 0 {
            norm += 2.0 * j;
        }
    }
    norm += j;
    out / norm
}

/// Bisection on a sign-bracketed interval until the bracket stops shrinking.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoSignChange { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Scan `[lo, hi]` with step 0.1 and return the sub-brackets with a sign change.
fn sign_changes<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let steps = ((hi - lo) / SCAN_STEP).ceil().max(1.0) as usize;
    let mut out = Vec::new();
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..=steps {
        let b = if i == steps { hi } else { lo + i as f64 * SCAN_STEP };
        let fb = f(b);
        if fa == 0.0 || fa.signum() != fb.signum() {
            out.push((a, b));
        }
        a = b;
        fa = fb;
    }
    out
}

/// The `k`-th positive zero of `J_0`, `1 ≤ k ≤ 10`.
pub fn j0_zero(k: usize) -> Result<f64> {
    if !(1..=10).contains(&k) {
        return Err(Error::OutOfRange(format!("J0 zero index {k} outside 1..=10")));
    }
    let f = |x: f64| series(0, x);
    // the tenth zero sits near 30.6, so 32 brackets all of them
    let brackets = sign_changes(&f, SCAN_STEP, 32.0);
    let (lo, hi) = brackets[k - 1];
    bisect(|x| bessel_j(0, x).unwrap_or(f64::NAN), lo, hi)
}

/// Argument `x` in `bracket` where `J_8(x)/J_4(x) = target`.
pub fn ratio_tuned_mu(target: f64, bracket: (f64, f64)) -> Result<f64> {
    let (lo, hi) = bracket;
    if !(lo < hi) || lo <= 0.0 || hi > MAX_ARG {
        return Err(Error::InvalidParameter(format!("bad bracket ({lo}, {hi})")));
    }
    let j4 = |x: f64| bessel_j(4, x).unwrap_or(f64::NAN);
    let j8 = |x: f64| bessel_j(8, x).unwrap_or(f64::NAN);
    if let Some(&(a, b)) = sign_changes(&j4, lo, hi).first() {
        let z = bisect(j4, a, b)?;
        return Err(Error::InvalidParameter(format!("J4 vanishes at {z:.6} inside the bracket")));
    }
    let g = |x: f64| j8(x) - target * j4(x);
    let (a, b) = *sign_changes(&g, lo, hi).first().ok_or(Error::NoSignChange { lo, hi })?;
    bisect(g, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    // scipy.special.jv, float64
    const REFERENCE: &[(usize, f64, f64)] = &[
        (0, 1.0, 0.7651976865579666),
        (1, 2.5, 0.4970941024642741),
        (3, 2.5, 0.21660039103911358),
        (4, 8.653727912911013, -0.23084002824919142),
        (8, 8.653727912911013, 0.28176383386025794),
        (2, 2.4048255576957724, 0.4317548070196805),
        (0, 20.0, 0.16702466434058322),
        (10, 30.0, -0.1298768939985887),
        (35, 45.0, -0.1274339443055656),
        (60, 50.0, 0.001048519599531401),
    ];

    #[test]
    fn zeroth_order_at_origin() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn matches_reference_table() {
        for &(n, x, v) in REFERENCE {
            let got = bessel_j(n, x).unwrap();
            assert!((got - v).abs() < 1e-12, "J_{n}({x}) = {got}, want {v}");
        }
    }

    #[test]
    fn series_and_miller_agree() {
        assert!((series(3, 2.5) - miller(3, 2.5)).abs() < 1e-12);
        for n in 0..=40 {
            for i in 1..=120 {
                let x = 0.1 * i as f64;
                let (s, m) = (series(n, x), miller(n, x));
                assert!((s - m).abs() < 1e-12, "n={n} x={x}: {s} vs {m}");
            }
        }
    }

    #[test]
    fn negative_argument_parity() {
        assert!((bessel_j(3, -2.5).unwrap() + bessel_j(3, 2.5).unwrap()).abs() < 1e-15);
        assert_eq!(bessel_j(4, -2.5).unwrap(), bessel_j(4, 2.5).unwrap());
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(bessel_j(61, 1.0).is_err());
        assert!(bessel_j(0, 50.5).is_err());
        assert!(bessel_j(0, f64::NAN).is_err());
        assert!(j0_zero(0).is_err());
        assert!(j0_zero(11).is_err());
    }

    #[test]
    fn j0_zeros() {
        let want = [2.404825558, 5.520078110, 8.653727913];
        for (k, w) in want.iter().enumerate() {
            assert!((j0_zero(k + 1).unwrap() - w).abs() < 1e-8);
        }
        for k in 1..=10 {
            let z = j0_zero(k).unwrap();
            assert!(bessel_j(0, z).unwrap().abs() < 1e-12, "k={k}");
        }
        assert!((j0_zero(10).unwrap() - 30.634606468431976).abs() < 1e-9);
    }

    #[test]
    fn j8_over_j4_at_third_idd_point() {
        let x3 = j0_zero(3).unwrap();
        let r = bessel_j(8, x3).unwrap() / bessel_j(4, x3).unwrap();
        assert!((r + 1.22).abs() < 0.01, "{r}");
    }

    #[test]
    fn ratio_tuning() {
        let x3 = j0_zero(3).unwrap();
        let x = ratio_tuned_mu(-1.22, (7.7, 11.0)).unwrap();
        assert!((x - x3).abs() < 0.05, "{x}");

        let x = ratio_tuned_mu(-1.0, (11.1, 14.3)).unwrap();
        assert!((bessel_j(8, x).unwrap() + bessel_j(4, x).unwrap()).abs() < 1e-10);

        let x = ratio_tuned_mu(-2.0, (7.7, 11.0)).unwrap();
        assert!((bessel_j(8, x).unwrap() + 2.0 * bessel_j(4, x).unwrap()).abs() < 1e-10);
        assert!((x - 8.0339).abs() < 1e-3);

        assert!(matches!(ratio_tuned_mu(-1.0, (7.7, 11.0)), Err(Error::NoSignChange { .. })));
        // J4 crosses zero near 7.588
        assert!(matches!(ratio_tuned_mu(-1.0, (7.0, 8.0)), Err(Error::InvalidParameter(_))));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn three_term_recurrence(n in 1usize..60, x in 0.05f64..50.0) {
            let (a, b, c) = (bessel_j(n - 1, x).unwrap(), bessel_j(n, x).unwrap(), bessel_j(n + 1, x).unwrap());
            prop_assert!((a + c - 2.0 * n as f64 / x * b).abs() < 1e-10);
        }

        #[test]
        fn bounded_by_one(n in 0usize..=60, x in -50.0f64..50.0) {
            prop_assert!(bessel_j(n, x).unwrap().abs() <= 1.0 + 1e-15);
        }
    }
}
