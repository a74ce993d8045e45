//! Numerical integration.
//!
//! Two building blocks:
//!
//! * [`adaptive`]: global adaptive bisection driven by the 7/15-point
//!   Gauss–Kronrod pair (the QUADPACK `qag` strategy).
//! * [`endpoint_panels`]: splits `[a, b]` at its midpoint and walks dyadic
//!   panels toward each endpoint. Integrands with algebraic behaviour at an
//!   endpoint (`x^{-1/2}`, `x^{0.2}`, ...) contribute a geometric sequence of
//!   panel integrals there; once the ratio of successive panels settles, the
//!   remaining tail is summed in closed form.
//!
//! Every integrand the measure code needs is bounded on each panel, so both
//! routes only ever evaluate at interior points.

use crate::error::{Error, Result};

/// Absolute/relative error target. The allowed error for a result `I` is
/// `max(abs, rel * |I|)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const DEFAULT_ABS: f64 = 1e-10;

    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    pub fn absolute(abs: f64) -> Self {
        Self { abs, rel: 0.0 }
    }

    pub fn relative(rel: f64) -> Self {
        Self { abs: 0.0, rel }
    }

    pub fn allowed(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = self.abs >= 0.0 && self.rel >= 0.0 && (self.abs > 0.0 || self.rel > 0.0);
        if ok && self.abs.is_finite() && self.rel.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("tolerance must be positive, got {self:?}")))
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::absolute(Self::DEFAULT_ABS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

impl QuadEstimate {
    pub const ZERO: QuadEstimate = QuadEstimate {
        value: 0.0,
        error: 0.0,
        evaluations: 0,
    };
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Gauss–Kronrod application on `[a, b]`.
/// Returns `(integral, error estimate)` with the QUADPACK error heuristic.
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = res_k.abs();
    let mut f1 = [0.0; 7];
    let mut f2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let v1 = f(center - dx);
        let v2 = f(center + dx);
        f1[j] = v1;
        f2[j] = v2;
        res_k += WGK[j] * (v1 + v2);
        res_abs += WGK[j] * (v1.abs() + v2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (v1 + v2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((f1[j] - mean).abs() + (f2[j] - mean).abs());
    }
    let result = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (result, err)
}

/// Global adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    tol: Tolerance,
    max_intervals: usize,
) -> Result<QuadEstimate> {
    if a == b {
        return Ok(QuadEstimate::ZERO);
    }
    let (v, e) = gk15(f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut total = v;
    let mut total_err = e;
    let mut evaluations = 15;
    // gk15 floors each local error at 50 eps |f|, so demanding less than
    // about 100 eps |I| can never be met.
    while total_err > tol.allowed(total).max(100.0 * f64::EPSILON * total.abs()) {
        if intervals.len() >= max_intervals {
            return Err(Error::QuadratureFailure {
                context: format!("adaptive bisection on [{a:e}, {b:e}] hit {max_intervals} intervals"),
                estimate: total,
                error_bound: total_err,
            });
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, iv)| if iv.3 > acc.1 { (i, iv.3) } else { acc });
        let (lo, hi, old_v, old_e) = intervals[worst];
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval exhausted at machine resolution; nothing more to gain.
            break;
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        evaluations += 30;
        total += v1 + v2 - old_v;
        total_err += e1 + e2 - old_e;
        intervals[worst] = (lo, mid, v1, e1);
        intervals.push((mid, hi, v2, e2));
        // Re-sum periodically to wash out drift from the running update.
        if intervals.len() % 64 == 0 {
            total = intervals.iter().map(|iv| iv.2).sum();
            total_err = intervals.iter().map(|iv| iv.3).sum();
        }
    }
    total = intervals.iter().map(|iv| iv.2).sum();
    total_err = intervals.iter().map(|iv| iv.3).sum();
    Ok(QuadEstimate {
        value: total,
        error: total_err,
        evaluations,
    })
}

const PANEL_INTERVALS: usize = 200;
const REGULAR_INTERVALS: usize = 1000;
const MIN_PANELS: usize = 3;
/// Smallest panel offset from a nonzero anchor, relative to the anchor.
const RESOLUTION: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

/// Integrates `f` over `(a, b)` with dyadic refinement toward both endpoints.
pub fn endpoint_panels<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: Tolerance) -> Result<QuadEstimate> {
    if !(b > a) {
        return Ok(QuadEstimate::ZERO);
    }
    let half = 0.5 * (b - a);
    let side_tol = Tolerance::new(0.5 * tol.abs, 0.5 * tol.rel);
    let lower = dyadic_side(f, a, half, Side::Lower, side_tol)?;
    let upper = dyadic_side(f, b, half, Side::Upper, side_tol)?;
    Ok(QuadEstimate {
        value: lower.value + upper.value,
        error: lower.error + upper.error,
        evaluations: lower.evaluations + upper.evaluations,
    })
}

/// Integrates `f` over `(a, b)`, refining dyadically only toward the ends
/// flagged as possibly singular; unflagged ends get plain adaptive bisection.
pub fn refine_ends<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    singular_a: bool,
    singular_b: bool,
    tol: Tolerance,
) -> Result<QuadEstimate> {
    if !(b > a) {
        return Ok(QuadEstimate::ZERO);
    }
    match (singular_a, singular_b) {
        (true, true) => endpoint_panels(f, a, b, tol),
        (true, false) => dyadic_side(f, a, b - a, Side::Lower, tol),
        (false, true) => dyadic_side(f, b, b - a, Side::Upper, tol),
        (false, false) => adaptive(f, a, b, tol, REGULAR_INTERVALS),
    }
}

/// Integrates `f` over `(0, b)` walking dyadic panels toward zero only.
pub fn toward_zero<F: FnMut(f64) -> f64>(f: &mut F, b: f64, tol: Tolerance) -> Result<QuadEstimate> {
    if !(b > 0.0) {
        return Ok(QuadEstimate::ZERO);
    }
    dyadic_side(f, 0.0, b, Side::Lower, tol)
}

fn dyadic_side<F: FnMut(f64) -> f64>(
    f: &mut F,
    anchor: f64,
    width: f64,
    side: Side,
    tol: Tolerance,
) -> Result<QuadEstimate> {
    // Offsets below this lose relative precision to the rounding of `anchor ± off`.
    let resolution = (anchor.abs() * RESOLUTION).max(1e-300);
    let mut sum = crate::numeric::Neumaier::default();
    let mut err = 0.0;
    let mut evaluations = 0;
    let mut panels: Vec<f64> = Vec::with_capacity(64);
    let mut hi_off = width;
    loop {
        let lo_off = 0.5 * hi_off;
        let (lo, hi) = match side {
            Side::Lower => (anchor + lo_off, anchor + hi_off),
            Side::Upper => (anchor - hi_off, anchor - lo_off),
        };
        let degenerate = !(hi > lo) || lo_off < resolution;
        if degenerate {
            // Out of resolution: close with the geometric tail if it is usable.
            let (tail, tail_err) = geometric_tail(&panels).unwrap_or_else(|| {
                let last = panels.last().copied().unwrap_or(0.0);
                (0.0, last.abs())
            });
            sum.add(tail);
            err += tail_err;
            let value = sum.total();
            // Near a nonzero anchor the nodes of the innermost panels carry
            // relative rounding of order eps |anchor| / offset; do not
            // demand better on what those panels and the tail contribute.
            let innermost = panels.last().map_or(0.0, |p| p.abs()) + tail.abs();
            let floor = if anchor == 0.0 { 0.0 } else { 8.0 * f64::EPSILON * anchor.abs() / hi_off * innermost };
            if err > (tol.allowed(value) * 8.0).max(floor).max(1e-300) {
                return Err(Error::QuadratureFailure {
                    context: format!("dyadic panels toward {anchor:e} reached machine resolution"),
                    estimate: value,
                    error_bound: err,
                });
            }
            return Ok(QuadEstimate {
                value,
                error: err,
                evaluations,
            });
        }
        // Panels are held to a share of the running total, not of themselves.
        let panel_tol = Tolerance::new((tol.abs / 64.0).max(tol.rel / 8.0 * sum.total().abs()), tol.rel / 8.0);
        let p = adaptive(f, lo, hi, panel_tol, PANEL_INTERVALS)?;
        evaluations += p.evaluations;
        sum.add(p.value);
        err += p.error;
        panels.push(p.value);
        hi_off = lo_off;

        if panels.len() < MIN_PANELS {
            continue;
        }
        let n = panels.len();
        // Zeros far from the anchor may just be underflow ahead of the mass;
        // only zeros after it mean f vanishes near the anchor.
        let seen_mass = panels[..n - 3].iter().any(|&p| p != 0.0);
        if seen_mass && panels[n - 1] == 0.0 && panels[n - 2] == 0.0 && panels[n - 3] == 0.0 {
            break;
        }
        if smooth_at_anchor(&panels) {
            // f behaves like |x - anchor|^m there: finish in one adaptive pass.
            let (lo, hi) = match side {
                Side::Lower => (anchor, anchor + hi_off),
                Side::Upper => (anchor - hi_off, anchor),
            };
            let rest_tol = Tolerance::new(
                (tol.abs / 8.0).max(tol.rel / 8.0 * sum.total().abs()),
                tol.rel / 8.0,
            );
            let p = adaptive(f, lo, hi, rest_tol, PANEL_INTERVALS)?;
            evaluations += p.evaluations;
            sum.add(p.value);
            err += p.error;
            break;
        }
        if let Some((tail, tail_err)) = geometric_tail(&panels) {
            let running = sum.total() + tail;
            if tail_err <= tol.allowed(running) / 8.0 {
                sum.add(tail);
                err += tail_err;
                break;
            }
        }
    }
    Ok(QuadEstimate {
        value: sum.total(),
        error: err,
        evaluations,
    })
}

/// Detects panel ratios settling at `2^{-(m+1)}` for a small integer `m`,
/// the signature of an integrand that is smooth up to the anchor.
fn smooth_at_anchor(panels: &[f64]) -> bool {
    let n = panels.len();
    if n < 3 || panels[n - 2] == 0.0 || panels[n - 3] == 0.0 {
        return false;
    }
    let r = panels[n - 1] / panels[n - 2];
    let r_prev = panels[n - 2] / panels[n - 3];
    (1..=4).any(|m| {
        let target = 0.5f64.powi(m);
        (r / target - 1.0).abs() < 0.02 && (r_prev / target - 1.0).abs() < 0.02
    })
}

/// Sum of the remaining panels assuming their ratio keeps its current
/// trend, with an error estimate from how well that trend is pinned down.
///
/// For `f ~ |x - a|^p g(x)` with smooth `g` the panel ratios approach their
/// limit `ρ` with a gap that halves per panel, so `2 r_k - r_{k-1}` is a
/// second-order estimate of `ρ`. With only three panels, or when that
/// correction is worse than the plain ratio, the last ratio is used as is.
fn geometric_tail(panels: &[f64]) -> Option<(f64, f64)> {
    let n = panels.len();
    if n < 3 {
        return None;
    }
    let (p2, p1, p0) = (panels[n - 3], panels[n - 2], panels[n - 1]);
    if p0 == 0.0 {
        // A decay to zero ends the tail; zeros throughout say nothing yet.
        return (p1 != 0.0).then_some((0.0, 0.0));
    }
    if p1 == 0.0 || p2 == 0.0 {
        return None;
    }
    let r = p0 / p1;
    let r_prev = p1 / p2;
    if !(0.0..0.999).contains(&r) || !(r_prev >= 0.0) {
        return None;
    }
    let rounding = |tail: f64| tail.abs() * 1e-15 + p0.abs() * f64::EPSILON;
    let tail = p0 * r / (1.0 - r);
    let drift = (2.0 * (r - r_prev).abs() / (1.0 - r)).min(1.0);
    let plain = (tail, tail.abs() * drift + rounding(tail));
    if n < 4 || panels[n - 4] == 0.0 {
        return Some(plain);
    }
    let r_prev2 = p2 / panels[n - 4];
    let rho = 2.0 * r - r_prev;
    let rho_prev = 2.0 * r_prev - r_prev2;
    if !(0.0..0.999).contains(&rho) {
        return Some(plain);
    }
    // Walk the ratios r_{k+i} = ρ + (r - ρ) 2^{-i} until the terms vanish.
    let mut term = p0;
    let mut gap = r - rho;
    let mut acc = crate::numeric::Neumaier::default();
    for _ in 0..100_000 {
        gap *= 0.5;
        term *= rho + gap;
        acc.add(term);
        if term.abs() <= f64::EPSILON * acc.total().abs() {
            break;
        }
    }
    let corrected = acc.total();
    let spread = (2.0 * (rho - rho_prev).abs() / (1.0 - rho)).min(1.0);
    let err = corrected.abs() * spread + rounding(corrected);
    Some(if err < plain.1 { (corrected, err) } else { plain })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk15_is_exact_for_polynomials() {
        let (v, _) = gk15(&mut |x: f64| x.powi(10) - 3.0 * x * x, -1.0, 2.0);
        let exact = (2f64.powi(11) + 1.0) / 11.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let est = adaptive(&mut |x: f64| 1.0 / (1e-4 + (x - 0.3).powi(2)), 0.0, 1.0, Tolerance::relative(1e-12), 500)
            .unwrap();
        let exact = (0.7f64 / 1e-2).atan() / 1e-2 + (0.3f64 / 1e-2).atan() / 1e-2;
        assert!((est.value - exact).abs() < 1e-9 * exact, "{} vs {}", est.value, exact);
    }

    #[test]
    fn adaptive_reports_failure_when_budget_exhausted() {
        let r = adaptive(&mut |x: f64| (1.0 / x).sin(), 1e-6, 1.0, Tolerance::absolute(1e-14), 4);
        assert!(matches!(r, Err(Error::QuadratureFailure { .. })));
    }

    #[test]
    fn endpoint_power_singularities() {
        // x^{-1/2} (1-x)^{-1/2} integrates to pi over (0,1).
        let est = endpoint_panels(&mut |x: f64| 1.0 / (x * (1.0 - x)).sqrt(), 0.0, 1.0, Tolerance::relative(1e-11))
            .unwrap();
        assert!((est.value - std::f64::consts::PI).abs() < 1e-9, "{}", est.value);
        // x^{-0.8} has a slowly decaying panel sequence.
        let est = toward_zero(&mut |x: f64| x.powf(-0.8), 1.0, Tolerance::relative(1e-11)).unwrap();
        assert!((est.value - 5.0).abs() < 1e-8, "{}", est.value);
    }

    #[test]
    fn endpoint_zero_integrand() {
        let est = endpoint_panels(&mut |_x: f64| 0.0, 0.0, 1.0, Tolerance::default()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn mass_behind_underflowing_panels() {
        // Panels near x = 1/2 underflow to zero; the mass sits within 1e-5 of an end.
        let m = 1e5;
        let est = endpoint_panels(&mut |x: f64| (m * (-x).ln_1p()).exp(), 0.0, 1.0, Tolerance::relative(1e-12)).unwrap();
        assert!((est.value * (m + 1.0) - 1.0).abs() < 1e-11, "{}", est.value);
        let est = endpoint_panels(&mut |x: f64| (m * x.ln()).exp(), 0.0, 1.0, Tolerance::relative(1e-12)).unwrap();
        assert!((est.value * (m + 1.0) - 1.0).abs() < 1e-11, "{}", est.value);
    }
}
