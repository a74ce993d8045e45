//! Binomial moment identities and bounds used by the drift estimates.
//!
//! Two binomial variables appear. `Y = X - 1{X>0}` with `X ~ Bin(n, p)` is
//! the number of blocks lost when each of `n` blocks joins a merger with
//! probability `p`. `T = ln(X' + 1{X'<n}) - ln n` with `X' ~ Bin(n, 1-p)` is
//! the resulting change of `ln N`. Everything is checked by exact
//! enumeration of the binomial law in log space.
//!
//! The bounds hold "for some `n0` and constant"; here `n0` is fixed at
//! [`N0_EMP`], the constants are measured on a grid, and a bound counts as
//! satisfied when the per-rung supremum has stopped growing at both the
//! large-`n` and the small-`p` end of the grid.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{ln_binomial, log_sum_exp, Neumaier};

pub const N0_EMP: u64 = 32;
pub const ENUMERATION_LIMIT: u64 = 10_000;
/// Largest relative rise of the last rung over all earlier rungs that still
/// counts as "not growing".
pub const SATURATION: f64 = 0.01;

/// `n = 32, 64, ..., 4096`.
pub fn canonical_n_grid() -> Vec<u64> {
    (5..=12).map(|j| 1u64 << j).collect()
}

/// `p = 2^{-k}`, `k = 2..16`.
pub fn canonical_p_grid() -> Vec<f64> {
    (2..=16).map(|k| 0.5f64.powi(k)).collect()
}

/// `c = 2^{-3}, ..., 2^3`.
pub fn canonical_c_grid() -> Vec<f64> {
    (-3..=3).map(|k| 2f64.powi(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinomialMoments {
    pub n: u64,
    pub p: f64,
    pub ey: f64,
    pub var_y: f64,
    pub ey2: f64,
}

impl BinomialMoments {
    /// `|E Y² - (var Y + (E Y)²)|`, relative to `max(1, E Y²)`.
    pub fn consistency_gap(&self) -> f64 {
        (self.ey2 - (self.var_y + self.ey * self.ey)).abs() / self.ey2.abs().max(1.0)
    }
}

/// `(1-p)^n` and `1 - (1-p)^n` without cancellation.
fn survival(n: u64, p: f64) -> (f64, f64) {
    let l = n as f64 * (-p).ln_1p();
    (l.exp(), -l.exp_m1())
}

fn check_p(p: f64, hi: f64) -> Result<()> {
    if (0.0..=hi).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("p must lie in [0, {hi}], got {p}")))
    }
}

/// Closed forms for the moments of `Y = X - 1{X>0}`, `X ~ Bin(n, p)`.
pub fn moments_closed_form(n: u64, p: f64) -> Result<BinomialMoments> {
    if n < 1 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    check_p(p, 1.0)?;
    let nf = n as f64;
    let np = nf * p;
    let (q, one_minus_q) = survival(n, p);
    let ey = np - one_minus_q;
    let var_y = np * (1.0 - p) + q * one_minus_q - 2.0 * np * q;
    let ey2 = -np - np * p + np * np + one_minus_q;
    let m = BinomialMoments { n, p, ey, var_y, ey2 };
    debug_assert!(m.consistency_gap() < 1e-10, "{m:?}");
    Ok(m)
}

/// `ln P(Bin(n, p) = k)` for every `k`, exact at `p = 0` and `p = 1`.
fn binomial_log_pmf(n: u64, p: f64) -> Vec<f64> {
    let nf = n as f64;
    (0..=n)
        .map(|k| {
            let kf = k as f64;
            let on = if k == 0 { 0.0 } else { kf * p.ln() };
            let off = if k == n { 0.0 } else { (nf - kf) * (-p).ln_1p() };
            ln_binomial(nf, kf) + on + off
        })
        .collect()
}

/// Compensated `Σ pmf(k) h(k)` over the mass function of `Bin(n, p)`.
fn expect<H: Fn(u64) -> f64>(log_pmf: &[f64], h: H) -> f64 {
    let mut acc = Neumaier::default();
    for (k, &lp) in log_pmf.iter().enumerate() {
        if lp > -745.0 {
            let v = h(k as u64);
            if v != 0.0 {
                acc.add(lp.exp() * v);
            }
        }
    }
    acc.total()
}

/// The same moments by summing over all `n + 1` outcomes.
pub fn moments_enumerated(n: u64, p: f64) -> Result<BinomialMoments> {
    if n < 1 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit { n, limit: ENUMERATION_LIMIT });
    }
    check_p(p, 1.0)?;
    let lp = binomial_log_pmf(n, p);
    let y = |k: u64| k.saturating_sub(1) as f64;
    let ey = expect(&lp, y);
    let var_y = expect(&lp, |k| (y(k) - ey).powi(2));
    let ey2 = expect(&lp, |k| y(k) * y(k));
    Ok(BinomialMoments { n, p, ey, var_y, ey2 })
}

/// `T = ln(1 - (Y - 1{Y>0})/n)` as a function of the number `y = n - X'` of
/// blocks hit.
fn log_ratio(n: u64, y: u64) -> f64 {
    if y <= 1 {
        0.0
    } else {
        (-((y - 1) as f64) / n as f64).ln_1p()
    }
}

fn enumeration_args(n: u64, p: f64) -> Result<()> {
    if n < 1 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit { n, limit: ENUMERATION_LIMIT });
    }
    check_p(p, 0.25)
}

/// `(E T, E T²)` for `T = ln(X + 1{X<n}) - ln n`, `X ~ Bin(n, 1-p)`.
pub fn log_moment_exact(n: u64, p: f64) -> Result<(f64, f64)> {
    enumeration_args(n, p)?;
    // Enumerate over the number hit, y = n - X ~ Bin(n, p).
    let lp = binomial_log_pmf(n, p);
    let et = expect(&lp, |y| log_ratio(n, y));
    let et2 = expect(&lp, |y| log_ratio(n, y).powi(2));
    Ok((et, et2))
}

/// `ln E[exp(c T²) - 1]`, summed in log space so `exp(c T²)` never overflows.
pub fn log_exp_moment(n: u64, p: f64, c: f64) -> Result<f64> {
    enumeration_args(n, p)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("c must be positive, got {c}")));
    }
    let lp = binomial_log_pmf(n, p);
    let terms: Vec<f64> = (0..=n)
        .filter_map(|y| {
            let z = c * log_ratio(n, y).powi(2);
            // ln(e^z - 1), accurate for both small and large z
            (z > 0.0).then(|| lp[y as usize] + z + (-(-z).exp_m1()).ln())
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Drift-bound ratio `|E T + (np - 1 + (1-p)^n)/n| / p²`.
pub fn drift_ratio(n: u64, p: f64) -> Result<f64> {
    let (et, _) = log_moment_exact(n, p)?;
    let ey = moments_closed_form(n, p)?.ey;
    Ok((et + ey / n as f64).abs() / (p * p))
}

/// Second-moment ratio `E T² / p²`.
pub fn log_second_moment_ratio(n: u64, p: f64) -> Result<f64> {
    Ok(log_moment_exact(n, p)?.1 / (p * p))
}

/// `E[((n - Y')/n)²] / p²` with `Y' = X' + 1{X'<n}`; `n - Y'` has the law of `Y`.
pub fn secmom_ratio(n: u64, p: f64) -> Result<f64> {
    let nf = n as f64;
    Ok(moments_closed_form(n, p)?.ey2 / (nf * nf * p * p))
}

/// `E[exp(c T²) - 1] / (e^{9c/4} p²)`.
pub fn expmoment_ratio(n: u64, p: f64, c: f64) -> Result<f64> {
    Ok((log_exp_moment(n, p, c)? - 2.25 * c - 2.0 * p.ln()).exp())
}

/// Where the supremum was attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub n: u64,
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lemma: String,
    /// Empirical constant: the supremum of the ratio over the grid.
    pub constant: f64,
    pub worst: GridCell,
    /// `(n, sup over p and c)`, increasing `n`.
    pub sup_by_n: Vec<(u64, f64)>,
    /// `(p, sup over n and c)`, decreasing `p`.
    pub sup_by_p: Vec<(f64, f64)>,
    pub pass: bool,
}

impl BoundCheck {
    /// Turns a failed check into [`Error::BoundViolation`].
    pub fn into_result(self) -> Result<Self> {
        if self.pass {
            Ok(self)
        } else {
            Err(Error::BoundViolation {
                lemma: self.lemma.clone(),
                detail: format!("sup by n {:?}, sup by p {:?}", self.sup_by_n, self.sup_by_p),
            })
        }
    }
}

/// True when the last rung does not rise more than [`SATURATION`] above all
/// earlier ones.
fn saturated(sups: &[f64]) -> bool {
    if sups.iter().any(|s| !s.is_finite()) {
        return false;
    }
    match sups.split_last() {
        Some((last, earlier)) if !earlier.is_empty() => {
            let top = earlier.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            *last <= top * (1.0 + SATURATION)
        }
        _ => true,
    }
}

fn grid_args(ns: &[u64], ps: &[f64]) -> Result<(Vec<u64>, Vec<f64>)> {
    if ns.is_empty() || ps.is_empty() {
        return Err(Error::Domain("empty grid".into()));
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns[0] < N0_EMP {
        return Err(Error::Domain(format!("grid n must be at least n0 = {N0_EMP}, got {}", ns[0])));
    }
    let mut ps = ps.to_vec();
    if ps.iter().any(|&p| !(p > 0.0 && p <= 0.25)) {
        return Err(Error::Domain("grid p must lie in (0, 1/4]".into()));
    }
    ps.sort_by(|a, b| b.total_cmp(a));
    ps.dedup();
    Ok((ns, ps))
}

/// Sweeps `ratio` over `ns × ps × cs` (a `None` entry stands for no `c`).
fn sweep<F>(lemma: &str, ns: &[u64], ps: &[f64], cs: &[Option<f64>], ratio: F) -> Result<BoundCheck>
where
    F: Fn(u64, f64, Option<f64>) -> Result<f64> + Sync,
{
    let (ns, ps) = grid_args(ns, ps)?;
    let cells: Vec<GridCell> = ns
        .iter()
        .flat_map(|&n| ps.iter().flat_map(move |&p| cs.iter().map(move |&c| GridCell { n, p, c })))
        .collect();
    let values = cells
        .par_iter()
        .map(|cell| ratio(cell.n, cell.p, cell.c))
        .collect::<Result<Vec<f64>>>()?;
    let mut worst = 0;
    for (i, v) in values.iter().enumerate() {
        if !(values[worst] >= *v) {
            worst = i;
        }
    }
    let sup_where = |keep: &dyn Fn(&GridCell) -> bool| {
        cells
            .iter()
            .zip(&values)
            .filter(|(c, _)| keep(c))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let sup_by_n: Vec<(u64, f64)> = ns.iter().map(|&n| (n, sup_where(&|c| c.n == n))).collect();
    let sup_by_p: Vec<(f64, f64)> = ps.iter().map(|&p| (p, sup_where(&|c| c.p == p))).collect();
    let pass = saturated(&sup_by_n.iter().map(|s| s.1).collect::<Vec<_>>())
        && saturated(&sup_by_p.iter().map(|s| s.1).collect::<Vec<_>>());
    Ok(BoundCheck {
        lemma: lemma.to_string(),
        constant: values[worst],
        worst: cells[worst],
        sup_by_n,
        sup_by_p,
        pass,
    })
}

/// Both log-moment estimates: the drift ratio and `E T² / p²`. The returned
/// constant is the larger of the two suprema; `pass` needs both bounded.
pub fn verify_drift_bound(ns: &[u64], ps: &[f64]) -> Result<(BoundCheck, BoundCheck)> {
    let drift = sweep("log-moment drift", ns, ps, &[None], |n, p, _| drift_ratio(n, p))?;
    let second = sweep("log-moment second moment", ns, ps, &[None], |n, p, _| log_second_moment_ratio(n, p))?;
    Ok((drift, second))
}

pub fn verify_secmom_bound(ns: &[u64], ps: &[f64]) -> Result<BoundCheck> {
    sweep("second moment of the block loss", ns, ps, &[None], |n, p, _| secmom_ratio(n, p))
}

pub fn verify_expmoment_bound(ns: &[u64], ps: &[f64], cs: &[f64]) -> Result<BoundCheck> {
    if cs.is_empty() || cs.iter().any(|&c| !(c > 0.0 && c <= 8.0)) {
        return Err(Error::Domain("grid c must be nonempty and lie in (0, 8]".into()));
    }
    let cs: Vec<Option<f64>> = cs.iter().map(|&c| Some(c)).collect();
    sweep("exponential log-moment", ns, ps, &cs, |n, p, c| {
        expmoment_ratio(n, p, c.expect("c grid is nonempty"))
    })
}

/// Closed forms against enumeration for every `n ≤ n_max` and `p` in `ps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormCheck {
    pub cells: usize,
    /// Largest `|closed - enumerated| / max(1, |enumerated|)` over all three moments.
    pub max_gap: f64,
    pub worst: GridCell,
    pub pass: bool,
}

pub const CLOSED_FORM_TOL: f64 = 1e-12;

pub fn verify_closed_forms(n_max: u64, ps: &[f64]) -> Result<ClosedFormCheck> {
    let cells: Vec<GridCell> = (1..=n_max)
        .flat_map(|n| ps.iter().map(move |&p| GridCell { n, p, c: None }))
        .collect();
    let gaps = cells
        .par_iter()
        .map(|cell| {
            let a = moments_closed_form(cell.n, cell.p)?;
            let b = moments_enumerated(cell.n, cell.p)?;
            let gap = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
            Ok(gap(a.ey, b.ey).max(gap(a.var_y, b.var_y)).max(gap(a.ey2, b.ey2)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (i, max_gap) = gaps
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    Ok(ClosedFormCheck {
        cells: cells.len(),
        max_gap,
        worst: cells.get(i).copied().unwrap_or(GridCell { n: 0, p: 0.0, c: None }),
        pass: max_gap <= CLOSED_FORM_TOL,
    })
}

/// `ln P(Bin(n, p) > n/2)` by exact tail summation.
pub fn log_upper_half_tail(n: u64, p: f64) -> f64 {
    let lp = binomial_log_pmf(n, p);
    log_sum_exp(&lp[(n / 2 + 1) as usize..])
}

/// `ln(2^n p^{n/2} (1-p)^{n/2})`.
pub fn log_ldp_bound(n: u64, p: f64) -> f64 {
    let nf = n as f64;
    nf * std::f64::consts::LN_2 + 0.5 * nf * (p.ln() + (-p).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpCheck {
    pub cells: usize,
    /// Smallest `ln bound - ln tail`; nonnegative when the bound holds everywhere.
    pub min_log_margin: f64,
    pub worst: GridCell,
    pub pass: bool,
}

pub fn verify_ldp_bound(ns: &[u64], ps: &[f64]) -> Result<LdpCheck> {
    if ps.iter().any(|&p| !(p > 0.0 && p <= 0.25)) || ns.iter().any(|&n| n < 1 || n > ENUMERATION_LIMIT) {
        return Err(Error::Domain("LDP grid needs p in (0, 1/4] and 1 <= n <= 10^4".into()));
    }
    let cells: Vec<GridCell> = ns
        .iter()
        .flat_map(|&n| ps.iter().map(move |&p| GridCell { n, p, c: None }))
        .collect();
    let margins: Vec<f64> = cells
        .par_iter()
        .map(|c| log_ldp_bound(c.n, c.p) - log_upper_half_tail(c.n, c.p))
        .collect();
    let (i, min_log_margin) = margins
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, m)| if m < acc.1 { (i, m) } else { acc });
    Ok(LdpCheck {
        cells: cells.len(),
        min_log_margin,
        worst: cells[i],
        // A few ulps of ln-space rounding allowed.
        pass: min_log_margin >= -1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalcCheck {
    pub points: usize,
    /// Smallest slack of `|ln(1-x) + x| <= x²/(2(1-x))`.
    pub min_slack_inner: f64,
    /// Smallest slack of `x²/(2(1-x)) <= x²`.
    pub min_slack_outer: f64,
    pub pass: bool,
}

/// `|ln(1-x) + x| <= x²/(2(1-x)) <= x²` at `points` equally spaced `x ∈ [0, 1/2]`.
pub fn verify_calc_inequality(points: usize) -> CalcCheck {
    let points = points.max(2);
    let (mut inner, mut outer) = (f64::INFINITY, f64::INFINITY);
    for i in 0..points {
        let x = 0.5 * i as f64 / (points - 1) as f64;
        let lhs = ((-x).ln_1p() + x).abs();
        let mid = x * x / (2.0 * (1.0 - x));
        inner = inner.min(mid - lhs);
        outer = outer.min(x * x - mid);
    }
    CalcCheck {
        points,
        min_slack_inner: inner,
        min_slack_outer: outer,
        pass: inner >= 0.0 && outer >= 0.0,
    }
}

/// Everything above on the canonical grids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppendixReport {
    pub schema: u32,
    pub n0_emp: u64,
    pub n_grid: Vec<u64>,
    pub p_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub closed_forms: ClosedFormCheck,
    pub drift: BoundCheck,
    pub log_second_moment: BoundCheck,
    pub second_moment: BoundCheck,
    pub exp_moment: BoundCheck,
    pub large_deviation: LdpCheck,
    pub calc_inequality: CalcCheck,
    pub pass: bool,
}

/// `p = 0.01, 0.02, ..., 0.25` for the closed-form comparison.
pub fn closed_form_p_grid() -> Vec<f64> {
    (1..=25).map(|i| i as f64 / 100.0).collect()
}

pub const CLOSED_FORM_N_MAX: u64 = 200;
pub const CALC_POINTS: usize = 100_001;

pub fn run_appendix() -> Result<AppendixReport> {
    let (ns, ps, cs) = (canonical_n_grid(), canonical_p_grid(), canonical_c_grid());
    let closed_forms = verify_closed_forms(CLOSED_FORM_N_MAX, &closed_form_p_grid())?;
    let (drift, log_second_moment) = verify_drift_bound(&ns, &ps)?;
    let second_moment = verify_secmom_bound(&ns, &ps)?;
    let exp_moment = verify_expmoment_bound(&ns, &ps, &cs)?;
    let ldp_ns: Vec<u64> = (1..=CLOSED_FORM_N_MAX).chain(ns.iter().copied()).collect();
    let large_deviation = verify_ldp_bound(&ldp_ns, &ps)?;
    let calc_inequality = verify_calc_inequality(CALC_POINTS);
    let pass = closed_forms.pass
        && drift.pass
        && log_second_moment.pass
        && second_moment.pass
        && exp_moment.pass
        && large_deviation.pass
        && calc_inequality.pass;
    Ok(AppendixReport {
        schema: 1,
        n0_emp: N0_EMP,
        n_grid: ns,
        p_grid: ps,
        c_grid: cs,
        closed_forms,
        drift,
        log_second_moment,
        second_moment,
        exp_moment,
        large_deviation,
        calc_inequality,
        pass,
    })
}
