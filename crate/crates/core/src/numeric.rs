//! Small numerical kernels shared by the measure, rate and speed code.
//!
//! The `*_over_x2` functions evaluate quantities of the form `g(x) / x^2`
//! where `g` vanishes to second order at zero. They switch to a power series
//! when the direct formula would cancel catastrophically.

use statrs::function::gamma::ln_gamma;

/// Neumaier (improved Kahan) summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for Neumaier {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Neumaier::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<Neumaier>().total()
}

/// `log(sum(exp(v)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    let s = compensated_sum(values.iter().map(|v| (v - m).exp()));
    m + s.ln()
}

pub fn ln_binomial(n: f64, k: f64) -> f64 {
    if k < 0.0 || k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0.0 || k == n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 1000.0 && k <= 20.0 && n.fract() == 0.0 && k.fract() == 0.0 {
        // Exact product while it stays below 2^53.
        let mut c = 1.0f64;
        let mut ok = true;
        for i in 0..k as u64 {
            c = c * (n - i as f64) / (i + 1) as f64;
            if c > 9.0e15 {
                ok = false;
                break;
            }
        }
        if ok {
            return c.ln();
        }
    }
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// `(e^{-y} - 1 + y) / y^2` for `y >= 0`, equal to `1/2` at zero.
pub fn exp_remainder_over_sq(y: f64) -> f64 {
    if y < 0.1 {
        // Alternating series sum_{j>=0} (-y)^j / (j+2)!
        let mut term = 0.5;
        let mut sum = 0.5;
        let mut j = 0.0;
        loop {
            term *= -y / (j + 3.0);
            sum += term;
            j += 1.0;
            if term.abs() < 1e-18 * sum.abs() || j > 30.0 {
                break;
            }
        }
        sum
    } else {
        ((-y).exp_m1() + y) / (y * y)
    }
}

/// `(1 - (1 + y) e^{-y}) / y^2`, the integrand of `d/dq (psi(q)/q)` in
/// scaled form. Equals `1/2` at zero.
pub fn increasing_ratio_kernel(y: f64) -> f64 {
    if y < 0.1 {
        // sum_{j>=2} (-1)^j (j-1) y^{j-2} / j!
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 2.0;
        for j in 2..40 {
            let jf = j as f64;
            if j > 2 {
                pow *= -y;
                fact *= jf;
            }
            let term = (jf - 1.0) * pow / fact;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (-(-y).exp_m1() - y * (-y).exp()) / (y * y)
    }
}

/// `P(K >= 2) / x^2` for `K ~ Binomial(b, x)`, i.e.
/// `x^{-2} [1 - (1-x)^b - b x (1-x)^{b-1}]`, equal to `b(b-1)/2` at `x = 0`.
///
/// This is `sum_k C(b,k) x^{k-2} (1-x)^{b-k}`, the total merger rate kernel.
pub fn pair_or_more_over_x2(b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.5 * b * (b - 1.0);
    }
    if x >= 1.0 {
        return 1.0;
    }
    if b * x < 0.5 {
        // sum_{j>=2} (-1)^j (j-1) C(b,j) x^{j-2}
        let mut term = 0.5 * b * (b - 1.0); // (j-1) C(b,j) x^{j-2} at j = 2
        let mut sum = term;
        let mut j = 2.0;
        for _ in 0..400 {
            // ratio of |term_{j+1}| to |term_j|
            term *= -(j / (j - 1.0)) * ((b - j) / (j + 1.0)) * x;
            sum += term;
            j += 1.0;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        let s = (b - 1.0) * (-x).ln_1p() + ((b - 1.0) * x).ln_1p();
        -s.exp_m1() / (x * x)
    }
}

/// `x^{-2} [b x - 1 + (1-x)^b]`, equal to `b(b-1)/2` at zero.
///
/// This is `sum_k (k-1) C(b,k) x^{k-2} (1-x)^{b-k}`, the kernel of the
/// Schweinsberg functional `gamma_b`.
pub fn block_loss_over_x2(b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.5 * b * (b - 1.0);
    }
    if x >= 1.0 {
        return b - 1.0;
    }
    if b * x < 0.5 {
        // sum_{j>=2} (-1)^j C(b,j) x^{j-2}
        let mut term = 0.5 * b * (b - 1.0);
        let mut sum = term;
        let mut j = 2.0;
        for _ in 0..400 {
            term *= -((b - j) / (j + 1.0)) * x;
            sum += term;
            j += 1.0;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        ((b * (-x).ln_1p()).exp_m1() + b * x) / (x * x)
    }
}

/// SplitMix64 finaliser; used to derive independent replica seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_pair_or_more(b: u32, x: f64) -> f64 {
        // Direct binomial expansion, only valid away from cancellation.
        let mut s = 0.0;
        for k in 2..=b {
            let c = (0..k).fold(1.0, |acc, i| acc * (b - i) as f64 / (i + 1) as f64);
            s += c * x.powi(k as i32 - 2) * (1.0 - x).powi((b - k) as i32);
        }
        s
    }

    #[test]
    fn pair_kernel_matches_expansion() {
        for &b in &[2u32, 3, 5, 12, 40] {
            for &x in &[1e-9, 1e-3, 0.01, 0.2, 0.7, 0.999] {
                let got = pair_or_more_over_x2(b as f64, x);
                let want = brute_pair_or_more(b, x);
                assert!((got - want).abs() <= 1e-11 * want.abs(), "b={b} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn block_loss_kernel_matches_expansion() {
        for &b in &[2u32, 3, 7, 30] {
            for &x in &[1e-7f64, 0.004, 0.1, 0.5, 0.9] {
                let mut want = 0.0;
                for k in 2..=b {
                    let c = (0..k).fold(1.0, |acc, i| acc * (b - i) as f64 / (i + 1) as f64);
                    want += (k - 1) as f64 * c * x.powi(k as i32 - 2) * (1.0 - x).powi((b - k) as i32);
                }
                let got = block_loss_over_x2(b as f64, x);
                assert!((got - want).abs() <= 1e-11 * want, "b={b} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn exp_remainder_is_continuous_at_switch() {
        let below = exp_remainder_over_sq(0.1 - 1e-12);
        let above = exp_remainder_over_sq(0.1 + 1e-12);
        assert!((below - above).abs() < 1e-12);
        assert_eq!(exp_remainder_over_sq(0.0), 0.5);
    }

    #[test]
    fn increasing_kernel_is_continuous_and_positive() {
        let below = increasing_ratio_kernel(0.1 - 1e-12);
        let above = increasing_ratio_kernel(0.1 + 1e-12);
        assert!((below - above).abs() < 1e-12, "{below} {above}");
        for y in [1e-8, 0.05, 1.0, 30.0, 1e4] {
            assert!(increasing_ratio_kernel(y) > 0.0);
        }
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let s = compensated_sum([1.0, 1e100, 1.0, -1e100]);
        assert_eq!(s, 2.0);
    }
}
