//! Normal and Student-t distribution functions.
//!
//! The t CDF goes through the regularized incomplete beta function (modified
//! Lentz continued fraction). The fraction converges slowly once nu/2 is very
//! large, so from `T_ASYMPTOTIC` degrees of freedom on the CDF uses the
//! two-term expansion in 1/nu around the normal, whose error there is below
//! 1e-15.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

pub use statrs::function::gamma::digamma;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub const T_ASYMPTOTIC: f64 = 1e5;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return match p {
            p if p == 0.0 => f64::NEG_INFINITY,
            p if p == 1.0 => f64::INFINITY,
            _ => f64::NAN,
        };
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Halley step against the accurate cdf
    let dens = norm_pdf(x);
    if dens > 0.0 {
        let e = (norm_cdf(x) - p) / dens;
        x -= e / (1.0 + 0.5 * x * e);
    }
    x
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `ln B(a, b)`, stable when one or both arguments are large.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let (p, q) = if a < b { (a, b) } else { (b, a) };
    let pq = p + q;
    if p >= 10.0 {
        let corr = stirling_corr(p) + stirling_corr(q) - stirling_corr(pq);
        -0.5 * q.ln() + LN_SQRT_2PI + corr + (p - 0.5) * (p / pq).ln() + q * (-p / pq).ln_1p()
    } else if q >= 10.0 {
        let corr = stirling_corr(q) - stirling_corr(pq);
        ln_gamma(p) + corr + p - p * pq.ln() + (q - 0.5) * (-p / pq).ln_1p()
    } else {
        ln_gamma(p) + ln_gamma(q) - ln_gamma(pq)
    }
}

/// `ln Gamma(x) - [(x - 1/2) ln x - x + ln sqrt(2 pi)]` for x >= 10.
fn stirling_corr(x: f64) -> f64 {
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let x2 = 1.0 / (x * x);
    let mut acc = 0.0;
    for c in C.iter().rev() {
        acc = acc * x2 + c;
    }
    acc / x
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let max_iter = 200 + (20.0 * (a.max(b)).sqrt()) as usize;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Log density of the standard t distribution.
pub fn t_ln_pdf(z: f64, nu: f64) -> f64 {
    -ln_beta(0.5 * nu, 0.5) - 0.5 * nu.ln() - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

pub fn t_pdf(z: f64, nu: f64) -> f64 {
    t_ln_pdf(z, nu).exp()
}

/// CDF of the standard t distribution.
pub fn t_cdf(z: f64, nu: f64) -> f64 {
    if z == 0.0 {
        return 0.5;
    }
    if z.is_infinite() {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    if nu >= T_ASYMPTOTIC {
        let z2 = z * z;
        let g1 = (z2 * z + z) / 4.0;
        let g2 = z * (((3.0 * z2 - 7.0) * z2 - 5.0) * z2 - 3.0) / 96.0;
        return norm_cdf(z) - norm_pdf(z) * (g1 / nu + g2 / (nu * nu));
    }
    let z2 = z * z;
    // Use whichever beta argument is far from 1 to avoid cancellation.
    let tail = if z2 < nu {
        0.5 * (1.0 - beta_reg(0.5, 0.5 * nu, z2 / (nu + z2)))
    } else {
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + z2))
    };
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Quantile of the standard t distribution by safeguarded Newton iteration.
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p > 0.5 {
        return -t_quantile(1.0 - p, nu);
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    // p < 0.5: root is negative
    let mut hi = 0.0;
    let mut lo = norm_quantile(p).min(-1.0);
    while t_cdf(lo, nu) > p {
        hi = lo;
        lo *= 2.0;
        if !lo.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    let mut x = norm_quantile(p).clamp(lo, hi);
    for _ in 0..200 {
        let f = t_cdf(x, nu) - p;
        if f == 0.0 {
            return x;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = t_pdf(x, nu);
        let mut next = x - f / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 1e-15 * lo.abs() {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-15);
        assert!((norm_cdf(-8.0) - 6.220960574271785e-16).abs() < 1e-28);
        assert!((norm_quantile(0.975) - 1.959963984540054).abs() < 1e-14);
        assert!((norm_quantile(1e-10) + 6.361340902404056).abs() < 1e-12);
        assert!((norm_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
    }

    #[test]
    fn beta_reg_closed_forms() {
        // I_x(1, b) = 1 - (1 - x)^b ; I_x(a, 1) = x^a
        for &x in &[0.01, 0.3, 0.7, 0.99] {
            for &b in &[0.5, 2.0, 7.5] {
                let e = 1.0 - (1.0f64 - x).powf(b);
                assert!((beta_reg(1.0, b, x) - e).abs() < 1e-14);
                assert!((beta_reg(b, 1.0, x) - x.powf(b)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ln_beta_matches_gamma_form() {
        for &(a, b) in &[(0.5, 3.0), (12.0, 0.5), (15.0, 40.0), (2.5, 2.5)] {
            let e = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
            assert!((ln_beta(a, b) - e).abs() < 1e-12, "{a} {b}");
        }
        // B(n, 1/2) ~ sqrt(pi / n) for large n
        let n = 1e9;
        let e = 0.5 * (std::f64::consts::PI / n).ln() + (1.0f64 / (8.0 * n)).ln_1p();
        assert!((ln_beta(n, 0.5) - e).abs() < 1e-14);
    }

    #[test]
    fn t_cdf_closed_forms() {
        // nu = 1 (Cauchy) and nu = 2 have closed forms
        for &z in &[-30.0f64, -3.0, -0.5, 0.1, 1.0, 4.0, 100.0] {
            let cauchy = 0.5 + z.atan() / std::f64::consts::PI;
            assert!((t_cdf(z, 1.0) - cauchy).abs() < 1e-14, "z={z}");
            let two = 0.5 + z / (2.0 * (2.0 + z * z).sqrt());
            assert!((t_cdf(z, 2.0) - two).abs() < 1e-14, "z={z}");
        }
    }

    #[test]
    fn t_cdf_against_reference() {
        // (nu, z, F) computed at 40 digits
        let table = [
            (0.5, -7.5, 0.1169479719351751),
            (0.5, -2.3263482469956207, 0.20747279755060452),
            (0.5, -0.3, 0.42242957606524541),
            (0.5, 1.1, 0.71014284364306988),
            (0.5, 4.0, 0.84038995850566423),
            (3.0, -7.5, 0.0024554874629941517),
            (3.0, -2.3263482469956207, 0.051244274382026709),
            (3.0, -0.3, 0.39188164601995952),
            (3.0, 1.1, 0.82415840253267451),
            (3.0, 4.0, 0.98599577199492692),
            (25.0, -7.5, 3.7325914442385529e-8),
            (25.0, -2.3263482469956207, 0.014200429448654004),
            (25.0, -0.3, 0.38332874682652866),
            (25.0, 1.1, 0.85909404210845277),
            (25.0, 4.0, 0.99975227816473396),
            (1e3, -7.5, 7.0286467306057938e-14),
            (1e3, -2.3263482469956207, 0.010099532732058006),
            (1e3, -0.3, 0.38211975208362202),
            (1e3, 1.1, 0.86420157430401096),
            (1e3, 4.0, 0.99996599504039561),
            (2e4, -7.5, 3.324005449623952e-14),
            (2e4, -2.3263482469956207, 0.0100049598368195),
            (2e4, -0.3, 0.38209013672330047),
            (2e4, 1.1, 0.86432731915785628),
            (2e4, 4.0, 0.99996821485724366),
            (99999.0, -7.5, 3.2171203408189257e-14),
            (99999.0, -2.3263482469956207, 0.010000983963164833),
            (99999.0, -0.3, 0.38208888959828668),
            (99999.0, 1.1, 0.86433261504726211),
            (99999.0, 4.0, 0.99996830600099377),
            (1e5, -7.5, 3.217120077555113e-14),
            (1e5, -2.3263482469956207, 0.010000983953225645),
            (1e5, -0.3, 0.38208888959516882),
            (1e5, 1.1, 0.86433261506050214),
            (1e5, 4.0, 0.9999683060012214),
            (1e7, -7.5, 3.1911529917336576e-14),
            (1e7, -2.3263482469956207, 0.009999999998739409),
            (1e7, -0.3, 0.38208858092889271),
            (1e7, 1.1, 0.86433392581365161),
            (1e7, 4.0, 0.99996832853065492),
        ];
        for &(nu, z, f) in &table {
            let got = t_cdf(z, nu);
            assert!((got - f).abs() < 1e-13, "nu={nu} z={z} got={got} want={f}");
        }
    }

    #[test]
    fn t_reference_values() {
        // two-sided 5% critical values
        assert!((t_cdf(2.570581835636314, 5.0) - 0.975).abs() < 1e-12);
        assert!((t_cdf(2.228138851986274, 10.0) - 0.975).abs() < 1e-12);
        assert!((t_quantile(0.975, 5.0) - 2.570581835636314).abs() < 1e-10);
    }

    #[test]
    fn t_approaches_normal() {
        for &z in &[-3.0, -1.0, 0.5, 2.0] {
            assert!((t_cdf(z, 1e6) - norm_cdf(z)).abs() < 1e-6);
            assert!((t_cdf(z, 1e12) - norm_cdf(z)).abs() < 1e-12);
            assert!((t_ln_pdf(z, 1e6) - (-0.5 * z * z - LN_SQRT_2PI)).abs() < 1e-4);
        }
    }

    #[test]
    fn t_quantile_roundtrip() {
        for &nu in &[0.7, 1.0, 3.0, 6.0, 30.0, 1e4, 1e7] {
            for &p in &[1e-8, 1e-3, 0.01, 0.2, 0.5, 0.77, 0.99, 1.0 - 1e-6] {
                let x = t_quantile(p, nu);
                assert!((t_cdf(x, nu) - p).abs() < 1e-12, "nu={nu} p={p} x={x} err={}", t_cdf(x, nu) - p);
            }
        }
    }
}
