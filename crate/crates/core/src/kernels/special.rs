//! Special functions needed by the correlation families.
//!
//! `bessel_k` follows Temme's series for small arguments and Steed's
//! continued fraction for large ones, then recurses upward in the order.
//! `confluent_u` evaluates Tricomi's function through its Laplace-type
//! integral, which is analytic after the substitution `t = e^u` and therefore
//! converges geometrically under the trapezoidal rule.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

/// Coefficients of `1/Γ(1+z) = Σ_k C[k] z^k` (Abramowitz & Stegun 6.1.34,
/// shifted by one power).
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// Returns `(gam1, gam2, 1/Γ(1+x), 1/Γ(1-x))` for `|x| <= 1/2`, where
/// `gam1 = (1/Γ(1-x) - 1/Γ(1+x)) / (2x)` and `gam2 = (1/Γ(1-x) + 1/Γ(1+x)) / 2`.
fn temme_gammas(x: f64) -> (f64, f64, f64, f64) {
    let x2 = x * x;
    // even and odd parts of the series
    let mut even = 0.0;
    let mut odd = 0.0;
    let mut pow = 1.0;
    for k in (0..RECIP_GAMMA.len()).step_by(2) {
        even += RECIP_GAMMA[k] * pow;
        if k + 1 < RECIP_GAMMA.len() {
            odd += RECIP_GAMMA[k + 1] * pow;
        }
        pow *= x2;
    }
    let gampl = even + odd * x;
    let gammi = even - odd * x;
    (-odd, even, gampl, gammi)
}

/// `1/Γ(1+z)` for `|z| <= 1/2`.
pub fn recip_gamma_1p(z: f64) -> f64 {
    temme_gammas(z).2
}

/// Modified Bessel function of the second kind `K_ν(x)` for real `ν` and `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k requires x > 0");
    let nu = nu.abs();
    let nl = (nu + 0.5).floor() as usize;
    let xmu = nu - nl as f64;
    let xmu2 = xmu * xmu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut rkmu, mut rk1);
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * xmu;
        let fact = if pimu.abs() < EPS {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = xmu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(xmu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let e = e.exp();
        let mut p = 0.5 * e / gampl;
        let mut q = 0.5 / (e * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - xmu2);
            c *= dd / fi;
            p /= fi - xmu;
            q /= fi + xmu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        rkmu = sum;
        rk1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - xmu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        rkmu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        rk1 = rkmu * (xmu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (xmu + i as f64) * xi2 * rk1 + rkmu;
        rkmu = rk1;
        rk1 = next;
    }
    rkmu
}

/// Scaled confluent hypergeometric correlation
/// `Γ(ν+α)/Γ(ν) · U(α, 1-ν, z)` for `z >= 0`, evaluated to relative
/// tolerance `rel_tol`.
///
/// Uses `U(a, b, z) = Γ(a)^{-1} ∫_0^∞ e^{-zt} t^{a-1} (1+t)^{b-a-1} dt`.
pub fn scaled_confluent_u(alpha: f64, nu: f64, z: f64, rel_tol: f64) -> f64 {
    let log_norm = ln_gamma(nu + alpha) - ln_gamma(nu) - ln_gamma(alpha);
    // log integrand after t = e^u; concave in u
    let g = |u: f64| -> f64 {
        let t = u.exp();
        let log1p_t = if u > 35.0 { u } else { t.ln_1p() };
        -z * t + alpha * u - (nu + alpha) * log1p_t
    };
    let dg = |u: f64| -> f64 {
        let t = u.exp();
        let w = if u > 35.0 { 1.0 } else { t / (1.0 + t) };
        -z * t + alpha - (nu + alpha) * w
    };

    // locate the mode by bisection on the derivative
    let (mut lo, mut hi) = (-1.0, 1.0);
    while dg(lo) < 0.0 {
        lo *= 2.0;
    }
    while dg(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dg(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mode = 0.5 * (lo + hi);
    let peak = g(mode);

    // integrand below e^{-45} of its peak is dropped
    let cutoff = peak - 45.0;
    let mut step = 0.5;
    let mut left = mode - step;
    while g(left) > cutoff {
        left -= step;
        step *= 1.5;
    }
    step = 0.5;
    let mut right = mode + step;
    while g(right) > cutoff {
        right += step;
        step *= 1.5;
    }

    let f = |u: f64| (g(u) - peak).exp();
    let mut n = 64usize;
    let mut h = (right - left) / n as f64;
    let mut sum = 0.5 * (f(left) + f(right)) + (1..n).map(|k| f(left + k as f64 * h)).sum::<f64>();
    let mut estimate = sum * h;
    for _ in 0..20 {
        // halve the step, reusing previous nodes
        let new_nodes: f64 = (0..n).map(|k| f(left + (k as f64 + 0.5) * h)).sum();
        sum += new_nodes;
        n *= 2;
        h *= 0.5;
        let refined = sum * h;
        let converged = (refined - estimate).abs() <= rel_tol * refined.abs();
        estimate = refined;
        if converged && n >= 256 {
            break;
        }
    }
    (log_norm + peak + estimate.ln()).exp()
}
