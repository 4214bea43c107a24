//! Modified Bessel function of the second kind for real order.
//!
//! Temme's series for small arguments and Steed's continued fraction for
//! large ones give `K_mu` and `K_{mu+1}` with `|mu| <= 1/2`; forward
//! recurrence then reaches the requested order.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
// Taylor coefficient of x^3 in 1/Gamma(1 + x).
const INV_GAMMA_C3: f64 = -0.042_002_635_034_095_24;

/// `K_nu(x)` for `nu >= 0`, `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0 && nu >= 0.0);
    if nu == 0.5 {
        return (PI / (2.0 * x)).sqrt() * (-x).exp();
    }
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let (mut k_mu, mut k_mu1) = if x < 2.0 { temme_series(mu, x) } else { steed_fraction(mu, x) };
    let two_over_x = 2.0 / x;
    for i in 1..=nl {
        let next = (mu + i as f64) * two_over_x * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// Gamma-function combinations used by the Temme series.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = 1.0 / gamma(1.0 + mu);
    let gammi = 1.0 / gamma(1.0 - mu);
    let gam2 = 0.5 * (gammi + gampl);
    let gam1 = if mu.abs() < 1e-4 {
        -EULER_GAMMA - INV_GAMMA_C3 * mu * mu
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    (gam1, gam2, gampl, gammi)
}

fn temme_series(mu: f64, x: f64) -> (f64, f64) {
    let x2 = 0.5 * x;
    let pimu = PI * mu;
    let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
    let d = -x2.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = x2 * x2;
    let mut sum1 = p;
    let mu2 = mu * mu;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= dd / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        sum1 += c * (p - fi * ff);
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum, sum1 * 2.0 / x)
}

fn steed_fraction(mu: f64, x: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
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
    let k_mu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k_mu1 = k_mu * (mu + x + 0.5 - h) / x;
    (k_mu, k_mu1)
}
