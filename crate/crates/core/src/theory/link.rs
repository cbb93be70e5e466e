use crate::logistic::{sigmoid, softplus};

/// `(ρ(t), ρ'(t), ρ''(t))` for `ρ(t) = log(1 + e^t)`.
pub fn rho_family(t: f64) -> (f64, f64, f64) {
    let s = sigmoid(t);
    (softplus(t), s, s * sigmoid(-t))
}

/// `prox_{λρ}(z) = argmin_t λρ(t) + (t − z)²/2`, the root of
/// `λρ'(t) + t − z = 0`.
pub fn prox(lambda: f64, z: f64) -> f64 {
    assert!(lambda >= 0.0, "prox needs lambda >= 0, got {lambda}");
    if lambda == 0.0 {
        return z;
    }
    // g(t) = λρ'(t) + t − z is increasing with g(z − λ) ≤ 0 ≤ g(z).
    let (mut lo, mut hi) = (z - lambda, z);
    let mut t = z - lambda * sigmoid(z);
    let mut last_step = hi - lo;
    for _ in 0..200 {
        let s = sigmoid(t);
        let g = lambda * s + t - z;
        if g == 0.0 {
            return t;
        }
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        // Newton can bounce across the root when ρ'' is tiny at the iterate;
        // bisect unless the step at least halves.
        let newton = t - g / (1.0 + lambda * s * sigmoid(-t));
        let next = if newton > lo && newton < hi && (newton - t).abs() <= 0.5 * last_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last_step = (next - t).abs();
        if (next - t).abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            return next;
        }
        t = next;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Golden-section search on `λρ(t) + (t − z)²/2`. Function values are
    /// compared through their difference, formed without cancellation, so
    /// the bracket can shrink far below the usual √ε limit.
    fn golden_min(lambda: f64, z: f64, mut a: f64, mut b: f64) -> f64 {
        let diff = |c: f64, d: f64| {
            let sp = ((c - d).exp_m1() / (1.0 + (-d).exp())).ln_1p();
            lambda * sp + 0.5 * (c - d) * (c + d - 2.0 * z)
        };
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        while b - a > 1e-13 {
            if diff(c, d) < 0.0 {
                b = d;
            } else {
                a = c;
            }
            c = b - r * (b - a);
            d = a + r * (b - a);
        }
        0.5 * (a + b)
    }

    #[test]
    fn rho_family_values() {
        let (r, d1, d2) = rho_family(0.0);
        assert_eq!((r, d1, d2), (2f64.ln(), 0.5, 0.25));
        let (r, d1, d2) = rho_family(-50.0);
        let e = (-50f64).exp();
        assert!((r - e).abs() < 1e-30 && (d1 - e).abs() < 1e-30 && (d2 - e).abs() < 1e-30);
        // 1/(1+e^{-3}) to 16 digits.
        assert!((rho_family(3.0).1 - 0.952_574_126_822_433_1).abs() < 1e-15);
        let (r, d1, _) = rho_family(800.0);
        assert_eq!((r, d1), (800.0, 1.0));
    }

    #[test]
    fn prox_matches_direct_minimization() {
        assert_eq!(prox(0.0, 1.3), 1.3);
        let t = prox(1.0, 1.0);
        let oracle = golden_min(1.0, 1.0, -10.0, 10.0);
        assert!((t - oracle).abs() < 1e-10, "{t} vs {oracle}");
        let far = prox(2.0, -60.0);
        assert!((far + 60.0).abs() < 1e-20_f64.max(2.0 * (-60f64).exp() * 1.01));
    }
}
