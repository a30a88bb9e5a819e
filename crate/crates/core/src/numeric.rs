//! Scalar root finders for monotone functions.
//!
//! Every solver in the crate reduces to one-dimensional monotone equations
//! (a derivative of a convex function set to zero, or a supply-demand balance
//! in a dual price). These helpers keep a sign bracket at all times so they
//! converge even across kinks where Newton steps alone would cycle.

/// Root of a non-decreasing `f` on `[lo, hi]` given `f(lo) < 0 < f(hi)`.
///
/// `f` returns `(value, derivative)`. Newton steps are taken when they stay
/// inside the bracket and shrink the residual; otherwise the step bisects.
pub fn safeguarded_newton<F>(mut f: F, mut lo: f64, mut hi: f64, x0: f64, xtol: f64) -> f64
where
    F: FnMut(f64) -> (f64, f64),
{
    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    let mut last_step = hi - lo;
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= xtol {
            return 0.5 * (lo + hi);
        }
        let newton = if dfx > 0.0 && dfx.is_finite() { x - fx / dfx } else { f64::NAN };
        let step = (newton - x).abs();
        if newton > lo && newton < hi && step <= 0.5 * last_step {
            last_step = step;
            if step <= 0.25 * xtol {
                return newton;
            }
            x = newton;
        } else {
            last_step = hi - lo;
            x = 0.5 * (lo + hi);
        }
    }
    0.5 * (lo + hi)
}

/// Root of a non-decreasing `f` by plain bisection, given `f(lo) < 0 <= f(hi)`.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    for _ in 0..400 {
        if hi - lo <= xtol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite sign.
///
/// Stops when the bracket is narrower than `xtol` or `|f| <= ftol`.
pub fn brent<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64, ftol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..300 {
        if fb.abs() <= ftol || (b - a).abs() <= xtol {
            return b;
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc)) + b * fa * fc / ((fb - fa) * (fb - fc)) + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let bound = (3.0 * a + b) / 4.0;
        let outside = !((s > bound.min(b)) && (s < bound.max(b)));
        if outside
            || (bisected && (s - b).abs() >= 0.5 * (b - c).abs())
            || (!bisected && (s - b).abs() >= 0.5 * (c - d).abs())
            || (bisected && (b - c).abs() < xtol)
            || (!bisected && (c - d).abs() < xtol)
        {
            s = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    b
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_finds_cube_root() {
        let r = safeguarded_newton(|x| (x * x * x - 2.0, 3.0 * x * x), 0.0, 2.0, 1.0, 1e-14);
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn newton_survives_kinked_function() {
        // subgradient-style jump at 0.3
        let f = |x: f64| if x < 0.3 { (x - 0.5, 1.0) } else { (x + 0.2, 1.0) };
        let r = safeguarded_newton(f, 0.0, 1.0, 0.9, 1e-12);
        assert!((r - 0.3).abs() < 1e-10);
    }

    #[test]
    fn brent_matches_bisection() {
        let f = |x: f64| x.exp() - 3.0;
        let a = brent(f, 0.0, 3.0, 1e-14, 0.0);
        let b = bisect(f, 0.0, 3.0, 1e-14);
        assert!((a - 3f64.ln()).abs() < 1e-12);
        assert!((b - 3f64.ln()).abs() < 1e-12);
    }
}
