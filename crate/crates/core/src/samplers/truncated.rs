//! Truncated inverse-gamma draws by inverse CDF.
//!
//! The target density on `(lower, upper)` is
//!
//! ```text
//! f(t) ∝ t^(−shape−1) exp(−rate / t)
//! ```
//!
//! where `shape` may be zero or negative as long as the interval makes the
//! density integrable. Three routes are used:
//!
//! * `rate = 0`: a power law, inverted in closed form;
//! * `shape > 0`: `x = rate / t` is a truncated `Gamma(shape, 1)` variate,
//!   inverted through the regularized incomplete gamma function with a
//!   safeguarded Newton iteration in `ln x`;
//! * otherwise, or when the incomplete-gamma CDF is numerically flat over
//!   the interval: inversion of an adaptive Gauss–Legendre CDF in `ln t`.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::RngStream;
use crate::error::{Result, SaeError};

const REL_TOL: f64 = 1e-12;

pub fn draw_trunc_inverse_gamma(
    rng: &mut RngStream,
    shape: f64,
    rate: f64,
    lower: f64,
    upper: f64,
) -> Result<f64> {
    validate(shape, rate, lower, upper)?;
    let u = rng.uniform();
    let t = if rate == 0.0 {
        power_law(shape, lower, upper, u)
    } else if shape > 0.0 {
        match gamma_route(shape, rate, lower, upper, u) {
            Some(t) => t,
            None => log_quadrature(shape, rate, lower, upper, u),
        }
    } else {
        log_quadrature(shape, rate, lower, upper, u)
    };
    Ok(clamp_open(t, lower, upper))
}

fn validate(shape: f64, rate: f64, lower: f64, upper: f64) -> Result<()> {
    let bad = |why: &str| {
        Err(SaeError::invalid(format!(
            "truncated inverse gamma (shape {shape}, rate {rate}, interval ({lower}, {upper})): {why}"
        )))
    };
    if shape.is_nan() || rate.is_nan() || lower.is_nan() || upper.is_nan() {
        return bad("NaN parameter");
    }
    if !shape.is_finite() || !rate.is_finite() || rate < 0.0 {
        return bad("shape must be finite and rate finite and >= 0");
    }
    if lower < 0.0 || !lower.is_finite() || lower >= upper {
        return bad("need 0 <= lower < upper");
    }
    if upper.is_infinite() {
        if shape <= 0.0 {
            return bad("unbounded interval needs shape > 0");
        }
        if rate == 0.0 && lower == 0.0 {
            return bad("pure power law needs lower > 0");
        }
    } else if rate == 0.0 && lower == 0.0 && shape >= 0.0 {
        return bad("pure power law on (0, upper) needs shape < 0");
    }
    Ok(())
}

/// Nudges a value that rounded onto a boundary back inside the interval.
fn clamp_open(t: f64, lower: f64, upper: f64) -> f64 {
    let mut t = t;
    if !(t > lower) {
        t = lower.next_up();
    }
    if !(t < upper) {
        t = upper.next_down();
    }
    t
}

/// Density ∝ t^(−shape−1) on (lower, upper).
fn power_law(shape: f64, lower: f64, upper: f64, u: f64) -> f64 {
    if shape == 0.0 {
        // log-uniform
        (lower.ln() + u * (upper.ln() - lower.ln())).exp()
    } else if shape < 0.0 {
        // CDF ∝ t^e − L^e with e = −shape > 0; scale by the finite upper end
        let e = -shape;
        let r = (lower / upper).powf(e);
        upper * (r + u * (1.0 - r)).powf(1.0 / e)
    } else {
        // CDF ∝ L^−shape − t^−shape; the upper end may be infinite
        let s = if upper.is_finite() {
            (lower / upper).powf(shape)
        } else {
            0.0
        };
        lower * (1.0 - u * (1.0 - s)).powf(-1.0 / shape)
    }
}

fn lower_reg(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(a, x)
    }
}

fn upper_reg(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(a, x)
    }
}

/// Returns `None` when the CDF mass over the interval cannot be resolved in
/// double precision.
fn gamma_route(a: f64, rate: f64, lower: f64, upper: f64, u: f64) -> Option<f64> {
    let xlo = if upper.is_finite() { rate / upper } else { 0.0 };
    let xhi = if lower > 0.0 { rate / lower } else { f64::INFINITY };
    let (p_lo, p_hi) = (lower_reg(a, xlo), lower_reg(a, xhi));
    let (q_lo, q_hi) = (upper_reg(a, xlo), upper_reg(a, xhi));

    let p_target = p_lo + u * (p_hi - p_lo);
    let x = if p_target <= 0.5 {
        let mass = p_hi - p_lo;
        if !(mass > 1e-290) || mass < 1e-9 * p_hi {
            return None;
        }
        invert(a, p_target.max(p_lo), xlo, xhi, Tail::Lower)?
    } else {
        let mass = q_lo - q_hi;
        if !(mass > 1e-290) || mass < 1e-9 * q_lo {
            return None;
        }
        let q_target = q_hi + (1.0 - u) * mass;
        invert(a, q_target, xlo, xhi, Tail::Upper)?
    };
    let t = rate / x;
    (t.is_finite() && t > 0.0).then_some(t)
}

#[derive(Clone, Copy, PartialEq)]
enum Tail {
    Lower,
    Upper,
}

/// Solves `P(a, x) = target` (or `Q(a, x) = target`) for `x` in `[xlo, xhi]`.
fn invert(a: f64, target: f64, xlo: f64, xhi: f64, tail: Tail) -> Option<f64> {
    let ln_target = target.ln();
    let ln_ga = ln_gamma(a);
    // g(s) = ln F(e^s) − ln target, increasing for the lower tail.
    let eval = |s: f64| -> (f64, f64) {
        let x = s.exp();
        let f = match tail {
            Tail::Lower => lower_reg(a, x),
            Tail::Upper => upper_reg(a, x),
        };
        let ln_dens = a * s - x - ln_ga; // ln(x · gamma density)
        let dlnf = (ln_dens - f.ln()).exp();
        match tail {
            Tail::Lower => (f.ln() - ln_target, dlnf),
            Tail::Upper => (ln_target - f.ln(), dlnf),
        }
    };

    // Bracket [s_lo, s_hi] with g(s_lo) <= 0 <= g(s_hi).
    let guess = a.max(1e-3).ln();
    let mut s_lo = if xlo > 0.0 { xlo.ln() } else { guess.min(xhi.ln()) - 1.0 };
    let mut s_hi = if xhi.is_finite() { xhi.ln() } else { guess.max(s_lo) + 1.0 };
    let mut step = 1.0;
    while xlo <= 0.0 && eval(s_lo).0 > 0.0 {
        s_lo -= step;
        step *= 2.0;
        if s_lo < -1e4 {
            return None;
        }
    }
    step = 1.0;
    while xhi.is_infinite() && eval(s_hi).0 < 0.0 {
        s_hi += step;
        step *= 2.0;
        if s_hi > 1e3 {
            return None;
        }
    }

    let mut s = 0.5 * (s_lo + s_hi);
    for _ in 0..300 {
        let (g, dg) = eval(s);
        if !g.is_finite() {
            // underflowed F; move toward the side with mass
            s = 0.5 * (s_lo + s_hi);
            continue;
        }
        if g > 0.0 {
            s_hi = s;
        } else {
            s_lo = s;
        }
        let newton = s - g / dg;
        let next = if dg.is_finite() && dg > 0.0 && newton > s_lo && newton < s_hi {
            newton
        } else {
            0.5 * (s_lo + s_hi)
        };
        if (next - s).abs() <= REL_TOL * 0.1 || (s_hi - s_lo) <= REL_TOL * 0.1 {
            return Some(next.exp());
        }
        s = next;
    }
    Some(s.exp())
}

const GL_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];

/// 16-point Gauss–Legendre rule on [a, b].
fn gl16(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        acc += w * (f(c - h * x) + f(c + h * x));
    }
    acc * h
}

/// Inverse CDF by adaptive quadrature of the density of `s = ln t`,
/// `exp(−shape·s − rate·e^(−s))`, normalized by its maximum on the interval.
fn log_quadrature(shape: f64, rate: f64, lower: f64, upper: f64, u: f64) -> f64 {
    let log_dens = |s: f64| -shape * s - rate * (-s).exp();
    let mut candidates = Vec::new();
    if lower > 0.0 {
        candidates.push(lower.ln());
    }
    if upper.is_finite() {
        candidates.push(upper.ln());
    }
    if shape > 0.0 && rate > 0.0 {
        let mode = (rate / shape).ln();
        if mode > lower.ln() && mode < upper.ln() {
            candidates.push(mode);
        }
    }
    let peak = candidates
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, |acc, s| acc.max(log_dens(s)));
    let peak_at = candidates
        .iter()
        .copied()
        .find(|&s| log_dens(s) == peak)
        .unwrap_or(0.0);

    // Cut off infinite ends where the density is negligible.
    let cutoff = peak - 745.0;
    let mut a = if lower > 0.0 { lower.ln() } else { f64::NEG_INFINITY };
    if a.is_infinite() {
        let mut step = 1.0;
        a = peak_at - step;
        while log_dens(a) > cutoff {
            step *= 2.0;
            a = peak_at - step;
        }
    }
    let mut b = if upper.is_finite() { upper.ln() } else { f64::INFINITY };
    if b.is_infinite() {
        let mut step = 1.0;
        b = peak_at + step;
        while log_dens(b) > cutoff {
            step *= 2.0;
            b = peak_at + step;
        }
    }

    let dens = |s: f64| (log_dens(s) - peak).exp();

    // Adaptive subdivision, panels kept in order.
    let mut panels: Vec<(f64, f64, f64)> = Vec::new();
    let mut stack = Vec::new();
    let init = 16;
    let width = (b - a) / init as f64;
    for k in (0..init).rev() {
        let lo = a + k as f64 * width;
        let hi = if k + 1 == init { b } else { lo + width };
        stack.push((lo, hi, gl16(&dens, lo, hi), 0u32));
    }
    let rough_total: f64 = stack.iter().map(|p| p.2).sum::<f64>().max(f64::MIN_POSITIVE);
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl16(&dens, lo, mid);
        let right = gl16(&dens, mid, hi);
        if depth >= 40 || (whole - left - right).abs() <= 1e-14 * rough_total {
            panels.push((lo, mid, left));
            panels.push((mid, hi, right));
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }

    let total: f64 = panels.iter().map(|p| p.2).sum();
    let mut target = u * total;
    let mut chosen = *panels.last().unwrap();
    for p in &panels {
        if target <= p.2 {
            chosen = *p;
            break;
        }
        target -= p.2;
    }
    let (mut lo, mut hi, _) = chosen;
    let base = lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gl16(&dens, base, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= REL_TOL * 0.1 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}
