//! Convex congestion costs `H` with their derivative `g = H'`, convex
//! conjugate and scalar proximal map.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CongestionError {
    #[error("invalid congestion parameters: {0}")]
    BadParameter(String),
    #[error("H(0) = {0}, expected 0")]
    NonzeroAtOrigin(f64),
    #[error("derivative mismatch at t = {t}: finite difference {fd}, g(t) = {g}")]
    DerivativeMismatch { t: f64, fd: f64, g: f64 },
    #[error("H is not convex and nondecreasing near t = {0}")]
    NotConvex(f64),
    #[error("cannot parse congestion spec '{0}'")]
    Parse(String),
}

/// A convex, nondecreasing flow cost on `[0, inf)` with `H(0) = 0`.
pub trait Congestion {
    /// `H(t)`.
    fn cost(&self, t: f64) -> f64;
    /// `g(t) = H'(t)`, the unit cost at flow `t`.
    fn marginal(&self, t: f64) -> f64;
    /// `H*(s) = sup_{t >= 0} s t - H(t)` for `s >= 0`; may be `+inf`.
    fn conjugate(&self, s: f64) -> f64;

    /// `argmin_{t >= 0} step * H(t) + (t - x)^2 / 2`.
    fn prox(&self, x: f64, step: f64) -> f64 {
        prox_by_bisection(|t| self.marginal(t), x, step)
    }
}

impl<T: Congestion + ?Sized> Congestion for Box<T> {
    fn cost(&self, t: f64) -> f64 {
        (**self).cost(t)
    }
    fn marginal(&self, t: f64) -> f64 {
        (**self).marginal(t)
    }
    fn conjugate(&self, s: f64) -> f64 {
        (**self).conjugate(s)
    }
    fn prox(&self, x: f64, step: f64) -> f64 {
        (**self).prox(x, step)
    }
}

impl<T: Congestion + ?Sized> Congestion for &T {
    fn cost(&self, t: f64) -> f64 {
        (**self).cost(t)
    }
    fn marginal(&self, t: f64) -> f64 {
        (**self).marginal(t)
    }
    fn conjugate(&self, s: f64) -> f64 {
        (**self).conjugate(s)
    }
    fn prox(&self, x: f64, step: f64) -> f64 {
        (**self).prox(x, step)
    }
}

/// Solves `t + step * g(t) = x` for `t >= 0`, returning 0 when
/// `x <= step * g(0)`.
pub fn prox_by_bisection(g: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
    if x <= step * g(0.0) {
        return 0.0;
    }
    // t + step g(t) is increasing; the root lies in [0, x]
    let (mut lo, mut hi) = (0.0_f64, x);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + step * g(mid) > x {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form cost families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CongestionSpec {
    /// `H(t) = t^2 / 2`.
    Quadratic,
    /// `H(t) = a t + t^p / p`, `a >= 0`, `p > 1`.
    AffinePower { a: f64, p: f64 },
    /// `H(t) = t^p / p`, `p > 1`.
    Monomial { p: f64 },
    /// `H(t) = a t`, `a >= 0`: congestion-free links.
    Linear { a: f64 },
    /// `H(t) = c (a t + t^2 / 2)`, a rescaled affine-quadratic cost.
    ScaledAffineQuadratic { c: f64, a: f64 },
}

impl CongestionSpec {
    pub fn validate(&self) -> Result<(), CongestionError> {
        let bad = |m: &str| Err(CongestionError::BadParameter(m.to_string()));
        match *self {
            CongestionSpec::Quadratic => Ok(()),
            CongestionSpec::AffinePower { a, p } => {
                if !(a >= 0.0 && a.is_finite()) {
                    bad("affine_power needs a >= 0")
                } else if !(p > 1.0 && p.is_finite()) {
                    bad("affine_power needs p > 1")
                } else {
                    Ok(())
                }
            }
            CongestionSpec::Monomial { p } => {
                if !(p > 1.0 && p.is_finite()) {
                    bad("monomial needs p > 1")
                } else {
                    Ok(())
                }
            }
            CongestionSpec::Linear { a } => {
                if !(a >= 0.0 && a.is_finite()) {
                    bad("linear needs a >= 0")
                } else {
                    Ok(())
                }
            }
            CongestionSpec::ScaledAffineQuadratic { c, a } => {
                if !(c > 0.0 && c.is_finite() && a >= 0.0 && a.is_finite()) {
                    bad("scaled affine-quadratic needs c > 0, a >= 0")
                } else {
                    Ok(())
                }
            }
        }
    }

    /// The same family multiplied by `c > 0`, where a closed form exists.
    pub fn scaled(&self, c: f64) -> Option<CongestionSpec> {
        match *self {
            CongestionSpec::Quadratic => Some(CongestionSpec::ScaledAffineQuadratic { c, a: 0.0 }),
            CongestionSpec::AffinePower { a, p } if p == 2.0 => Some(CongestionSpec::ScaledAffineQuadratic { c, a }),
            CongestionSpec::Linear { a } => Some(CongestionSpec::Linear { a: c * a }),
            CongestionSpec::ScaledAffineQuadratic { c: c0, a } => {
                Some(CongestionSpec::ScaledAffineQuadratic { c: c * c0, a })
            }
            _ => None,
        }
    }
}

impl Congestion for CongestionSpec {
    fn cost(&self, t: f64) -> f64 {
        match *self {
            CongestionSpec::Quadratic => 0.5 * t * t,
            CongestionSpec::AffinePower { a, p } => a * t + t.powf(p) / p,
            CongestionSpec::Monomial { p } => t.powf(p) / p,
            CongestionSpec::Linear { a } => a * t,
            CongestionSpec::ScaledAffineQuadratic { c, a } => c * (a * t + 0.5 * t * t),
        }
    }

    fn marginal(&self, t: f64) -> f64 {
        match *self {
            CongestionSpec::Quadratic => t,
            CongestionSpec::AffinePower { a, p } => a + t.powf(p - 1.0),
            CongestionSpec::Monomial { p } => t.powf(p - 1.0),
            CongestionSpec::Linear { a } => a,
            CongestionSpec::ScaledAffineQuadratic { c, a } => c * (a + t),
        }
    }

    fn conjugate(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match *self {
            CongestionSpec::Quadratic => 0.5 * s * s,
            CongestionSpec::AffinePower { a, p } => {
                let q = p / (p - 1.0);
                (s - a).max(0.0).powf(q) / q
            }
            CongestionSpec::Monomial { p } => {
                let q = p / (p - 1.0);
                s.powf(q) / q
            }
            CongestionSpec::Linear { a } => {
                if s <= a * (1.0 + 1e-12) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            CongestionSpec::ScaledAffineQuadratic { c, a } => {
                let r = (s / c - a).max(0.0);
                c * 0.5 * r * r
            }
        }
    }

    fn prox(&self, x: f64, step: f64) -> f64 {
        match *self {
            CongestionSpec::Quadratic => (x / (1.0 + step)).max(0.0),
            CongestionSpec::AffinePower { a, p } if p == 2.0 => ((x - step * a) / (1.0 + step)).max(0.0),
            CongestionSpec::Linear { a } => (x - step * a).max(0.0),
            CongestionSpec::ScaledAffineQuadratic { c, a } => ((x - step * c * a) / (1.0 + step * c)).max(0.0),
            _ => prox_by_bisection(|t| self.marginal(t), x, step),
        }
    }
}

impl fmt::Display for CongestionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CongestionSpec::Quadratic => write!(f, "quadratic"),
            CongestionSpec::AffinePower { a, p } => write!(f, "affine_power {a} {p}"),
            CongestionSpec::Monomial { p } => write!(f, "monomial {p}"),
            CongestionSpec::Linear { a } => write!(f, "linear {a}"),
            CongestionSpec::ScaledAffineQuadratic { c, a } => write!(f, "scaled_affine_quadratic {c} {a}"),
        }
    }
}

impl FromStr for CongestionSpec {
    type Err = CongestionError;

    /// Accepts `quadratic`, `affine_power <a> <p>`, `monomial <p>`,
    /// `linear <a>` and `scaled_affine_quadratic <c> <a>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<f64, CongestionError> {
            toks.get(i)
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| CongestionError::Parse(s.to_string()))
        };
        let spec = match (toks.first().copied(), toks.len()) {
            (Some("quadratic"), 1) => CongestionSpec::Quadratic,
            (Some("affine_power"), 3) => CongestionSpec::AffinePower { a: num(1)?, p: num(2)? },
            (Some("monomial"), 2) => CongestionSpec::Monomial { p: num(1)? },
            (Some("linear"), 2) => CongestionSpec::Linear { a: num(1)? },
            (Some("scaled_affine_quadratic"), 3) => CongestionSpec::ScaledAffineQuadratic { c: num(1)?, a: num(2)? },
            _ => return Err(CongestionError::Parse(s.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied `(H, g)` pair. The conjugate is evaluated numerically.
#[derive(Clone)]
pub struct CustomCongestion {
    h: ScalarFn,
    g: ScalarFn,
}

impl CustomCongestion {
    pub fn new(h: impl Fn(f64) -> f64 + Send + Sync + 'static, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            h: Arc::new(h),
            g: Arc::new(g),
        }
    }
}

impl fmt::Debug for CustomCongestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomCongestion")
    }
}

impl Congestion for CustomCongestion {
    fn cost(&self, t: f64) -> f64 {
        (self.h)(t)
    }

    fn marginal(&self, t: f64) -> f64 {
        (self.g)(t)
    }

    fn conjugate(&self, s: f64) -> f64 {
        // the supremum is attained where g(t) = s
        if s <= (self.g)(0.0) {
            return 0.0;
        }
        let mut hi = 1.0;
        while (self.g)(hi) < s {
            hi *= 2.0;
            if hi > 1e150 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (self.g)(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        s * t - (self.h)(t)
    }
}

/// `c H` for a positive constant `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled<C> {
    pub c: f64,
    pub inner: C,
}

impl<C: Congestion> Congestion for Scaled<C> {
    fn cost(&self, t: f64) -> f64 {
        self.c * self.inner.cost(t)
    }

    fn marginal(&self, t: f64) -> f64 {
        self.c * self.inner.marginal(t)
    }

    fn conjugate(&self, s: f64) -> f64 {
        self.c * self.inner.conjugate(s / self.c)
    }

    fn prox(&self, x: f64, step: f64) -> f64 {
        self.inner.prox(x, step * self.c)
    }
}

/// Checks `H(0) = 0`, convexity and monotonicity at a few points, and
/// `g = H'` by central differences at `t in {0.1, 1, 10}` with `h = 1e-5`.
pub fn check_consistency<C: Congestion + ?Sized>(spec: &C) -> Result<(), CongestionError> {
    let h0 = spec.cost(0.0);
    if h0.abs() > 1e-12 {
        return Err(CongestionError::NonzeroAtOrigin(h0));
    }
    let step = 1e-5;
    for t in [0.1, 1.0, 10.0] {
        let fd = (spec.cost(t + step) - spec.cost(t - step)) / (2.0 * step);
        let g = spec.marginal(t);
        if (fd - g).abs() > 1e-6 {
            return Err(CongestionError::DerivativeMismatch { t, fd, g });
        }
    }
    let samples = [0.0, 0.05, 0.3, 1.0, 2.5, 7.0, 20.0];
    for w in samples.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let (ha, hb, hc) = (spec.cost(a), spec.cost(b), spec.cost(c));
        // slope of the chord must not decrease
        let s1 = (hb - ha) / (b - a);
        let s2 = (hc - hb) / (c - b);
        if s1 < -1e-12 || s2 + 1e-9 * s2.abs().max(1.0) < s1 {
            return Err(CongestionError::NotConvex(b));
        }
    }
    Ok(())
}
