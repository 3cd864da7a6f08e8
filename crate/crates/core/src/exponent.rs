//! Variable exponent fields on the 1-torus.
//!
//! A field is one of three closed-form shapes. Its infimum and supremum are
//! computed at construction by refined grid search, so every consumer can rely
//! on certified bounds rather than user-asserted ones.

use std::f64::consts::{E, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Closed-form shape of an exponent field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum FieldShape {
    /// `g(x) = value`.
    #[serde(rename = "const")]
    Const { value: f64 },
    /// `g(x) = c0 + sum_k cos[k-1] cos(2 pi k x) + sin[k-1] sin(2 pi k x)`.
    Trig {
        c0: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    /// Plateau built from two clamped affine transitions: `low` away from
    /// `[rise, fall]`, `high` inside it, with linear transitions of length
    /// `width` centred on `rise` and `fall`.
    Ramp {
        low: f64,
        high: f64,
        rise: f64,
        fall: f64,
        width: f64,
    },
}

/// A variable exponent `x -> g(x)` on the torus with certified bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldShape", into = "FieldShape")]
pub struct ExponentField {
    shape: FieldShape,
    lower: f64,
    upper: f64,
}

impl TryFrom<FieldShape> for ExponentField {
    type Error = crate::Error;

    fn try_from(shape: FieldShape) -> Result<Self> {
        ExponentField::new(shape)
    }
}

impl From<ExponentField> for FieldShape {
    fn from(field: ExponentField) -> Self {
        field.shape
    }
}

const START_NODES: usize = 1 << 10;
const MAX_NODES: usize = 1 << 22;
const BOUND_TOL: f64 = 1e-9;

impl ExponentField {
    pub fn new(shape: FieldShape) -> Result<Self> {
        validate_shape(&shape)?;
        let mut field = ExponentField {
            shape,
            lower: 0.0,
            upper: 0.0,
        };
        let (lo, hi) = field.compute_bounds();
        field.lower = lo;
        field.upper = hi;
        Ok(field)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(FieldShape::Const { value }).expect("finite constant")
    }

    /// `c0 + a cos(2 pi x)`.
    pub fn cosine(c0: f64, amplitude: f64) -> Self {
        Self::trig(c0, vec![amplitude], vec![]).expect("finite coefficients")
    }

    pub fn trig(c0: f64, cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        Self::new(FieldShape::Trig { c0, cos, sin })
    }

    pub fn ramp(low: f64, high: f64, rise: f64, fall: f64, width: f64) -> Result<Self> {
        Self::new(FieldShape::Ramp {
            low,
            high,
            rise,
            fall,
            width,
        })
    }

    pub fn shape(&self) -> &FieldShape {
        &self.shape
    }

    /// Infimum over the torus.
    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    /// Supremum over the torus.
    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    pub fn is_constant(&self) -> bool {
        self.upper == self.lower
    }

    /// Exact evaluation; `x` is reduced mod 1.
    pub fn evaluate(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        match &self.shape {
            FieldShape::Const { value } => *value,
            FieldShape::Trig { c0, cos, sin } => {
                let mut acc = *c0;
                for (k, a) in cos.iter().enumerate() {
                    acc += a * (TAU * (k + 1) as f64 * x).cos();
                }
                for (k, b) in sin.iter().enumerate() {
                    acc += b * (TAU * (k + 1) as f64 * x).sin();
                }
                acc
            }
            FieldShape::Ramp {
                low,
                high,
                rise,
                fall,
                width,
            } => {
                let mid = 0.5 * (rise + fall);
                let r = if x < mid {
                    ((x - (rise - 0.5 * width)) / width).clamp(0.0, 1.0)
                } else {
                    (((fall + 0.5 * width) - x) / width).clamp(0.0, 1.0)
                };
                low + (high - low) * r
            }
        }
    }

    fn compute_bounds(&self) -> (f64, f64) {
        match &self.shape {
            FieldShape::Const { value } => (*value, *value),
            FieldShape::Ramp { low, high, .. } => (low.min(*high), low.max(*high)),
            FieldShape::Trig { .. } => {
                let (mut lo, mut hi) = self.grid_extrema(START_NODES);
                let mut n = START_NODES;
                while n < MAX_NODES {
                    n *= 2;
                    let (l2, h2) = self.grid_extrema(n);
                    let change = (l2.0 - lo.0).abs().max((h2.0 - hi.0).abs());
                    lo = l2;
                    hi = h2;
                    if change < BOUND_TOL {
                        break;
                    }
                }
                let h = 1.0 / n as f64;
                let lo = self.polish(lo.1, h, false);
                let hi = self.polish(hi.1, h, true);
                (lo, hi)
            }
        }
    }

    /// Returns ((min, argmin), (max, argmax)) over `n` equispaced nodes.
    fn grid_extrema(&self, n: usize) -> ((f64, f64), (f64, f64)) {
        let mut lo = (f64::INFINITY, 0.0);
        let mut hi = (f64::NEG_INFINITY, 0.0);
        for i in 0..n {
            let x = i as f64 / n as f64;
            let v = self.evaluate(x);
            if v < lo.0 {
                lo = (v, x);
            }
            if v > hi.0 {
                hi = (v, x);
            }
        }
        (lo, hi)
    }

    /// Golden-section refinement of a grid extremum within one cell on each side.
    fn polish(&self, x0: f64, h: f64, maximize: bool) -> f64 {
        let sign = if maximize { -1.0 } else { 1.0 };
        let f = |x: f64| sign * self.evaluate(x);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (x0 - h, x0 + h);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..80 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        let best = f(0.5 * (a + b)).min(f(x0)).min(fc).min(fd);
        sign * best
    }

    /// Maximum over grid pairs of `|g(x) - g(y)| log(e + 1/|x - y|)` with the
    /// torus distance. Zero for constant fields.
    pub fn log_hoelder_constant(&self, grid_size: usize) -> Result<f64> {
        if grid_size < 64 {
            return invalid(format!("log-Hölder grid needs at least 64 nodes, got {grid_size}"));
        }
        if self.is_constant() {
            return Ok(0.0);
        }
        let values: Vec<f64> = (0..grid_size)
            .map(|i| self.evaluate(i as f64 / grid_size as f64))
            .collect();
        let mut best: f64 = 0.0;
        // the torus distance only depends on the index lag
        for lag in 1..=grid_size / 2 {
            let dist = lag as f64 / grid_size as f64;
            let weight = (E + 1.0 / dist).ln();
            let mut max_diff: f64 = 0.0;
            for i in 0..grid_size {
                let d = (values[i] - values[(i + lag) % grid_size]).abs();
                max_diff = max_diff.max(d);
            }
            best = best.max(max_diff * weight);
        }
        Ok(best)
    }
}

fn validate_shape(shape: &FieldShape) -> Result<()> {
    let finite = |v: &f64| v.is_finite();
    match shape {
        FieldShape::Const { value } => {
            if !value.is_finite() {
                return invalid("constant field value must be finite");
            }
        }
        FieldShape::Trig { c0, cos, sin } => {
            if !c0.is_finite() || !cos.iter().all(finite) || !sin.iter().all(finite) {
                return invalid("trigonometric coefficients must be finite");
            }
        }
        FieldShape::Ramp {
            low,
            high,
            rise,
            fall,
            width,
        } => {
            if ![low, high, rise, fall, width].into_iter().all(finite) {
                return invalid("ramp parameters must be finite");
            }
            if *width <= 0.0 {
                return invalid("ramp width must be positive");
            }
            if rise - 0.5 * width < 0.0 || fall + 0.5 * width > 1.0 || rise + 0.5 * width > fall - 0.5 * width {
                return invalid("ramp transitions must lie inside [0, 1) and not overlap");
            }
        }
    }
    Ok(())
}

/// `max(sigma_q - s^-, s^+)` with `sigma_q = n (1/min(1, q^-) - 1)`; a
/// Daubechies order above this value characterizes the space.
pub fn regularity_threshold(s: &ExponentField, q: &ExponentField, n: usize) -> Result<f64> {
    if q.lower_bound() <= 0.0 {
        return invalid("integrability exponent must have q^- > 0");
    }
    let sigma = n as f64 * (1.0 / q.lower_bound().min(1.0) - 1.0);
    Ok((sigma - s.lower_bound()).max(s.upper_bound()))
}

/// `sup_x (t(x) - s(x)) + n/q^+`. Negative values certify convergence of the
/// prior series in the `t`-modular; zero is inconclusive.
pub fn gap_condition(t: &ExponentField, s: &ExponentField, q: &ExponentField, n: usize) -> f64 {
    let offset = n as f64 / q.upper_bound();
    if t.is_constant() && s.is_constant() {
        return t.lower_bound() - s.lower_bound() + offset;
    }
    let diff = |x: f64| t.evaluate(x) - s.evaluate(x);
    let sup_on = |nodes: usize| {
        (0..nodes)
            .map(|i| diff(i as f64 / nodes as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut nodes = START_NODES;
    let mut sup = sup_on(nodes);
    while nodes < MAX_NODES {
        nodes *= 2;
        let next = sup_on(nodes);
        let change = (next - sup).abs();
        sup = next;
        if change < BOUND_TOL {
            break;
        }
    }
    sup + offset
}

/// Growth and Hölder constants `(b, a, alpha, theta)` of the periodized basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoelderBudget {
    pub b: f64,
    pub a: f64,
    pub alpha: f64,
    pub theta: f64,
}

impl HoelderBudget {
    pub fn new(b: f64, a: f64, alpha: f64, theta: f64) -> Result<Self> {
        if !(a > b) {
            return invalid("Hölder budget requires a > b");
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return invalid("Hölder exponent alpha must lie in (0, 1]");
        }
        if !(theta > 0.0 && theta < 2.0) {
            return invalid("theta must lie in (0, 2)");
        }
        Ok(HoelderBudget { b, a, alpha, theta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        assert_eq!(ExponentField::constant(2.0).evaluate(0.37), 2.0);
        let f = ExponentField::cosine(2.0, 0.5);
        assert!((f.evaluate(0.0) - 2.5).abs() < 1e-15);
        assert!((f.evaluate(0.25) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn trig_bounds_are_certified() {
        let f = ExponentField::trig(1.0, vec![0.3, 0.1], vec![0.0, 0.2]).unwrap();
        let n = 1 << 20;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let v = f.evaluate(i as f64 / n as f64);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!((lo - f.lower_bound()).abs() < 1e-9);
        assert!((hi - f.upper_bound()).abs() < 1e-9);
        assert!(f.lower_bound() <= lo && hi <= f.upper_bound() + 1e-15);
    }

    #[test]
    fn cosine_bounds_exact() {
        let s = ExponentField::cosine(1.5, 0.3);
        assert!((s.lower_bound() - 1.2).abs() < 1e-12);
        assert!((s.upper_bound() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn ramp_is_periodic_and_bounded() {
        let r = ExponentField::ramp(1.0, 2.0, 0.3, 0.7, 0.1).unwrap();
        assert_eq!(r.evaluate(0.0), 1.0);
        assert_eq!(r.evaluate(0.999_999), 1.0);
        assert_eq!(r.evaluate(0.5), 2.0);
        assert!((r.evaluate(0.3) - 1.5).abs() < 1e-12);
        assert_eq!((r.lower_bound(), r.upper_bound()), (1.0, 2.0));
        assert!(ExponentField::ramp(1.0, 2.0, 0.01, 0.7, 0.1).is_err());
    }

    #[test]
    fn log_hoelder_constant_examples() {
        assert_eq!(ExponentField::constant(3.0).log_hoelder_constant(128).unwrap(), 0.0);
        let f = ExponentField::cosine(2.0, 0.5);
        let c512 = f.log_hoelder_constant(512).unwrap();
        let c1024 = f.log_hoelder_constant(1024).unwrap();
        assert!(c512.is_finite());
        assert!((c1024 - c512).abs() / c512 < 0.05, "{c512} vs {c1024}");
        let wide = ExponentField::ramp(1.0, 2.0, 0.3, 0.7, 0.1).unwrap();
        let narrow = ExponentField::ramp(1.0, 2.0, 0.3, 0.7, 0.01).unwrap();
        assert!(
            narrow.log_hoelder_constant(1024).unwrap() > wide.log_hoelder_constant(1024).unwrap()
        );
        assert!(f.log_hoelder_constant(32).is_err());
    }

    #[test]
    fn regularity_threshold_examples() {
        let c = ExponentField::constant;
        assert_eq!(regularity_threshold(&c(1.5), &c(2.0), 1).unwrap(), 1.5);
        assert_eq!(regularity_threshold(&c(0.0), &c(1.0), 1).unwrap(), 0.0);
        let s = ExponentField::cosine(1.5, 0.3);
        assert!((regularity_threshold(&s, &c(2.0), 1).unwrap() - 1.8).abs() < 1e-12);
        // q^- < 1 activates sigma_q
        assert!((regularity_threshold(&c(0.1), &c(0.5), 1).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn gap_condition_examples() {
        let c = ExponentField::constant;
        assert!((gap_condition(&c(0.2), &c(1.5), &c(2.0), 1) + 0.8).abs() < 1e-12);
        let s = ExponentField::cosine(1.5, 0.3);
        assert!((gap_condition(&s, &s, &c(2.0), 1) - 0.5).abs() < 1e-12);
        assert!((gap_condition(&c(1.0), &s, &c(2.0), 1) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn gap_condition_swap_identity_for_parallel_fields() {
        // t - s constant: sup(t-s) + sup(s-t) = 0
        let s = ExponentField::cosine(1.5, 0.3);
        let t = ExponentField::cosine(1.1, 0.3);
        let q = ExponentField::cosine(2.0, 0.5);
        let sum = gap_condition(&t, &s, &q, 1) + gap_condition(&s, &t, &q, 1);
        assert!((sum - 2.0 / q.upper_bound()).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip_recomputes_bounds() {
        let f = ExponentField::cosine(1.5, 0.3);
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(text, r#"{"shape":"trig","c0":1.5,"cos":[0.3],"sin":[]}"#);
        let back: ExponentField = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
        let c: ExponentField = serde_json::from_str(r#"{"shape":"const","value":2}"#).unwrap();
        assert_eq!(c.upper_bound(), 2.0);
        assert!(serde_json::from_str::<ExponentField>(r#"{"shape":"ramp","low":1,"high":2,"rise":0.5,"fall":0.4,"width":0.1}"#).is_err());
    }

    #[test]
    fn budget_validation() {
        assert!(HoelderBudget::new(0.5, 1.0, 1.0, 1.0).is_ok());
        assert!(HoelderBudget::new(1.0, 0.5, 1.0, 1.0).is_err());
        assert!(HoelderBudget::new(0.5, 1.0, 1.0, 2.0).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn periodic_and_within_bounds(c0 in 1.0f64..3.0, a in -0.5f64..0.5, b in -0.5f64..0.5, i in 0u32..(1 << 20)) {
            let f = ExponentField::trig(c0, vec![a], vec![b]).unwrap();
            // dyadic nodes keep x + 1 exact in floating point
            let x = i as f64 / (1u32 << 20) as f64;
            let v = f.evaluate(x);
            prop_assert_eq!(v, f.evaluate(x + 1.0));
            prop_assert!(v >= f.lower_bound() - 1e-12 && v <= f.upper_bound() + 1e-12);
        }
    }
}
