//! Coefficient functions `a, b, c, f` of the variable-coefficient obstacle
//! problem
//!
//! ```text
//! a u_xx + b u_x + c u - u_t = f 1{u > 0},   u >= 0,
//! ```
//!
//! and the checkable form of the non-degeneracy hypothesis `a, f >= delta`.

use thiserror::Error;

use crate::expr::{parse_expression, EvalError, Expr, ParseError};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub a: Expr,
    pub b: Expr,
    pub c: Expr,
    pub f: Expr,
    pub delta: f64,
}

/// Values of the four coefficients at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffValues {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("coefficient `{name}`: {source}")]
    Parse {
        name: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("delta must be a positive finite number (got {0})")]
    BadDelta(f64),
    #[error("coefficient `{name}` cannot be evaluated at node (i={i}, n={n}): {source}")]
    Eval {
        name: &'static str,
        i: usize,
        n: usize,
        #[source]
        source: EvalError,
    },
}

impl CoefficientSet {
    pub fn new(a: Expr, b: Expr, c: Expr, f: Expr, delta: f64) -> Result<Self, CoeffError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(CoeffError::BadDelta(delta));
        }
        Ok(Self { a, b, c, f, delta })
    }

    pub fn parse(a: &str, b: &str, c: &str, f: &str, delta: f64) -> Result<Self, CoeffError> {
        let p = |name, src: &str| parse_expression(src).map_err(|source| CoeffError::Parse { name, source });
        Self::new(p("a", a)?, p("b", b)?, p("c", c)?, p("f", f)?, delta)
    }

    /// The constant-coefficient problem `u_xx - u_t = 1{u > 0}`.
    pub fn heat() -> Self {
        Self::constant(1.0, 0.0, 0.0, 1.0, 1.0)
    }

    pub fn constant(a: f64, b: f64, c: f64, f: f64, delta: f64) -> Self {
        Self { a: Expr::Const(a), b: Expr::Const(b), c: Expr::Const(c), f: Expr::Const(f), delta }
    }

    pub fn eval(&self, x: f64, t: f64) -> CoeffValues {
        CoeffValues { a: self.a.eval(x, t), b: self.b.eval(x, t), c: self.c.eval(x, t), f: self.f.eval(x, t) }
    }

    /// Whether this is exactly `a = f = 1, b = c = 0`.
    pub fn is_unit_heat(&self) -> bool {
        self.a == Expr::Const(1.0)
            && self.b == Expr::Const(0.0)
            && self.c == Expr::Const(0.0)
            && self.f == Expr::Const(1.0)
    }

    pub fn named(&self) -> [(&'static str, &Expr); 4] {
        [("a", &self.a), ("b", &self.b), ("c", &self.c), ("f", &self.f)]
    }
}

/// Per-coefficient sample statistics over the grid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffStats {
    pub min: f64,
    pub max: f64,
    /// Largest `|difference quotient|` between neighbouring nodes in `x`.
    pub max_dx: f64,
    /// Largest `|difference quotient|` between neighbouring nodes in `t`.
    pub max_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub delta: f64,
    pub a: CoeffStats,
    pub b: CoeffStats,
    pub c: CoeffStats,
    pub f: CoeffStats,
    pub a_ok: bool,
    pub f_ok: bool,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.a_ok && self.f_ok
    }

    pub fn min_a(&self) -> f64 {
        self.a.min
    }

    pub fn min_f(&self) -> f64 {
        self.f.min
    }

    /// Human-readable reason for a failed check.
    pub fn failure(&self) -> Option<String> {
        let mut msgs = Vec::new();
        if !self.a_ok {
            msgs.push(format!("min a = {} < delta = {} (hypothesis a >= delta)", self.a.min, self.delta));
        }
        if !self.f_ok {
            msgs.push(format!("min f = {} < delta = {} (hypothesis f >= delta)", self.f.min, self.delta));
        }
        (!msgs.is_empty()).then(|| msgs.join("; "))
    }
}

/// Checks `a >= delta` and `f >= delta` at every node and records bounded
/// difference quotients as a surrogate for smoothness.
pub fn validate(coeffs: &CoefficientSet, grid: &GridSpec) -> Result<ValidationReport, CoeffError> {
    let [a, b, c, f] = coeffs.named().map(|(name, e)| stats(name, e, grid));
    let (a, b, c, f) = (a?, b?, c?, f?);
    Ok(ValidationReport { delta: coeffs.delta, a_ok: a.min >= coeffs.delta, f_ok: f.min >= coeffs.delta, a, b, c, f })
}

fn stats(name: &'static str, e: &Expr, grid: &GridSpec) -> Result<CoeffStats, CoeffError> {
    let (nx, nt) = (grid.nx, grid.nt);
    let mut vals = Vec::with_capacity(grid.len());
    for n in 0..nt {
        for i in 0..nx {
            let v = e.try_eval(grid.x(i), grid.t(n)).map_err(|source| CoeffError::Eval { name, i, n, source })?;
            vals.push(v);
        }
    }
    let (h, tau) = (grid.h(), grid.tau());
    let mut s = CoeffStats { min: f64::INFINITY, max: f64::NEG_INFINITY, max_dx: 0.0, max_dt: 0.0 };
    for n in 0..nt {
        for i in 0..nx {
            let v = vals[n * nx + i];
            s.min = s.min.min(v);
            s.max = s.max.max(v);
            if i + 1 < nx {
                s.max_dx = s.max_dx.max((vals[n * nx + i + 1] - v).abs() / h);
            }
            if n + 1 < nt {
                s.max_dt = s.max_dt.max((vals[(n + 1) * nx + i] - v).abs() / tau);
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(-1.0, 1.0, 21, 0.0, 1.0, 11).unwrap()
    }

    #[test]
    fn unit_heat_passes() {
        let r = validate(&CoefficientSet::heat(), &grid()).unwrap();
        assert!(r.pass());
        assert_eq!(r.min_a(), 1.0);
        assert_eq!(r.min_f(), 1.0);
        assert_eq!(r.a.max_dx, 0.0);
    }

    #[test]
    fn zero_source_fails() {
        let c = CoefficientSet::parse("1", "0", "0", "0", 0.1).unwrap();
        let r = validate(&c, &grid()).unwrap();
        assert!(!r.pass());
        assert!(r.a_ok && !r.f_ok);
        assert!(r.failure().unwrap().contains("f >= delta"));
    }

    #[test]
    fn quadratic_a_minimum_at_origin() {
        let c = CoefficientSet::parse("1+x^2/2", "0", "0", "1", 1.0).unwrap();
        let r = validate(&c, &grid()).unwrap();
        assert!(r.pass());
        assert_eq!(r.min_a(), 1.0);
        assert!((r.a.max - 1.5).abs() < 1e-15);
        // |d/dx (1 + x^2/2)| <= 1 on [-1, 1]
        assert!(r.a.max_dx <= 1.0 && r.a.max_dx > 0.9);
    }

    #[test]
    fn evaluation_failure_names_node() {
        let c = CoefficientSet::parse("log(x)", "0", "0", "1", 0.5).unwrap();
        match validate(&c, &grid()) {
            Err(CoeffError::Eval { name: "a", i: 0, n: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_name_the_coefficient() {
        assert!(matches!(CoefficientSet::parse("1", "2 +", "0", "1", 1.0), Err(CoeffError::Parse { name: "b", .. })));
        assert_eq!(CoefficientSet::parse("1", "0", "0", "1", 0.0), Err(CoeffError::BadDelta(0.0)));
    }
}
