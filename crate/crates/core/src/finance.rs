//! American put as an obstacle problem in log-price.
//!
//! With `y = ln s`, time to maturity `t`, payoff `ψ(y) = max(0, K - e^y)` and
//! `u = p - ψ`, the put price `p` gives
//!
//! ```text
//! a u_yy + b u_y + c u - u_t = rK 1{u > 0},   u >= 0,
//! a = σ²/2,  b = r - σ²/2,  c = -r
//! ```
//!
//! on `{e^y < K}`, where the payoff is linear. The box stops at
//! `y = ln(K (1 - margin))`; data on its right edge come from a finer solve
//! of the price itself on a wider domain.

use std::io::Write;

use thiserror::Error;

use crate::coefficients::{validate, CoeffError, CoefficientSet};
use crate::expr::{parse_expression, Expr};
use crate::free_boundary::{extract, FreeBoundaryError, FreeBoundarySet, Orientation, UtProbe};
use crate::grid::{Field, GridError, GridSpec};
use crate::lcp::{march, solve_with_data, SolveConfig, SolveError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinanceError {
    #[error("riskless rate r = 0 gives f = rK = 0, violating the non-degeneracy f >= delta > 0")]
    ZeroRate,
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    FreeBoundary(#[from] FreeBoundaryError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volatility {
    Constant(f64),
    /// Local volatility `σ(y, t)` with `y` the log-price and `t` the time to
    /// maturity.
    Local(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PutScenario {
    pub strike: f64,
    pub rate: f64,
    pub volatility: Volatility,
    pub maturity: f64,
    /// Lower log-price bound of the box.
    pub y_min: f64,
    /// The box ends at `ln(K (1 - margin))`.
    pub margin: f64,
    /// Space and time refinement of the reference solve.
    pub reference_factor: usize,
}

impl PutScenario {
    pub fn new(strike: f64, rate: f64, sigma: f64, maturity: f64) -> Self {
        Self {
            strike,
            rate,
            volatility: Volatility::Constant(sigma),
            maturity,
            y_min: (0.2 * strike).ln(),
            margin: 0.02,
            reference_factor: 2,
        }
    }

    pub fn y_max(&self) -> f64 {
        (self.strike * (1.0 - self.margin)).ln()
    }

    /// `2rK / (2r + σ²)`, the perpetual exercise level (constant volatility).
    pub fn perpetual_boundary(&self) -> Option<f64> {
        match self.volatility {
            Volatility::Constant(s) => Some(2.0 * self.rate * self.strike / (2.0 * self.rate + s * s)),
            Volatility::Local(_) => None,
        }
    }

    fn check(&self) -> Result<(), FinanceError> {
        if self.rate == 0.0 {
            return Err(FinanceError::ZeroRate);
        }
        let bad = |m: &str| Err(FinanceError::Invalid(m.into()));
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return bad("strike must be positive");
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad("rate must be non-negative and finite");
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return bad("maturity must be positive");
        }
        if let Volatility::Constant(s) = self.volatility {
            if !(s > 0.0 && s.is_finite()) {
                return bad("volatility must be positive");
            }
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return bad("margin must lie in (0, 1)");
        }
        if !(self.y_min < self.y_max()) {
            return bad("y_min must lie below ln(K (1 - margin))");
        }
        if self.reference_factor < 1 {
            return bad("reference factor must be at least 1");
        }
        Ok(())
    }

    /// `(a, b, c)` as expressions.
    fn operator(&self) -> Result<(Expr, Expr, Expr), FinanceError> {
        let r = self.rate;
        let sig = match &self.volatility {
            Volatility::Constant(s) => format!("{s:?}"),
            Volatility::Local(e) => e.to_string(),
        };
        let p = |s: String| parse_expression(&s).map_err(|e| FinanceError::Invalid(e.to_string()));
        Ok((p(format!("0.5 * ({sig})^2"))?, p(format!("{r:?} - 0.5 * ({sig})^2"))?, Expr::Const(-r)))
    }
}

/// The obstacle-problem data of a put scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleForm {
    pub coeffs: CoefficientSet,
    pub grid: GridSpec,
    pub initial: Vec<f64>,
    /// Dirichlet pair `(left, right)` per time level.
    pub boundary: Vec<(f64, f64)>,
    /// Price on the wider reference grid.
    pub reference: Field,
}

fn payoff(k: f64, y: f64) -> f64 {
    (k - y.exp()).max(0.0)
}

/// Builds the obstacle form on an `nx x nt` grid of `[y_min, y_max] x [0, T]`.
/// `nt = None` picks `tau <= h^2`.
pub fn to_obstacle(
    scn: &PutScenario,
    nx: usize,
    nt: Option<usize>,
    cfg: &SolveConfig,
) -> Result<ObstacleForm, FinanceError> {
    scn.check()?;
    let (y_min, y_max, k) = (scn.y_min, scn.y_max(), scn.strike);
    let h = (y_max - y_min) / (nx.max(3) - 1) as f64;
    let nt = nt.unwrap_or_else(|| (scn.maturity / (h * h)).ceil() as usize + 1);
    let grid = GridSpec::new(y_min, y_max, nx, 0.0, scn.maturity, nt)?;
    let (a, b, c) = scn.operator()?;

    // delta = min(rK, min a) / 2 so both halves of the hypothesis hold
    let probe = CoefficientSet::new(a.clone(), b.clone(), c.clone(), Expr::Const(scn.rate * k), 1.0)?;
    let min_a = validate(&probe, &grid)?.min_a();
    let delta = 0.5 * (scn.rate * k).min(min_a);
    let coeffs = CoefficientSet::new(a.clone(), b.clone(), c.clone(), Expr::Const(scn.rate * k), delta)?;

    // reference: the price itself, obstacle psi, on a grid sharing the box nodes
    let f = scn.reference_factor;
    let sig_scale = match scn.volatility {
        Volatility::Constant(s) => s,
        Volatility::Local(_) => 0.5,
    };
    let ext = (4.0 * sig_scale * scn.maturity.sqrt()).clamp(1.0, 4.0);
    let h_ref = h / f as f64;
    let n_ref = ((k.ln() + ext - y_min) / h_ref).ceil() as usize + 1;
    let ref_grid =
        GridSpec::new(y_min, y_min + h_ref * (n_ref - 1) as f64, n_ref, 0.0, scn.maturity, (nt - 1) * f * f + 1)?;
    let psi: Vec<f64> = (0..n_ref).map(|i| payoff(k, ref_grid.x(i))).collect();
    let price_coeffs = CoefficientSet::new(a, b, c, Expr::Const(0.0), delta)?;
    let left = psi[0];
    let reference = march(&price_coeffs, &ref_grid, &psi, |_| (left, 0.0), cfg, Some(&psi))?;

    let edge = (nx - 1) * f;
    let (psi_l, psi_r) = (payoff(k, y_min), payoff(k, y_max));
    let boundary = (0..nt)
        .map(|n| {
            let m = n * f * f;
            ((reference.get(0, m) - psi_l).max(0.0), (reference.get(edge, m) - psi_r).max(0.0))
        })
        .collect();
    Ok(ObstacleForm { coeffs, grid, initial: vec![0.0; nx], boundary, reference })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySample {
    /// Time to maturity.
    pub tau: f64,
    pub s_star: f64,
    /// `u_t` oscillation at the smallest ladder radius.
    pub ut_jump: f64,
    /// `(r, jump)` ladder.
    pub jumps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseReport {
    pub form: ObstacleForm,
    pub u: Field,
    pub gamma: FreeBoundarySet,
    pub boundary: Vec<BoundarySample>,
    pub min_ut: f64,
    /// Largest jump over boundary points with `tau >= window_start`.
    pub max_jump: f64,
    /// Largest jump over all boundary points, including those whose
    /// cylinders reach the initial slice.
    pub max_jump_all: f64,
    pub window_start: f64,
    /// `s*` never increases with time to maturity (within one cell).
    pub boundary_monotone: bool,
    /// Price non-increasing in `s` on every slice.
    pub price_monotone: bool,
    /// Every node left of the boundary is exactly zero.
    pub exercise_region_exact: bool,
    pub perpetual: Option<f64>,
    /// `s*` at maturity `T` relative to the perpetual level, minus one.
    pub perpetual_rel_error: Option<f64>,
}

impl ExerciseReport {
    /// Writes `tau,s_star,ut_jump`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tau,s_star,ut_jump")?;
        for b in &self.boundary {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", b.tau, b.s_star, b.ut_jump)?;
        }
        Ok(())
    }
}

/// Options of [`exercise_boundary_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct PutAnalysis {
    pub nx: usize,
    /// `None` picks `tau <= h^2`.
    pub nt: Option<usize>,
    /// Jump radii as multiples of the smallest resolvable radius.
    pub radius_multiples: Vec<f64>,
    /// `max_jump` only counts boundary points with time to maturity at least
    /// this fraction of `T`; near expiry the cylinders see the payoff kink.
    pub window: f64,
}

impl Default for PutAnalysis {
    fn default() -> Self {
        Self { nx: 81, nt: None, radius_multiples: vec![4.0, 2.0, 1.0], window: 0.1 }
    }
}

/// Solves the scenario and reports the exercise boundary, smooth fit at it
/// and the long-maturity level.
pub fn exercise_boundary_report(
    scn: &PutScenario,
    opts: &PutAnalysis,
    cfg: &SolveConfig,
) -> Result<ExerciseReport, FinanceError> {
    if !(0.0..1.0).contains(&opts.window) {
        return Err(FinanceError::Invalid("jump window must lie in [0, 1)".into()));
    }
    let (nx, nt, radius_multiples) = (opts.nx, opts.nt, &opts.radius_multiples);
    let form = to_obstacle(scn, nx, nt, cfg)?;
    let report = validate(&form.coeffs, &form.grid)?;
    if let Some(msg) = report.failure() {
        return Err(SolveError::Validation(msg).into());
    }
    let u = solve_with_data(&form.coeffs, &form.grid, &form.initial, |n| form.boundary[n], cfg)?;
    let gamma = extract(&u, &form.coeffs, Some(0.0))?;
    let probe = UtProbe::new(&u, 0.0)?;
    let g = form.grid;
    let rmin = probe.min_radius();
    let mut radii: Vec<f64> = radius_multiples.iter().map(|k| (k * rmin).max(rmin)).collect();
    if radii.is_empty() {
        radii.push(rmin);
    }
    radii.sort_by(|a, b| b.total_cmp(a));

    // one exercise level per slice: the right-most zero-to-positive change
    let mut boundary = Vec::new();
    for n in gamma.slices() {
        let Some(p) = gamma
            .slice(n)
            .filter(|p| p.orientation == Orientation::Spatial && p.side == 1)
            .max_by(|a, b| a.x.total_cmp(&b.x))
        else {
            continue;
        };
        let jumps =
            radii.iter().map(|&r| probe.jump(p.x, p.t, r).map(|j| (r, j.jump))).collect::<Result<Vec<_>, _>>()?;
        boundary.push(BoundarySample {
            tau: p.t,
            s_star: p.x.exp(),
            ut_jump: jumps.last().map_or(0.0, |j| j.1),
            jumps,
        });
    }

    let d = u.derived_fields()?;
    let min_ut = d.ut.min();
    let window_start = opts.window * scn.maturity;
    let max_jump_all = boundary.iter().map(|b| b.ut_jump).fold(0.0, f64::max);
    let max_jump = boundary.iter().filter(|b| b.tau >= window_start).map(|b| b.ut_jump).fold(0.0, f64::max);
    let cell = g.h().exp();
    let boundary_monotone = boundary.windows(2).all(|w| w[1].s_star <= w[0].s_star * cell);
    let k = scn.strike;
    let mut price_monotone = true;
    let mut exercise_region_exact = true;
    for n in 0..g.nt {
        let p: Vec<f64> = (0..g.nx).map(|i| u.get(i, n) + payoff(k, g.x(i))).collect();
        price_monotone &= p.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        if let Some(b) = boundary.iter().find(|b| (b.tau - g.t(n)).abs() < 0.5 * g.tau()) {
            let yb = b.s_star.ln();
            exercise_region_exact &= (0..g.nx).filter(|&i| g.x(i) < yb - g.h()).all(|i| u.get(i, n) == 0.0);
        }
    }
    let perpetual = scn.perpetual_boundary();
    let perpetual_rel_error = perpetual.zip(boundary.last()).map(|(p, b)| b.s_star / p - 1.0);
    Ok(ExerciseReport {
        form,
        u,
        gamma,
        boundary,
        min_ut,
        max_jump,
        max_jump_all,
        window_start,
        boundary_monotone,
        price_monotone,
        exercise_region_exact,
        perpetual,
        perpetual_rel_error,
    })
}
