//! Forward time stepping of the obstacle problem as a sequence of linear
//! complementarity problems
//!
//! ```text
//! U >= 0,   A U - q >= 0,   U . (A U - q) = 0
//! ```
//!
//! with `A = I/tau - theta L_h` tridiagonal, solved by projected SOR.

use thiserror::Error;

use crate::coefficients::{validate, CoeffError, CoefficientSet};
use crate::expr::Expr;
use crate::grid::{Field, GridError, GridSpec};

/// Tridiagonal system for the interior nodes `1..nx-1` of one time step.
///
/// Row `k` corresponds to grid node `i = k + 1`. `sub[0]` and
/// `sup[len-1]` are zero: the Dirichlet couplings live in `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStepSystem {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub q: Vec<f64>,
    /// Level of the data `u_prev`; the unknowns live at `level + 1`.
    pub level: usize,
    pub theta: f64,
    pub tau: f64,
    pub h: f64,
}

impl TimeStepSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A u - q`.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                let mut r = self.diag[k] * u[k] - self.q[k];
                if k > 0 {
                    r += self.sub[k] * u[k - 1];
                }
                if k + 1 < n {
                    r += self.sup[k] * u[k + 1];
                }
                r
            })
            .collect()
    }

    /// `max_k |min(u_k, r_k)|`, the complementarity defect.
    pub fn complementarity_defect(&self, u: &[f64]) -> f64 {
        self.residual(u).iter().zip(u).map(|(r, u)| u.min(*r).abs()).fold(0.0, f64::max)
    }

    /// Non-positive off-diagonals and strict row diagonal dominance.
    pub fn is_m_matrix(&self) -> bool {
        (0..self.len())
            .all(|k| self.sub[k] <= 0.0 && self.sup[k] <= 0.0 && self.diag[k] > self.sub[k].abs() + self.sup[k].abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub theta: f64,
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { theta: 1.0, omega: 1.5, tol: 1e-10, max_iter: 20_000 }
    }
}

impl SolveConfig {
    pub fn check(&self) -> Result<(), SolveError> {
        let ok = (0.5..=1.0).contains(&self.theta)
            && self.omega > 0.0
            && self.omega < 2.0
            && self.tol > 0.0
            && self.max_iter >= 1;
        if ok {
            Ok(())
        } else {
            Err(SolveError::Config(format!(
                "need theta in [0.5, 1], omega in (0, 2), tol > 0, max_iter >= 1; got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error(
        "M-matrix violated at node i={i} (x={x}, t={t}): 1/tau - theta*c = {margin} <= 0; \
         need tau < {required_tau}"
    )]
    NotMMatrix { i: usize, x: f64, t: f64, margin: f64, required_tau: f64 },
    #[error("diffusion coefficient a = {a} is not positive at node i={i} (x={x}, t={t})")]
    Diffusion { i: usize, x: f64, t: f64, a: f64 },
    #[error("coefficients are not finite at node i={i} (x={x}, t={t})")]
    NonFinite { i: usize, x: f64, t: f64 },
    #[error("u_prev has {got} entries, grid has nx={nx}")]
    Shape { nx: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("PSOR did not converge in {iterations} sweeps (complementarity defect {defect:e} > tol {tol:e})")]
pub struct NonConvergence {
    pub iterations: usize,
    pub defect: f64,
    pub tol: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
    #[error("hypothesis check failed: {0}")]
    Validation(String),
    #[error("assembly at time level {level}: {source}")]
    Assembly {
        level: usize,
        #[source]
        source: AssemblyError,
    },
    #[error("time level {level} (t={t}): {source}")]
    NonConvergence {
        level: usize,
        t: f64,
        #[source]
        source: NonConvergence,
    },
    #[error("{what} data is negative ({value}) at x={x}, t={t}")]
    NegativeData { what: &'static str, x: f64, t: f64, value: f64 },
    #[error("{what} data cannot be evaluated: {detail}")]
    Data { what: &'static str, detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Three-point stencil of `L_h = a D2 + b D1 + c` at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub lo: f64,
    pub mid: f64,
    pub hi: f64,
}

/// Central `D1` unless the cell Peclet number `|b| h / (2a)` exceeds one, in
/// which case `D1` is one-sided in the direction of `b`.
pub(crate) fn operator_stencil(a: f64, b: f64, c: f64, h: f64) -> Stencil {
    let diff = a / (h * h);
    if b.abs() * h / (2.0 * a) <= 1.0 {
        Stencil { lo: diff - b / (2.0 * h), mid: -2.0 * diff + c, hi: diff + b / (2.0 * h) }
    } else if b > 0.0 {
        Stencil { lo: diff, mid: -2.0 * diff - b / h + c, hi: diff + b / h }
    } else {
        Stencil { lo: diff - b / h, mid: -2.0 * diff + b / h + c, hi: diff }
    }
}

/// Builds the system advancing `u_prev` (level `n`, full row including the
/// two boundary nodes) to level `n + 1` with Dirichlet values `boundary_next`.
pub fn assemble_step(
    coeffs: &CoefficientSet,
    grid: &GridSpec,
    u_prev: &[f64],
    n: usize,
    theta: f64,
    boundary_next: (f64, f64),
) -> Result<TimeStepSystem, AssemblyError> {
    let nx = grid.nx;
    if u_prev.len() != nx {
        return Err(AssemblyError::Shape { nx, got: u_prev.len() });
    }
    let (h, tau) = (grid.h(), grid.tau());
    let t = grid.t(n) + theta * tau;
    let m = nx - 2;
    let mut sys = TimeStepSystem {
        sub: vec![0.0; m],
        diag: vec![0.0; m],
        sup: vec![0.0; m],
        q: vec![0.0; m],
        level: n,
        theta,
        tau,
        h,
    };
    for k in 0..m {
        let i = k + 1;
        let x = grid.x(i);
        let cv = coeffs.eval(x, t);
        if ![cv.a, cv.b, cv.c, cv.f].iter().all(|v| v.is_finite()) {
            return Err(AssemblyError::NonFinite { i, x, t });
        }
        if cv.a <= 0.0 {
            return Err(AssemblyError::Diffusion { i, x, t, a: cv.a });
        }
        let st = operator_stencil(cv.a, cv.b, cv.c, h);
        let margin = 1.0 / tau - theta * cv.c;
        if margin <= 0.0 {
            return Err(AssemblyError::NotMMatrix { i, x, t, margin, required_tau: 1.0 / (theta * cv.c) });
        }
        sys.diag[k] = 1.0 / tau - theta * st.mid;
        if k > 0 {
            sys.sub[k] = -theta * st.lo;
        }
        if k + 1 < m {
            sys.sup[k] = -theta * st.hi;
        }
        let explicit = st.lo * u_prev[i - 1] + st.mid * u_prev[i] + st.hi * u_prev[i + 1];
        let mut q = u_prev[i] / tau + (1.0 - theta) * explicit - cv.f;
        if k == 0 {
            q += theta * st.lo * boundary_next.0;
        }
        if k + 1 == m {
            q += theta * st.hi * boundary_next.1;
        }
        sys.q[k] = q;
    }
    debug_assert!(sys.is_m_matrix(), "assembled matrix is not an M-matrix");
    Ok(sys)
}

/// Projected SOR from a zero initial guess.
pub fn psor_solve(sys: &TimeStepSystem, cfg: &SolveConfig) -> Result<(Vec<f64>, usize), NonConvergence> {
    let mut u = vec![0.0; sys.len()];
    let iters = psor_in_place(sys, cfg, &mut u)?;
    Ok((u, iters))
}

/// Projected SOR with ascending sweeps, starting from the contents of `u`.
/// Returns the number of sweeps.
pub fn psor_in_place(sys: &TimeStepSystem, cfg: &SolveConfig, u: &mut [f64]) -> Result<usize, NonConvergence> {
    let n = sys.len();
    assert_eq!(u.len(), n, "initial guess has wrong length");
    for v in u.iter_mut() {
        *v = v.max(0.0);
    }
    let mut defect = sys.complementarity_defect(u);
    if defect <= cfg.tol {
        return Ok(0);
    }
    for sweep in 1..=cfg.max_iter {
        for k in 0..n {
            let mut s = sys.q[k];
            if k > 0 {
                s -= sys.sub[k] * u[k - 1];
            }
            if k + 1 < n {
                s -= sys.sup[k] * u[k + 1];
            }
            let gs = s / sys.diag[k];
            u[k] = (u[k] + cfg.omega * (gs - u[k])).max(0.0);
        }
        defect = sys.complementarity_defect(u);
        if defect <= cfg.tol {
            return Ok(sweep);
        }
    }
    Err(NonConvergence { iterations: cfg.max_iter, defect, tol: cfg.tol })
}

/// Solves the obstacle problem with expression data: `initial(x)` at
/// `t_min`, `left(t)` / `right(t)` on the space edges.
pub fn solve_parabolic(
    coeffs: &CoefficientSet,
    grid: &GridSpec,
    initial: &Expr,
    left: &Expr,
    right: &Expr,
    cfg: &SolveConfig,
) -> Result<Field, SolveError> {
    let report = validate(coeffs, grid)?;
    if let Some(msg) = report.failure() {
        return Err(SolveError::Validation(msg));
    }
    let t0 = grid.t_min;
    let init =
        (0..grid.nx).map(|i| data_value("initial", initial, grid.x(i), t0, cfg.tol)).collect::<Result<Vec<_>, _>>()?;
    let mut edges = Vec::with_capacity(grid.nt);
    for n in 0..grid.nt {
        let t = grid.t(n);
        edges.push((
            data_value("left boundary", left, grid.x_min, t, cfg.tol)?,
            data_value("right boundary", right, grid.x_max, t, cfg.tol)?,
        ));
    }
    march(coeffs, grid, &init, |n| edges[n], cfg, None)
}

fn data_value(what: &'static str, e: &Expr, x: f64, t: f64, tol: f64) -> Result<f64, SolveError> {
    let v = e.try_eval(x, t).map_err(|err| SolveError::Data { what, detail: err.to_string() })?;
    clamp_data(what, v, x, t, tol)
}

fn clamp_data(what: &'static str, v: f64, x: f64, t: f64, tol: f64) -> Result<f64, SolveError> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -tol {
        log::warn!("{what} data {v} at (x={x}, t={t}) clamped to 0");
        Ok(0.0)
    } else {
        Err(SolveError::NegativeData { what, x, t, value: v })
    }
}

/// Time stepping with sampled data. `initial` holds `nx` values at `t_min`;
/// `boundary(n)` gives the Dirichlet pair at level `n`. The hypotheses are
/// not re-validated here.
pub fn solve_with_data(
    coeffs: &CoefficientSet,
    grid: &GridSpec,
    initial: &[f64],
    boundary: impl Fn(usize) -> (f64, f64),
    cfg: &SolveConfig,
) -> Result<Field, SolveError> {
    let init = initial
        .iter()
        .enumerate()
        .map(|(i, &v)| clamp_data("initial", v, grid.x(i), grid.t_min, cfg.tol))
        .collect::<Result<Vec<_>, _>>()?;
    let boundary = |n: usize| -> Result<(f64, f64), SolveError> {
        let (l, r) = boundary(n);
        let t = grid.t(n);
        Ok((
            clamp_data("left boundary", l, grid.x_min, t, cfg.tol)?,
            clamp_data("right boundary", r, grid.x_max, t, cfg.tol)?,
        ))
    };
    let mut edges = Vec::with_capacity(grid.nt);
    for n in 0..grid.nt {
        edges.push(boundary(n)?);
    }
    march(coeffs, grid, &init, |n| edges[n], cfg, None)
}

/// Core stepping loop. With `obstacle = Some(psi)` the constraint becomes
/// `U >= psi` (solved as an LCP for `U - psi`); otherwise `U >= 0`.
pub(crate) fn march(
    coeffs: &CoefficientSet,
    grid: &GridSpec,
    initial: &[f64],
    boundary: impl Fn(usize) -> (f64, f64),
    cfg: &SolveConfig,
    obstacle: Option<&[f64]>,
) -> Result<Field, SolveError> {
    cfg.check()?;
    let nx = grid.nx;
    assert_eq!(initial.len(), nx);
    let mut values = Vec::with_capacity(grid.len());
    let mut row = initial.to_vec();
    let (l0, r0) = boundary(0);
    row[0] = l0;
    row[nx - 1] = r0;
    values.extend_from_slice(&row);
    let shift: Vec<f64> = match obstacle {
        Some(psi) => psi[1..nx - 1].to_vec(),
        None => vec![0.0; nx - 2],
    };
    let mut w: Vec<f64> = row[1..nx - 1].iter().zip(&shift).map(|(u, s)| u - s).collect();
    let mut sweeps = 0usize;
    for n in 0..grid.nt - 1 {
        let next = boundary(n + 1);
        let mut sys = assemble_step(coeffs, grid, &row, n, cfg.theta, next)
            .map_err(|source| SolveError::Assembly { level: n, source })?;
        if obstacle.is_some() {
            // LCP in W = U - psi: A W - (q - A psi), and q - A psi = -(A psi - q).
            sys.q = sys.residual(&shift).iter().map(|r| -r).collect();
        }
        sweeps += psor_in_place(&sys, cfg, &mut w).map_err(|source| SolveError::NonConvergence {
            level: n + 1,
            t: grid.t(n + 1),
            source,
        })?;
        row[0] = next.0;
        row[nx - 1] = next.1;
        for k in 0..nx - 2 {
            row[k + 1] = w[k] + shift[k];
        }
        values.extend_from_slice(&row);
    }
    log::debug!("obstacle solve on {}x{} grid: {} PSOR sweeps", nx, grid.nt, sweeps);
    Ok(Field::new(*grid, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sys(sub: &[f64], diag: &[f64], sup: &[f64], q: &[f64]) -> TimeStepSystem {
        TimeStepSystem {
            sub: sub.to_vec(),
            diag: diag.to_vec(),
            sup: sup.to_vec(),
            q: q.to_vec(),
            level: 0,
            theta: 1.0,
            tau: 1.0,
            h: 1.0,
        }
    }

    #[test]
    fn heat_stencil_rows() {
        let g = GridSpec::new(0.0, 1.0, 11, 0.0, 1.0, 5).unwrap();
        let (h, tau) = (g.h(), g.tau());
        let s = assemble_step(&CoefficientSet::heat(), &g, &[0.0; 11], 0, 1.0, (0.0, 0.0)).unwrap();
        assert_eq!(s.len(), 9);
        for k in 0..9 {
            assert_abs_diff_eq!(s.diag[k], 1.0 / tau + 2.0 / (h * h), epsilon = 1e-9);
            if k > 0 {
                assert_abs_diff_eq!(s.sub[k], -1.0 / (h * h), epsilon = 1e-9);
            }
            if k < 8 {
                assert_abs_diff_eq!(s.sup[k], -1.0 / (h * h), epsilon = 1e-9);
            }
            assert_eq!(s.q[k], -1.0);
        }
        assert!(s.is_m_matrix());
    }

    #[test]
    fn strong_drift_switches_to_upwind() {
        // |b| h / (2a) = 4 with h = 0.1, a = 1, b = 80
        let g = GridSpec::new(0.0, 1.0, 11, 0.0, 1.0, 5).unwrap();
        let coeffs = CoefficientSet::constant(1.0, 80.0, 0.0, 1.0, 1.0);
        let s = assemble_step(&coeffs, &g, &[0.0; 11], 0, 1.0, (0.0, 0.0)).unwrap();
        let h = g.h();
        assert_abs_diff_eq!(s.sub[3], -1.0 / (h * h), epsilon = 1e-9);
        assert_abs_diff_eq!(s.sup[3], -(1.0 / (h * h) + 80.0 / h), epsilon = 1e-9);
        assert!(s.is_m_matrix());
        let neg = CoefficientSet::constant(1.0, -80.0, 0.0, 1.0, 1.0);
        let s = assemble_step(&neg, &g, &[0.0; 11], 0, 1.0, (0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.sub[3], -(1.0 / (h * h) + 80.0 / h), epsilon = 1e-9);
        assert!(s.is_m_matrix());
    }

    #[test]
    fn reaction_term_violating_dominance_is_rejected() {
        // tau = 1, c = 2: 1/tau - theta c = -1
        let g = GridSpec::new(0.0, 1.0, 5, 0.0, 1.0, 2).unwrap();
        let coeffs = CoefficientSet::constant(1.0, 0.0, 2.0, 1.0, 1.0);
        match assemble_step(&coeffs, &g, &[0.0; 5], 0, 1.0, (0.0, 0.0)) {
            Err(AssemblyError::NotMMatrix { i: 1, margin, required_tau, .. }) => {
                assert_eq!(margin, -1.0);
                assert_eq!(required_tau, 0.5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalar_lcps() {
        let cfg = SolveConfig::default();
        let (u, _) = psor_solve(&sys(&[0.0], &[1.0], &[0.0], &[-1.0]), &cfg).unwrap();
        assert_eq!(u, vec![0.0]);
        let (u, _) = psor_solve(&sys(&[0.0], &[1.0], &[0.0], &[1.0]), &cfg).unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn two_by_two_lcp() {
        // Active-set enumeration: {} gives r = (1, -1) < 0; {0}: U0 = -1/2 < 0;
        // {0,1}: U = (-1/3, 1/3) infeasible; {1}: U1 = 1/2, r0 = 1/2 >= 0.
        let s = sys(&[0.0, -1.0], &[2.0, 2.0], &[-1.0, 0.0], &[-1.0, 1.0]);
        let (u, _) = psor_solve(&s, &SolveConfig::default()).unwrap();
        assert_abs_diff_eq!(u[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(u[1], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn iteration_cap_reports_defect() {
        let s = sys(&[0.0, -1.0], &[2.0, 2.0], &[-1.0, 0.0], &[1.0, 1.0]);
        let cfg = SolveConfig { max_iter: 1, tol: 1e-14, ..SolveConfig::default() };
        let err = psor_solve(&s, &cfg).unwrap_err();
        assert_eq!(err.iterations, 1);
        assert!(err.defect > 1e-14);
    }

    fn expr(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = GridSpec::new(-1.0, 1.0, 41, 0.0, 1.0, 21).unwrap();
        let u =
            solve_parabolic(&CoefficientSet::heat(), &g, &expr("0"), &expr("0"), &expr("0"), &SolveConfig::default())
                .unwrap();
        assert_eq!(u.max(), 0.0);
        assert_eq!(u.min(), 0.0);
    }

    #[test]
    fn invalid_source_is_rejected() {
        let g = GridSpec::new(-1.0, 1.0, 11, 0.0, 1.0, 5).unwrap();
        let coeffs = CoefficientSet::parse("1", "0", "0", "0", 0.5).unwrap();
        let err = solve_parabolic(&coeffs, &g, &expr("0"), &expr("0"), &expr("0"), &SolveConfig::default());
        assert!(matches!(err, Err(SolveError::Validation(_))));
    }

    #[test]
    fn negative_data_rejected_or_clamped() {
        let g = GridSpec::new(-1.0, 1.0, 11, 0.0, 1.0, 5).unwrap();
        let cfg = SolveConfig::default();
        let heat = CoefficientSet::heat();
        let err = solve_parabolic(&heat, &g, &expr("-0.1"), &expr("0"), &expr("0"), &cfg);
        assert!(matches!(err, Err(SolveError::NegativeData { what: "initial", .. })));
        let u = solve_parabolic(&heat, &g, &expr("-1e-12"), &expr("0"), &expr("0"), &cfg).unwrap();
        assert_eq!(u.min(), 0.0);
    }

    fn bump_problem(f: &str) -> Field {
        let g = GridSpec::new(-1.0, 1.0, 81, 0.0, 0.5, 51).unwrap();
        let coeffs = CoefficientSet::parse("1 + 0.2*x", "0.3", "-0.5", f, 0.5).unwrap();
        solve_parabolic(&coeffs, &g, &expr("max(0, 0.5 - x^2)"), &expr("0.3*t"), &expr("0.1"), &SolveConfig::default())
            .unwrap()
    }

    #[test]
    fn solutions_are_nonnegative_and_deterministic() {
        let a = bump_problem("1");
        let b = bump_problem("1");
        assert!(a.min() >= 0.0);
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn larger_source_gives_smaller_solution() {
        let low = bump_problem("1");
        let high = bump_problem("1.5 + 0.5*sin(3*x)^2");
        assert!(low.values().iter().zip(high.values()).all(|(l, h)| *h <= *l + 1e-12));
        assert!(low.max_abs_diff(&high) > 1e-3);
    }

    #[test]
    fn discrete_complementarity_holds_at_every_level() {
        let g = GridSpec::new(-1.0, 1.0, 61, 0.0, 0.3, 31).unwrap();
        let coeffs = CoefficientSet::parse("1", "0.5", "0", "1", 1.0).unwrap();
        let cfg = SolveConfig { tol: 1e-11, ..SolveConfig::default() };
        let u = solve_parabolic(&coeffs, &g, &expr("max(0, x)^2"), &expr("0"), &expr("1"), &cfg).unwrap();
        for n in 0..g.nt - 1 {
            let prev = u.slice(n).to_vec();
            let next = u.slice(n + 1);
            let s = assemble_step(&coeffs, &g, &prev, n, 1.0, (next[0], next[g.nx - 1])).unwrap();
            assert!(s.complementarity_defect(&next[1..g.nx - 1]) <= 1e-11);
        }
    }
}
