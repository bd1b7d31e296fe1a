//! Discrete free boundary `Γ = ∂{u = 0}` with sub-grid localization, and
//! probes of the time derivative near it.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::coefficients::{CoeffError, CoefficientSet};
use crate::grid::{Field, GridError, GridSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreeBoundaryError {
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("zero tolerance must be finite and non-negative (got {0})")]
    BadTolerance(f64),
    #[error("radius {r} is below the resolvable minimum 2 max(h, sqrt(tau)) = {min}")]
    RadiusTooSmall { r: f64, min: f64 },
    #[error("box of radius {r} around ({x}, {t}) does not meet the grid")]
    EmptyBox { x: f64, t: f64, r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Orientation {
    /// Zero/positive change between neighbouring nodes of one time slice.
    Spatial,
    /// Zero/positive change between consecutive levels of one column.
    Temporal,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Spatial => "spatial",
            Orientation::Temporal => "temporal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeBoundaryPoint {
    pub x: f64,
    pub t: f64,
    pub orientation: Orientation,
    /// `+1` if `u` becomes positive in the increasing coordinate direction
    /// (`x` for spatial points, `t` for temporal ones), `-1` otherwise.
    pub side: i8,
    /// Coefficient `q` of the local fit `u ≈ q (x - x0)^2`. For temporal
    /// points it is half the second difference at the nearest positive node.
    pub quad_coeff: f64,
    /// Time level the point is grouped under.
    pub slice: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FreeBoundarySet {
    pub points: Vec<FreeBoundaryPoint>,
    pub zero_tol: f64,
}

impl FreeBoundarySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points grouped under time level `n`.
    pub fn slice(&self, n: usize) -> impl Iterator<Item = &FreeBoundaryPoint> {
        self.points.iter().filter(move |p| p.slice == n)
    }

    /// Distinct time levels that carry at least one point, ascending.
    pub fn slices(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.points.iter().map(|p| p.slice).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Writes `t,x,orientation,side,quad_coeff`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,orientation,side,quad_coeff")?;
        for p in &self.points {
            writeln!(out, "{:.16e},{:.16e},{},{},{:.16e}", p.t, p.x, p.orientation, p.side, p.quad_coeff)?;
        }
        Ok(())
    }
}

/// `0.25 (delta / max a) h^2`: below the quadratic growth that `f >= delta`
/// forces at distance `h`.
pub fn default_zero_tol(coeffs: &CoefficientSet, grid: &GridSpec) -> Result<f64, FreeBoundaryError> {
    let mut max_a = f64::NEG_INFINITY;
    for n in 0..grid.nt {
        for i in 0..grid.nx {
            let a = coeffs.a.try_eval(grid.x(i), grid.t(n)).map_err(|source| CoeffError::Eval {
                name: "a",
                i,
                n,
                source,
            })?;
            max_a = max_a.max(a);
        }
    }
    let h = grid.h();
    Ok(0.25 * (coeffs.delta / max_a) * h * h)
}

/// Extracts the discrete free boundary. A node is zero iff `u <= zero_tol`.
pub fn extract(
    u: &Field,
    coeffs: &CoefficientSet,
    zero_tol: Option<f64>,
) -> Result<FreeBoundarySet, FreeBoundaryError> {
    let g = *u.grid();
    let tol = match zero_tol {
        Some(z) if !(z.is_finite() && z >= 0.0) => return Err(FreeBoundaryError::BadTolerance(z)),
        Some(z) => z,
        None => default_zero_tol(coeffs, &g)?,
    };
    Ok(extract_with_tol(u, tol))
}

pub(crate) fn extract_with_tol(u: &Field, tol: f64) -> FreeBoundarySet {
    let g = *u.grid();
    let (nx, nt, h, tau) = (g.nx, g.nt, g.h(), g.tau());
    let zero = |i: usize, n: usize| u.get(i, n) <= tol;
    let mut pts = Vec::new();

    for n in 0..nt {
        for i in 0..nx - 1 {
            let (zl, zr) = (zero(i, n), zero(i + 1, n));
            if zl == zr {
                continue;
            }
            let side: i8 = if zl { 1 } else { -1 };
            // up to three positive nodes walking away from the zero node
            let mut xs = Vec::with_capacity(3);
            let mut roots = Vec::with_capacity(3);
            for k in 0..3 {
                let j = if zl {
                    i + 1 + k
                } else {
                    match i.checked_sub(k) {
                        Some(j) => j,
                        None => break,
                    }
                };
                if j >= nx || zero(j, n) {
                    break;
                }
                xs.push(g.x(j));
                roots.push(u.get(j, n).sqrt());
            }
            let (a, b) = (g.x(i), g.x(i + 1));
            let (x0, q) = root_fit(&xs, &roots).unwrap_or_else(|| {
                let half = 0.5 * h;
                (0.5 * (a + b), roots[0] * roots[0] / (half * half))
            });
            // the discrete contact set may overshoot the front by up to a
            // cell, so the root may sit one cell into the zero side
            let (lo, hi) = if zl { (a - h, b) } else { (a, b + h) };
            pts.push(FreeBoundaryPoint {
                x: x0.clamp(lo.max(g.x_min), hi.min(g.x_max)),
                t: g.t(n),
                orientation: Orientation::Spatial,
                side,
                quad_coeff: q,
                slice: n,
            });
        }
    }

    for i in 0..nx {
        for n in 0..nt - 1 {
            let (zb, za) = (zero(i, n), zero(i, n + 1));
            if zb == za {
                continue;
            }
            let (lo, hi) = (g.t(n), g.t(n + 1));
            let t0 = if zb {
                // positive from n + 1 on; extrapolate backwards from n+1, n+2
                match (n + 2 < nt && !zero(i, n + 2)).then(|| (u.get(i, n + 2) - u.get(i, n + 1)) / tau) {
                    Some(s) if s > 0.0 => hi - u.get(i, n + 1) / s,
                    _ => 0.5 * (lo + hi),
                }
            } else {
                match (n >= 1 && !zero(i, n - 1)).then(|| (u.get(i, n) - u.get(i, n - 1)) / tau) {
                    Some(s) if s < 0.0 => lo - u.get(i, n) / s,
                    _ => 0.5 * (lo + hi),
                }
            };
            let t0 = t0.clamp(lo, hi);
            let pos_n = if zb { n + 1 } else { n };
            let quad = if i >= 1 && i + 1 < nx {
                0.5 * (u.get(i - 1, pos_n) - 2.0 * u.get(i, pos_n) + u.get(i + 1, pos_n)) / (h * h)
            } else {
                0.0
            };
            pts.push(FreeBoundaryPoint {
                x: g.x(i),
                t: t0,
                orientation: Orientation::Temporal,
                side: if zb { 1 } else { -1 },
                quad_coeff: quad,
                slice: g.nearest_n(t0),
            });
        }
    }

    pts.sort_by(|p, q| p.t.total_cmp(&q.t).then(p.x.total_cmp(&q.x)).then(p.orientation.cmp(&q.orientation)));
    let mut out: Vec<FreeBoundaryPoint> = Vec::with_capacity(pts.len());
    for p in pts {
        let dup = out
            .iter()
            .rev()
            .take_while(|q| p.t - q.t < 0.5 * tau)
            .any(|q| (p.x - q.x).abs() < 0.5 * h && p.t - q.t < 0.5 * tau);
        if !dup {
            out.push(p);
        }
    }
    FreeBoundarySet { points: out, zero_tol: tol }
}

/// Line fit of `sqrt(u)` against `x`; returns the root and the squared
/// slope, or `None` with fewer than two nodes or a flat fit.
fn root_fit(xs: &[f64], roots: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = roots.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(roots).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope != 0.0 && slope.is_finite()).then(|| (mx - my / slope, slope * slope))
}

/// Extremes of the discrete `u_t` over a parabolic box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtJump {
    pub sup_ut: f64,
    pub inf_ut: f64,
    pub jump: f64,
    /// Nodes that entered the extremes.
    pub nodes: usize,
}

/// Cached backward-difference `u_t` and zero mask of one field.
#[derive(Debug, Clone)]
pub struct UtProbe {
    grid: GridSpec,
    ut: Vec<f64>,
    zero: Vec<bool>,
}

impl UtProbe {
    pub fn new(u: &Field, zero_tol: f64) -> Result<Self, FreeBoundaryError> {
        if !(zero_tol.is_finite() && zero_tol >= 0.0) {
            return Err(FreeBoundaryError::BadTolerance(zero_tol));
        }
        let d = u.derived_fields()?;
        Ok(Self {
            grid: *u.grid(),
            ut: d.ut.values().to_vec(),
            zero: u.values().iter().map(|&v| v <= zero_tol).collect(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn min_radius(&self) -> f64 {
        2.0 * self.grid.h().max(self.grid.tau().sqrt())
    }

    pub fn ut(&self, i: usize, n: usize) -> f64 {
        self.ut[n * self.grid.nx + i]
    }

    /// Node index ranges of `Q_r(x0, t0) = [x0 - r, x0 + r] x [t0 - r^2, t0 + r^2]`
    /// clipped to the grid.
    fn window(&self, x0: f64, t0: f64, r: f64) -> Option<(usize, usize, usize, usize)> {
        let g = &self.grid;
        let (h, tau) = (g.h(), g.tau());
        let eps = 1e-9;
        let i0 = ((x0 - r - g.x_min) / h - eps).ceil().max(0.0);
        let i1 = ((x0 + r - g.x_min) / h + eps).floor().min((g.nx - 1) as f64);
        let n0 = ((t0 - r * r - g.t_min) / tau - eps).ceil().max(0.0);
        let n1 = ((t0 + r * r - g.t_min) / tau + eps).floor().min((g.nt - 1) as f64);
        (i0 <= i1 && n0 <= n1).then_some((i0 as usize, i1 as usize, n0 as usize, n1 as usize))
    }

    /// Whether the `u_t` stencil at `(i, n)` (with its space neighbours)
    /// straddles a zero/positive change.
    fn straddles(&self, i: usize, n: usize) -> bool {
        let g = &self.grid;
        let nb = if n == 0 { 1 } else { n - 1 };
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(g.nx - 1));
        let first = self.zero[n * g.nx + i];
        [n, nb].iter().any(|&k| (lo..=hi).any(|j| self.zero[k * g.nx + j] != first))
    }

    /// Sup, inf and oscillation of `u_t` over `Q_r(P0)` clipped to the box,
    /// skipping nodes whose stencil straddles the free boundary.
    pub fn jump(&self, x0: f64, t0: f64, r: f64) -> Result<UtJump, FreeBoundaryError> {
        let min = self.min_radius();
        if !(r >= min) {
            return Err(FreeBoundaryError::RadiusTooSmall { r, min });
        }
        let (i0, i1, n0, n1) = self.window(x0, t0, r).ok_or(FreeBoundaryError::EmptyBox { x: x0, t: t0, r })?;
        let mut out = UtJump { sup_ut: f64::NEG_INFINITY, inf_ut: f64::INFINITY, jump: 0.0, nodes: 0 };
        for n in n0..=n1 {
            for i in i0..=i1 {
                if self.straddles(i, n) {
                    continue;
                }
                let v = self.ut(i, n);
                out.sup_ut = out.sup_ut.max(v);
                out.inf_ut = out.inf_ut.min(v);
                out.nodes += 1;
            }
        }
        if out.nodes == 0 {
            return Err(FreeBoundaryError::EmptyBox { x: x0, t: t0, r });
        }
        out.jump = out.sup_ut - out.inf_ut;
        Ok(out)
    }

    /// Infimum of `u_t` over every node of `Q_r(P0)` clipped to the box.
    pub fn inf(&self, x0: f64, t0: f64, r: f64) -> Option<f64> {
        let (i0, i1, n0, n1) = self.window(x0, t0, r)?;
        let mut m = f64::INFINITY;
        for n in n0..=n1 {
            for i in i0..=i1 {
                m = m.min(self.ut(i, n));
            }
        }
        Some(m)
    }
}

/// `ut_jump` with zero meaning exactly zero.
pub fn ut_jump(u: &Field, x0: f64, t0: f64, r: f64) -> Result<UtJump, FreeBoundaryError> {
    UtProbe::new(u, 0.0)?.jump(x0, t0, r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiminfReport {
    /// `(r, inf u_t over Q_r)` for each radius actually used.
    pub values: Vec<(f64, f64)>,
    pub tol_pos: f64,
    pub pass: bool,
}

impl LiminfReport {
    pub fn final_inf(&self) -> f64 {
        self.values.last().map_or(f64::NAN, |v| v.1)
    }
}

/// `liminf u_t <= 0` at a boundary point, read off a shrinking ladder of
/// boxes. Radii below the resolvable minimum are raised to it; the check
/// passes iff the last infimum is at most `10 (h + tau)`.
pub fn liminf_ut_check(probe: &UtProbe, x0: f64, t0: f64, radii: &[f64]) -> LiminfReport {
    let g = probe.grid();
    let tol_pos = 10.0 * (g.h() + g.tau());
    let rmin = probe.min_radius();
    let mut radii: Vec<f64> = radii.iter().map(|r| r.max(rmin)).collect();
    if radii.is_empty() {
        radii.push(rmin);
    }
    radii.sort_by(|a, b| b.total_cmp(a));
    radii.dedup();
    let values: Vec<(f64, f64)> = radii.iter().filter_map(|&r| probe.inf(x0, t0, r).map(|v| (r, v))).collect();
    let pass = values.last().is_some_and(|v| v.1 <= tol_pos);
    LiminfReport { values, tol_pos, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_forms::ClosedForm;

    fn box_grid(nx: usize, nt: usize) -> GridSpec {
        GridSpec::new(-1.0, 1.0, nx, -1.0, 1.0, nt).unwrap()
    }

    #[test]
    fn half_space_boundary_is_the_axis() {
        let g = box_grid(101, 41);
        let u = ClosedForm::v_plus().field(&g).unwrap();
        let fb = extract(&u, &CoefficientSet::heat(), None).unwrap();
        assert_eq!(fb.len(), g.nt);
        let h = g.h();
        for p in &fb.points {
            assert_eq!(p.orientation, Orientation::Spatial);
            assert_eq!(p.side, 1);
            assert!(p.x.abs() <= h * h, "{}", p.x);
            assert!((p.quad_coeff - 0.5).abs() < 1e-10);
            assert!(u.sample(p.x, p.t).unwrap() <= fb.zero_tol);
        }
        assert!(fb.points.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn counterexample_boundary_is_horizontal() {
        let g = box_grid(41, 81);
        let u = ClosedForm::counterexample().field(&g).unwrap();
        let fb = extract(&u, &CoefficientSet::heat(), None).unwrap();
        assert_eq!(fb.len(), g.nx);
        for p in &fb.points {
            assert_eq!(p.orientation, Orientation::Temporal);
            assert_eq!(p.side, -1);
            assert!(p.t.abs() <= g.tau());
        }
        assert_eq!(fb.slices(), vec![g.nearest_n(0.0)]);
    }

    #[test]
    fn empty_for_trivial_fields() {
        let g = box_grid(21, 11);
        let zero = Field::from_fn(g, |_, _| 0.0).unwrap();
        let pos = Field::from_fn(g, |_, _| 1.0).unwrap();
        let heat = CoefficientSet::heat();
        assert!(extract(&zero, &heat, None).unwrap().is_empty());
        assert!(extract(&pos, &heat, None).unwrap().is_empty());
        assert!(matches!(extract(&pos, &heat, Some(-1.0)), Err(FreeBoundaryError::BadTolerance(_))));
    }

    #[test]
    fn parabola_recovered_for_half_family_member() {
        let g = box_grid(201, 201);
        let f = ClosedForm::v_m(-0.5).unwrap();
        let c = f.profile().unwrap().c_m;
        let u = f.field(&g).unwrap();
        let fb = extract(&u, &CoefficientSet::heat(), None).unwrap();
        let h = g.h();
        let mut seen = 0;
        for p in fb.points.iter().filter(|p| p.t > 4.0 * g.tau()) {
            // distance in x to the branch of t = c x^2 on the point's side
            let xb = (p.t / c).sqrt() * p.x.signum();
            assert!((p.x - xb).abs() <= 2.0 * h || (p.t - c * p.x * p.x).abs() <= 2.0 * g.tau(), "{p:?}");
            seen += 1;
        }
        assert!(seen > 100);
        // every grid slice above the vertex region sees both branches
        let n = g.nearest_n(0.5);
        assert_eq!(fb.slice(n).filter(|p| p.orientation == Orientation::Spatial).count(), 2);
    }

    #[test]
    fn jumps_of_closed_forms() {
        let g = box_grid(201, 801);
        let heat = ClosedForm::v_m(0.0).unwrap().field(&g).unwrap();
        assert_eq!(ut_jump(&heat, 0.0, 0.0, 0.5).unwrap().jump, 0.0);

        let ce = ClosedForm::counterexample().field(&g).unwrap();
        let j = ut_jump(&ce, 0.0, 0.0, 0.5).unwrap();
        assert!((j.jump - 1.0).abs() < 1e-9, "{j:?}");

        let vm = ClosedForm::v_m(-0.5).unwrap().field(&g).unwrap();
        let j = ut_jump(&vm, 0.0, 0.0, 0.25).unwrap();
        assert!((j.jump - 0.5).abs() < 1e-2, "{j:?}");
    }

    #[test]
    fn small_radius_rejected() {
        let g = box_grid(41, 41);
        let u = ClosedForm::v_plus().field(&g).unwrap();
        assert!(matches!(ut_jump(&u, 0.0, 0.0, 0.01), Err(FreeBoundaryError::RadiusTooSmall { .. })));
    }

    #[test]
    fn liminf_at_closed_form_points() {
        let g = box_grid(101, 401);
        let ladder = [0.5, 0.25, 0.125];
        let vp = UtProbe::new(&ClosedForm::v_plus().field(&g).unwrap(), 0.0).unwrap();
        let r = liminf_ut_check(&vp, 0.0, 0.0, &ladder);
        assert!(r.pass && r.final_inf() == 0.0);
        let ce = UtProbe::new(&ClosedForm::counterexample().field(&g).unwrap(), 0.0).unwrap();
        let r = liminf_ut_check(&ce, 0.0, 0.0, &ladder);
        assert!(r.pass && (r.final_inf() + 1.0).abs() < 1e-9);
        assert_eq!(r.values.len(), 3);
    }

    #[test]
    fn csv_layout() {
        let g = box_grid(21, 3);
        let u = ClosedForm::v_plus().field(&g).unwrap();
        let fb = extract(&u, &CoefficientSet::heat(), None).unwrap();
        let mut buf = Vec::new();
        fb.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,x,orientation,side,quad_coeff\n"));
        assert_eq!(s.lines().count(), 1 + fb.len());
        assert!(s.lines().nth(1).unwrap().contains(",spatial,1,"));
    }
}
