//! Regular/singular classification of free-boundary points by the energy
//! dichotomy, estimation of `m` at singular points, and smooth-fit reports
//! on the continuity of `u_t`.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::blowup::BlowupError;
use crate::coefficients::{CoeffError, CoefficientSet};
use crate::energetics::{energy_trace, phi, v_m_past, Calibration, EnergyError, EnergyTrace, SlabSample};
use crate::expr::Expr;
use crate::free_boundary::{liminf_ut_check, FreeBoundaryError, FreeBoundarySet, LiminfReport, UtProbe};
use crate::grid::{Field, FieldSurface, GridError, GridSpec, Point};

/// Slices whose largest boundary jump exceeds this count as bad.
pub const THETA_JUMP: f64 = 0.1;

/// Half-width of the ambiguous band around the calibrated midpoint, as a
/// fraction of the midpoint.
pub const UNRESOLVED_BAND: f64 = 0.1;

/// Largest allowed disagreement between the two `m` estimators.
pub const M_AGREEMENT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    FreeBoundary(#[from] FreeBoundaryError),
    #[error(transparent)]
    Blowup(#[from] BlowupError),
    #[error("point ({x}, {t}) lies outside the box")]
    Outside { x: f64, t: f64 },
    #[error("non-degeneracy fails at ({x}, {t}): a = {a}, f = {f}, delta = {delta}")]
    Degenerate { x: f64, t: f64, a: f64, f: f64, delta: f64 },
    #[error("admissible box around ({x}, {t}) is too small: no time offsets in [{lo}, {hi}]")]
    BoxTooSmall { x: f64, t: f64, lo: f64, hi: f64 },
}

/// Largest coefficient deviation from the frozen values over the box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Drift {
    /// `max |a - a0| / a0`.
    pub a: f64,
    /// `max |f - f0| / f0`.
    pub f: f64,
    pub b: f64,
    pub c: f64,
}

impl Drift {
    pub fn is_zero(&self) -> bool {
        self.a == 0.0 && self.f == 0.0 && self.b == 0.0 && self.c == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    /// `ũ(x, t) = u(x0 + sqrt(a0) x, t0 + t) / f0` on the mapped grid.
    pub field: Field,
    pub a0: f64,
    pub f0: f64,
    pub drift: Drift,
}

/// Freezes the coefficients at `p0` and maps `u` to the constant-coefficient
/// form `ũ_xx - ũ_t = 1{ũ > 0}` (up to drift), with `p0` at the origin.
/// The map is affine on each axis, so the new grid is again uniform and no
/// interpolation is involved.
pub fn normalize_at(u: &Field, coeffs: &CoefficientSet, p0: Point) -> Result<Normalized, ClassifyError> {
    let g = u.grid();
    if !g.contains(p0.x, p0.t) {
        return Err(ClassifyError::Outside { x: p0.x, t: p0.t });
    }
    let v0 = coeffs.eval(p0.x, p0.t);
    if !(v0.a >= coeffs.delta && v0.f >= coeffs.delta) {
        return Err(ClassifyError::Degenerate { x: p0.x, t: p0.t, a: v0.a, f: v0.f, delta: coeffs.delta });
    }
    let s = v0.a.sqrt();
    let ng = GridSpec::new((g.x_min - p0.x) / s, (g.x_max - p0.x) / s, g.nx, g.t_min - p0.t, g.t_max - p0.t, g.nt)?;
    let field = Field::new(ng, u.values().iter().map(|v| v / v0.f).collect())?;
    let mut drift = Drift::default();
    for n in 0..g.nt {
        for i in 0..g.nx {
            let (x, t) = (g.x(i), g.t(n));
            let e = |name: &'static str, ex: &Expr| {
                ex.try_eval(x, t).map_err(|source| CoeffError::Eval { name, i, n, source })
            };
            drift.a = drift.a.max((e("a", &coeffs.a)? - v0.a).abs() / v0.a);
            drift.f = drift.f.max((e("f", &coeffs.f)? - v0.f).abs() / v0.f);
            drift.b = drift.b.max(e("b", &coeffs.b)?.abs());
            drift.c = drift.c.max(e("c", &coeffs.c)?.abs());
        }
    }
    Ok(Normalized { field, a0: v0.a, f0: v0.f, drift })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointLabel {
    Regular,
    Singular,
    Unresolved,
}

impl fmt::Display for PointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointLabel::Regular => "regular",
            PointLabel::Singular => "singular",
            PointLabel::Unresolved => "unresolved",
        })
    }
}

/// Label from an extrapolated energy, against the calibrated values.
pub fn label_energy(e0: f64, cal: &Calibration) -> PointLabel {
    let mid = cal.midpoint();
    if !e0.is_finite() || (e0 - mid).abs() <= UNRESOLVED_BAND * mid.abs() {
        PointLabel::Unresolved
    } else if (e0 - cal.regular).abs() < (e0 - cal.singular).abs() {
        PointLabel::Regular
    } else {
        PointLabel::Singular
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flag {
    /// The two `m` estimators differ by more than [`M_AGREEMENT`].
    MMismatch,
    /// `Φ^{v_m}` increased along the trace by more than its tolerance.
    PhiIncreasing,
    /// The `liminf u_t <= 0` check failed.
    LiminfFailed,
    /// Coefficients vary over the box; energies carry drift.
    CoefficientDrift,
    /// Gaussian tail dropped by box truncation is not negligible.
    Truncated,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::MMismatch => "m_mismatch",
            Flag::PhiIncreasing => "phi_increasing",
            Flag::LiminfFailed => "liminf_failed",
            Flag::CoefficientDrift => "coefficient_drift",
            Flag::Truncated => "truncated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOptions {
    /// Negative time offsets (normalized units); `None` picks a geometric
    /// ladder from the admissible range.
    pub t_ladder: Option<Vec<f64>>,
    /// Radii for the `u_t` jump ladder (original units); `None` uses
    /// `4, 2, 1` times the resolvable minimum.
    pub radii: Option<Vec<f64>>,
    /// Tolerance for `Φ` monotonicity.
    pub phi_tol: f64,
    /// Tail bound above which the trace is flagged as truncated.
    pub tail_tol: f64,
    /// Number of points of the automatic ladder.
    pub ladder_len: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { t_ladder: None, radii: None, phi_tol: 1e-4, tail_tol: 1e-3, ladder_len: 6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointDiagnosis {
    pub point: Point,
    /// Extrapolated `E(0-)` of the normalized field.
    pub e0: f64,
    pub label: PointLabel,
    /// `Φ`-minimizing `m` (singular points).
    pub m_hat: Option<f64>,
    /// One-sided `u_t` just before `t0` (normalized).
    pub m_ut: Option<f64>,
    /// `(r, jump)` ladder of `u_t` oscillation.
    pub jumps: Vec<(f64, f64)>,
    /// `Φ^{v_{m_hat}}` non-increasing along the trace (singular points).
    pub phi_monotone: Option<bool>,
    pub liminf: LiminfReport,
    pub trace: EnergyTrace,
    pub drift: Drift,
    pub flags: Vec<Flag>,
}

/// Automatic ladder: `|t|` from `min(T, w^2 / 72)` down to
/// `max(16 h^2, tau)` where `w` is the distance to the nearer space edge
/// and `T` the elapsed time, all in normalized units.
pub fn auto_ladder(g: &GridSpec, len: usize) -> Result<Vec<f64>, ClassifyError> {
    let w = (-g.x_min).min(g.x_max);
    let hi = (-g.t_min).min(w * w / 72.0);
    let lo = (16.0 * g.h() * g.h()).max(g.tau());
    if !(hi >= 2.0 * lo) {
        return Err(ClassifyError::BoxTooSmall { x: 0.0, t: 0.0, lo, hi });
    }
    let len = len.max(3);
    let ratio = (lo / hi).powf(1.0 / (len - 1) as f64);
    Ok((0..len).map(|k| -hi * ratio.powi(k as i32)).collect())
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-9 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// One-sided `u_t` below `(0, 0)` on a normalized field: mean of the
/// backward differences at the nearest column over up to three levels
/// strictly before `t = 0`.
fn one_sided_ut(field: &Field) -> Option<f64> {
    let g = field.grid();
    let i = g.nearest_i(0.0);
    let n0 = g.nearest_n(0.0);
    let levels: Vec<usize> = (n0.saturating_sub(3)..n0).filter(|&n| n >= 1).collect();
    if levels.is_empty() {
        return None;
    }
    let tau = g.tau();
    let s: f64 = levels.iter().map(|&n| (field.get(i, n) - field.get(i, n - 1)) / tau).sum();
    Some(s / levels.len() as f64)
}

/// Runs the diagnosis pipeline at one boundary point. `probe` must be built
/// from the same `u`.
pub fn classify_point(
    u: &Field,
    probe: &UtProbe,
    coeffs: &CoefficientSet,
    p0: Point,
    opts: &ClassifyOptions,
) -> Result<PointDiagnosis, ClassifyError> {
    let norm = normalize_at(u, coeffs, p0)?;
    let ng = *norm.field.grid();
    let ladder = match &opts.t_ladder {
        Some(l) => l.clone(),
        None => auto_ladder(&ng, opts.ladder_len).map_err(|e| match e {
            ClassifyError::BoxTooSmall { lo, hi, .. } => ClassifyError::BoxTooSmall { x: p0.x, t: p0.t, lo, hi },
            e => e,
        })?,
    };
    let surf = FieldSurface::new(norm.field.clone())?;
    let origin = Point::new(0.0, 0.0);
    let trace = energy_trace(&surf, origin, &ladder, &[])?;
    let cal = Calibration::get();
    let label = label_energy(trace.e0, &cal);
    let mut flags = Vec::new();
    if !norm.drift.is_zero() {
        flags.push(Flag::CoefficientDrift);
    }
    if trace.records.iter().any(|r| r.tail_bound > opts.tail_tol) {
        flags.push(Flag::Truncated);
    }

    let (mut m_hat, mut m_ut, mut phi_monotone) = (None, None, None);
    if label == PointLabel::Singular {
        let t_small = trace.records.last().map(|r| r.t).unwrap_or(-1.0);
        let slab = SlabSample::new(&surf, origin, t_small)?;
        let cost = |m: f64| {
            slab.integrate(|y, v| {
                let d = v - v_m_past(m, y, t_small);
                d * d
            })
        };
        let inner = golden_min(cost, -1.0, 0.0);
        // the minimum may sit on an endpoint of [-1, 0]
        let best = [inner, -1.0, 0.0].into_iter().min_by(|a, b| cost(*a).total_cmp(&cost(*b))).unwrap_or(inner);
        m_hat = Some(best);
        m_ut = one_sided_ut(&norm.field);
        if let Some(mu) = m_ut {
            if (mu - best).abs() > M_AGREEMENT {
                flags.push(Flag::MMismatch);
            }
        }
        let phis = trace
            .records
            .iter()
            .map(|r| phi(&surf, origin, best, r.t).map(|q| q.value))
            .collect::<Result<Vec<_>, _>>()?;
        let mono = phis.windows(2).all(|w| w[1] - w[0] <= opts.phi_tol);
        if !mono {
            flags.push(Flag::PhiIncreasing);
        }
        phi_monotone = Some(mono);
    }

    let rmin = probe.min_radius();
    let radii = opts.radii.clone().unwrap_or_else(|| vec![4.0 * rmin, 2.0 * rmin, rmin]);
    let mut jumps = Vec::with_capacity(radii.len());
    for &r in &radii {
        let j = probe.jump(p0.x, p0.t, r.max(rmin))?;
        jumps.push((r.max(rmin), j.jump));
    }
    let liminf = liminf_ut_check(probe, p0.x, p0.t, &radii);
    if !liminf.pass {
        flags.push(Flag::LiminfFailed);
    }
    Ok(PointDiagnosis {
        point: p0,
        e0: trace.e0,
        label,
        m_hat,
        m_ut,
        jumps,
        phi_monotone,
        liminf,
        trace,
        drift: norm.drift,
        flags,
    })
}

/// Diagnoses several points in parallel; results are sorted by `(t, x)`.
/// Points whose admissible box is too small are returned as errors in place.
pub fn classify_points(
    u: &Field,
    coeffs: &CoefficientSet,
    points: &[Point],
    zero_tol: f64,
    opts: &ClassifyOptions,
) -> Result<Vec<Result<PointDiagnosis, ClassifyError>>, ClassifyError> {
    let probe = UtProbe::new(u, zero_tol)?;
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.x.total_cmp(&b.x)));
    Ok(pts.par_iter().map(|&p| classify_point(u, &probe, coeffs, p, opts)).collect())
}

/// Writes `t,x,E0,label,m_hat,jump_r1,...,flags`.
pub fn write_diagnoses_csv<W: Write>(diags: &[PointDiagnosis], mut out: W) -> std::io::Result<()> {
    let k = diags.iter().map(|d| d.jumps.len()).max().unwrap_or(0);
    write!(out, "t,x,E0,label,m_hat")?;
    for j in 1..=k {
        write!(out, ",jump_r{j}")?;
    }
    writeln!(out, ",flags")?;
    for d in diags {
        let m = d.m_hat.map_or(String::new(), |m| format!("{m:.16e}"));
        write!(out, "{:.16e},{:.16e},{:.16e},{},{}", d.point.t, d.point.x, d.e0, d.label, m)?;
        for j in 0..k {
            match d.jumps.get(j) {
                Some((_, v)) => write!(out, ",{v:.16e}")?,
                None => write!(out, ",")?,
            }
        }
        let flags: Vec<String> = d.flags.iter().map(|f| f.to_string()).collect();
        writeln!(out, ",{}", flags.join(";"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RadiusLadder {
    Absolute(Vec<f64>),
    /// Multiples of the resolvable minimum `2 max(h, sqrt(tau))`.
    GridMultiples(Vec<f64>),
}

impl RadiusLadder {
    pub fn radii(&self, probe: &UtProbe) -> Vec<f64> {
        let rmin = probe.min_radius();
        match self {
            RadiusLadder::Absolute(r) => r.iter().map(|r| r.max(rmin)).collect(),
            RadiusLadder::GridMultiples(k) => k.iter().map(|k| (k * rmin).max(rmin)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointJumps {
    pub point: Point,
    pub slice: usize,
    /// `(r, jump)` with radii decreasing.
    pub jumps: Vec<(f64, f64)>,
}

impl PointJumps {
    /// Jump at the smallest radius.
    pub fn finest(&self) -> f64 {
        self.jumps.last().map_or(0.0, |j| j.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFitReport {
    pub points: Vec<PointJumps>,
    /// `(slice, max finest jump)` for every slice carrying points.
    pub slice_max: Vec<(usize, f64)>,
    /// Slices with max jump above [`THETA_JUMP`], divided by `nt`.
    pub bad_slice_fraction: f64,
    pub bad_slices: Vec<usize>,
    pub min_ut: f64,
    /// Set when `min u_t >= -ut_tol` over the box.
    pub monotone_in_time: bool,
    /// Largest finest-radius jump over all points.
    pub global_max_jump: f64,
}

/// Jump ladders at every boundary point and their per-slice summary.
pub fn smoothfit_report(
    u: &Field,
    gamma: &FreeBoundarySet,
    ladder: &RadiusLadder,
    ut_tol: f64,
) -> Result<SmoothFitReport, ClassifyError> {
    let probe = UtProbe::new(u, gamma.zero_tol)?;
    let radii = {
        let mut r = ladder.radii(&probe);
        r.sort_by(|a, b| b.total_cmp(a));
        r
    };
    let points = gamma
        .points
        .par_iter()
        .map(|p| {
            let jumps =
                radii.iter().map(|&r| probe.jump(p.x, p.t, r).map(|j| (r, j.jump))).collect::<Result<Vec<_>, _>>()?;
            Ok(PointJumps { point: Point::new(p.x, p.t), slice: p.slice, jumps })
        })
        .collect::<Result<Vec<_>, FreeBoundaryError>>()?;
    let mut slice_max: Vec<(usize, f64)> = Vec::new();
    for p in &points {
        match slice_max.iter_mut().find(|s| s.0 == p.slice) {
            Some(s) => s.1 = s.1.max(p.finest()),
            None => slice_max.push((p.slice, p.finest())),
        }
    }
    slice_max.sort_by_key(|s| s.0);
    let bad_slices: Vec<usize> = slice_max.iter().filter(|s| s.1 > THETA_JUMP).map(|s| s.0).collect();
    let nt = u.grid().nt;
    let d = u.derived_fields()?;
    let min_ut = d.ut.min();
    let global_max_jump = points.iter().map(PointJumps::finest).fold(0.0, f64::max);
    Ok(SmoothFitReport {
        bad_slice_fraction: bad_slices.len() as f64 / nt as f64,
        bad_slices,
        slice_max,
        points,
        min_ut,
        monotone_in_time: min_ut >= -ut_tol,
        global_max_jump,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_forms::ClosedForm;
    use crate::free_boundary::extract;

    fn diagnose(form: &ClosedForm, g: GridSpec, p0: Point) -> PointDiagnosis {
        let u = form.field(&g).unwrap();
        let probe = UtProbe::new(&u, 0.0).unwrap();
        classify_point(&u, &probe, &CoefficientSet::heat(), p0, &ClassifyOptions::default()).unwrap()
    }

    #[test]
    fn normalization_identity_and_scaling() {
        let g = GridSpec::new(-1.0, 1.0, 21, -1.0, 1.0, 11).unwrap();
        let u = ClosedForm::v_plus().field(&g).unwrap();
        let n = normalize_at(&u, &CoefficientSet::heat(), Point::new(0.0, 0.0)).unwrap();
        assert_eq!(n.field.values(), u.values());
        assert!(n.drift.is_zero());

        // a = 4, f = 2, u = 2 v+(x / 2, t)
        let g = GridSpec::new(-2.0, 2.0, 41, -1.0, 1.0, 11).unwrap();
        let u = Field::from_fn(g, |x, _| 2.0 * 0.5 * (x / 2.0).max(0.0).powi(2)).unwrap();
        let c = CoefficientSet::constant(4.0, 0.0, 0.0, 2.0, 1.0);
        let n = normalize_at(&u, &c, Point::new(0.0, 0.0)).unwrap();
        let want = ClosedForm::v_plus().field(n.field.grid()).unwrap();
        assert!(n.field.max_abs_diff(&want) < 1e-15);
        assert_eq!(n.field.grid().x_max, 1.0);

        let c = CoefficientSet::parse("1 + 0.1*x", "0", "0", "1", 0.5).unwrap();
        let g = GridSpec::new(-1.0, 1.0, 21, -1.0, 1.0, 11).unwrap();
        let n = normalize_at(&ClosedForm::v_plus().field(&g).unwrap(), &c, Point::new(0.0, 0.3)).unwrap();
        assert_eq!(n.a0, 1.0);
        assert!((n.drift.a - 0.1).abs() < 1e-12);
    }

    #[test]
    fn normalization_rejects_degenerate_points() {
        let g = GridSpec::new(-1.0, 1.0, 21, -1.0, 1.0, 11).unwrap();
        let u = ClosedForm::v_plus().field(&g).unwrap();
        let c = CoefficientSet::parse("1", "0", "0", "x + 1", 0.5).unwrap();
        assert!(matches!(normalize_at(&u, &c, Point::new(-0.9, 0.0)), Err(ClassifyError::Degenerate { .. })));
        assert!(matches!(normalize_at(&u, &c, Point::new(3.0, 0.0)), Err(ClassifyError::Outside { .. })));
    }

    #[test]
    fn energy_labels() {
        let cal = Calibration::get();
        assert_eq!(label_energy(0.5, &cal), PointLabel::Regular);
        assert_eq!(label_energy(1.0, &cal), PointLabel::Singular);
        assert_eq!(label_energy(0.74, &cal), PointLabel::Unresolved);
        assert_eq!(label_energy(f64::NAN, &cal), PointLabel::Unresolved);
    }

    #[test]
    fn closed_form_points() {
        let g = GridSpec::new(-1.0, 1.0, 201, -1.0, 1.0, 401).unwrap();
        let d = diagnose(&ClosedForm::v_plus(), g, Point::new(0.0, 0.0));
        assert_eq!(d.label, PointLabel::Regular, "{}", d.e0);
        assert!(d.m_hat.is_none());
        assert!(d.liminf.pass);

        let d = diagnose(&ClosedForm::counterexample(), g, Point::new(0.1, 0.0));
        assert_eq!(d.label, PointLabel::Singular, "{}", d.e0);
        assert!((d.m_hat.unwrap() + 1.0).abs() < 0.05);
        assert!((d.m_ut.unwrap() + 1.0).abs() < 1e-9);
        assert_eq!(d.phi_monotone, Some(true));
        assert!(!d.flags.contains(&Flag::MMismatch));
        assert!(d.liminf.pass);

        let d = diagnose(&ClosedForm::v_m(0.0).unwrap(), g, Point::new(0.0, 0.5));
        assert_eq!(d.label, PointLabel::Singular, "{}", d.e0);
        assert!(d.m_hat.unwrap().abs() < 0.05);
        assert!(d.flags.is_empty(), "{:?}", d.flags);
    }

    #[test]
    fn smoothfit_of_closed_forms() {
        let g = GridSpec::new(-1.0, 1.0, 41, -1.0, 1.0, 81).unwrap();
        let heat = CoefficientSet::heat();
        let ladder = RadiusLadder::GridMultiples(vec![4.0, 2.0, 1.0]);

        let u = ClosedForm::v_m(0.0).unwrap().field(&g).unwrap();
        let fb = extract(&u, &heat, None).unwrap();
        let r = smoothfit_report(&u, &fb, &ladder, 1e-6).unwrap();
        assert!(r.global_max_jump == 0.0 && r.monotone_in_time);
        assert_eq!(r.bad_slice_fraction, 0.0);

        let u = ClosedForm::counterexample().field(&g).unwrap();
        let fb = extract(&u, &heat, None).unwrap();
        let r = smoothfit_report(&u, &fb, &ladder, 1e-6).unwrap();
        assert_eq!(r.bad_slices, vec![g.nearest_n(0.0)]);
        assert!((r.global_max_jump - 1.0).abs() < 1e-9);
        assert!((r.bad_slice_fraction - 1.0 / g.nt as f64).abs() < 1e-15);
        assert!(!r.monotone_in_time);
    }

    #[test]
    fn diagnosis_csv_layout() {
        let g = GridSpec::new(-1.0, 1.0, 201, -1.0, 1.0, 401).unwrap();
        let d = diagnose(&ClosedForm::counterexample(), g, Point::new(0.0, 0.0));
        let mut buf = Vec::new();
        write_diagnoses_csv(&[d], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,x,E0,label,m_hat,jump_r1,jump_r2,jump_r3,flags\n"));
        assert!(s.lines().nth(1).unwrap().contains(",singular,"));
    }
}
