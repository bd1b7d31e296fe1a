//! Blow-up sequences `u^ε(x, t) = u(x0 + εx, t0 + ε²t) / ε²` at free-boundary
//! points, local re-solves, homogeneity defects and matching against the
//! global homogeneous solutions.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::coefficients::{validate, CoefficientSet};
use crate::energetics::{v_m_past, EnergyError, SlabSample};
use crate::grid::{Field, FieldSurface, GridError, GridSpec, Point, Surface};
use crate::lcp::{solve_with_data, SolveConfig, SolveError};

/// Number of family members scanned before golden-section refinement.
pub const FAMILY_SCAN: usize = 101;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlowupError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("scale {eps} maps the reference box outside the field; largest admissible scale is {max_eps}")]
    ScaleTooLarge { eps: f64, max_eps: f64 },
    #[error("scale must be positive and finite (got {0})")]
    BadScale(f64),
    #[error("refinement factor must be at least 1 (got {0})")]
    BadFactor(usize),
    #[error("local box around ({x}, {t}) at scale {eps} holds too few parent nodes")]
    BoxTooSmall { x: f64, t: f64, eps: f64 },
    #[error("reference box must contain t = -1 for profile matching")]
    NoUnitTime,
    #[error("candidate limit vanishes identically; matching needs a nonzero limit")]
    ZeroLimit,
}

/// Largest `ε` for which the image of `ref_box` stays inside `domain`.
pub fn max_scale(domain: &crate::grid::Rect, p0: Point, ref_box: &GridSpec) -> f64 {
    let mut e = f64::INFINITY;
    if ref_box.x_min < 0.0 {
        e = e.min((p0.x - domain.x_min) / -ref_box.x_min);
    }
    if ref_box.x_max > 0.0 {
        e = e.min((domain.x_max - p0.x) / ref_box.x_max);
    }
    if ref_box.t_min < 0.0 {
        e = e.min(((p0.t - domain.t_min) / -ref_box.t_min).max(0.0).sqrt());
    }
    if ref_box.t_max > 0.0 {
        e = e.min(((domain.t_max - p0.t) / ref_box.t_max).max(0.0).sqrt());
    }
    e.max(0.0)
}

/// Samples `u^ε` on the nodes of `ref_box`.
pub fn rescale<S: Surface + ?Sized>(u: &S, p0: Point, eps: f64, ref_box: &GridSpec) -> Result<Field, BlowupError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BlowupError::BadScale(eps));
    }
    if let Some(d) = u.domain() {
        let max_eps = max_scale(&d, p0, ref_box);
        if eps > max_eps * (1.0 + 1e-12) {
            return Err(BlowupError::ScaleTooLarge { eps, max_eps });
        }
    }
    let e2 = eps * eps;
    let mut vals = Vec::with_capacity(ref_box.len());
    for n in 0..ref_box.nt {
        let t = p0.t + e2 * ref_box.t(n);
        for i in 0..ref_box.nx {
            vals.push(u.value(p0.x + eps * ref_box.x(i), t)? / e2);
        }
    }
    Ok(Field::new(*ref_box, vals)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub field: Field,
    /// Max difference between the fine solution at parent nodes and `u`.
    pub restriction_error: f64,
}

/// Re-solves the obstacle problem on `[x0 - ε, x0 + ε] x [t0 - ε², t0 + ε²]`
/// (snapped to parent nodes, clipped to the parent box) with `h / factor`,
/// `tau / factor²` and Dirichlet data interpolated from `u`.
pub fn refine_local(
    coeffs: &CoefficientSet,
    u: &Field,
    p0: Point,
    eps: f64,
    factor: usize,
    cfg: &SolveConfig,
) -> Result<Refined, BlowupError> {
    if factor < 1 {
        return Err(BlowupError::BadFactor(factor));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BlowupError::BadScale(eps));
    }
    let g = u.grid();
    let (i0, i1) = (g.nearest_i(p0.x - eps), g.nearest_i(p0.x + eps));
    let (n0, n1) = (g.nearest_n(p0.t - eps * eps), g.nearest_n(p0.t + eps * eps));
    if i1 < i0 + 2 || n1 < n0 + 1 {
        return Err(BlowupError::BoxTooSmall { x: p0.x, t: p0.t, eps });
    }
    let f2 = factor * factor;
    let fine = GridSpec::new(g.x(i0), g.x(i1), (i1 - i0) * factor + 1, g.t(n0), g.t(n1), (n1 - n0) * f2 + 1)?;
    let report = validate(coeffs, &fine).map_err(SolveError::from)?;
    if let Some(msg) = report.failure() {
        return Err(SolveError::Validation(msg).into());
    }
    let initial =
        (0..fine.nx).map(|i| u.sample(fine.x(i), fine.t_min).map(|v| v.max(0.0))).collect::<Result<Vec<_>, _>>()?;
    let mut edges = Vec::with_capacity(fine.nt);
    for n in 0..fine.nt {
        let t = fine.t(n);
        edges.push((u.sample(fine.x_min, t)?.max(0.0), u.sample(fine.x_max, t)?.max(0.0)));
    }
    let field = solve_with_data(coeffs, &fine, &initial, |n| edges[n], cfg)?;
    let mut restriction_error: f64 = 0.0;
    for n in n0..=n1 {
        for i in i0..=i1 {
            let v = field.get((i - i0) * factor, (n - n0) * f2);
            restriction_error = restriction_error.max((v - u.get(i, n)).abs());
        }
    }
    Ok(Refined { field, restriction_error })
}

/// `∫∫_{t<0} |Lu|^2 G dx dt` over the nodes of the field's box, with `L`
/// and `G` centred at the origin; trapezoid rule in both variables.
pub fn homogeneity_defect(u: &Field) -> f64 {
    let g = u.grid();
    let d = u.derived_fields().expect("grid invariants guarantee nx >= 3");
    let levels: Vec<usize> = (0..g.nt).filter(|&n| g.t(n) < 0.0).collect();
    if levels.is_empty() {
        return 0.0;
    }
    let (h, tau) = (g.h(), g.tau());
    let mut total = 0.0;
    for (k, &n) in levels.iter().enumerate() {
        let t = g.t(n);
        let wt = if levels.len() > 1 && (k == 0 || k + 1 == levels.len()) { 0.5 * tau } else { tau };
        let s = -t;
        let norm = 1.0 / (2.0 * (std::f64::consts::PI * s).sqrt());
        let mut row = 0.0;
        for i in 0..g.nx {
            let x = g.x(i);
            let l = -2.0 * u.get(i, n) + x * d.ux.get(i, n) + 2.0 * t * d.ut.get(i, n);
            let wx = if i == 0 || i + 1 == g.nx { 0.5 * h } else { h };
            row += wx * l * l * norm * (-x * x / (4.0 * s)).exp();
        }
        total += wt * row;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LimitLabel {
    VPlus,
    VMinus,
    VM,
}

impl LimitLabel {
    pub fn is_half_space(self) -> bool {
        matches!(self, LimitLabel::VPlus | LimitLabel::VMinus)
    }
}

impl fmt::Display for LimitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitLabel::VPlus => "v_plus",
            LimitLabel::VMinus => "v_minus",
            LimitLabel::VM => "v_m",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileMatch {
    pub label: LimitLabel,
    /// Family parameter for `v_m` matches.
    pub m_hat: Option<f64>,
    /// `L^2(G)` distance at `t = -1`.
    pub distance: f64,
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
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
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Nearest global homogeneous solution to `u0` in `L^2(G)` at `t = -1`,
/// centred at the origin.
pub fn match_profile<S: Surface + ?Sized>(u0: &S) -> Result<ProfileMatch, BlowupError> {
    if let Some(d) = u0.domain() {
        if !d.contains(0.0, -1.0) {
            return Err(BlowupError::NoUnitTime);
        }
    }
    let slab = SlabSample::new(u0, Point::new(0.0, 0.0), -1.0)?;
    let scale = slab.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale <= 1e-12 {
        return Err(BlowupError::ZeroLimit);
    }
    let dist2 = |v: &dyn Fn(f64) -> f64| slab.integrate(|y, u| (u - v(y)).powi(2)).max(0.0);
    let fam = |m: f64| dist2(&|y| v_m_past(m, y, -1.0));
    let plus = dist2(&|y: f64| 0.5 * y.max(0.0).powi(2));
    let minus = dist2(&|y: f64| 0.5 * (-y).max(0.0).powi(2));

    let ms: Vec<f64> = (0..FAMILY_SCAN).map(|k| -1.0 + k as f64 / (FAMILY_SCAN - 1) as f64).collect();
    let (kbest, _) =
        ms.iter()
            .map(|&m| fam(m))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let lo = ms[kbest.saturating_sub(1)];
    let hi = ms[(kbest + 1).min(FAMILY_SCAN - 1)];
    let (m_hat, fam_best) = golden_min(fam, lo, hi, 1e-10);

    let mut best = ProfileMatch { label: LimitLabel::VM, m_hat: Some(m_hat), distance: fam_best };
    for (label, d) in [(LimitLabel::VPlus, plus), (LimitLabel::VMinus, minus)] {
        if d < best.distance {
            best = ProfileMatch { label, m_hat: None, distance: d };
        }
    }
    best.distance = best.distance.sqrt();
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderRung {
    pub eps: f64,
    pub defect: f64,
    pub matched: ProfileMatch,
    /// `u^ε` at the node nearest the origin.
    pub origin_value: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupLadder {
    pub p0: Point,
    /// Rungs in the order of decreasing `ε`.
    pub rungs: Vec<LadderRung>,
}

impl BlowupLadder {
    pub fn defects(&self) -> Vec<f64> {
        self.rungs.iter().map(|r| r.defect).collect()
    }

    pub fn defect_strictly_decreasing(&self) -> bool {
        self.rungs.windows(2).all(|w| w[1].defect < w[0].defect)
    }

    /// Whether all rungs with `defect < threshold` carry the same label.
    pub fn labels_agree_below(&self, threshold: f64) -> bool {
        let mut it = self.rungs.iter().filter(|r| r.defect < threshold).map(|r| r.matched.label);
        match it.next() {
            Some(first) => it.all(|l| l == first),
            None => true,
        }
    }

    /// Writes `eps,defect,label,m_hat,distance`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "eps,defect,label,m_hat,distance")?;
        for r in &self.rungs {
            let m = r.matched.m_hat.map_or(String::new(), |m| format!("{m:.16e}"));
            writeln!(out, "{:.16e},{:.16e},{},{},{:.16e}", r.eps, r.defect, r.matched.label, m, r.matched.distance)?;
        }
        Ok(())
    }
}

/// Rescales `u` at each `ε` onto `ref_box` and measures the rungs.
pub fn blowup_ladder<S: Surface + ?Sized>(
    u: &S,
    p0: Point,
    epsilons: &[f64],
    ref_box: &GridSpec,
) -> Result<BlowupLadder, BlowupError> {
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let rungs = eps
        .par_iter()
        .map(|&e| {
            let f = rescale(u, p0, e, ref_box)?;
            let defect = homogeneity_defect(&f);
            let origin_value = f.get(ref_box.nearest_i(0.0), ref_box.nearest_n(0.0));
            let max_abs = f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let matched = match_profile(&FieldSurface::new(f)?)?;
            Ok(LadderRung { eps: e, defect, matched, origin_value, max_abs })
        })
        .collect::<Result<Vec<_>, BlowupError>>()?;
    Ok(BlowupLadder { p0, rungs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_forms::ClosedForm;
    use crate::grid::{FnSurface, Jet};

    #[test]
    fn rescaling_closed_forms_is_exact() {
        let rb = GridSpec::new(-1.0, 1.0, 21, -1.0, 1.0, 11).unwrap();
        let vp = ClosedForm::v_plus();
        let direct = vp.field(&rb).unwrap();
        for eps in [0.5, 0.1, 3.0] {
            let r = rescale(&vp, Point::new(0.0, 0.0), eps, &rb).unwrap();
            assert!(r.max_abs_diff(&direct) < 1e-12);
        }
        let ce = ClosedForm::counterexample();
        let r = rescale(&ce, Point::new(3.0, 0.0), 0.1, &rb).unwrap();
        assert!(r.max_abs_diff(&ce.field(&rb).unwrap()) < 1e-12);
    }

    #[test]
    fn rescale_reports_max_scale() {
        let g = GridSpec::new(-1.0, 1.0, 41, -1.0, 1.0, 41).unwrap();
        let u = ClosedForm::v_plus().field(&g).unwrap();
        let s = FieldSurface::new(u).unwrap();
        let rb = GridSpec::new(-2.0, 2.0, 11, -1.0, 0.0, 5).unwrap();
        match rescale(&s, Point::new(0.0, 0.0), 0.6, &rb) {
            Err(BlowupError::ScaleTooLarge { max_eps, .. }) => assert!((max_eps - 0.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let r = rescale(&s, Point::new(0.0, 0.0), 0.5, &rb).unwrap();
        assert!(r.max_abs_diff(&ClosedForm::v_plus().field(&rb).unwrap()) < 1e-12);
    }

    #[test]
    fn bounded_derivatives_give_bounded_rescalings() {
        let g = GridSpec::new(-1.0, 1.0, 201, -1.0, 1.0, 201).unwrap();
        // |u_xx| <= 1, |u_t| <= 1, vanishing at the origin with zero gradient
        let u = Field::from_fn(g, |x, t| 0.5 * x.max(0.0).powi(2) + 0.5 * t.max(0.0)).unwrap();
        let s = FieldSurface::new(u).unwrap();
        let rb = GridSpec::new(-1.0, 1.0, 21, -1.0, 1.0, 21).unwrap();
        for eps in [0.8, 0.4, 0.2] {
            let r = rescale(&s, Point::new(0.0, 0.0), eps, &rb).unwrap();
            assert!(r.max() <= 1.0 + 1e-9, "{}", r.max());
        }
    }

    #[test]
    fn defect_of_homogeneous_and_quartic() {
        let rb = GridSpec::new(-6.0, 6.0, 241, -1.0, 0.0, 101).unwrap();
        for f in [ClosedForm::v_plus(), ClosedForm::v_m(-0.5).unwrap(), ClosedForm::v_m(-1.0).unwrap()] {
            let d = homogeneity_defect(&f.field(&rb).unwrap());
            assert!(d <= 1e-6, "{}: {d}", f.name());
        }
        let quartic = Field::from_fn(rb, |x, _| x.powi(4)).unwrap();
        let d = homogeneity_defect(&quartic);
        // independent value: ∫_{-1}^{0} ∫ 4 x^8 G dx dt = 4 * 1680 ∫ s^4 ds = 1344
        // (E x^8 = 105 (2s)^4 for variance 2s), minus the box truncation
        assert!(d > 1000.0 && d < 1344.0 * 1.01, "{d}");
    }

    #[test]
    fn matching_family_members() {
        let vm = ClosedForm::v_minus();
        let r = match_profile(&vm).unwrap();
        assert_eq!(r.label, LimitLabel::VMinus);
        assert!(r.distance <= 1e-8);

        let half = ClosedForm::v_m(-0.5).unwrap();
        let r = match_profile(&half).unwrap();
        assert_eq!(r.label, LimitLabel::VM);
        assert!((r.m_hat.unwrap() + 0.5).abs() < 1e-3);

        // v+ against v_0 alone: sqrt(3/2)
        let slab = SlabSample::new(&ClosedForm::v_plus(), Point::new(0.0, 0.0), -1.0).unwrap();
        let d = slab.integrate(|y, u| (u - 0.5 * y * y).powi(2)).sqrt();
        assert!((d - 1.5f64.sqrt()).abs() < 1e-8);

        let zero = FnSurface(|_: f64, _: f64| Jet::default());
        assert_eq!(match_profile(&zero), Err(BlowupError::ZeroLimit));
    }

    #[test]
    fn family_separation() {
        let forms = [
            ClosedForm::v_plus(),
            ClosedForm::v_minus(),
            ClosedForm::v_m(0.0).unwrap(),
            ClosedForm::v_m(-1.0).unwrap(),
        ];
        for a in &forms {
            let s = SlabSample::new(a, Point::new(0.0, 0.0), -1.0).unwrap();
            for b in &forms {
                if a.name() == b.name() {
                    continue;
                }
                let d = s.integrate(|y, u| (u - b.eval(y, -1.0)).powi(2)).sqrt();
                assert!(d >= 1.0, "{} vs {}: {d}", a.name(), b.name());
            }
        }
    }

    #[test]
    fn ladder_on_closed_form_field() {
        let g = GridSpec::new(-4.0, 4.0, 401, -2.0, 1.0, 301).unwrap();
        let s = FieldSurface::new(ClosedForm::v_plus().field(&g).unwrap()).unwrap();
        let rb = GridSpec::new(-4.0, 4.0, 161, -1.0, 0.0, 41).unwrap();
        let lad = blowup_ladder(&s, Point::new(0.0, 0.0), &[0.25, 1.0, 0.5], &rb).unwrap();
        assert_eq!(lad.rungs.iter().map(|r| r.eps).collect::<Vec<_>>(), vec![1.0, 0.5, 0.25]);
        for r in &lad.rungs {
            assert_eq!(r.matched.label, LimitLabel::VPlus);
            assert_eq!(r.origin_value, 0.0);
        }
        assert!(lad.labels_agree_below(0.01));
        let mut buf = Vec::new();
        lad.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("eps,defect,label,m_hat,distance\n"));
        assert!(s.lines().nth(1).unwrap().contains(",v_plus,,"));
    }

    #[test]
    fn refining_exact_data_reproduces_it() {
        let g = GridSpec::new(-1.0, 1.0, 41, -1.0, 1.0, 161).unwrap();
        let u = ClosedForm::v_plus().field(&g).unwrap();
        let cfg = SolveConfig::default();
        let r = refine_local(&CoefficientSet::heat(), &u, Point::new(0.0, 0.0), 0.4, 2, &cfg).unwrap();
        let fg = r.field.grid();
        assert!((fg.h() - g.h() / 2.0).abs() < 1e-14);
        assert!((fg.tau() - g.tau() / 4.0).abs() < 1e-14);
        let exact = ClosedForm::v_plus().field(fg).unwrap();
        let err = r.field.max_abs_diff(&exact);
        assert!(err <= 2.0 * fg.h() * fg.h(), "{err}");
        assert!(r.restriction_error <= 2.0 * fg.h() * fg.h());
    }
}
