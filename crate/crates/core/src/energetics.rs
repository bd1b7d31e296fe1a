//! Backward heat kernel, the monotone energy `E(t; u)`, the scaling
//! operator `Lu = -2u + x u_x + 2t u_t` and the singular-point functional
//! `Φ^{v_m}`, evaluated by Gaussian-weighted quadrature.
//!
//! All functionals are centred at a base point `P0 = (x0, t0)`: the offset
//! `t < 0` refers to the time `t0 + t` and `x` is measured from `x0`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use thiserror::Error;

use crate::closed_forms::ClosedForm;
use crate::grid::{GridError, Jet, Point, Surface};

/// Truncation radius in units of the kernel's standard deviation `sqrt(2|t|)`.
pub const TRUNCATION_SIGMAS: f64 = 8.0;

/// Upper bound on quadrature nodes per slab.
const MAX_NODES: usize = 400_001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("time offset must be negative (got {0})")]
    NonNegativeTime(f64),
    #[error("slab at offset t = {t} leaves the box; largest admissible |t| is {max_abs_t}")]
    Inadmissible { t: f64, max_abs_t: f64 },
    #[error("base point ({x}, {t}) lies outside the box")]
    BaseOutside { x: f64, t: f64 },
    #[error("family parameter m = {0} outside [-1, 0]")]
    BadM(f64),
    #[error("trace needs at least 3 admissible times (got {0})")]
    TooFewTimes(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `G(x, t) = exp(-x^2 / (4|t|)) / (2 sqrt(pi |t|))` for `t < 0`.
pub fn heat_kernel(x: f64, t: f64) -> Result<f64, EnergyError> {
    if !(t < 0.0) {
        return Err(EnergyError::NonNegativeTime(t));
    }
    Ok(kernel(x, t))
}

fn kernel(x: f64, t: f64) -> f64 {
    let s = -t;
    (-x * x / (4.0 * s)).exp() / (2.0 * (PI * s).sqrt())
}

/// Symmetric slab `[x0 - R, x0 + R]` at time `t0 + t` with Simpson weights.
#[derive(Debug, Clone)]
struct Slab {
    t: f64,
    ys: Vec<f64>,
    weights: Vec<f64>,
    radius: f64,
}

fn slab<S: Surface + ?Sized>(u: &S, p0: Point, t: f64) -> Result<Slab, EnergyError> {
    if !(t < 0.0) {
        return Err(EnergyError::NonNegativeTime(t));
    }
    let mut radius = TRUNCATION_SIGMAS * (2.0 * -t).sqrt();
    if let Some(r) = u.domain() {
        if !r.contains(p0.x, p0.t) {
            return Err(EnergyError::BaseOutside { x: p0.x, t: p0.t });
        }
        if !r.contains(p0.x, p0.t + t) {
            return Err(EnergyError::Inadmissible { t, max_abs_t: p0.t - r.t_min });
        }
        radius = radius.min(p0.x - r.x_min).min(r.x_max - p0.x);
    }
    let mut step = (-t).sqrt() / 64.0;
    if let Some(h) = u.resolution() {
        step = step.min(0.5 * h);
    }
    let half = ((radius / step).ceil() as usize).clamp(1, MAX_NODES / 2);
    let half = half + half % 2;
    let s = radius / half as f64;
    let n = 2 * half + 1;
    let ys: Vec<f64> = (0..n).map(|k| (k as f64 - half as f64) * s).collect();
    let weights = (0..n)
        .map(|k| {
            let w = if k == 0 || k == n - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * s / 3.0
        })
        .collect();
    Ok(Slab { t, ys, weights, radius })
}

fn jets<S: Surface + ?Sized>(u: &S, p0: Point, sl: &Slab) -> Result<Vec<Jet>, EnergyError> {
    sl.ys.iter().map(|&y| u.jet(p0.x + y, p0.t + sl.t).map_err(EnergyError::from)).collect()
}

/// `Lu = -2u + y u_x + 2t u_t` in coordinates centred at the base point.
pub fn scaling_operator<S: Surface + ?Sized>(u: &S, p0: Point, y: f64, t: f64) -> Result<f64, EnergyError> {
    let j = u.jet(p0.x + y, p0.t + t)?;
    Ok(l_of(j, y, t))
}

fn l_of(j: Jet, y: f64, t: f64) -> f64 {
    -2.0 * j.u + y * j.ux + 2.0 * t * j.ut
}

fn energy_density(j: Jet, t: f64) -> f64 {
    (j.ux * j.ux + 2.0 * j.u) / (-t) - j.u * j.u / (t * t)
}

/// A quadrature value with an estimate of the dropped Gaussian tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub tail_bound: f64,
    /// Half-width of the integration slab.
    pub radius: f64,
}

fn integrate(sl: &Slab, dens: impl Fn(usize) -> f64) -> Quadrature {
    let mut value = 0.0;
    let mut peak: f64 = 0.0;
    for (k, (&y, &w)) in sl.ys.iter().zip(&sl.weights).enumerate() {
        let d = dens(k);
        peak = peak.max(d.abs());
        value += w * d * kernel(y, sl.t);
    }
    // mass of G beyond |y| = R
    let tail = libm::erfc(sl.radius / (2.0 * (-sl.t).sqrt()));
    Quadrature { value, tail_bound: peak * tail, radius: sl.radius }
}

/// `E(t; u)` by composite Simpson quadrature.
pub fn energy<S: Surface + ?Sized>(u: &S, p0: Point, t: f64) -> Result<Quadrature, EnergyError> {
    let sl = slab(u, p0, t)?;
    let js = jets(u, p0, &sl)?;
    Ok(integrate(&sl, |k| energy_density(js[k], t)))
}

/// `∫ |Lu|^2 G dx` at offset `t`.
pub fn l_norm<S: Surface + ?Sized>(u: &S, p0: Point, t: f64) -> Result<Quadrature, EnergyError> {
    let sl = slab(u, p0, t)?;
    let js = jets(u, p0, &sl)?;
    Ok(integrate(&sl, |k| {
        let l = l_of(js[k], sl.ys[k], t);
        l * l
    }))
}

/// The `t <= 0` branch `m t + (1 + m) x^2 / 2` of `v_m`.
pub fn v_m_past(m: f64, y: f64, t: f64) -> f64 {
    m * t + 0.5 * (1.0 + m) * y * y
}

/// `Φ^{v_m}(t; u) = ∫ (u - v_m)^2 / t^2 G dx`.
pub fn phi<S: Surface + ?Sized>(u: &S, p0: Point, m: f64, t: f64) -> Result<Quadrature, EnergyError> {
    if !(-1.0..=0.0).contains(&m) {
        return Err(EnergyError::BadM(m));
    }
    let sl = slab(u, p0, t)?;
    let vals = sl.ys.iter().map(|&y| u.value(p0.x + y, p0.t + t)).collect::<Result<Vec<_>, _>>()?;
    Ok(integrate(&sl, |k| {
        let d = vals[k] - v_m_past(m, sl.ys[k], t);
        d * d / (t * t)
    }))
}

/// Values of `u` on a quadrature slab, with the kernel folded into the
/// weights, for repeated weighted integrals of the same data.
#[derive(Debug, Clone)]
pub struct SlabSample {
    pub t: f64,
    pub ys: Vec<f64>,
    /// Simpson weight times `G(y, t)`.
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    pub radius: f64,
}

impl SlabSample {
    pub fn new<S: Surface + ?Sized>(u: &S, p0: Point, t: f64) -> Result<Self, EnergyError> {
        let sl = slab(u, p0, t)?;
        let values = sl.ys.iter().map(|&y| u.value(p0.x + y, p0.t + t)).collect::<Result<Vec<_>, _>>()?;
        let weights = sl.ys.iter().zip(&sl.weights).map(|(&y, &w)| w * kernel(y, t)).collect();
        Ok(Self { t, ys: sl.ys, weights, values, radius: sl.radius })
    }

    /// `∫ g(y, u(y)) G dy`.
    pub fn integrate(&self, g: impl Fn(f64, f64) -> f64) -> f64 {
        self.ys.iter().zip(&self.values).zip(&self.weights).map(|((&y, &u), &w)| w * g(y, u)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub e: f64,
    pub l_norm: f64,
    pub tail_bound: f64,
    /// `(m, Φ^{v_m})` for each requested `m`.
    pub phi: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub p0: Point,
    /// Admissible records, times increasing toward `0-`.
    pub records: Vec<EnergyRecord>,
    /// Requested times that were not admissible.
    pub skipped: Vec<f64>,
    /// `E(0-)` extrapolated from the last three records.
    pub e0: f64,
}

impl EnergyTrace {
    /// Largest increase of `E` between consecutive records (0 if monotone).
    pub fn max_increase(&self) -> f64 {
        self.records.windows(2).map(|w| w[1].e - w[0].e).fold(0.0, f64::max)
    }

    /// Largest increase of `Φ^{v_m}` for the `k`-th requested `m`.
    pub fn max_phi_increase(&self, k: usize) -> f64 {
        self.records.windows(2).map(|w| w[1].phi[k].1 - w[0].phi[k].1).fold(0.0, f64::max)
    }

    /// Writes `t,E,Lnorm,phi_<m>...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t,E,Lnorm")?;
        if let Some(r) = self.records.first() {
            for (m, _) in &r.phi {
                write!(out, ",phi_{m}")?;
            }
        }
        writeln!(out)?;
        for r in &self.records {
            write!(out, "{:.16e},{:.16e},{:.16e}", r.t, r.e, r.l_norm)?;
            for (_, p) in &r.phi {
                write!(out, ",{p:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Quadratic extrapolation to `t = 0` through the last three points.
pub fn extrapolate_to_zero(pts: &[(f64, f64)]) -> f64 {
    match pts.len() {
        0 => f64::NAN,
        1 => pts[0].1,
        2 => {
            let ((t0, e0), (t1, e1)) = (pts[0], pts[1]);
            e1 - t1 * (e1 - e0) / (t1 - t0)
        }
        _ => {
            let p = &pts[pts.len() - 3..];
            // Neville at 0
            let mut v = [p[0].1, p[1].1, p[2].1];
            let ts = [p[0].0, p[1].0, p[2].0];
            for level in 1..3 {
                for k in 0..3 - level {
                    let (a, b) = (ts[k], ts[k + level]);
                    v[k] = (b * v[k] - a * v[k + 1]) / (b - a);
                }
            }
            v[0]
        }
    }
}

/// Energy, `L` norm and `Φ` values along a ladder of negative offsets.
/// Offsets outside the box are skipped; at least three must remain.
pub fn energy_trace<S: Surface + ?Sized>(
    u: &S,
    p0: Point,
    t_ladder: &[f64],
    phi_ms: &[f64],
) -> Result<EnergyTrace, EnergyError> {
    if let Some(&m) = phi_ms.iter().find(|m| !(-1.0..=0.0).contains(*m)) {
        return Err(EnergyError::BadM(m));
    }
    let mut ts: Vec<f64> = t_ladder.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let results: Vec<Result<EnergyRecord, EnergyError>> = ts
        .par_iter()
        .map(|&t| {
            let e = energy(u, p0, t)?;
            let l = l_norm(u, p0, t)?;
            let phi = phi_ms.iter().map(|&m| phi(u, p0, m, t).map(|q| (m, q.value))).collect::<Result<Vec<_>, _>>()?;
            Ok(EnergyRecord { t, e: e.value, l_norm: l.value, tail_bound: e.tail_bound, phi })
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (t, r) in ts.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(EnergyError::Inadmissible { .. }) | Err(EnergyError::NonNegativeTime(_)) => skipped.push(*t),
            Err(e) => return Err(e),
        }
    }
    if records.len() < 3 {
        return Err(EnergyError::TooFewTimes(records.len()));
    }
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.e)).collect();
    let e0 = extrapolate_to_zero(&pts);
    Ok(EnergyTrace { p0, records, skipped, e0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeResidual {
    /// Centred difference of `E`.
    pub lhs: f64,
    /// `-(1 / (2|t|^3)) ∫ |Lu|^2 G`.
    pub rhs: f64,
    pub abs: f64,
    /// `abs / max(|lhs|, |rhs|)`, or 0 when both vanish.
    pub rel: f64,
}

/// Compares `dE/dt` with `-(1 / (2|t|^3)) ∫ |Lu|^2 G dx` at offset `t`.
pub fn energy_derivative_residual<S: Surface + ?Sized>(
    u: &S,
    p0: Point,
    t: f64,
    dt: f64,
) -> Result<DerivativeResidual, EnergyError> {
    let hi = energy(u, p0, t + 0.5 * dt)?.value;
    let lo = energy(u, p0, t - 0.5 * dt)?.value;
    let lhs = (hi - lo) / dt;
    let rhs = -l_norm(u, p0, t)?.value / (2.0 * (-t).powi(3));
    let abs = (lhs - rhs).abs();
    let scale = lhs.abs().max(rhs.abs());
    let rel = if scale > 1e-300 { abs / scale } else { 0.0 };
    Ok(DerivativeResidual { lhs, rhs, abs, rel })
}

/// Energy values of the two blow-up classes from the same quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// `E(-1; v+)`.
    pub regular: f64,
    /// `E(-1; v_0)`.
    pub singular: f64,
}

impl Calibration {
    pub fn get() -> Calibration {
        static CAL: OnceLock<Calibration> = OnceLock::new();
        *CAL.get_or_init(|| {
            let origin = Point::new(0.0, 0.0);
            let reg = energy(&ClosedForm::v_plus(), origin, -1.0).expect("whole-plane energy");
            let sing = energy(&ClosedForm::v_m(0.0).expect("m = 0"), origin, -1.0).expect("whole-plane energy");
            Calibration { regular: reg.value, singular: sing.value }
        })
    }

    pub fn ratio(&self) -> f64 {
        self.regular / self.singular
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.regular + self.singular)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FieldSurface, FnSurface, GridSpec};

    const O: Point = Point { x: 0.0, t: 0.0 };

    /// `∫ g G dx` by a fine trapezoid rule on a huge interval.
    fn reference_integral(g: impl Fn(f64) -> f64, t: f64) -> f64 {
        let s = (2.0 * -t).sqrt();
        let (a, n) = (30.0 * s, 600_000);
        let dx = 2.0 * a / n as f64;
        (0..=n)
            .map(|k| {
                let x = -a + k as f64 * dx;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * g(x) * kernel(x, t)
            })
            .sum::<f64>()
            * dx
    }

    #[test]
    fn kernel_values() {
        assert!((heat_kernel(0.0, -1.0).unwrap() - 0.282_094_791_8).abs() < 1e-10);
        assert!(heat_kernel(0.0, 0.0).is_err());
        for t in [-1.0, -0.25] {
            assert!((reference_integral(|_| 1.0, t) - 1.0).abs() < 1e-12);
        }
        let (x, t, d) = (0.7, -0.5, 1e-4);
        let gxx = (kernel(x + d, t) - 2.0 * kernel(x, t) + kernel(x - d, t)) / (d * d);
        let gt = (kernel(x, t + d) - kernel(x, t - d)) / (2.0 * d);
        assert!((gxx + gt).abs() < 1e-6);
    }

    #[test]
    fn energies_of_closed_forms() {
        let cases = [
            (ClosedForm::v_plus(), 0.5),
            (ClosedForm::v_minus(), 0.5),
            (ClosedForm::v_m(0.0).unwrap(), 1.0),
            (ClosedForm::v_m(-1.0).unwrap(), 1.0),
            (ClosedForm::v_m(-0.5).unwrap(), 1.0),
        ];
        for (f, want) in cases {
            let e = energy(&f, O, -1.0).unwrap();
            assert!((e.value - want).abs() < 1e-9, "{}: {}", f.name(), e.value);
            assert!(e.tail_bound < 1e-9);
        }
        let c = Calibration::get();
        assert!((c.ratio() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn energy_matches_independent_integral_for_nonhomogeneous_input() {
        let s = FnSurface(|x: f64, t: f64| Jet { u: 1.0 + x * x + 0.3 * t * x, ux: 2.0 * x + 0.3 * t, ut: 0.3 * x });
        let t = -0.4;
        let want = reference_integral(
            |x| {
                let (u, ux) = (1.0 + x * x + 0.3 * t * x, 2.0 * x + 0.3 * t);
                (ux * ux + 2.0 * u) / (-t) - u * u / (t * t)
            },
            t,
        );
        assert!((energy(&s, O, t).unwrap().value - want).abs() < 1e-10);
    }

    #[test]
    fn scaling_operator_examples() {
        let quartic = FnSurface(|x: f64, _t: f64| Jet { u: x.powi(4), ux: 4.0 * x.powi(3), ut: 0.0 });
        assert!((scaling_operator(&quartic, O, 0.7, -0.3).unwrap() - 2.0 * 0.7f64.powi(4)).abs() < 1e-14);
        for f in [ClosedForm::v_plus(), ClosedForm::v_m(-0.5).unwrap()] {
            for &(x, t) in &[(0.3, -0.2), (-1.1, -2.0)] {
                assert!(scaling_operator(&f, O, x, t).unwrap().abs() < 1e-12);
            }
            assert!(l_norm(&f, O, -1.0).unwrap().value < 1e-20);
        }
    }

    #[test]
    fn phi_examples() {
        let vp = ClosedForm::v_plus();
        let v0 = ClosedForm::v_m(0.0).unwrap();
        let ce = ClosedForm::counterexample();
        assert!((phi(&vp, O, 0.0, -1.0).unwrap().value - 1.5).abs() < 1e-9);
        assert!((phi(&v0, O, -1.0, -1.0).unwrap().value - 2.0).abs() < 1e-9);
        assert_eq!(phi(&ce, O, -1.0, -0.3).unwrap().value, 0.0);
        let vm = ClosedForm::v_m(-0.5).unwrap();
        assert!(phi(&vm, O, -0.5, -0.7).unwrap().value < 1e-24);
        assert!(matches!(phi(&vp, O, 0.5, -1.0), Err(EnergyError::BadM(_))));
    }

    #[test]
    fn derivative_residual_vanishes_for_homogeneous() {
        for f in [ClosedForm::v_m(0.0).unwrap(), ClosedForm::counterexample()] {
            let r = energy_derivative_residual(&f, O, -0.5, 1e-3).unwrap();
            assert!(r.abs < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn derivative_identity_on_smooth_positive_solution() {
        // positive, not homogeneous, and u_xx - u_t = 1
        let s = FnSurface(|x: f64, t: f64| Jet { u: 1.5 * x * x + 2.0 * t + 3.0, ux: 3.0 * x, ut: 2.0 });
        let r = energy_derivative_residual(&s, O, -0.5, 1e-3).unwrap();
        assert!(r.rhs < 0.0);
        assert!(r.rel < 1e-5, "{r:?}");
    }

    #[test]
    fn traces_on_fields_and_admissibility() {
        let g = GridSpec::new(-12.0, 12.0, 1201, -1.0, 0.0, 201).unwrap();
        let s = FieldSurface::new(ClosedForm::v_plus().field(&g).unwrap()).unwrap();
        let ladder = [-0.8, -0.4, -0.2, -0.1, -0.05, -2.0];
        let tr = energy_trace(&s, O, &ladder, &[0.0, -1.0]).unwrap();
        assert_eq!(tr.skipped, vec![-2.0]);
        assert!(tr.records.windows(2).all(|w| w[0].t < w[1].t));
        for r in &tr.records {
            assert!((r.e - 0.5).abs() < 1e-4, "{r:?}");
            assert!((r.phi[0].1 - 1.5).abs() < 1e-3);
        }
        assert!((tr.e0 - 0.5).abs() < 1e-4);
        match energy(&s, O, -3.0) {
            Err(EnergyError::Inadmissible { max_abs_t, .. }) => assert_eq!(max_abs_t, 1.0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(energy_trace(&s, O, &[-0.5, -0.1], &[]), Err(EnergyError::TooFewTimes(2))));
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,E,Lnorm,phi_0,phi_-1\n"));
    }

    #[test]
    fn extrapolation_is_exact_on_quadratics() {
        let pts: Vec<(f64, f64)> = [-0.4, -0.2, -0.1].iter().map(|&t| (t, 3.0 + 2.0 * t - t * t)).collect();
        assert!((extrapolate_to_zero(&pts) - 3.0).abs() < 1e-13);
    }
}
