//! Self-similar profiles `V_m` of the global solutions `v_m` for `t > 0`.
//!
//! Writing `v_m(x, t) = t V(xi)` with `xi = |x| / sqrt(t)` turns
//! `u_xx - u_t = 1{u > 0}` into
//!
//! ```text
//! V'' + (xi/2) V' - V = 1   on {V > 0},
//! ```
//!
//! with smooth fit `V(xi_m) = V'(xi_m) = 0` at the free boundary and far
//! field `V = (1+m) xi^2 / 2 + m + o(1)`, which matches the `t <= 0` branch
//! `m t + (1+m) x^2 / 2`. The homogeneous equation has the growing solution
//! `xi^2 + 2` and a second one decaying like `exp(-xi^2/4)`, so
//! `2 (V + 1) / (xi^2 + 2)` converges to the quadratic coefficient `1+m`
//! much faster than `V / (xi^2/2)` does.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::ode::{dopri5, OdeError, OdeOptions};

/// Default far-field matching tolerance.
pub const PROFILE_TOL: f64 = 1e-12;

/// Default end of the tabulated range.
pub const XI_MAX_DEFAULT: f64 = 40.0;

/// Spacing bound of the profile table.
const TABLE_STEP: f64 = 0.02;

/// Past `xi0 + MATCH_SPAN` the decaying mode is below double precision.
const MATCH_SPAN: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("m = {0} is outside [-1, 0]")]
    OutOfRange(f64),
    #[error("tolerance must be positive (got {0})")]
    BadTolerance(f64),
    #[error("shooting root not bracketed on xi0 in [{lo}, {hi}]: coefficient range [{k_hi}, {k_lo}] misses {target}")]
    NotBracketed { lo: f64, hi: f64, k_lo: f64, k_hi: f64, target: f64 },
    #[error("shooting stalled at xi0 = {xi0}: |coefficient - target| = {miss:e} > tol {tol:e}")]
    ToleranceNotReached { xi0: f64, miss: f64, tol: f64 },
    #[error("asymptotic coefficient did not settle by xi = {xi}")]
    NoSettling { xi: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
}

fn rhs(xi: f64, y: &[f64; 2]) -> [f64; 2] {
    [y[1], 1.0 + y[0] - 0.5 * xi * y[1]]
}

fn second_derivative(xi: f64, v: f64, vp: f64) -> f64 {
    1.0 + v - 0.5 * xi * vp
}

/// Far-field quadratic coefficient estimate at `xi`.
fn kappa_hat(xi: f64, v: f64) -> f64 {
    2.0 * (v + 1.0) / (xi * xi + 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarProfile {
    pub m: f64,
    /// Free-boundary value of `xi`; `+inf` for `m = -1`.
    pub xi_m: f64,
    /// `1 / xi_m^2`: the positive set for `t > 0` is `t < C_m x^2`.
    pub c_m: f64,
    /// Fitted far-field coefficient (equals `1 + m` within the tolerance).
    pub kappa: f64,
    pub xi_max: f64,
    table: Vec<[f64; 3]>,
}

/// Shoots from `(V, V') = (0, 0)` at `xi0` and returns the far-field
/// quadratic coefficient.
pub fn shoot(xi0: f64) -> Result<f64, ProfileError> {
    let end = xi0 + MATCH_SPAN;
    let y = dopri5(rhs, xi0, [0.0, 0.0], end, &OdeOptions::default(), |_, _| {})?;
    Ok(kappa_hat(end, y[0]))
}

/// Solves for the profile of `v_m` by shooting on the free-boundary value.
pub fn solve_profile(m: f64, tol: f64) -> Result<SelfSimilarProfile, ProfileError> {
    if !(-1.0..=0.0).contains(&m) {
        return Err(ProfileError::OutOfRange(m));
    }
    if !(tol > 0.0) {
        return Err(ProfileError::BadTolerance(tol));
    }
    if m == -1.0 {
        return Ok(SelfSimilarProfile {
            m,
            xi_m: f64::INFINITY,
            c_m: 0.0,
            kappa: 0.0,
            xi_max: f64::INFINITY,
            table: Vec::new(),
        });
    }
    let target = 1.0 + m;
    let xi0 = if m == 0.0 { 0.0 } else { bisect_free_boundary(target, tol)? };
    tabulate(m, xi0, tol)
}

fn bisect_free_boundary(target: f64, tol: f64) -> Result<f64, ProfileError> {
    // the coefficient decreases from 1 at xi0 = 0 towards 0 as xi0 grows
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut k_hi = shoot(hi)?;
    while k_hi > target {
        if hi >= 64.0 {
            return Err(ProfileError::NotBracketed { lo: 0.0, hi, k_lo: 1.0, k_hi, target });
        }
        lo = hi;
        hi *= 2.0;
        k_hi = shoot(hi)?;
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let k = shoot(mid)?;
        let miss = (k - target).abs();
        if miss < best.0 {
            best = (miss, mid);
        }
        if miss <= tol {
            return Ok(mid);
        }
        if k > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Err(ProfileError::ToleranceNotReached { xi0: best.1, miss: best.0, tol })
}

fn tabulate(m: f64, xi0: f64, tol: f64) -> Result<SelfSimilarProfile, ProfileError> {
    let opts = OdeOptions { h_max: TABLE_STEP, ..OdeOptions::default() };
    let mut table: Vec<[f64; 3]> = Vec::new();
    let mut record = |x: f64, y: &[f64; 2]| {
        if table.last().is_none_or(|r| x > r[0]) {
            table.push([x, y[0], y[1]]);
        }
    };
    let mut xi_max = XI_MAX_DEFAULT.max(xi0 + MATCH_SPAN);
    let mut checkpoints = vec![xi0 + 0.25 * (xi_max - xi0), xi0 + 0.5 * (xi_max - xi0), xi_max];
    let mut state = [0.0, 0.0];
    let mut from = xi0;
    let mut kappas = Vec::new();
    let mut k = 0;
    loop {
        let to = checkpoints[k];
        state = dopri5(rhs, from, state, to, &opts, &mut record)?;
        kappas.push(kappa_hat(to, state[0]));
        from = to;
        k += 1;
        if k == checkpoints.len() {
            let n = kappas.len();
            if (kappas[n - 1] - kappas[n - 2]).abs() < tol {
                break;
            }
            if xi_max > 16.0 * XI_MAX_DEFAULT {
                return Err(ProfileError::NoSettling { xi: xi_max });
            }
            xi_max *= 2.0;
            checkpoints.push(xi_max);
        }
    }
    let kappa = *kappas.last().expect("at least one checkpoint");
    Ok(SelfSimilarProfile {
        m,
        xi_m: xi0,
        c_m: if xi0 == 0.0 { f64::INFINITY } else { 1.0 / (xi0 * xi0) },
        kappa,
        xi_max,
        table,
    })
}

impl SelfSimilarProfile {
    /// `(V, V', V'')` at `xi >= 0`.
    pub fn eval(&self, xi: f64) -> (f64, f64, f64) {
        if self.table.is_empty() || xi <= self.xi_m {
            return (0.0, 0.0, 0.0);
        }
        if xi >= self.xi_max {
            let v = -1.0 + 0.5 * self.kappa * (xi * xi + 2.0);
            return (v, self.kappa * xi, self.kappa);
        }
        let j = match self.table.binary_search_by(|r| r[0].total_cmp(&xi)) {
            Ok(j) => {
                let r = self.table[j];
                return (r[1], r[2], second_derivative(r[0], r[1], r[2]));
            }
            Err(j) => j.clamp(1, self.table.len() - 1) - 1,
        };
        let [x0, v0, p0] = self.table[j];
        let [x1, v1, p1] = self.table[j + 1];
        let (s0, s1) = (second_derivative(x0, v0, p0), second_derivative(x1, v1, p1));
        // V''' from differentiating the ODE
        let (t0, t1) = (0.5 * p0 - 0.5 * x0 * s0, 0.5 * p1 - 0.5 * x1 * s1);
        let h = x1 - x0;
        let s = (xi - x0) / h;
        let v = quintic_hermite(s, h, [v0, p0, s0], [v1, p1, s1]);
        let vp = quintic_hermite(s, h, [p0, s0, t0], [p1, s1, t1]);
        (v, vp, second_derivative(xi, v, vp))
    }

    pub fn table(&self) -> &[[f64; 3]] {
        &self.table
    }

    /// Largest `|V'' + (xi/2) V' - V - 1|` of the interpolant, probed at the
    /// midpoints of the table cells with `V''` from a five-point difference
    /// of the interpolated `V'`.
    pub fn ode_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for w in self.table.windows(2) {
            let x = 0.5 * (w[0][0] + w[1][0]);
            let d = 0.05 * (w[1][0] - w[0][0]);
            let p = |z: f64| self.eval(z).1;
            let vpp = (-p(x + 2.0 * d) + 8.0 * p(x + d) - 8.0 * p(x - d) + p(x - 2.0 * d)) / (12.0 * d);
            let (v, vp, _) = self.eval(x);
            worst = worst.max((vpp + 0.5 * x * vp - v - 1.0).abs());
        }
        worst
    }

    /// `xi,V,Vp` table with the parameters in leading comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# m={:.16e}, C_m={:.16e}, xi_m={:.16e}", self.m, self.c_m, self.xi_m)?;
        writeln!(out, "xi,V,Vp")?;
        for r in &self.table {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", r[0], r[1], r[2])?;
        }
        Ok(())
    }
}

fn quintic_hermite(s: f64, h: f64, left: [f64; 3], right: [f64; 3]) -> f64 {
    let (s2, s3) = (s * s, s * s * s);
    let (s4, s5) = (s3 * s, s3 * s2);
    let h00 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h01 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h02 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h12 = 0.5 * (s3 - 2.0 * s4 + s5);
    let h11 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h10 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    left[0] * h00
        + h * left[1] * h01
        + h * h * left[2] * h02
        + h * h * right[2] * h12
        + h * right[1] * h11
        + right[0] * h10
}

type Slot = Arc<OnceLock<Result<Arc<SelfSimilarProfile>, ProfileError>>>;

fn cache() -> &'static Mutex<HashMap<u64, Slot>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Slot>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared profile for `m` at the default tolerance; computed once per `m`
/// even under concurrent requests.
pub fn profile_for(m: f64) -> Result<Arc<SelfSimilarProfile>, ProfileError> {
    // -0.0 and 0.0 share a slot
    let key = (m + 0.0).to_bits();
    let slot = {
        let mut map = cache().lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key).or_default().clone()
    };
    slot.get_or_init(|| solve_profile(m, PROFILE_TOL).map(Arc::new)).clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Far-field coefficient from reduction of order, independent of the
    /// shooting integrator:
    /// `2/(xi0^2+2) - 4 xi0 exp(xi0^2/4) int_{xi0}^inf exp(-s^2/4)/(s^2+2)^2 ds`.
    fn kappa_oracle(xi0: f64) -> f64 {
        let n = 20_000;
        let len = 30.0;
        let h = len / n as f64;
        let g = |s: f64| (-(s * s - xi0 * xi0) / 4.0).exp() / (s * s + 2.0).powi(2);
        let mut acc = g(xi0) + g(xi0 + len);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(xi0 + k as f64 * h);
        }
        2.0 / (xi0 * xi0 + 2.0) - 4.0 * xi0 * acc * h / 3.0
    }

    #[test]
    fn shooting_matches_reduction_of_order() {
        for &xi0 in &[0.0, 0.5, 1.0, 2.0, 3.0] {
            let (a, b) = (shoot(xi0).unwrap(), kappa_oracle(xi0));
            assert!((a - b).abs() < 1e-10, "xi0={xi0}: {a} vs {b}");
        }
    }

    #[test]
    fn half_profile_free_boundary() {
        // root of kappa_oracle(xi0) = 0.5, computed offline with the same oracle
        let p = solve_profile(-0.5, 1e-12).unwrap();
        assert!((p.xi_m - 0.8655031987326158).abs() < 1e-9, "{}", p.xi_m);
        assert!((kappa_oracle(p.xi_m) - 0.5).abs() < 1e-10);
        assert!((p.kappa - 0.5).abs() < 1e-10);
    }

    #[test]
    fn smooth_fit_and_positivity() {
        let p = solve_profile(-0.3, 1e-12).unwrap();
        let (v, vp, vpp) = p.eval(p.xi_m);
        assert_eq!((v, vp), (0.0, 0.0));
        assert_eq!(vpp, 0.0);
        let first = p.table()[0];
        assert_eq!((first[1], first[2]), (0.0, 0.0));
        assert!(p.table()[1..].iter().all(|r| r[1] > 0.0));
        assert!(p.ode_residual() <= 1e-8, "{}", p.ode_residual());
        // V - (1+m) xi^2/2 -> m
        let xi = p.xi_max - 1e-9;
        let (v, _, _) = p.eval(xi);
        assert!((v - 0.7 * xi * xi / 2.0 - (-0.3)).abs() < 1e-8);
    }

    #[test]
    fn m_zero_recovers_half_square() {
        let p = solve_profile(0.0, 1e-12).unwrap();
        assert_eq!(p.xi_m, 0.0);
        assert!(p.c_m.is_infinite());
        let worst = p.table().iter().map(|r| (r[1] - 0.5 * r[0] * r[0]).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-8, "sup error {worst}");
        for &xi in &[0.013, 1.7, 12.345, 39.99] {
            let (v, vp, vpp) = p.eval(xi);
            assert!((v - 0.5 * xi * xi).abs() < 1e-8);
            assert!((vp - xi).abs() < 1e-8);
            assert!((vpp - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_and_invalid_m() {
        let p = solve_profile(-1.0, 1e-12).unwrap();
        assert_eq!(p.c_m, 0.0);
        assert_eq!(p.eval(3.0), (0.0, 0.0, 0.0));
        assert_eq!(solve_profile(0.5, 1e-12), Err(ProfileError::OutOfRange(0.5)));
        assert_eq!(solve_profile(-0.5, 0.0), Err(ProfileError::BadTolerance(0.0)));
    }

    #[test]
    fn coefficient_increases_with_m() {
        let cs: Vec<f64> = (1..=9).map(|k| profile_for(-1.0 + 0.1 * k as f64).unwrap().c_m).collect();
        assert!(cs.windows(2).all(|w| w[0] < w[1]), "{cs:?}");
    }

    #[test]
    fn cache_returns_shared_instance() {
        let handles: Vec<_> = (0..4).map(|_| std::thread::spawn(|| profile_for(-0.45).unwrap())).collect();
        let ps: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(ps.windows(2).all(|w| Arc::ptr_eq(&w[0], &w[1])));
    }

    #[test]
    fn csv_header() {
        let p = solve_profile(-0.5, 1e-10).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# m=-5.0000000000000000e-1, C_m="));
        assert_eq!(lines.next(), Some("xi,V,Vp"));
    }
}
