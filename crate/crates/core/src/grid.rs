//! Uniform space-time grids, grid functions and their finite-difference
//! derivatives.
//!
//! Nodes are indexed `(i, n)` with `x = x_min + i h` and `t = t_min + n tau`.
//! Values are stored slice by slice: all `x` nodes of time level `n` are
//! contiguous.

use std::io::Write;

use thiserror::Error;

/// Slack used when deciding whether a query point lies inside a box.
const BOX_SLACK: f64 = 1e-12;

/// Relative distance below which a query is snapped onto a grid node.
const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("degenerate grid: derivatives need nx >= 3 (got {nx})")]
    Degenerate { nx: usize },
    #[error("value at node (i={i}, n={n}) is not finite")]
    NonFinite { i: usize, n: usize },
    #[error("query ({x}, {t}) lies outside the box [{x_min}, {x_max}] x [{t_min}, {t_max}]")]
    OutOfBox { x: f64, t: f64, x_min: f64, x_max: f64, t_min: f64, t_max: f64 },
    #[error("value array has {got} entries, grid needs {expected}")]
    Shape { expected: usize, got: usize },
}

/// Axis-aligned space-time rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, t: f64) -> bool {
        let sx = BOX_SLACK * (self.x_max - self.x_min).abs().max(1.0);
        let st = BOX_SLACK * (self.t_max - self.t_min).abs().max(1.0);
        x >= self.x_min - sx && x <= self.x_max + sx && t >= self.t_min - st && t <= self.t_max + st
    }

    fn out_of_box(&self, x: f64, t: f64) -> GridError {
        GridError::OutOfBox { x, t, x_min: self.x_min, x_max: self.x_max, t_min: self.t_min, t_max: self.t_max }
    }
}

/// A uniform tensor grid on `[x_min, x_max] x [t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub nx: usize,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, nx: usize, t_min: f64, t_max: f64, nt: usize) -> Result<Self, GridError> {
        let all_finite = [x_min, x_max, t_min, t_max].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(GridError::Invalid("box bounds must be finite".into()));
        }
        if x_min >= x_max {
            return Err(GridError::Invalid(format!("x_min {x_min} >= x_max {x_max}")));
        }
        if t_min >= t_max {
            return Err(GridError::Invalid(format!("t_min {t_min} >= t_max {t_max}")));
        }
        if nx < 3 {
            return Err(GridError::Invalid(format!("nx must be >= 3 (got {nx})")));
        }
        if nt < 2 {
            return Err(GridError::Invalid(format!("nt must be >= 2 (got {nt})")));
        }
        Ok(Self { x_min, x_max, t_min, t_max, nx, nt })
    }

    /// Grid whose spacing is `h` in space and `tau` in time, rounded to the
    /// nearest node count that covers the box.
    pub fn with_steps(x_min: f64, x_max: f64, h: f64, t_min: f64, t_max: f64, tau: f64) -> Result<Self, GridError> {
        if !(h > 0.0 && tau > 0.0) {
            return Err(GridError::Invalid("steps must be positive".into()));
        }
        let nx = ((x_max - x_min) / h).round() as usize + 1;
        let nt = ((t_max - t_min) / tau).round() as usize + 1;
        Self::new(x_min, x_max, nx, t_min, t_max, nt)
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn tau(&self) -> f64 {
        (self.t_max - self.t_min) / (self.nt - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + i as f64 * self.h()
        }
    }

    pub fn t(&self, n: usize) -> f64 {
        if n + 1 == self.nt {
            self.t_max
        } else {
            self.t_min + n as f64 * self.tau()
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, n: usize) -> usize {
        n * self.nx + i
    }

    pub fn rect(&self) -> Rect {
        Rect { x_min: self.x_min, x_max: self.x_max, t_min: self.t_min, t_max: self.t_max }
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        self.rect().contains(x, t)
    }

    /// Index of the node nearest to `x` (clamped to the grid).
    pub fn nearest_i(&self, x: f64) -> usize {
        let s = ((x - self.x_min) / self.h()).round();
        s.clamp(0.0, (self.nx - 1) as f64) as usize
    }

    /// Index of the time level nearest to `t` (clamped to the grid).
    pub fn nearest_n(&self, t: f64) -> usize {
        let s = ((t - self.t_min) / self.tau()).round();
        s.clamp(0.0, (self.nt - 1) as f64) as usize
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.nt).map(|n| self.t(n)).collect()
    }
}

/// A grid function: one finite value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

/// Finite-difference derivatives of a field, on the same grid.
#[derive(Debug, Clone)]
pub struct Derived {
    pub ut: Field,
    pub ux: Field,
    pub uxx: Field,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Shape { expected: grid.len(), got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { i: k % grid.nx, n: k / grid.nx });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, t)` at every node.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        let mut values = Vec::with_capacity(grid.len());
        for n in 0..grid.nt {
            let t = grid.t(n);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), t));
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, n: usize) -> f64 {
        self.values[self.grid.index(i, n)]
    }

    /// All space nodes of time level `n`.
    pub fn slice(&self, n: usize) -> &[f64] {
        let start = n * self.grid.nx;
        &self.values[start..start + self.grid.nx]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `ux`, `uxx` by central differences (second-order one-sided at the
    /// space edges) and `ut` by backward differences (forward at `n = 0`).
    pub fn derived_fields(&self) -> Result<Derived, GridError> {
        let g = self.grid;
        if g.nx < 3 {
            return Err(GridError::Degenerate { nx: g.nx });
        }
        let (h, tau, nx, nt) = (g.h(), g.tau(), g.nx, g.nt);
        let mut ux = vec![0.0; g.len()];
        let mut uxx = vec![0.0; g.len()];
        let mut ut = vec![0.0; g.len()];
        for n in 0..nt {
            let u = self.slice(n);
            let row = n * nx;
            for i in 1..nx - 1 {
                ux[row + i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
                uxx[row + i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) / (h * h);
            }
            let l = nx - 1;
            ux[row] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
            ux[row + l] = (3.0 * u[l] - 4.0 * u[l - 1] + u[l - 2]) / (2.0 * h);
            if nx >= 4 {
                uxx[row] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / (h * h);
                uxx[row + l] = (2.0 * u[l] - 5.0 * u[l - 1] + 4.0 * u[l - 2] - u[l - 3]) / (h * h);
            } else {
                uxx[row] = uxx[row + 1];
                uxx[row + l] = uxx[row + 1];
            }
            for i in 0..nx {
                ut[row + i] = if n == 0 {
                    (self.get(i, 1) - self.get(i, 0)) / tau
                } else {
                    (self.get(i, n) - self.get(i, n - 1)) / tau
                };
            }
        }
        Ok(Derived { ut: Field::new(g, ut)?, ux: Field::new(g, ux)?, uxx: Field::new(g, uxx)? })
    }

    /// Tensor-product cubic Lagrange interpolation, dropping to linear in a
    /// direction whose enclosing cell touches the box edge. Exact at nodes.
    pub fn sample(&self, x: f64, t: f64) -> Result<f64, GridError> {
        let g = &self.grid;
        if !g.contains(x, t) {
            return Err(g.rect().out_of_box(x, t));
        }
        let wx = Stencil::new((x - g.x_min) / g.h(), g.nx);
        let wt = Stencil::new((t - g.t_min) / g.tau(), g.nt);
        let mut acc = 0.0;
        for (a, &cw) in wt.weights[..wt.len].iter().enumerate() {
            let row = self.slice(wt.start + a);
            let mut inner = 0.0;
            for (b, &xw) in wx.weights[..wx.len].iter().enumerate() {
                inner += xw * row[wx.start + b];
            }
            acc += cw * inner;
        }
        Ok(acc)
    }

    /// Writes the `x,t,u,ut,ux,uxx` dump, one row per node, time-major.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), CsvError> {
        let d = self.derived_fields()?;
        writeln!(out, "x,t,u,ut,ux,uxx")?;
        for n in 0..self.grid.nt {
            let t = self.grid.t(n);
            for i in 0..self.grid.nx {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    self.grid.x(i),
                    t,
                    self.get(i, n),
                    d.ut.get(i, n),
                    d.ux.get(i, n),
                    d.uxx.get(i, n)
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One-dimensional interpolation weights over at most four nodes.
struct Stencil {
    start: usize,
    len: usize,
    weights: [f64; 4],
}

impl Stencil {
    fn new(s: f64, n: usize) -> Self {
        let last = (n - 1) as f64;
        let s = s.clamp(0.0, last);
        let r = s.round();
        if (s - r).abs() < NODE_SNAP * last.max(1.0) {
            return Self { start: r as usize, len: 1, weights: [1.0, 0.0, 0.0, 0.0] };
        }
        let j = (s.floor() as usize).min(n - 2);
        let p = s - j as f64;
        if j >= 1 && j + 2 < n {
            // Lagrange basis on nodes j-1, j, j+1, j+2 at offset p from j.
            let w0 = -p * (p - 1.0) * (p - 2.0) / 6.0;
            let w1 = (p + 1.0) * (p - 1.0) * (p - 2.0) / 2.0;
            let w2 = -(p + 1.0) * p * (p - 2.0) / 2.0;
            let w3 = (p + 1.0) * p * (p - 1.0) / 6.0;
            Self { start: j - 1, len: 4, weights: [w0, w1, w2, w3] }
        } else {
            Self { start: j, len: 2, weights: [1.0 - p, p, 0.0, 0.0] }
        }
    }
}

/// Value and first derivatives of a space-time function at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub u: f64,
    pub ux: f64,
    pub ut: f64,
}

/// A function of `(x, t)` that can report its value and first derivatives.
///
/// Implemented by interpolated grid fields and by the exact global
/// solutions, so the energy functionals and blow-up rescaling accept both.
pub trait Surface: Send + Sync {
    fn jet(&self, x: f64, t: f64) -> Result<Jet, GridError>;

    fn value(&self, x: f64, t: f64) -> Result<f64, GridError> {
        self.jet(x, t).map(|j| j.u)
    }

    /// Box on which the function is known; `None` means the whole plane.
    fn domain(&self) -> Option<Rect>;

    /// Spatial grid step behind the samples, if any.
    fn resolution(&self) -> Option<f64> {
        None
    }
}

/// A space-time point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub t: f64,
}

impl Point {
    pub fn new(x: f64, t: f64) -> Self {
        Self { x, t }
    }
}

/// Adapts a closure returning jets into an everywhere-defined [`Surface`].
pub struct FnSurface<F>(pub F);

impl<F: Fn(f64, f64) -> Jet + Send + Sync> Surface for FnSurface<F> {
    fn jet(&self, x: f64, t: f64) -> Result<Jet, GridError> {
        Ok((self.0)(x, t))
    }

    fn domain(&self) -> Option<Rect> {
        None
    }
}

/// A field together with its finite-difference derivatives, sampled by
/// interpolation.
#[derive(Debug, Clone)]
pub struct FieldSurface {
    pub u: Field,
    pub d: Derived,
}

impl FieldSurface {
    pub fn new(u: Field) -> Result<Self, GridError> {
        let d = u.derived_fields()?;
        Ok(Self { u, d })
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }
}

impl Surface for FieldSurface {
    fn jet(&self, x: f64, t: f64) -> Result<Jet, GridError> {
        Ok(Jet { u: self.u.sample(x, t)?, ux: self.d.ux.sample(x, t)?, ut: self.d.ut.sample(x, t)? })
    }

    fn value(&self, x: f64, t: f64) -> Result<f64, GridError> {
        self.u.sample(x, t)
    }

    fn domain(&self) -> Option<Rect> {
        Some(self.u.grid().rect())
    }

    fn resolution(&self) -> Option<f64> {
        Some(self.u.grid().h())
    }
}

impl<S: Surface + ?Sized> Surface for &S {
    fn jet(&self, x: f64, t: f64) -> Result<Jet, GridError> {
        (**self).jet(x, t)
    }
    fn value(&self, x: f64, t: f64) -> Result<f64, GridError> {
        (**self).value(x, t)
    }
    fn domain(&self) -> Option<Rect> {
        (**self).domain()
    }
    fn resolution(&self) -> Option<f64> {
        (**self).resolution()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box(nx: usize, nt: usize) -> GridSpec {
        GridSpec::new(-1.0, 1.0, nx, -1.0, 1.0, nt).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(1.0, 0.0, 5, 0.0, 1.0, 5).is_err());
        assert!(GridSpec::new(0.0, 1.0, 2, 0.0, 1.0, 5).is_err());
        assert!(GridSpec::new(0.0, 1.0, 3, 0.0, 1.0, 1).is_err());
        assert!(GridSpec::new(0.0, f64::NAN, 3, 0.0, 1.0, 2).is_err());
    }

    #[test]
    fn nodes_map_onto_box() {
        let g = unit_box(201, 801);
        assert_eq!(g.h(), 0.01);
        assert_eq!(g.tau(), 0.0025);
        assert_eq!(g.x(200), 1.0);
        assert_eq!(g.t(0), -1.0);
        assert_eq!(g.nearest_i(0.0), 100);
        assert_eq!(g.nearest_n(0.0), 400);
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = unit_box(3, 2);
        let mut v = vec![0.0; 6];
        v[4] = f64::NAN;
        assert_eq!(Field::new(g, v), Err(GridError::NonFinite { i: 1, n: 1 }));
    }

    #[test]
    fn second_difference_exact_on_quadratic() {
        let g = unit_box(41, 5);
        let u = Field::from_fn(g, |x, _| x * x).unwrap();
        let d = u.derived_fields().unwrap();
        for n in 0..g.nt {
            for i in 0..g.nx {
                assert_abs_diff_eq!(d.uxx.get(i, n), 2.0, epsilon = 1e-9);
                assert_abs_diff_eq!(d.ux.get(i, n), 2.0 * g.x(i), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn time_derivative_of_counterexample() {
        let g = unit_box(11, 41);
        let tau = g.tau();
        let u = Field::from_fn(g, |_, t| (-t).max(0.0)).unwrap();
        let d = u.derived_fields().unwrap();
        for n in 0..g.nt {
            let t = g.t(n);
            for i in 0..g.nx {
                if t < -1e-12 {
                    assert_abs_diff_eq!(d.ut.get(i, n), -1.0, epsilon = 1e-9);
                } else if t > tau + 1e-12 {
                    assert_eq!(d.ut.get(i, n), 0.0);
                }
            }
        }
    }

    #[test]
    fn first_difference_exact_on_half_parabola() {
        let g = unit_box(21, 3);
        let h = g.h();
        let u = Field::from_fn(g, |x, _| 0.5 * x.max(0.0).powi(2)).unwrap();
        let d = u.derived_fields().unwrap();
        for i in 0..g.nx {
            let x = g.x(i);
            if x >= h - 1e-12 {
                assert_abs_diff_eq!(d.ux.get(i, 1), x, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_nx_for_derivatives() {
        // GridSpec forbids nx < 3, so construct the error path directly.
        let g = GridSpec { x_min: 0.0, x_max: 1.0, t_min: 0.0, t_max: 1.0, nx: 2, nt: 2 };
        let u = Field { grid: g, values: vec![0.0; 4] };
        assert_eq!(u.derived_fields().unwrap_err(), GridError::Degenerate { nx: 2 });
    }

    #[test]
    fn sample_reproduces_nodes_and_cubics() {
        let g = unit_box(21, 11);
        let u = Field::from_fn(g, |x, t| x * x * x - 2.0 * x * t + t * t * t).unwrap();
        for n in 0..g.nt {
            for i in 0..g.nx {
                assert_eq!(u.sample(g.x(i), g.t(n)).unwrap(), u.get(i, n));
            }
        }
        for &(x, t) in &[(0.333, 0.271), (-0.77, -0.123), (0.01, 0.5)] {
            let exact = x * x * x - 2.0 * x * t + t * t * t;
            assert_abs_diff_eq!(u.sample(x, t).unwrap(), exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_half_x_squared() {
        let g = unit_box(21, 11);
        let u = Field::from_fn(g, |x, _| 0.5 * x * x).unwrap();
        assert_abs_diff_eq!(u.sample(0.35, -0.5).unwrap(), 0.06125, epsilon = 1e-14);
    }

    #[test]
    fn sample_refuses_extrapolation() {
        let g = unit_box(5, 5);
        let u = Field::from_fn(g, |x, _| x).unwrap();
        assert!(matches!(u.sample(1.01, 0.0), Err(GridError::OutOfBox { .. })));
        assert!(matches!(u.sample(0.0, -1.5), Err(GridError::OutOfBox { .. })));
    }

    #[test]
    fn interpolation_error_is_fourth_order() {
        let err = |nx: usize| {
            let g = GridSpec::new(0.0, 2.0, nx, 0.0, 1.0, nx).unwrap();
            let u = Field::from_fn(g, |x, t| x.sin() * t.exp()).unwrap();
            let mut worst: f64 = 0.0;
            for k in 0..97 {
                // interior points only: edge cells drop to linear
                let x = 0.3 + 1.4 * (k as f64 + 0.5) / 97.0;
                let t = 0.2 + 0.6 * ((k * 37 % 97) as f64 + 0.5) / 97.0;
                worst = worst.max((u.sample(x, t).unwrap() - x.sin() * t.exp()).abs());
            }
            worst
        };
        let (e1, e2, e3) = (err(21), err(41), err(81));
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
        assert!(e2 / e3 > 12.0, "ratio {}", e2 / e3);
    }

    #[test]
    fn csv_dump_layout() {
        let g = GridSpec::new(0.0, 1.0, 3, 0.0, 1.0, 2).unwrap();
        let u = Field::from_fn(g, |x, t| x + t).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x,t,u,ut,ux,uxx");
        assert_eq!(lines.len(), 7);
        assert!(lines[2].starts_with("5.0000000000000000e-1,0.0000000000000000e0,"));
        let t_of = |l: &str| l.split(',').nth(1).unwrap().parse::<f64>().unwrap();
        assert_eq!(t_of(lines[3]), 0.0);
        assert_eq!(t_of(lines[4]), 1.0);
    }
}
