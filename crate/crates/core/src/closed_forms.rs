//! Global solutions of `u_xx - u_t = 1{u > 0}` on the whole plane: the
//! half-space solutions `v_+`, `v_-` and the family `v_m`, `m in [-1, 0]`,
//! which contains `v_{-1} = max(0, -t)` and `v_0 = x^2 / 2`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{Field, GridError, GridSpec, Jet, Rect, Surface};
use crate::profile::{profile_for, ProfileError, SelfSimilarProfile};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormName {
    VPlus,
    VMinus,
    VM(f64),
    /// `max(0, -t)`, identical to `v_{-1}`.
    Counterexample,
}

impl fmt::Display for ClosedFormName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClosedFormName::VPlus => f.write_str("v_plus"),
            ClosedFormName::VMinus => f.write_str("v_minus"),
            ClosedFormName::VM(m) => write!(f, "v_m({m})"),
            ClosedFormName::Counterexample => f.write_str("counterexample"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosedFormError {
    #[error("m = {0} is outside [-1, 0]")]
    OutOfRange(f64),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// An evaluable member of the classified family.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    name: ClosedFormName,
    profile: Option<Arc<SelfSimilarProfile>>,
}

// the profile is a function of the name
impl PartialEq for ClosedForm {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl ClosedForm {
    pub fn new(name: ClosedFormName) -> Result<Self, ClosedFormError> {
        let profile = match name {
            ClosedFormName::VM(m) if !(-1.0..=0.0).contains(&m) => return Err(ClosedFormError::OutOfRange(m)),
            ClosedFormName::VM(m) if m > -1.0 && m < 0.0 => Some(profile_for(m)?),
            _ => None,
        };
        Ok(Self { name, profile })
    }

    pub fn v_plus() -> Self {
        Self { name: ClosedFormName::VPlus, profile: None }
    }

    pub fn v_minus() -> Self {
        Self { name: ClosedFormName::VMinus, profile: None }
    }

    pub fn counterexample() -> Self {
        Self { name: ClosedFormName::Counterexample, profile: None }
    }

    pub fn v_m(m: f64) -> Result<Self, ClosedFormError> {
        Self::new(ClosedFormName::VM(m))
    }

    pub fn name(&self) -> ClosedFormName {
        self.name
    }

    pub fn profile(&self) -> Option<&SelfSimilarProfile> {
        self.profile.as_deref()
    }

    /// The `m` of the family member, with `v_{-1}` for the counterexample.
    pub fn family_m(&self) -> Option<f64> {
        match self.name {
            ClosedFormName::VM(m) => Some(m),
            ClosedFormName::Counterexample => Some(-1.0),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        self.exact_jet(x, t).u
    }

    /// Exact value and first derivatives.
    pub fn exact_jet(&self, x: f64, t: f64) -> Jet {
        match self.name {
            ClosedFormName::VPlus => {
                let p = x.max(0.0);
                Jet { u: 0.5 * p * p, ux: p, ut: 0.0 }
            }
            ClosedFormName::VMinus => {
                let p = (-x).max(0.0);
                Jet { u: 0.5 * p * p, ux: -p, ut: 0.0 }
            }
            ClosedFormName::Counterexample => family_jet(-1.0, None, x, t),
            ClosedFormName::VM(m) => family_jet(m, self.profile.as_deref(), x, t),
        }
    }

    /// Exact `u_xx`, where it exists.
    pub fn exact_uxx(&self, x: f64, t: f64) -> f64 {
        match self.name {
            ClosedFormName::VPlus => f64::from(x > 0.0),
            ClosedFormName::VMinus => f64::from(x < 0.0),
            ClosedFormName::Counterexample => 0.0,
            ClosedFormName::VM(m) => {
                if t <= 0.0 {
                    1.0 + m
                } else if m == 0.0 {
                    1.0
                } else {
                    match self.profile.as_deref() {
                        Some(p) => p.eval(x.abs() / t.sqrt()).2,
                        None => 0.0,
                    }
                }
            }
        }
    }

    /// Samples the closed form on every node of `grid`.
    pub fn field(&self, grid: &GridSpec) -> Result<Field, GridError> {
        Field::from_fn(*grid, |x, t| self.eval(x, t))
    }
}

fn family_jet(m: f64, profile: Option<&SelfSimilarProfile>, x: f64, t: f64) -> Jet {
    if t <= 0.0 {
        return Jet { u: m * t + 0.5 * (1.0 + m) * x * x, ux: (1.0 + m) * x, ut: m };
    }
    if m == 0.0 {
        return Jet { u: 0.5 * x * x, ux: x, ut: 0.0 };
    }
    let Some(p) = profile else {
        // m = -1: the positive set is empty for t > 0
        return Jet::default();
    };
    let rt = t.sqrt();
    let xi = x.abs() / rt;
    let (v, vp, _) = p.eval(xi);
    Jet { u: t * v, ux: x.signum() * rt * vp, ut: v - 0.5 * xi * vp }
}

impl Surface for ClosedForm {
    fn jet(&self, x: f64, t: f64) -> Result<Jet, GridError> {
        Ok(self.exact_jet(x, t))
    }

    fn value(&self, x: f64, t: f64) -> Result<f64, GridError> {
        Ok(self.eval(x, t))
    }

    fn domain(&self) -> Option<Rect> {
        None
    }
}

/// Evaluates a named closed form; profiles are computed once per `m`.
pub fn eval_closed_form(name: ClosedFormName, x: f64, t: f64) -> Result<f64, ClosedFormError> {
    Ok(ClosedForm::new(name)?.eval(x, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max_residual: f64,
    /// Number of nodes where the residual was measured.
    pub nodes: usize,
    pub h: f64,
    pub tau: f64,
}

/// Largest discrete residual `|u_xx - u_t - 1{u > 0}|` of the sampled closed
/// form, over interior nodes whose stencil neighbourhood stays at least `2h`
/// (and two cells in each direction) from a change of sign of `u`.
///
/// Both `u_xx` and `u_t` are central differences. Near the vertex of a
/// `v_m` parabola the time derivatives of the profile grow like `1/t`, so a
/// first-order `u_t` would swamp the `O(h^2)` spatial error; pick `tau`
/// around `h^2 / 4` for `v_m` with `-1 < m < 0`.
pub fn residual_on_grid(form: &ClosedForm, grid: &GridSpec) -> Result<ResidualReport, ClosedFormError> {
    let u = form.field(grid)?;
    let (h, tau) = (grid.h(), grid.tau());
    let (nx, nt) = (grid.nx, grid.nt);
    let mut report = ResidualReport { max_residual: 0.0, nodes: 0, h, tau };
    if nt < 3 {
        return Ok(report);
    }
    // 2-D prefix counts of positive nodes make the band test O(1) per node
    let w = nx + 1;
    let mut count = vec![0u32; w * (nt + 1)];
    for n in 0..nt {
        for i in 0..nx {
            let p = u32::from(u.get(i, n) > 0.0);
            count[(n + 1) * w + i + 1] = p + count[n * w + i + 1] + count[(n + 1) * w + i] - count[n * w + i];
        }
    }
    let block = |i0: usize, i1: usize, n0: usize, n1: usize| {
        count[(n1 + 1) * w + i1 + 1] + count[n0 * w + i0] - count[n0 * w + i1 + 1] - count[(n1 + 1) * w + i0]
    };
    let di = 2usize;
    let dn = ((2.0 * h / tau).ceil() as usize).max(2);
    for n in 1..nt - 1 {
        for i in 1..nx - 1 {
            let here = u.get(i, n) > 0.0;
            let (i0, i1) = (i.saturating_sub(di), (i + di).min(nx - 1));
            let (n0, n1) = (n.saturating_sub(dn), (n + dn).min(nt - 1));
            let total = ((i1 - i0 + 1) * (n1 - n0 + 1)) as u32;
            let pos = block(i0, i1, n0, n1);
            if pos != if here { total } else { 0 } {
                continue;
            }
            let uxx = (u.get(i - 1, n) - 2.0 * u.get(i, n) + u.get(i + 1, n)) / (h * h);
            let ut = (u.get(i, n + 1) - u.get(i, n - 1)) / (2.0 * tau);
            let r = uxx - ut - f64::from(here);
            report.max_residual = report.max_residual.max(r.abs());
            report.nodes += 1;
        }
    }
    Ok(report)
}
