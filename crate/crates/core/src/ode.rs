//! Adaptive Dormand-Prince 5(4) integration for small fixed-size systems.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step; also the spacing bound of recorded output.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-12, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at x = {x}")]
    StepUnderflow { x: f64 },
    #[error("exceeded {max_steps} steps before reaching x = {x_end}")]
    TooManySteps { max_steps: usize, x_end: f64 },
    #[error("non-finite state at x = {x}")]
    NonFinite { x: f64 },
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B_LOW: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Integrates `y' = f(x, y)` from `x0` to `x_end`, calling `observe` at the
/// start and after every accepted step. Returns the final state.
pub fn dopri5<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    opts: &OdeOptions,
    mut observe: impl FnMut(f64, &[f64; N]),
) -> Result<[f64; N], OdeError> {
    let mut x = x0;
    let mut y = y0;
    observe(x, &y);
    if x_end <= x0 {
        return Ok(y);
    }
    let span = x_end - x0;
    let mut h = (span * 1e-3).min(opts.h_max).min(0.1);
    let mut k = [[0.0; N]; 7];
    k[0] = f(x, &y);
    for _ in 0..opts.max_steps {
        if x >= x_end {
            return Ok(y);
        }
        let last = x + h >= x_end;
        if last {
            h = x_end - x;
        }
        for s in 1..7 {
            let mut ys = y;
            for (j, a) in A[s][..s].iter().enumerate() {
                if *a != 0.0 {
                    for d in 0..N {
                        ys[d] += h * a * k[j][d];
                    }
                }
            }
            k[s] = f(x + C[s] * h, &ys);
        }
        let mut y_new = y;
        let mut err: f64 = 0.0;
        for d in 0..N {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..7 {
                hi += B[s] * k[s][d];
                lo += B_LOW[s] * k[s][d];
            }
            y_new[d] += h * hi;
            let scale = opts.atol + opts.rtol * y[d].abs().max(y_new[d].abs());
            err = err.max((h * (hi - lo)).abs() / scale);
        }
        if !y_new.iter().all(|v| v.is_finite()) {
            return Err(OdeError::NonFinite { x });
        }
        if err <= 1.0 {
            x = if last { x_end } else { x + h };
            y = y_new;
            // first-same-as-last: stage 7 is f at the new point
            k[0] = k[6];
            observe(x, &y);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(opts.h_max);
        if h < 1e-14 * span.max(x.abs()) {
            return Err(OdeError::StepUnderflow { x });
        }
    }
    if x >= x_end {
        Ok(y)
    } else {
        Err(OdeError::TooManySteps { max_steps: opts.max_steps, x_end })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let y = dopri5(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            &OdeOptions::default(),
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
        assert!(y[1].abs() < 1e-10);
    }

    #[test]
    fn output_spacing_respects_h_max() {
        let mut xs = Vec::new();
        let opts = OdeOptions { h_max: 0.05, ..OdeOptions::default() };
        dopri5(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 1.0, &opts, |x, _| xs.push(x)).unwrap();
        assert_eq!(xs.first(), Some(&0.0));
        assert_eq!(xs.last(), Some(&1.0));
        assert!(xs.windows(2).all(|w| w[1] - w[0] <= 0.05 + 1e-15));
    }
}
