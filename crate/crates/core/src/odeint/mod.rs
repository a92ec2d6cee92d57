//! Integrators for autonomous systems `ds/dt = f(s)`.
//!
//! Fixed-step RK4 is used for model rollouts; adaptive Dormand–Prince 5(4)
//! generates ground truth. Both report states on a caller-supplied time grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Rk45,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step size for RK4.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Bound on attempted steps, rejected ones included.
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt,
            ..Self::rk45()
        }
    }

    pub fn rk45() -> Self {
        Self {
            method: Method::Rk45,
            dt: 0.1,
            rtol: 1e-9,
            atol: 1e-9,
            max_steps: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        match self.method {
            Method::Rk4 if !positive(self.dt) => {
                Err(Error::Config(format!("dt must be positive, got {}", self.dt)))
            }
            Method::Rk45 if !positive(self.rtol) || !positive(self.atol) => Err(Error::Config(
                format!("tolerances must be positive, got rtol={} atol={}", self.rtol, self.atol),
            )),
            _ => Ok(()),
        }
    }
}

/// States on the requested grid. If the state stopped being finite,
/// `states` holds the grid points reached before that and `blowup` the time
/// of the failing step.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub states: Vec<Vec<f64>>,
    pub blowup: Option<f64>,
    pub steps: usize,
}

impl Solution {
    pub fn is_complete(&self) -> bool {
        self.blowup.is_none()
    }
}

/// Like [`integrate_partial`], but a blow-up is an error.
pub fn integrate<F>(f: F, s0: &[f64], t_grid: &[f64], cfg: &IntegratorConfig) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let sol = integrate_partial(f, s0, t_grid, cfg)?;
    match sol.blowup {
        Some(t) => Err(Error::Overflow { t }),
        None => Ok(sol.states),
    }
}

/// Integrates from `t_grid[0]` (where the state is `s0`) across the grid.
///
/// A non-finite state, or a `NonFinite` error from `f`, ends the run early
/// with partial results rather than failing.
pub fn integrate_partial<F>(
    f: F,
    s0: &[f64],
    t_grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Solution>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if t_grid.is_empty() {
        return Err(Error::Config("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("time grid must be strictly increasing".into()));
    }
    if s0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    match cfg.method {
        Method::Rk4 => rk4(f, s0, t_grid, cfg),
        Method::Rk45 => dopri5(f, s0, t_grid, cfg),
    }
}

fn finite(s: &[f64]) -> bool {
    s.iter().all(|x| x.is_finite())
}

/// Evaluates `f`, mapping non-finite output to `None`.
fn eval<F>(f: &mut F, s: &[f64]) -> Result<Option<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    match f(s) {
        Ok(d) if d.len() != s.len() => Err(Error::DimensionMismatch {
            expected: s.len(),
            got: d.len(),
        }),
        Ok(d) if finite(&d) => Ok(Some(d)),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn axpy(s: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    s.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One classical RK4 step; `None` if any stage is non-finite.
pub fn rk4_step<F>(f: &mut F, s: &[f64], dt: f64) -> Result<Option<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let Some(k1) = eval(f, s)? else { return Ok(None) };
    let Some(k2) = eval(f, &axpy(s, dt / 2.0, &k1))? else { return Ok(None) };
    let Some(k3) = eval(f, &axpy(s, dt / 2.0, &k2))? else { return Ok(None) };
    let Some(k4) = eval(f, &axpy(s, dt, &k3))? else { return Ok(None) };
    let next: Vec<f64> = (0..s.len())
        .map(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    Ok(finite(&next).then_some(next))
}

fn rk4<F>(mut f: F, s0: &[f64], t_grid: &[f64], cfg: &IntegratorConfig) -> Result<Solution>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let t0 = t_grid[0];
    let dt = cfg.dt;
    // Grid points within this distance of a step time take the step state.
    let snap = 1e-9 * dt;
    let mut states = vec![s0.to_vec()];
    let mut next = 1;
    let mut k = 0usize;
    let mut s = s0.to_vec();
    while next < t_grid.len() {
        if k >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t: t0 + k as f64 * dt,
            });
        }
        let t_a = t0 + k as f64 * dt;
        let t_b = t0 + (k + 1) as f64 * dt;
        let Some(s_b) = rk4_step(&mut f, &s, dt)? else {
            return Ok(Solution {
                states,
                blowup: Some(t_b),
                steps: k + 1,
            });
        };
        while next < t_grid.len() && t_grid[next] <= t_b + snap {
            let t = t_grid[next];
            if (t - t_b).abs() <= snap {
                states.push(s_b.clone());
            } else {
                let theta = (t - t_a) / dt;
                states.push(s.iter().zip(&s_b).map(|(a, b)| a + theta * (b - a)).collect());
            }
            next += 1;
        }
        s = s_b;
        k += 1;
    }
    Ok(Solution {
        states,
        blowup: None,
        steps: k,
    })
}

// Dormand–Prince 5(4) tableau. The system is autonomous, so the nodes
// are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (same as the last row of `A`).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Embedded fourth-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn error_norm(s: &[f64], next: &[f64], err: &[f64], cfg: &IntegratorConfig) -> f64 {
    let sum: f64 = (0..s.len())
        .map(|i| {
            let sc = cfg.atol + cfg.rtol * s[i].abs().max(next[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / s.len() as f64).sqrt()
}

/// Starting step from the local scale of the problem.
fn initial_step<F>(f: &mut F, s: &[f64], k1: &[f64], cfg: &IntegratorConfig) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = s.len() as f64;
    let scale: Vec<f64> = s.iter().map(|x| cfg.atol + cfg.rtol * x.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&scale).map(|(a, b)| (a / b).powi(2)).sum::<f64>() / n).sqrt();
    let (d0, d1) = (rms(s), rms(k1));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let Some(k2) = eval(f, &axpy(s, h0, k1))? else { return Ok(h0) };
    let diff: Vec<f64> = k2.iter().zip(k1).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1))
}

fn dopri5<F>(mut f: F, s0: &[f64], t_grid: &[f64], cfg: &IntegratorConfig) -> Result<Solution>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let dim = s0.len();
    let mut states = vec![s0.to_vec()];
    let mut t = t_grid[0];
    let mut s = s0.to_vec();
    let Some(mut k1) = eval(&mut f, &s)? else {
        return Ok(Solution {
            states,
            blowup: Some(t),
            steps: 0,
        });
    };
    let mut h = initial_step(&mut f, &s, &k1, cfg)?;
    let mut steps = 0;
    let mut next = 1;
    let mut k = vec![vec![0.0; dim]; 7];

    while next < t_grid.len() {
        let target = t_grid[next];
        let mut hit = false;
        let mut step = h;
        if t + step >= target {
            step = target - t;
            hit = true;
        }
        if steps >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t,
            });
        }
        steps += 1;

        k[0].clone_from(&k1);
        let mut blown = false;
        for stage in 1..7 {
            let x: Vec<f64> = (0..dim)
                .map(|i| s[i] + step * (0..stage).map(|j| A[stage][j] * k[j][i]).sum::<f64>())
                .collect();
            match eval(&mut f, &x)? {
                Some(d) => k[stage] = d,
                None => {
                    blown = true;
                    break;
                }
            }
        }
        if blown {
            // Retry smaller before giving up, since a large trial step can
            // leave the region where the field is finite.
            if step > 1e-12 * t.abs().max(1.0) {
                h = step / 10.0;
                continue;
            }
            return Ok(Solution {
                states,
                blowup: Some(t + step),
                steps,
            });
        }
        let new: Vec<f64> = (0..dim)
            .map(|i| s[i] + step * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>())
            .collect();
        let err: Vec<f64> = (0..dim)
            .map(|i| step * (0..7).map(|j| (B5[j] - B4[j]) * k[j][i]).sum::<f64>())
            .collect();
        let e = error_norm(&s, &new, &err, cfg);
        if !e.is_finite() || !finite(&new) {
            h = step / 10.0;
            continue;
        }
        let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
        if e <= 1.0 {
            t = if hit { target } else { t + step };
            s = new;
            // First-same-as-last: the seventh stage is f at the new state.
            k1.clone_from(&k[6]);
            if hit {
                states.push(s.clone());
                next += 1;
                // Keep the untruncated step size for the next interval.
                h = h.max(step * factor);
            } else {
                h = step * factor;
            }
        } else {
            h = step * factor.min(1.0);
        }
    }
    Ok(Solution {
        states,
        blowup: None,
        steps,
    })
}

#[cfg(test)]
mod tests;
