use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// `g / l` of the single pendulum.
pub const PENDULUM_G: f64 = 3.0;

/// Damping coefficient of the Cartesian pendulum.
pub const DAMPING: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    MassSpring,
    SinglePendulum,
    DoublePendulum,
    DampedPendulumXy,
}

impl System {
    pub const ALL: [System; 4] = [
        System::MassSpring,
        System::SinglePendulum,
        System::DoublePendulum,
        System::DampedPendulumXy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::MassSpring => "mass_spring",
            System::SinglePendulum => "single_pendulum",
            System::DoublePendulum => "double_pendulum",
            System::DampedPendulumXy => "damped_pendulum_xy",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            System::MassSpring | System::SinglePendulum => 2,
            System::DoublePendulum | System::DampedPendulumXy => 4,
        }
    }

    /// Whether the true flow conserves [`System::energy`].
    pub fn is_conservative(self) -> bool {
        self != System::DampedPendulumXy
    }

    fn check(self, s: &[f64]) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: s.len(),
            });
        }
        Ok(())
    }

    /// The true vector field.
    pub fn rhs(self, s: &[f64]) -> Result<Vec<f64>> {
        self.check(s)?;
        Ok(match self {
            System::MassSpring => vec![s[1], -s[0]],
            System::SinglePendulum => vec![s[1], -PENDULUM_G * s[0].sin()],
            System::DoublePendulum => {
                let (t1, t2, w1, w2) = (s[0], s[1], s[2], s[3]);
                let delta = t1 - t2;
                let den = 3.0 - (2.0 * delta).cos();
                let a1 = (-3.0 * t1.sin()
                    - (t1 - 2.0 * t2).sin()
                    - 2.0 * delta.sin() * (w2 * w2 + w1 * w1 * delta.cos()))
                    / den;
                let a2 = 2.0 * delta.sin() * (2.0 * w1 * w1 + 2.0 * t1.cos() + w2 * w2 * delta.cos())
                    / den;
                vec![w1, w2, a1, a2]
            }
            System::DampedPendulumXy => {
                let (x, y, vx, vy) = (s[0], s[1], s[2], s[3]);
                let r2 = x * x + y * y;
                if !(r2 > 0.0) {
                    return Err(Error::Domain("pendulum bob at the pivot".into()));
                }
                let r = r2.sqrt();
                let (sin, cos) = (x / r, -y / r);
                let omega = (x * vy - y * vx) / r2;
                let alpha = -sin - DAMPING * omega;
                // Centripetal term -omega^2 (x, y) keeps |(x, y)| constant
                // off the unit circle as well.
                vec![
                    vx,
                    vy,
                    -omega * omega * x + cos * alpha,
                    -omega * omega * y + sin * alpha,
                ]
            }
        })
    }

    /// Total energy, shifted so the resting state has zero energy.
    ///
    /// The Cartesian pendulum uses `(vx^2 + vy^2) / 2 + (1 + y)`, which
    /// equals `omega^2 / 2 + 1 - cos(theta)` on the unit circle.
    pub fn energy(self, s: &[f64]) -> Result<f64> {
        self.check(s)?;
        Ok(match self {
            System::MassSpring => 0.5 * (s[0] * s[0] + s[1] * s[1]),
            System::SinglePendulum => 0.5 * s[1] * s[1] + PENDULUM_G * (1.0 - s[0].cos()),
            System::DoublePendulum => {
                let (t1, t2, w1, w2) = (s[0], s[1], s[2], s[3]);
                w1 * w1 + 0.5 * w2 * w2 + w1 * w2 * (t1 - t2).cos() - 2.0 * t1.cos() - t2.cos() + 3.0
            }
            System::DampedPendulumXy => 0.5 * (s[2] * s[2] + s[3] * s[3]) + 1.0 + s[1],
        })
    }

    /// The true vector field recorded on a tape, for every row of `s`.
    pub fn rhs_tape(self, tape: &mut Tape, s: Var) -> Result<Var> {
        let n = tape.shape(s).1;
        if n != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: n,
            });
        }
        let c: Vec<Var> = (0..n).map(|i| tape.col(s, i)).collect();
        let parts = match self {
            System::MassSpring => vec![c[1], tape.neg(c[0])],
            System::SinglePendulum => {
                let sin = tape.sin(c[0]);
                vec![c[1], tape.scale(sin, -PENDULUM_G)]
            }
            System::DoublePendulum => {
                let (t1, t2, w1, w2) = (c[0], c[1], c[2], c[3]);
                let delta = tape.sub(t1, t2);
                let two_delta = tape.scale(delta, 2.0);
                let cos2 = tape.cos(two_delta);
                let den = tape.affine(cos2, -1.0, 3.0);
                let sin_d = tape.sin(delta);
                let cos_d = tape.cos(delta);
                let w1s = tape.square(w1);
                let w2s = tape.square(w2);

                let sin1 = tape.sin(t1);
                let t2x2 = tape.scale(t2, 2.0);
                let arg = tape.sub(t1, t2x2);
                let sin_arg = tape.sin(arg);
                let w1s_cos = tape.mul(w1s, cos_d);
                let inner = tape.add(w2s, w1s_cos);
                let coupling = tape.mul(sin_d, inner);
                let coupling = tape.scale(coupling, 2.0);
                let num = tape.scale(sin1, -3.0);
                let num = tape.sub(num, sin_arg);
                let num = tape.sub(num, coupling);
                let a1 = tape.div(num, den);

                let cos1 = tape.cos(t1);
                let w2s_cos = tape.mul(w2s, cos_d);
                let inner = tape.add(w1s, cos1);
                let inner = tape.scale(inner, 2.0);
                let inner = tape.add(inner, w2s_cos);
                let num = tape.mul(sin_d, inner);
                let num = tape.scale(num, 2.0);
                let a2 = tape.div(num, den);
                vec![w1, w2, a1, a2]
            }
            System::DampedPendulumXy => {
                let (x, y, vx, vy) = (c[0], c[1], c[2], c[3]);
                if tape
                    .value(s)
                    .rows()
                    .into_iter()
                    .any(|r| !(r[0] * r[0] + r[1] * r[1] > 0.0))
                {
                    return Err(Error::Domain("pendulum bob at the pivot".into()));
                }
                let x2 = tape.square(x);
                let y2 = tape.square(y);
                let r2 = tape.add(x2, y2);
                let r = tape.sqrt(r2);
                let sin = tape.div(x, r);
                let ny = tape.neg(y);
                let cos = tape.div(ny, r);
                let xvy = tape.mul(x, vy);
                let yvx = tape.mul(y, vx);
                let cross = tape.sub(xvy, yvx);
                let omega = tape.div(cross, r2);
                let damp = tape.scale(omega, DAMPING);
                let nsin = tape.neg(sin);
                let alpha = tape.sub(nsin, damp);
                let omega2 = tape.square(omega);
                let a = tape.mul(x, omega2);
                let b = tape.mul(cos, alpha);
                let ax = tape.sub(b, a);
                let a = tape.mul(y, omega2);
                let b = tape.mul(sin, alpha);
                let ay = tape.sub(b, a);
                vec![vx, vy, ax, ay]
            }
        };
        Ok(tape.concat_cols(&parts))
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}
