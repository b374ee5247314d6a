use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::rk5;
use crate::error::{Error, Result};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemId {
    Chua,
    Duffing,
    Lorenz,
    Rikitake,
    Rossler,
}

impl SystemId {
    /// Declaration order, which is also the class-label order.
    pub const ALL: [SystemId; 5] = [
        SystemId::Chua,
        SystemId::Duffing,
        SystemId::Lorenz,
        SystemId::Rikitake,
        SystemId::Rossler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemId::Chua => "chua",
            SystemId::Duffing => "duffing",
            SystemId::Lorenz => "lorenz",
            SystemId::Rikitake => "rikitake",
            SystemId::Rossler => "rossler",
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed constants of each system. The remaining parameter (Chua `b`,
/// Duffing `b`, Lorenz `rho`, Rikitake `a`, Rossler `c`) is drawn per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum Dynamics {
    Chua { a: f64, nu1: f64, nu2: f64 },
    Duffing { a: f64, omega: f64 },
    Lorenz { sigma: f64, beta: f64 },
    Rikitake { b: f64, c: f64, d: f64 },
    Rossler { a: f64, b: f64 },
}

impl Dynamics {
    pub fn id(&self) -> SystemId {
        match self {
            Dynamics::Chua { .. } => SystemId::Chua,
            Dynamics::Duffing { .. } => SystemId::Duffing,
            Dynamics::Lorenz { .. } => SystemId::Lorenz,
            Dynamics::Rikitake { .. } => SystemId::Rikitake,
            Dynamics::Rossler { .. } => SystemId::Rossler,
        }
    }

    /// Right-hand side `dX/dt` with the sampled parameter `p`.
    #[inline]
    pub fn derivative(&self, p: f64, s: &[f64; 3]) -> [f64; 3] {
        let [x, y, z] = *s;
        match *self {
            Dynamics::Chua { a, nu1, nu2 } => {
                let h = nu2 * x + 0.5 * (nu1 - nu2) * ((x + 1.0).abs() - (x - 1.0).abs());
                [a * (y - x - h), x - y - z, -p * y]
            }
            Dynamics::Duffing { a, omega } => [y, -a * y - x * x * x + p * (omega * z).cos(), 1.0],
            Dynamics::Lorenz { sigma, beta } => [sigma * (y - x), x * (p - z) - y, x * y - beta * z],
            Dynamics::Rikitake { b, c, d } => [-p * x + y * (z + c), -b * y + x * (z - c), d * z - x * y],
            Dynamics::Rossler { a, b } => [-(y + z), x + a * y, b + z * (x - p)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub dynamics: Dynamics,
    pub sampled_param: Interval,
    pub init: [Interval; 3],
}

/// Forcing frequency of the Duffing oscillator.
pub const DUFFING_OMEGA: f64 = 1.2;

impl SystemSpec {
    pub fn standard(id: SystemId) -> Self {
        Self::with_duffing_omega(id, DUFFING_OMEGA)
    }

    pub fn with_duffing_omega(id: SystemId, omega: f64) -> Self {
        let iv = Interval::new;
        match id {
            SystemId::Chua => SystemSpec {
                dynamics: Dynamics::Chua {
                    a: 15.6,
                    nu1: -1.143,
                    nu2: -0.714,
                },
                sampled_param: iv(25.0, 51.0),
                init: [iv(0.6, 0.61), iv(0.2, 0.21), iv(0.1, 0.11)],
            },
            SystemId::Duffing => SystemSpec {
                dynamics: Dynamics::Duffing { a: 0.1, omega },
                sampled_param: iv(0.1, 0.65),
                init: [iv(0.6, 7.5), iv(0.2, 1.5), iv(0.1, 1.6)],
            },
            SystemId::Lorenz => SystemSpec {
                dynamics: Dynamics::Lorenz {
                    sigma: 10.0,
                    beta: 8.0 / 3.0,
                },
                sampled_param: iv(28.0, 100.0),
                init: [iv(0.6, 1.1), iv(0.2, 0.7), iv(0.1, 0.6)],
            },
            SystemId::Rikitake => SystemSpec {
                dynamics: Dynamics::Rikitake {
                    b: 3.0,
                    c: 5.0,
                    d: 0.75,
                },
                sampled_param: iv(2.0, 7.0),
                init: [iv(0.6, 1.1), iv(0.2, 0.7), iv(0.1, 0.6)],
            },
            SystemId::Rossler => SystemSpec {
                dynamics: Dynamics::Rossler { a: 0.2, b: 0.2 },
                sampled_param: iv(4.0, 18.0),
                init: [iv(0.6, 1.6), iv(0.2, 1.2), iv(0.1, 1.1)],
            },
        }
    }

    pub fn id(&self) -> SystemId {
        self.dynamics.id()
    }
}

/// Integrate `n_steps` fixed RK5 steps from `init`. Column `k` of the result
/// holds the state after `k + 1` steps.
pub fn integrate_system(
    spec: &SystemSpec,
    init: [f64; 3],
    sampled_param: f64,
    n_steps: usize,
    dt: f64,
) -> Result<Array2<f64>> {
    use std::ops::ControlFlow;

    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config("dt", format!("must be positive, got {dt}")));
    }
    let dynamics = spec.dynamics;
    let mut traj = Array2::<f64>::zeros((3, n_steps));
    let flow = rk5::integrate(
        |_, s: &[f64; 3]| dynamics.derivative(sampled_param, s),
        0.0,
        init,
        dt,
        n_steps,
        |k, s| {
            if s.iter().any(|v| !v.is_finite()) {
                return ControlFlow::Break(k);
            }
            for (c, v) in s.iter().enumerate() {
                traj[[c, k]] = *v;
            }
            ControlFlow::Continue(())
        },
    );
    match flow {
        ControlFlow::Continue(()) => Ok(traj),
        ControlFlow::Break(step) => Err(Error::NonFiniteState {
            system: spec.id().to_string(),
            step,
        }),
    }
}
