//! Fixed-step explicit Runge-Kutta integrator of order five.
//!
//! Butcher's six-stage tableau:
//!
//! ```text
//!  0   |
//! 1/4  | 1/4
//! 1/4  | 1/8   1/8
//! 1/2  | 0     -1/2  1
//! 3/4  | 3/16  0     0      9/16
//!  1   | -3/7  2/7   12/7   -12/7  8/7
//! -----+------------------------------------
//!      | 7/90  0     32/90  12/90  32/90  7/90
//! ```

const A21: f64 = 1.0 / 4.0;
const A31: f64 = 1.0 / 8.0;
const A32: f64 = 1.0 / 8.0;
const A42: f64 = -1.0 / 2.0;
const A43: f64 = 1.0;
const A51: f64 = 3.0 / 16.0;
const A54: f64 = 9.0 / 16.0;
const A61: f64 = -3.0 / 7.0;
const A62: f64 = 2.0 / 7.0;
const A63: f64 = 12.0 / 7.0;
const A64: f64 = -12.0 / 7.0;
const A65: f64 = 8.0 / 7.0;

const B1: f64 = 7.0 / 90.0;
const B3: f64 = 32.0 / 90.0;
const B4: f64 = 12.0 / 90.0;
const B5: f64 = 32.0 / 90.0;
const B6: f64 = 7.0 / 90.0;

const C2: f64 = 1.0 / 4.0;
const C3: f64 = 1.0 / 4.0;
const C4: f64 = 1.0 / 2.0;
const C5: f64 = 3.0 / 4.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (coef, k) in terms {
        for (o, ki) in out.iter_mut().zip(k.iter()) {
            *o += coef * ki;
        }
    }
    out
}

/// Advance `y` at time `t` by one step of size `dt`.
pub fn step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], dt: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, y);
    let k2 = f(t + C2 * dt, &axpy(y, &[(dt * A21, &k1)]));
    let k3 = f(t + C3 * dt, &axpy(y, &[(dt * A31, &k1), (dt * A32, &k2)]));
    let k4 = f(t + C4 * dt, &axpy(y, &[(dt * A42, &k2), (dt * A43, &k3)]));
    let k5 = f(t + C5 * dt, &axpy(y, &[(dt * A51, &k1), (dt * A54, &k4)]));
    let k6 = f(
        t + dt,
        &axpy(
            y,
            &[
                (dt * A61, &k1),
                (dt * A62, &k2),
                (dt * A63, &k3),
                (dt * A64, &k4),
                (dt * A65, &k5),
            ],
        ),
    );
    axpy(
        y,
        &[
            (dt * B1, &k1),
            (dt * B3, &k3),
            (dt * B4, &k4),
            (dt * B5, &k5),
            (dt * B6, &k6),
        ],
    )
}

/// Integrate `n_steps` steps from `(t0, y0)`, handing every new state to
/// `visit` together with its step index. Stops early if `visit` breaks.
pub fn integrate<const N: usize, F, V, B>(
    f: F,
    t0: f64,
    y0: [f64; N],
    dt: f64,
    n_steps: usize,
    mut visit: V,
) -> std::ops::ControlFlow<B>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    V: FnMut(usize, &[f64; N]) -> std::ops::ControlFlow<B>,
{
    let mut y = y0;
    let mut t = t0;
    for k in 0..n_steps {
        y = step(&f, t, &y, dt);
        // t accumulates as k*dt to avoid drift from repeated addition
        t = t0 + (k + 1) as f64 * dt;
        visit(k, &y)?;
    }
    std::ops::ControlFlow::Continue(())
}
