//! Small derivative-based and derivative-free optimizers.

use crate::error::{Error, Result};

/// `(argmin, min)` of `f` on `[lo, hi]` by Brent's parabolic/golden-section
/// search with absolute tolerance `xtol`.
pub fn brent_minimize<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo <= hi) {
        return Err(Error::contract("Brent bracket must satisfy lo <= hi"));
    }
    if lo == hi {
        return Ok((lo, f(lo)?));
    }
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = xtol * 0.5 + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = f(u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok((x, fx))
}

/// Root of a continuous, monotone non-increasing `f` on `[lo, hi]` with
/// `f(lo) ≥ 0 ≥ f(hi)`, to bracket width `xtol`.
pub fn bisect_decreasing<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    for _ in 0..400 {
        if hi - lo <= xtol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::contract("box bounds must satisfy lower <= upper"));
        }
        Ok(BoxBounds { lower, upper })
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).max(f64::MIN_POSITIVE))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsSettings {
    pub max_iter: usize,
    /// Stop when the free gradient, scaled by the box widths, is below
    /// `gtol · (1 + |f|)`.
    pub gtol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        BfgsSettings {
            max_iter: 100,
            gtol: 1e-6,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    SmallStep,
    LineSearch,
    MaxIterations,
    SimplexCollapsed,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

/// Projected BFGS with Armijo backtracking along the projection arc.
/// The returned value never exceeds the value at the projected start.
pub fn projected_bfgs<F>(
    mut f: F,
    x0: &[f64],
    bounds: &BoxBounds,
    settings: BfgsSettings,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let widths = bounds.widths();
    let mut x = bounds.project(x0);
    let (mut fx, mut g) = f(&x)?;
    let mut evaluations = 1;
    let mut hinv = vec![vec![0.0; n]; n];
    let reset = |g: &[f64], h: &mut Vec<Vec<f64>>| {
        // first trial step moves at most 10% of each box width
        for i in 0..n {
            h[i].iter_mut().for_each(|v| *v = 0.0);
            let gi = g[i].abs().max(f64::MIN_POSITIVE);
            h[i][i] = 0.1 * widths[i] / gi;
        }
    };
    reset(&g, &mut hinv);

    for iter in 0..settings.max_iter {
        let free: Vec<bool> = (0..n)
            .map(|i| {
                !((x[i] <= bounds.lower[i] && g[i] > 0.0)
                    || (x[i] >= bounds.upper[i] && g[i] < 0.0))
            })
            .collect();
        let gscaled = (0..n)
            .filter(|&i| free[i])
            .map(|i| (g[i] * widths[i]).abs())
            .fold(0.0, f64::max);
        if gscaled <= settings.gtol * (1.0 + fx.abs()) {
            return Ok(OptimResult {
                x,
                value: fx,
                iterations: iter,
                evaluations,
                reason: StopReason::Gradient,
            });
        }
        let mut d = vec![0.0; n];
        for i in 0..n {
            if free[i] {
                d[i] = -(0..n)
                    .filter(|&j| free[j])
                    .map(|j| hinv[i][j] * g[j])
                    .sum::<f64>();
            }
        }
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            reset(&g, &mut hinv);
            for i in 0..n {
                d[i] = if free[i] { -hinv[i][i] * g[i] } else { 0.0 };
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let trial: Vec<f64> = bounds.project(
                &x.iter()
                    .zip(&d)
                    .map(|(a, b)| a + alpha * b)
                    .collect::<Vec<_>>(),
            );
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().zip(&widths).all(|(s, w)| s.abs() <= 1e-12 * w) {
                break;
            }
            let (ft, gt) = f(&trial)?;
            evaluations += 1;
            let decrease: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            if ft.is_finite() && ft <= fx + settings.armijo * decrease {
                accepted = Some((trial, step, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, s, f_new, g_new)) = accepted else {
            return Ok(OptimResult {
                x,
                value: fx,
                iterations: iter,
                evaluations,
                reason: StopReason::LineSearch,
            });
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i][j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] +=
                        rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        let small = s.iter().zip(&widths).all(|(sv, w)| sv.abs() <= 1e-9 * w);
        x = x_new;
        fx = f_new;
        g = g_new;
        if small {
            return Ok(OptimResult {
                x,
                value: fx,
                iterations: iter + 1,
                evaluations,
                reason: StopReason::SmallStep,
            });
        }
    }
    Ok(OptimResult {
        x,
        value: fx,
        iterations: settings.max_iter,
        evaluations,
        reason: StopReason::MaxIterations,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadSettings {
    pub max_evaluations: usize,
    /// Simplex diameter, relative to the box widths, at which the search stops.
    pub xtol: f64,
    pub ftol: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        NelderMeadSettings {
            max_evaluations: 400,
            xtol: 1e-7,
            ftol: 1e-13,
        }
    }
}

/// Nelder–Mead with every trial point projected onto the box.
pub fn nelder_mead_box<F>(
    mut f: F,
    x0: &[f64],
    bounds: &BoxBounds,
    settings: NelderMeadSettings,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let widths = bounds.widths();
    let start = bounds.project(x0);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = 0.05 * widths[i];
        v[i] = if v[i] + step <= bounds.upper[i] {
            v[i] + step
        } else {
            v[i] - step
        };
        simplex.push(bounds.project(&v));
    }
    let mut values = Vec::with_capacity(n + 1);
    for v in &simplex {
        values.push(f(v)?);
    }
    let mut evaluations = n + 1;
    let mut iterations = 0;
    let mut reason = StopReason::MaxIterations;
    while evaluations < settings.max_evaluations {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .zip(&widths)
                    .map(|((a, b), w)| (a - b).abs() / w)
            })
            .fold(0.0, f64::max);
        if diameter <= settings.xtol
            || spread <= settings.ftol * (1.0 + values[0].abs()) && diameter <= 1e-3
        {
            reason = StopReason::SimplexCollapsed;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            bounds.project(
                &centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect::<Vec<_>>(),
            )
        };
        let xr = along(1.0);
        let fr = f(&xr)?;
        evaluations += 1;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = f(&xe)?;
            evaluations += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(0.5);
                let fc = f(&xc)?;
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc)?;
                (xc, fc)
            };
            evaluations += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    values[i] = f(&shrunk)?;
                    simplex[i] = shrunk;
                    evaluations += 1;
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    Ok(OptimResult {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        evaluations,
        reason,
    })
}
