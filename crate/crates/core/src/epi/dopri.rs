//! Dormand–Prince 5(4) with FSAL stages and the standard 4th-order dense output.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-8,
            max_steps: 1_000_000,
        }
    }
}

/// Integrates `y' = f(t, y)` from `grid[0]` with `y(grid[0]) = y0` and returns
/// the dense-output solution at every grid point (row per grid point).
pub fn integrate_on_grid<F>(
    mut f: F,
    y0: &[f64],
    grid: &[f64],
    tol: Tolerances,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut out = Vec::with_capacity(grid.len());
    if grid.is_empty() {
        return Ok(out);
    }
    let t_end = *grid.last().unwrap();
    let mut t = grid[0];
    let mut y = y0.to_vec();
    out.push(y.clone());
    let mut next = 1;
    if next == grid.len() {
        return Ok(out);
    }

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut cont = vec![[0.0; 5]; n];

    f(t, &y, &mut k1);
    let mut h = initial_step(&mut f, t, &y, &k1, t_end - t, tol);
    let mut steps = 0;
    let mut fac_old: f64 = 1e-4;

    while next < grid.len() {
        steps += 1;
        if steps > tol.max_steps {
            return Err(Error::Integration {
                t,
                reason: "step budget exhausted".into(),
            });
        }
        if h < 1e-12 * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow (h = {h:e})"),
            });
        }
        if t + h > t_end {
            h = t_end - t;
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &ynew, &mut k7);

        let mut err = 0.0;
        for i in 0..n {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol.atol + tol.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            continue;
        }

        if err <= 1.0 {
            let t_new = t + h;
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                cont[i] = [
                    y[i],
                    ydiff,
                    bspl,
                    ydiff - h * k7[i] - bspl,
                    h * (D1 * k1[i]
                        + D3 * k3[i]
                        + D4 * k4[i]
                        + D5 * k5[i]
                        + D6 * k6[i]
                        + D7 * k7[i]),
                ];
            }
            while next < grid.len() && grid[next] <= t_new {
                let theta = (grid[next] - t) / h;
                let theta1 = 1.0 - theta;
                let row = if grid[next] == t_new {
                    ynew.clone()
                } else {
                    cont.iter()
                        .map(|r| {
                            r[0] + theta * (r[1] + theta1 * (r[2] + theta * (r[3] + theta1 * r[4])))
                        })
                        .collect()
                };
                out.push(row);
                next += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            // PI step-size control (Hairer's beta = 0.04)
            let fac = (err.max(1e-10).powf(0.2 - 0.04 * 0.75) / fac_old.powf(0.04)) / 0.9;
            let fac = fac.clamp(1.0 / 10.0, 5.0);
            fac_old = err.max(1e-4);
            h /= fac;
        } else {
            let fac = (err.powf(0.2) / 0.9).min(5.0);
            h /= fac;
        }
    }
    Ok(out)
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], span: f64, tol: Tolerances) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d1 = (f0
        .iter()
        .zip(&sc)
        .map(|(v, s)| (v / s).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, d)| v + h0 * d).collect();
    let mut f1 = vec![0.0; n];
    f(t + h0, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 0.37).collect();
        let sol = integrate_on_grid(
            |_, y, d| d[0] = -0.7 * y[0],
            &[2.0],
            &grid,
            Tolerances::default(),
        )
        .unwrap();
        for (t, row) in grid.iter().zip(&sol) {
            let exact = 2.0 * (-0.7 * t).exp();
            assert!(
                (row[0] - exact).abs() <= 1e-7,
                "t={t}: {} vs {exact}",
                row[0]
            );
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let grid: Vec<f64> = (0..=400).map(|k| k as f64 * 0.05).collect();
        let sol = integrate_on_grid(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            &[1.0, 0.0],
            &grid,
            Tolerances::default(),
        )
        .unwrap();
        for (t, row) in grid.iter().zip(&sol) {
            assert!((row[0] - t.cos()).abs() < 1e-6);
            assert!((row[1] + t.sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn blow_up_reports_failure_time() {
        let grid = [0.0, 0.5, 2.0];
        let res = integrate_on_grid(
            |_, y, d| d[0] = y[0] * y[0],
            &[1.0],
            &grid,
            Tolerances::default(),
        );
        match res {
            Err(Error::Integration { t, .. }) => assert!(t > 0.5 && t <= 1.0 + 1e-6, "t = {t}"),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
