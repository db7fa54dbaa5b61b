use crate::basis::Fitter;
use crate::epi::SampledTrajectory;
use crate::error::{Error, Result};
use crate::fspace::{squared_distance, BlockGram, CoefVector, ShiftableCurve};
use crate::optim::{bisect_decreasing, brent_minimize};

/// Tolerance of the per-curve shift search, in days.
pub(crate) const SHIFT_XTOL: f64 = 1e-3;

/// Peak alignment: `δ_j = peak_j − mean(peak)`, clipped and re-centered.
///
/// Shifting curve `j` by `δ_j` moves its peak to the mean peak time.
pub fn init_shifts(trajs: &[SampledTrajectory], delta_max: f64) -> Result<Vec<f64>> {
    if trajs.is_empty() {
        return Err(Error::contract("at least one trajectory is required"));
    }
    let peaks = trajs
        .iter()
        .map(|t| t.peak_time())
        .collect::<Result<Vec<_>>>()?;
    let mean = peaks.iter().sum::<f64>() / peaks.len() as f64;
    let raw: Vec<f64> = peaks
        .iter()
        .map(|p| (p - mean).clamp(-delta_max, delta_max))
        .collect();
    Ok(center_shifts(&raw, delta_max).0)
}

/// `(clip(δ̃ − μ), μ)` with `μ` the root of `μ ↦ Σ_j clip(δ̃_j − μ)`.
///
/// The sum is continuous and non-increasing in `μ`, so bisection finds the
/// root; the leftover is then spread over the entries strictly inside the box.
pub fn center_shifts(raw: &[f64], delta_max: f64) -> (Vec<f64>, f64) {
    if raw.is_empty() {
        return (Vec::new(), 0.0);
    }
    if delta_max == 0.0 {
        return (vec![0.0; raw.len()], 0.0);
    }
    let clipped_sum = |mu: f64| {
        raw.iter()
            .map(|d| (d - mu).clamp(-delta_max, delta_max))
            .sum::<f64>()
    };
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min) - delta_max;
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + delta_max;
    let mu = if clipped_sum(0.0).abs() <= 1e-15 * delta_max {
        0.0
    } else {
        bisect_decreasing(clipped_sum, lo, hi, 1e-13 * (hi - lo).max(1.0))
    };
    let mut out: Vec<f64> = raw
        .iter()
        .map(|d| (d - mu).clamp(-delta_max, delta_max))
        .collect();
    for _ in 0..3 {
        let residual: f64 = out.iter().sum();
        let free: Vec<usize> = (0..out.len())
            .filter(|&j| out[j].abs() < delta_max)
            .collect();
        if residual == 0.0 || free.is_empty() {
            break;
        }
        let per = residual / free.len() as f64;
        for &j in &free {
            out[j] = (out[j] - per).clamp(-delta_max, delta_max);
        }
    }
    (out, mu)
}

/// `δ ↦ D(ĉ, c_j(δ))²` for one curve, in the solver's units.
pub struct ShiftObjective<'a> {
    pub curve: &'a ShiftableCurve,
    pub fitter: &'a Fitter,
    pub gram: &'a BlockGram,
    pub target: &'a CoefVector,
    /// Factor applied to fitted coefficients (`1/N` inside the solver).
    pub scale: f64,
}

impl ShiftObjective<'_> {
    pub fn coefficients(&self, delta: f64) -> Result<CoefVector> {
        Ok(self
            .curve
            .coefficients(delta, self.fitter)?
            .scaled(self.scale))
    }

    pub fn eval(&self, delta: f64) -> Result<f64> {
        Ok(squared_distance(
            self.target,
            &self.coefficients(delta)?,
            self.gram,
        ))
    }

    /// Bounded Brent search over `[−δ_max, δ_max]`; the previous shift is
    /// kept when the search does not improve on it.
    pub fn minimize(&self, delta_max: f64, previous: f64) -> Result<(f64, f64)> {
        if delta_max == 0.0 {
            return Ok((0.0, self.eval(0.0)?));
        }
        let mut best = brent_minimize(|d| self.eval(d), -delta_max, delta_max, SHIFT_XTOL, 500)?;
        let prev = previous.clamp(-delta_max, delta_max);
        let at_prev = self.eval(prev)?;
        if at_prev < best.1 {
            best = (prev, at_prev);
        }
        Ok(best)
    }
}

/// Per-curve shift minimizers before and after sum-zero centering.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftUpdate {
    pub raw: Vec<f64>,
    pub centered: Vec<f64>,
    pub mu: f64,
}

/// Minimize each curve's distance to `target` over `[−δ_max, δ_max]`, then center.
pub fn update_shifts(
    target: &CoefVector,
    curves: &[ShiftableCurve],
    fitter: &Fitter,
    gram: &BlockGram,
    scale: f64,
    delta_max: f64,
    previous: &[f64],
) -> Result<ShiftUpdate> {
    if previous.len() != curves.len() {
        return Err(Error::contract("one previous shift per curve is required"));
    }
    let mut raw = Vec::with_capacity(curves.len());
    for (curve, &prev) in curves.iter().zip(previous) {
        let objective = ShiftObjective {
            curve,
            fitter,
            gram,
            target,
            scale,
        };
        raw.push(objective.minimize(delta_max, prev)?.0);
    }
    let (centered, mu) = center_shifts(&raw, delta_max);
    Ok(ShiftUpdate { raw, centered, mu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::fixtures;
    use proptest::prelude::*;

    fn flat_peak(grid: &[f64], peak: f64) -> SampledTrajectory {
        let i: Vec<f64> = grid
            .iter()
            .map(|&t| (-(t - peak).powi(2) / 200.0).exp())
            .collect();
        let e = i.clone();
        SampledTrajectory::from_exposed_infectious(grid.to_vec(), e, i).unwrap()
    }

    #[test]
    fn init_examples() {
        let grid: Vec<f64> = (0..=600).map(|d| d as f64).collect();
        let same = vec![flat_peak(&grid, 200.0), flat_peak(&grid, 200.0)];
        assert_eq!(init_shifts(&same, 120.0).unwrap(), vec![0.0, 0.0]);
        let pair = vec![flat_peak(&grid, 100.0), flat_peak(&grid, 140.0)];
        assert_eq!(init_shifts(&pair, 120.0).unwrap(), vec![-20.0, 20.0]);
        let far = vec![flat_peak(&grid, 0.0), flat_peak(&grid, 500.0)];
        let d = init_shifts(&far, 120.0).unwrap();
        assert_eq!(d, vec![-120.0, 120.0]);
    }

    #[test]
    fn init_shift_aligns_peaks() {
        let grid: Vec<f64> = (0..=600).map(|d| d as f64).collect();
        let pair = vec![flat_peak(&grid, 100.0), flat_peak(&grid, 140.0)];
        let d = init_shifts(&pair, 120.0).unwrap();
        for (t, dj) in pair.iter().zip(&d) {
            assert_eq!(crate::fspace::shift(t, *dj).peak_time().unwrap(), 120.0);
        }
    }

    #[test]
    fn centering_examples() {
        let (d, mu) = center_shifts(&[5.0, -3.0, -2.0], 10.0);
        assert_eq!(mu, 0.0);
        assert_eq!(d, vec![5.0, -3.0, -2.0]);
        let (d, mu) = center_shifts(&[8.0, 8.0, 8.0], 10.0);
        assert!((mu - 8.0).abs() < 1e-10);
        assert!(d.iter().all(|v| v.abs() < 1e-10));
    }

    proptest! {
        #[test]
        fn centering_sums_to_zero_within_the_box(
            raw in proptest::collection::vec(-300.0f64..300.0, 1..40),
            delta_max in 0.0f64..150.0,
        ) {
            let clipped: Vec<f64> = raw.iter().map(|d| d.clamp(-delta_max, delta_max)).collect();
            let (d, _) = center_shifts(&clipped, delta_max);
            prop_assert!(d.iter().sum::<f64>().abs() <= 1e-8);
            prop_assert!(d.iter().all(|v| v.abs() <= delta_max));
        }
    }

    #[test]
    fn own_coefficients_give_zero_shift() {
        let setup = fixtures::point_estimate_setup(30, 29);
        let curve = ShiftableCurve::new(&setup.trajectories[0]).unwrap();
        let objective = ShiftObjective {
            curve: &curve,
            fitter: &setup.fitter,
            gram: &setup.gram,
            target: &setup.curves[0],
            scale: setup.scale,
        };
        let (d, v) = objective.minimize(120.0, 0.0).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn recovers_a_known_offset() {
        let setup = fixtures::point_estimate_setup(30, 29);
        let curve = ShiftableCurve::new(&setup.trajectories[0]).unwrap();
        let target = curve
            .coefficients(17.3, &setup.fitter)
            .unwrap()
            .scaled(setup.scale);
        let objective = ShiftObjective {
            curve: &curve,
            fitter: &setup.fitter,
            gram: &setup.gram,
            target: &target,
            scale: setup.scale,
        };
        let (d, _) = objective.minimize(120.0, 0.0).unwrap();
        assert!((d - 17.3).abs() < 1e-2, "{d}");
    }
}
