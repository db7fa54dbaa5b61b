use nalgebra::DVector;

use super::inner::inner_solve_q2_with;
use super::{
    constraint_matrices, inner_solve_irls, reduced_constraints, InnerSolution, IrlsSettings,
    RateBounds,
};
use crate::basis::DesignMatrices;
use crate::error::{Error, Result};
use crate::fspace::{BlockGram, CoefVector};
use crate::optim::{
    nelder_mead_box, projected_bfgs, BfgsSettings, BoxBounds, NelderMeadSettings, StopReason,
};

/// `min_m (N − E_m − I_m) / (∫₀^{t_m} I)` over grid points with positive integral.
pub fn gamma_upper_bound(c: &CoefVector, design: &DesignMatrices, population: f64) -> f64 {
    let e = &design.values * c.exposed();
    let i = &design.values * c.infectious();
    let cum = &design.integrals * c.infectious();
    let mut bound = f64::INFINITY;
    for m in 0..design.rows() {
        if cum[m] > 0.0 {
            bound = bound.min((population - e[m] - i[m]) / cum[m]);
        }
    }
    bound
}

/// Everything the value function `V_q(σ, γ)` depends on besides the rates.
#[derive(Debug, Clone, Copy)]
pub struct ProfileContext<'a> {
    pub curves: &'a [CoefVector],
    pub gram: &'a BlockGram,
    pub design: &'a DesignMatrices,
    pub q: f64,
    pub population: f64,
    pub bounds: RateBounds,
    pub irls: IrlsSettings,
}

#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub sigma: f64,
    pub gamma: f64,
    pub value: f64,
    /// `(∂V/∂σ, ∂V/∂γ)` from the inner multipliers.
    pub gradient: [f64; 2],
    pub inner: InnerSolution,
}

/// Inner solve at `(σ, γ)` and the envelope gradient
/// `∂V/∂σ = −νᵀBĉ_E`, `∂V/∂γ = νᵀBĉ_I + λ_capᵀΦĉ_I`.
pub fn profile_value_and_gradient(
    sigma: f64,
    gamma: f64,
    ctx: &ProfileContext<'_>,
    warm_start: Option<&InnerSolution>,
) -> Result<ProfilePoint> {
    if !(ctx.bounds.sigma.contains(sigma) && ctx.bounds.gamma.contains(gamma)) {
        return Err(Error::contract(format!(
            "rates ({sigma}, {gamma}) lie outside the box"
        )));
    }
    let cs = constraint_matrices(ctx.design, sigma, gamma, ctx.population);
    let inner = if ctx.q == 2.0 {
        inner_solve_q2_with(
            ctx.curves,
            ctx.gram,
            &cs,
            ctx.irls.qp,
            warm_start.map(|w| w.active.as_slice()),
        )?
    } else {
        inner_solve_irls(ctx.q, ctx.curves, ctx.gram, &cs, warm_start, &ctx.irls)?
    };
    let be = &ctx.design.values * inner.c.exposed();
    let bi = &ctx.design.values * inner.c.infectious();
    let pi = &ctx.design.integrals * inner.c.infectious();
    let gradient = [
        -inner.nu.dot(&be),
        inner.nu.dot(&bi) + inner.lambda_population.dot(&pi),
    ];
    Ok(ProfilePoint {
        sigma,
        gamma,
        value: inner.objective,
        gradient,
        inner,
    })
}

#[derive(Debug, Clone)]
pub struct ProfileOutcome {
    pub point: ProfilePoint,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Largest relative envelope/finite-difference mismatch at the start point.
    pub gradient_mismatch: f64,
    pub used_fallback: bool,
    /// Upper end of the γ search box after the feasibility cap.
    pub gamma_cap: f64,
}

const FD_STEP: f64 = 1e-5;
const FD_MISMATCH: f64 = 0.1;

/// Box-constrained minimization of `V_q` from `init`.
///
/// Projected BFGS on envelope gradients; Nelder–Mead when the gradient at the
/// start disagrees with central differences, or as a second pass when the line
/// search fails. The best point seen is returned.
pub fn optimize_profile(
    ctx: &ProfileContext<'_>,
    init: (f64, f64),
    warm_start: Option<&InnerSolution>,
) -> Result<ProfileOutcome> {
    let cap = ctx
        .curves
        .iter()
        .map(|c| gamma_upper_bound(c, ctx.design, ctx.population))
        .fold(0.0_f64, f64::max);
    let mut gamma_hi = ctx.bounds.gamma.hi.min(cap);
    if gamma_hi <= ctx.bounds.gamma.lo {
        log::warn!("gamma cap {cap:e} is below gamma_min; searching the full gamma box");
        gamma_hi = ctx.bounds.gamma.hi;
    }
    let bounds = BoxBounds::new(
        vec![ctx.bounds.sigma.lo, ctx.bounds.gamma.lo],
        vec![ctx.bounds.sigma.hi, gamma_hi],
    )?;
    let x0 = bounds.project(&[init.0, init.1]);

    let mut warm: Option<InnerSolution> = warm_start.cloned();
    let mut best: Option<ProfilePoint> = None;
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64],
                    warm: &mut Option<InnerSolution>,
                    best: &mut Option<ProfilePoint>|
     -> Result<ProfilePoint> {
        evaluations += 1;
        let p = profile_value_and_gradient(x[0], x[1], ctx, warm.as_ref())?;
        *warm = Some(p.inner.clone());
        if best.as_ref().is_none_or(|b| p.value < b.value) {
            *best = Some(p.clone());
        }
        Ok(p)
    };

    let start = eval(&x0, &mut warm, &mut best)?;
    let mismatch = gradient_mismatch(&start, &x0, &bounds, &mut |x| {
        Ok(eval(x, &mut warm, &mut best)?.value)
    })?;
    let mut used_fallback = false;
    let reason = if mismatch <= FD_MISMATCH {
        let res = projected_bfgs(
            |x| {
                let p = eval(x, &mut warm, &mut best)?;
                Ok((p.value, p.gradient.to_vec()))
            },
            &x0,
            &bounds,
            BfgsSettings::default(),
        )?;
        if res.reason == StopReason::LineSearch {
            used_fallback = true;
            let from = res.x.clone();
            nelder_mead_box(
                |x| Ok(eval(x, &mut warm, &mut best)?.value),
                &from,
                &bounds,
                NelderMeadSettings::default(),
            )?;
        }
        res.reason
    } else {
        log::debug!("envelope gradient mismatch {mismatch:.3e}; using Nelder-Mead");
        used_fallback = true;
        nelder_mead_box(
            |x| Ok(eval(x, &mut warm, &mut best)?.value),
            &x0,
            &bounds,
            NelderMeadSettings::default(),
        )?
        .reason
    };
    Ok(ProfileOutcome {
        point: best.expect("start point was evaluated"),
        evaluations,
        reason,
        gradient_mismatch: mismatch,
        used_fallback,
        gamma_cap: gamma_hi,
    })
}

/// Relative disagreement between the envelope gradient and central
/// differences; one-sided differences at active box faces.
fn gradient_mismatch<F>(
    at: &ProfilePoint,
    x: &[f64],
    bounds: &BoxBounds,
    value: &mut F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let h = FD_STEP.min(0.5 * (bounds.upper[i] - bounds.lower[i]));
        let mut hi = x.to_vec();
        let mut lo = x.to_vec();
        hi[i] = (x[i] + h).min(bounds.upper[i]);
        lo[i] = (x[i] - h).max(bounds.lower[i]);
        let fd = (value(&hi)? - value(&lo)?) / (hi[i] - lo[i]);
        // inner tolerances leave about 1e-7 relative noise in V
        let floor = 1e-7 * at.value.abs() / h;
        let env = at.gradient[i];
        let scale = fd.abs().max(env.abs()).max(floor).max(f64::MIN_POSITIVE);
        worst = worst.max((fd - env).abs() / scale);
    }
    Ok(worst)
}

/// Box-clipped least squares for `B′c_I ≈ σBc_E − γBc_I` over the grid.
///
/// A block with no signal (`max|·| ≤ 1e-9·N`) leaves its rate unidentified;
/// that rate falls back to the box midpoint and the other is fitted alone.
pub fn fit_rates_ls(
    c: &CoefVector,
    design: &DesignMatrices,
    bounds: &RateBounds,
    population: f64,
) -> (f64, f64) {
    let e = &design.values * c.exposed();
    let i = &design.values * c.infectious();
    let y = &design.derivs * c.infectious();
    let tiny = 1e-9 * population;
    let e_flat = e.amax() <= tiny;
    let i_flat = i.amax() <= tiny;
    // residual r = y − σe + γi
    let residual = |s: f64, g: f64| (&y - &e * s + &i * g).norm_squared();
    let fit_1d = |x: &DVector<f64>, target: &DVector<f64>, sign: f64, iv: super::Interval| {
        // minimize |target − sign·r·x|² in r
        let xx = x.norm_squared();
        if xx == 0.0 {
            iv.midpoint()
        } else {
            iv.clamp(sign * x.dot(target) / xx)
        }
    };
    match (e_flat, i_flat) {
        (true, true) => {
            log::warn!(
                "exposed and infectious curves are flat; rate initializers use box midpoints"
            );
            (bounds.sigma.midpoint(), bounds.gamma.midpoint())
        }
        (true, false) => {
            log::warn!("exposed curve is flat; sigma initializer uses the box midpoint");
            let s = bounds.sigma.midpoint();
            let target = &e * s - &y;
            (s, fit_1d(&i, &target, 1.0, bounds.gamma))
        }
        (false, true) => {
            log::warn!("infectious curve is flat; gamma initializer uses the box midpoint");
            let g = bounds.gamma.midpoint();
            let target = &y + &i * g;
            (fit_1d(&e, &target, 1.0, bounds.sigma), g)
        }
        (false, false) => {
            let (ee, ii, ei) = (e.norm_squared(), i.norm_squared(), e.dot(&i));
            let (ey, iy) = (e.dot(&y), i.dot(&y));
            let mut candidates = Vec::with_capacity(5);
            // normal equations: [ee −ei; −ei ii]·(σ, γ) = (ey, −iy)
            let det = ee * ii - ei * ei;
            if det > 1e-14 * ee * ii {
                let s = (ey * ii - ei * iy) / det;
                let g = (ei * ey - ee * iy) / det;
                if bounds.sigma.contains(s) && bounds.gamma.contains(g) {
                    candidates.push((s, g));
                }
            }
            for s in [bounds.sigma.lo, bounds.sigma.hi] {
                candidates.push((s, bounds.gamma.clamp((e.dot(&i) * s - iy) / ii)));
            }
            for g in [bounds.gamma.lo, bounds.gamma.hi] {
                candidates.push((bounds.sigma.clamp((ey + ei * g) / ee), g));
            }
            let (_, s, g) = candidates
                .into_iter()
                .map(|(s, g)| (residual(s, g), s, g))
                .fold(
                    (f64::INFINITY, 0.0, 0.0),
                    |a, b| if b.0 < a.0 { b } else { a },
                );
            (s, g)
        }
    }
}

/// Starting coefficients from the problem without dynamics, and rates from
/// least squares on them.
pub fn init_solution(ctx: &ProfileContext<'_>) -> Result<(InnerSolution, f64, f64)> {
    let cs = reduced_constraints(ctx.design, ctx.population);
    let inner = inner_solve_irls(ctx.q, ctx.curves, ctx.gram, &cs, None, &ctx.irls)?;
    let (sigma, gamma) = fit_rates_ls(&inner.c, ctx.design, &ctx.bounds, ctx.population);
    Ok((inner, sigma, gamma))
}
