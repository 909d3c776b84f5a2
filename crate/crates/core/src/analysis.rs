//! Metrics: quantile Wasserstein distances, L^p norms, the monotonicity gap,
//! symmetric decreasing rearrangement and decay-rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::mass::MassFunction;
use crate::profile::RadialProfile;

/// Quantile samples used by [`wasserstein_p`].
pub const QUANTILE_SAMPLES: usize = 4096;

/// Cost of the monotone radial transport between two equal-mass radial
/// distributions: `((1/A) ∫_0^A |r_1(s) - r_2(s)|^p ds)^{1/p}`.
pub fn wasserstein_p(m1: &MassFunction, m2: &MassFunction, p_exp: f64) -> Result<f64> {
    if !(p_exp >= 1.0) {
        return Err(Error::InvalidParams(format!("exponent must be >= 1, got {p_exp}")));
    }
    let (a1, a2) = (m1.total(), m2.total());
    let scale = a1.abs().max(a2.abs());
    if (a1 - a2).abs() > 1e-8 * scale {
        return Err(Error::Precondition(format!(
            "Wasserstein distance needs equal masses ({a1} vs {a2})"
        )));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let n = QUANTILE_SAMPLES;
    let mut acc = 0.0;
    for j in 0..n {
        let u = (j as f64 + 0.5) / n as f64;
        let d = (m1.quantile(u * a1) - m2.quantile(u * a2)).abs();
        acc += d.powf(p_exp);
    }
    Ok((acc / n as f64).powf(1.0 / p_exp))
}

/// `L^p` norm of a field; `p = ∞` gives the maximum.
pub trait LpNorm {
    fn lp_norm(&self, p_exp: f64) -> f64;
}

impl LpNorm for RadialProfile {
    fn lp_norm(&self, p_exp: f64) -> f64 {
        if p_exp.is_infinite() {
            return self.sup();
        }
        self.values()
            .iter()
            .zip(self.grid().volumes())
            .map(|(v, w)| v.powf(p_exp) * w)
            .sum::<f64>()
            .powf(1.0 / p_exp)
    }
}

pub fn lp_norm<F: LpNorm + ?Sized>(f: &F, p_exp: f64) -> f64 {
    f.lp_norm(p_exp)
}

/// `sup_{r_a < r_b} rho(r_b) - rho(r_a)`, zero exactly when the profile is nonincreasing.
pub fn monotonicity_violation(rho: &RadialProfile) -> f64 {
    let mut running_min = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for &v in rho.values() {
        worst = worst.max(v - running_min);
        running_min = running_min.min(v);
    }
    worst
}

/// Free-boundary location from the pressure `ρ^{m-1}`, which is Lipschitz
/// up to the interface: linear extrapolation to zero from the outermost two
/// cells above `1e-3 ‖ρ‖∞`. Unlike a density threshold it moves continuously.
pub fn free_boundary_radius(rho: &RadialProfile, m: f64) -> f64 {
    let v = rho.values();
    let g = rho.grid();
    let cut = 1e-3 * rho.sup();
    let Some(i) = v.iter().rposition(|&x| x > cut) else {
        return 0.0;
    };
    if i == 0 {
        return g.edges()[1];
    }
    let (p1, p0) = (v[i].powf(m - 1.0), v[i - 1].powf(m - 1.0));
    let (r1, r0) = (g.center(i), g.center(i - 1));
    if p0 <= p1 {
        return g.edges()[i + 1];
    }
    r1 + p1 * (r1 - r0) / (p0 - p1)
}

/// Symmetric decreasing rearrangement: cell values sorted in decreasing order
/// and laid out on shells of the same volumes. Equal neighbouring values are
/// merged, so the output grid is generally non-uniform.
pub fn rearrange_radial(rho: &RadialProfile) -> RadialProfile {
    let pairs: Vec<(f64, f64)> = rho
        .values()
        .iter()
        .copied()
        .zip(rho.grid().volumes().iter().copied())
        .collect();
    rearrange_cells(pairs, rho.dim())
}

/// Rearrangement of `(value, volume)` pieces in dimension `dim`.
pub(crate) fn rearrange_cells(mut pairs: Vec<(f64, f64)>, dim: usize) -> RadialProfile {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (v, w) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    let c = dim as f64 / crate::quadrature::unit_sphere_area(dim);
    let mut edges = vec![0.0];
    let mut values = Vec::with_capacity(merged.len());
    let mut vol = 0.0;
    for (v, w) in merged {
        vol += w;
        let r = (c * vol).powf(1.0 / dim as f64);
        if r > edges[edges.len() - 1] {
            edges.push(r);
            values.push(v);
        }
    }
    let grid = RadialGrid::from_edges(edges, dim).expect("rearranged edges increase");
    RadialProfile::from_raw(grid, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayModel {
    /// `value ~ C e^{-rate t}`
    Exponential,
    /// `value ~ C t^{-rate}`
    Algebraic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub rate: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub samples: usize,
    /// RMS of the log residuals.
    pub residual: f64,
}

/// Least-squares fit on an automatically chosen window: the first 10% of
/// samples are dropped as transient, and samples below `1e-6 * peak` as floor.
pub fn fit_decay(series: &[(f64, f64)], model: DecayModel) -> Result<DecayFit> {
    if series.len() < 10 {
        return Err(Error::Precondition(format!(
            "decay fit needs at least 10 samples, got {}",
            series.len()
        )));
    }
    let peak = series.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let skip = series.len() / 10;
    let floor = 1e-6 * peak;
    let window: Vec<(f64, f64)> = series[skip..]
        .iter()
        .copied()
        .take_while(|s| s.1 >= floor)
        .collect();
    fit_decay_on(&window, model)
}

/// Least-squares fit on exactly the samples given.
pub fn fit_decay_on(window: &[(f64, f64)], model: DecayModel) -> Result<DecayFit> {
    if window.len() < 2 {
        return Err(Error::Precondition("decay window has fewer than two samples".into()));
    }
    if let Some(bad) = window.iter().find(|s| !(s.1 > 0.0)) {
        return Err(Error::Precondition(format!(
            "non-positive value {} at t = {} in decay window",
            bad.1, bad.0
        )));
    }
    let xs: Vec<f64> = match model {
        DecayModel::Exponential => window.iter().map(|s| s.0).collect(),
        DecayModel::Algebraic => {
            if window.iter().any(|s| !(s.0 > 0.0)) {
                return Err(Error::Precondition("algebraic fit needs t > 0".into()));
            }
            window.iter().map(|s| s.0.ln()).collect()
        }
    };
    let ys: Vec<f64> = window.iter().map(|s| s.1.ln()).collect();
    let (slope, intercept, residual) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        model,
        rate: -slope,
        intercept,
        window: (window[0].0, window[window.len() - 1].0),
        samples: window.len(),
        residual,
    })
}

/// Exponential fit restricted to the transient: samples after the first
/// tenth of the run and above ten times the smallest value of the series.
pub fn transient_fit(series: &[(f64, f64)]) -> Result<DecayFit> {
    let t_end = series.last().map_or(0.0, |s| s.0);
    let floor = series.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let window: Vec<(f64, f64)> =
        series.iter().copied().filter(|&(t, v)| t >= 0.1 * t_end && v > 10.0 * floor).collect();
    fit_decay_on(&window, DecayModel::Exponential)
}

/// Slope of `ln y` against `ln t`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    linear_fit(&xs, &ys).0
}

/// One-cell interpolation error of a profile: `dr · max |∂_r ρ|`.
pub fn density_scheme_tolerance(rho: &RadialProfile) -> f64 {
    let g = rho.grid();
    let v = rho.values();
    (1..v.len())
        .map(|i| (v[i] - v[i - 1]).abs() / (g.center(i) - g.center(i - 1)) * g.width(i))
        .fold(0.0, f64::max)
}

/// One-cell error of a mass function: `dr · max_r σ r^{d-1} ρ(r)`.
pub fn mass_scheme_tolerance(rho: &RadialProfile) -> f64 {
    let g = rho.grid();
    let sigma = crate::quadrature::unit_sphere_area(g.dim());
    let dm1 = g.dim() as i32 - 1;
    (0..g.n())
        .map(|i| g.width(i) * sigma * g.edges()[i + 1].powi(dm1) * rho.values()[i])
        .fold(0.0, f64::max)
}

/// `n` points spaced geometrically from `a` to `b`.
pub fn geometric_times(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a; n];
    }
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Ordinary least squares `y ≈ slope x + intercept`; returns the RMS residual too.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Dilation, RadialShape, UniformBall};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, radius: f64) -> RadialGrid {
        RadialGrid::with_radius(radius, n, 3).unwrap()
    }

    #[test]
    fn free_boundary_of_barenblatt() {
        let p = crate::model::Params::new(2.0, 3).unwrap();
        let g = grid(2000, 4.0);
        let shape = crate::stationary::barenblatt_shape(&p, 1.0, 0.5).unwrap();
        let rho = crate::stationary::barenblatt(&p, 1.0, 0.5, &g).unwrap();
        let r = free_boundary_radius(&rho, 2.0);
        assert!((r - shape.radius).abs() < 2e-3 * shape.radius, "{r} vs {}", shape.radius);
    }

    #[test]
    fn w2_between_unit_and_double_ball() {
        let g = grid(400, 4.0);
        let a = MassFunction::of(&UniformBall::with_mass(3, 1.0, 1.0).sample(&g));
        let b = MassFunction::of(&UniformBall::with_mass(3, 2.0, 1.0).sample(&g));
        let w = wasserstein_p(&a, &b, 2.0).unwrap();
        assert!((w - (0.6f64).sqrt()).abs() < 1e-5, "{w}");
        assert_eq!(wasserstein_p(&a, &a, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn w_rejects_unequal_mass() {
        let g = grid(100, 4.0);
        let a = MassFunction::of(&UniformBall::with_mass(3, 1.0, 1.0).sample(&g));
        let b = MassFunction::of(&UniformBall::with_mass(3, 1.0, 2.0).sample(&g));
        assert!(wasserstein_p(&a, &b, 2.0).is_err());
    }

    #[test]
    fn dilation_transport_bound() {
        let g = grid(400, 4.0);
        let rho = RadialProfile::from_centers(g.clone(), |r| (1.0 - r * r).max(0.0));
        for k in [0.5, 0.8] {
            let dil = Dilation { inner: &rho, k }.sample(&g);
            let w = wasserstein_p(&MassFunction::of(&rho), &MassFunction::of(&dil), 3.0).unwrap();
            assert!(w <= 1.0 * (1.0 / k - 1.0) + 1e-9, "k = {k}: {w}");
        }
    }

    #[test]
    fn ball_norms() {
        let g = grid(100, 2.0);
        let b = UniformBall { dim: 3, radius: 1.0, height: 0.7 }.sample(&g);
        let vol = 4.0 * std::f64::consts::PI / 3.0;
        for p in [1.5, 2.0, 4.0] {
            let (a, exact) = (b.lp_norm(p), 0.7 * vol.powf(1.0 / p));
            assert!((a - exact).abs() < 1e-13, "{a} {exact}");
        }
        assert!((lp_norm(&b, f64::INFINITY) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_examples() {
        let g = grid(100, 2.0);
        let dec = RadialProfile::from_centers(g.clone(), |r| (1.0 - r).max(0.0));
        assert_eq!(monotonicity_violation(&dec), 0.0);
        let ann = RadialProfile::from_centers(g, |r| if (0.5..1.0).contains(&r) { 0.3 } else { 0.0 });
        assert_eq!(monotonicity_violation(&ann), 0.3);
    }

    #[test]
    fn annulus_rearranges_to_ball() {
        let g = grid(100, 2.0);
        let ann = RadialProfile::from_centers(g, |r| if (0.5..1.0).contains(&r) { 0.3 } else { 0.0 });
        let star = rearrange_radial(&ann);
        assert_eq!(star.values()[0], 0.3);
        let r_ball = (1.0f64 - 0.125).cbrt();
        assert!((star.grid().edges()[1] - r_ball).abs() < 1e-12);
        assert!((star.total_mass() - ann.total_mass()).abs() < 1e-12 * ann.total_mass());
        assert_eq!(monotonicity_violation(&star), 0.0);
    }

    #[test]
    fn rearrangement_preserves_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(300, 3.0);
        let f = RadialProfile::from_centers(g, |r| if r < 2.5 { rng.gen_range(0.0..1.0) } else { 0.0 });
        let s = rearrange_radial(&f);
        for p in [2.0, f64::INFINITY] {
            assert!((f.lp_norm(p) - s.lp_norm(p)).abs() < 1e-8 * f.lp_norm(p));
        }
    }

    #[test]
    fn transient_fit_and_helpers() {
        let series: Vec<(f64, f64)> = (0..200).map(|i| (i as f64 * 0.1, 3.0 * (-0.7 * i as f64 * 0.1).exp() + 1e-12)).collect();
        let fit = transient_fit(&series).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-6, "{fit:?}");
        let t = geometric_times(0.1, 10.0, 5);
        assert!((t[0] - 0.1).abs() < 1e-15 && (t[4] - 10.0).abs() < 1e-12 && (t[2] - 1.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = t.iter().map(|&x| (x, 2.0 * x.powf(-0.6))).collect();
        assert!((log_log_slope(&pts) + 0.6).abs() < 1e-12);
        // uniform ball of height 1 on [0, 1]: the last occupied cell dominates
        let g = grid(100, 2.0);
        let ball = UniformBall { dim: 3, radius: 1.0, height: 1.0 }.sample(&g);
        let tol = mass_scheme_tolerance(&ball);
        assert!((tol - 0.02 * 4.0 * std::f64::consts::PI).abs() < 1e-12, "{tol}");
        assert!((density_scheme_tolerance(&ball) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_exponential_and_power_fits() {
        let exp: Vec<(f64, f64)> = (0..200).map(|i| { let t = i as f64 * 0.05; (t, (-3.0 * t).exp()) }).collect();
        let f = fit_decay(&exp, DecayModel::Exponential).unwrap();
        assert!((f.rate - 3.0).abs() < 1e-6);
        let alg: Vec<(f64, f64)> = (1..200).map(|i| { let t = i as f64 * 0.5; (t, t.powf(-0.6)) }).collect();
        let f = fit_decay(&alg, DecayModel::Algebraic).unwrap();
        assert!((f.rate - 0.6).abs() < 1e-6);
        assert!(fit_decay(&exp[..5], DecayModel::Exponential).is_err());
        let bad: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, if i == 15 { -1.0 } else { 1.0 })).collect();
        assert!(fit_decay_on(&bad, DecayModel::Exponential).is_err());
    }
}
