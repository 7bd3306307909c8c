//! Drift-removing change of variables for rough-drift diffusions.
//!
//! For a diffusion `dX = b(s, X) ds + dB` with a rough but bounded drift,
//! solve the damped terminal-value problem
//!
//! ```text
//! du/ds + lap u / 2 + b dx u = -b + lambda u,    u(horizon) = 0,
//! ```
//!
//! and set `Phi(s, y) = y + u(s, y)`. Ito's formula then gives
//! `d Phi(s, X_s) = lambda u(s, X_s) ds + dx Phi(s, X_s) dB`: the rough
//! drift is gone, replaced by the bounded drift `lambda u` and a
//! multiplicative diffusion coefficient. The construction is quantitative
//! once `sup |dx u| < 1/2`, because then `dx Phi` lies in `[1/2, 3/2]`,
//! `Phi(s, .)` is strictly increasing with the two-sided Lipschitz sandwich
//! `|y - z| / 2 <= |Phi(s,y) - Phi(s,z)| <= 3 |y - z| / 2`, and densities
//! transported through `Phi` change by at most those factors.
//!
//! [`ZvonkinMap::build`] finds the damping by doubling `lambda` until the
//! gradient bound drops below `1/2`, recording the whole search trace.

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeField, TorusField};
use crate::pde::{solve_backward_pde, BackwardPdeProblem, Source};
use crate::rng;
use crate::spectral::spectral_derivative;
use crate::stats;
use rand::Rng;
use rayon::prelude::*;

/// Number of times the damping may be doubled before giving up.
const MAX_DOUBLINGS: u32 = 20;

/// One probed damping value during the construction.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LambdaTraceEntry {
    pub lambda: f64,
    /// `sup_s sup_y |dx u_lambda(s, y)|`; infinite when the solve at this
    /// damping left the stable regime.
    pub grad_bound: f64,
}

/// The change of variables `Phi(s, y) = y + u_lambda(s, y)`.
#[derive(Debug, Clone)]
pub struct ZvonkinMap {
    lambda: f64,
    u: SpaceTimeField,
    grad: SpaceTimeField,
    u_sup: f64,
    grad_sup: f64,
    trace: Vec<LambdaTraceEntry>,
}

impl ZvonkinMap {
    /// Solve the damped equation for the given drift, doubling `lambda`
    /// from `lambda_init` until `sup |dx u| < 1/2`.
    ///
    /// A solve that leaves the stable regime counts as an infinite gradient
    /// bound and triggers another doubling; the search fails with
    /// [`Error::SearchExhausted`] after 2^20 times the initial damping.
    pub fn build(drift: &SpaceTimeField, horizon: f64, lambda_init: f64) -> Result<Self> {
        if !(lambda_init.is_finite() && lambda_init > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "initial damping must be positive, got {lambda_init}"
            )));
        }
        let terminal = TorusField::zeros(drift.grid());
        let mut trace = Vec::new();
        for doubling in 0..=MAX_DOUBLINGS {
            let lambda = lambda_init * f64::powi(2.0, doubling as i32);
            let solved = solve_backward_pde(&BackwardPdeProblem {
                drift: Some(drift),
                source: Source::NegDrift,
                lambda,
                terminal: &terminal,
                horizon,
                dt: drift.dt(),
            });
            let u = match solved {
                Ok(u) => u,
                Err(Error::Instability(_)) => {
                    trace.push(LambdaTraceEntry {
                        lambda,
                        grad_bound: f64::INFINITY,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grad = gradient_frames(&u)?;
            let bound = grad.sup_norm();
            trace.push(LambdaTraceEntry {
                lambda,
                grad_bound: bound,
            });
            if bound < 0.5 {
                let u_sup = u.sup_norm();
                return Ok(Self {
                    lambda,
                    u,
                    grad,
                    u_sup,
                    grad_sup: bound,
                    trace,
                });
            }
        }
        Err(Error::SearchExhausted(format!(
            "gradient bound stayed at {:.3} >= 1/2 after {MAX_DOUBLINGS} doublings of lambda",
            trace.last().map(|e| e.grad_bound).unwrap_or(f64::NAN)
        )))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The corrector `u_lambda`.
    pub fn u(&self) -> &SpaceTimeField {
        &self.u
    }

    /// All probed dampings with their gradient bounds, in search order.
    pub fn trace(&self) -> &[LambdaTraceEntry] {
        &self.trace
    }

    /// `sup |dx u|` of the accepted corrector, strictly below `1/2`.
    pub fn grad_bound(&self) -> f64 {
        self.grad_sup
    }

    pub fn horizon(&self) -> f64 {
        self.u.t_max()
    }

    /// `Phi(s, y) = y + u(s, y)`, increasing in `y` with slope in
    /// `[1/2, 3/2]`; `y` may be unwrapped, the corrector is periodic.
    pub fn forward(&self, s: f64, y: f64) -> f64 {
        y + self.u.eval(s, y)
    }

    /// `dx Phi(s, y) = 1 + dx u(s, y)`.
    pub fn gradient(&self, s: f64, y: f64) -> f64 {
        1.0 + self.grad.eval(s, y)
    }

    /// Invert `Phi(s, .)`: the map is strictly increasing with slope at
    /// least `1/2`, so the root is unique, the bracket `z -+ (sup|u| + 1)`
    /// always contains it, and bracketed Newton converges in a handful of
    /// steps on the piecewise-linear interpolant.
    pub fn inverse(&self, s: f64, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cannot invert the map at z = {z}"
            )));
        }
        let pad = self.u_sup + 1.0;
        let mut lo = z - pad;
        let mut hi = z + pad;
        let mut y = z;
        for _ in 0..60 {
            let r = self.forward(s, y) - z;
            if r.abs() <= 1e-13 * (1.0 + z.abs()) {
                return Ok(y);
            }
            if r > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let mut next = y - r / self.gradient(s, y);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            y = next;
        }
        Err(Error::SearchExhausted(format!(
            "inverting the map at (s, z) = ({s}, {z}) stalled"
        )))
    }

    /// Drift of the transformed diffusion, `lambda u(s, Phi^-1(s, z))`;
    /// bounded by `lambda sup|u|`.
    pub fn transformed_drift(&self, s: f64, z: f64) -> Result<f64> {
        let y = self.inverse(s, z)?;
        Ok(self.lambda * self.u.eval(s, y))
    }

    /// Diffusion coefficient of the transformed diffusion,
    /// `dx Phi(s, Phi^-1(s, z))`, inside `[1/2, 3/2]`.
    pub fn transformed_diffusion(&self, s: f64, z: f64) -> Result<f64> {
        let y = self.inverse(s, z)?;
        Ok(self.gradient(s, y))
    }
}

fn gradient_frames(u: &SpaceTimeField) -> Result<SpaceTimeField> {
    let frames: Vec<Vec<f64>> = (0..u.n_frames())
        .map(|i| spectral_derivative(&u.frame_field(i)).into_values())
        .collect();
    SpaceTimeField::from_frames(u.grid(), u.dt(), frames)
}

/// Euler-Maruyama ensemble of the transformed diffusion
/// `dZ = b~(s, Z) ds + sigma~(s, Z) dB`, with the running integrals that
/// certify its quadratic variation.
#[derive(Debug, Clone)]
pub struct TransformedEnsemble {
    terminal: Vec<f64>,
    quadratic_variation: Vec<f64>,
    diffusion_integral: Vec<f64>,
}

impl TransformedEnsemble {
    pub fn n_paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn terminals(&self) -> &[f64] {
        &self.terminal
    }

    /// Realised `sum (dZ)^2` per path.
    pub fn quadratic_variations(&self) -> &[f64] {
        &self.quadratic_variation
    }

    /// `int_0^t sigma~(s, Z_s)^2 ds` per path, the compensator of the
    /// realised quadratic variation.
    pub fn diffusion_integrals(&self) -> &[f64] {
        &self.diffusion_integral
    }
}

/// Simulate the transformed diffusion started from `Phi(0, x0)`.
pub fn simulate_transformed(
    map: &ZvonkinMap,
    x0: f64,
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<TransformedEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter(
            "an ensemble needs at least one path".into(),
        ));
    }
    let n_steps = (t / dt).round() as usize;
    if n_steps == 0 || (t - n_steps as f64 * dt).abs() > 1e-9 * t.max(dt) {
        return Err(Error::MeshMismatch(format!(
            "dt = {dt} does not divide the horizon t = {t}"
        )));
    }
    if map.horizon() + 1e-9 < t {
        return Err(Error::MeshMismatch(format!(
            "map covers [0, {}] but the horizon is {t}",
            map.horizon()
        )));
    }
    let z0 = map.forward(0.0, x0);
    let sqdt = dt.sqrt();
    let rows: Vec<Result<(f64, f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut gen = rng::stream_rng(seed, p as u64);
            let mut z = z0;
            let mut qv = 0.0;
            let mut is2 = 0.0;
            for i in 0..n_steps {
                let s = i as f64 * dt;
                let y = map.inverse(s, z)?;
                let bt = map.lambda() * map.u.eval(s, y);
                let st = map.gradient(s, y);
                let xi: f64 = gen.sample(rand_distr::StandardNormal);
                let dz = bt * dt + st * sqdt * xi;
                qv += dz * dz;
                is2 += st * st * dt;
                z += dz;
            }
            Ok((z, qv, is2))
        })
        .collect();
    let mut terminal = Vec::with_capacity(n_paths);
    let mut quadratic_variation = Vec::with_capacity(n_paths);
    let mut diffusion_integral = Vec::with_capacity(n_paths);
    for row in rows {
        let (z, qv, is2) = row?;
        if !z.is_finite() {
            return Err(Error::Instability(
                "a transformed path left the finite range".into(),
            ));
        }
        terminal.push(z);
        quadratic_variation.push(qv);
        diffusion_integral.push(is2);
    }
    Ok(TransformedEnsemble {
        terminal,
        quadratic_variation,
        diffusion_integral,
    })
}

/// Kolmogorov-Smirnov comparison of `Phi(T, X_T)` (direct simulation with
/// the rough drift, then mapped) against `Z_T` (transformed dynamics) at
/// one probe time.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LawProbe {
    pub time: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
}

/// Check that direct and transformed dynamics agree in law at the probe
/// times: both are Euler discretisations of the same diffusion seen through
/// `Phi`, so their marginals must be statistically indistinguishable.
///
/// Probe times must be multiples of `dt` within the map's horizon. The two
/// ensembles use independent seed streams derived from `seed`.
pub fn law_equivalence_check(
    map: &ZvonkinMap,
    drift: &SpaceTimeField,
    x0: f64,
    probe_times: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<LawProbe>> {
    let mut probes = Vec::with_capacity(probe_times.len());
    for (k, &time) in probe_times.iter().enumerate() {
        let direct = crate::control::simulate_paths(
            Some(drift),
            &crate::control::ControlPolicy::Zero,
            x0,
            time,
            n_paths,
            dt,
            seed.wrapping_add(2 * k as u64),
        )?;
        let mapped: Vec<f64> = direct
            .terminals()
            .iter()
            .map(|&y| map.forward(time, y))
            .collect();
        let transformed = simulate_transformed(
            map,
            x0,
            time,
            n_paths,
            dt,
            seed.wrapping_add(2 * k as u64 + 1),
        )?;
        let ks = stats::ks_two_sample(&mapped, transformed.terminals())?;
        probes.push(LawProbe {
            time,
            ks_statistic: ks.statistic,
            p_value: ks.p_value,
        });
    }
    Ok(probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::noise::{build_trees, sample_noise};
    use approx::assert_abs_diff_eq;

    const TAU: f64 = 2.0 * std::f64::consts::PI;

    fn static_drift(grid: TorusGrid, dt: f64, horizon: f64, f: impl Fn(f64) -> f64) -> SpaceTimeField {
        let n_frames = (horizon / dt).round() as usize + 1;
        let frame = TorusField::from_fn(grid, f).into_values();
        SpaceTimeField::from_frames(grid, dt, vec![frame; n_frames]).unwrap()
    }

    #[test]
    fn zero_drift_gives_the_identity_map() {
        let grid = TorusGrid::new(32).unwrap();
        let drift = static_drift(grid, 0.01, 0.2, |_| 0.0);
        let map = ZvonkinMap::build(&drift, 0.2, 1.0).unwrap();
        assert_eq!(map.trace().len(), 1);
        assert!(map.grad_bound() < 1e-12);
        for &y in &[-0.7, -0.2, 0.0, 0.31, 1.4] {
            assert_abs_diff_eq!(map.forward(0.1, y), y, epsilon = 1e-12);
            assert_abs_diff_eq!(map.inverse(0.1, y).unwrap(), y, epsilon = 1e-9);
            assert_abs_diff_eq!(map.gradient(0.1, y), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn smooth_drift_map_is_lipschitz_sandwiched() {
        let grid = TorusGrid::new(64).unwrap();
        let drift = static_drift(grid, 1e-3, 0.5, |y| (TAU * y).sin());
        let map = ZvonkinMap::build(&drift, 0.5, 1.0).unwrap();
        assert!(map.grad_bound() < 0.5);
        let s = 0.25;
        let probes: Vec<f64> = (0..40).map(|i| -1.0 + i as f64 * 0.05).collect();
        for (i, &y) in probes.iter().enumerate() {
            for &z in &probes[i + 1..] {
                let gap = map.forward(s, z) - map.forward(s, y);
                assert!(gap >= 0.5 * (z - y) - 1e-12, "lower sandwich at ({y}, {z})");
                assert!(gap <= 1.5 * (z - y) + 1e-12, "upper sandwich at ({y}, {z})");
            }
        }
    }

    #[test]
    fn inverse_inverts_to_machine_tolerance() {
        let grid = TorusGrid::new(64).unwrap();
        let drift = static_drift(grid, 1e-3, 0.5, |y| (TAU * y).sin() + 0.3 * (2.0 * TAU * y).cos());
        let map = ZvonkinMap::build(&drift, 0.5, 1.0).unwrap();
        for k in 0..25 {
            let s = 0.02 * k as f64;
            let z = -1.3 + 0.11 * k as f64;
            let y = map.inverse(s, z).unwrap();
            assert!((map.forward(s, y) - z).abs() < 1e-10);
            let roundtrip = map.inverse(s, map.forward(s, z)).unwrap();
            assert!((roundtrip - z).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_bound_decreases_along_the_doubling_trace() {
        let grid = TorusGrid::new(64).unwrap();
        let drift = static_drift(grid, 1e-3, 0.3, |y| 30.0 * (TAU * y).sin());
        let map = ZvonkinMap::build(&drift, 0.3, 1.0).unwrap();
        let trace = map.trace();
        assert!(trace.len() > 2, "expected several doublings");
        for pair in trace.windows(2) {
            assert!(
                pair[1].grad_bound <= pair[0].grad_bound * 1.01,
                "bound rose from {} to {}",
                pair[0].grad_bound,
                pair[1].grad_bound
            );
        }
        assert!(trace.last().unwrap().grad_bound < 0.5);
        let expected_lambda = f64::powi(2.0, trace.len() as i32 - 1);
        assert_abs_diff_eq!(map.lambda(), expected_lambda, epsilon = 1e-12);
    }

    #[test]
    fn overwhelming_drift_exhausts_the_damping_search() {
        let grid = TorusGrid::new(32).unwrap();
        let drift = static_drift(grid, 1e-3, 0.05, |y| 1e8 * (TAU * y).sin());
        let err = ZvonkinMap::build(&drift, 0.05, 1.0).unwrap_err();
        assert!(matches!(err, Error::SearchExhausted(_)));
    }

    #[test]
    fn transformed_coefficients_respect_their_bounds() {
        let grid = TorusGrid::new(64).unwrap();
        let drift = static_drift(grid, 1e-3, 0.4, |y| 4.0 * (TAU * y).sin());
        let map = ZvonkinMap::build(&drift, 0.4, 1.0).unwrap();
        let u_sup = map.u().sup_norm();
        for i in 0..12 {
            for j in 0..12 {
                let s = 0.4 * i as f64 / 12.0;
                let z = -1.5 + 3.0 * j as f64 / 11.0;
                let sigma = map.transformed_diffusion(s, z).unwrap();
                assert!((0.5..=1.5).contains(&sigma), "sigma~ = {sigma}");
                let b = map.transformed_drift(s, z).unwrap();
                assert!(b.abs() <= map.lambda() * u_sup + 1e-12, "b~ = {b}");
            }
        }
    }

    #[test]
    fn quadratic_variation_tracks_the_diffusion_integral() {
        let grid = TorusGrid::new(64).unwrap();
        let dt = 1e-3;
        let t = 0.4;
        let drift = static_drift(grid, dt, t, |y| 4.0 * (TAU * y).sin());
        let map = ZvonkinMap::build(&drift, t, 1.0).unwrap();
        let ens = simulate_transformed(&map, 0.1, t, 1_000, dt, 91).unwrap();
        // Pathwise: the realised quadratic variation stays near its
        // compensator, both trapped by the diffusion bounds.
        let slack = 8.0 * 2.25 * (2.0 * dt * t).sqrt() + 0.05 * t;
        for (qv, is2) in ens
            .quadratic_variations()
            .iter()
            .zip(ens.diffusion_integrals())
        {
            assert!((0.25 * t) - slack <= *qv && *qv <= (2.25 * t) + slack, "qv = {qv}");
            assert!((qv - is2).abs() <= slack, "qv {qv} vs integral {is2}");
        }
        // In the mean the compensator is exact to Monte Carlo accuracy.
        let diffs: Vec<f64> = ens
            .quadratic_variations()
            .iter()
            .zip(ens.diffusion_integrals())
            .map(|(q, i)| q - i)
            .collect();
        let (mean, se) = stats::mean_and_se(&diffs).unwrap();
        assert!(mean.abs() <= 3.0 * se + 3.0 * dt, "mean gap {mean} vs se {se}");
    }

    #[test]
    fn identity_map_transforms_to_plain_brownian_motion() {
        let grid = TorusGrid::new(32).unwrap();
        let dt = 1e-3;
        let t = 0.5;
        let drift = static_drift(grid, dt, t, |_| 0.0);
        let map = ZvonkinMap::build(&drift, t, 1.0).unwrap();
        let ens = simulate_transformed(&map, 0.2, t, 20_000, dt, 17).unwrap();
        let centred: Vec<f64> = ens.terminals().iter().map(|z| z - 0.2).collect();
        let (mean, se) = stats::mean_and_se(&centred).unwrap();
        assert!(mean.abs() < 3.0 * se);
        let var = stats::variance(&centred);
        assert!((var - t).abs() < 0.05 * t, "variance {var}");
    }

    #[test]
    fn smooth_drift_laws_agree_through_the_map() {
        let grid = TorusGrid::new(64).unwrap();
        let dt = 1e-3;
        let t = 0.4;
        let drift = static_drift(grid, dt, t, |y| (TAU * y).sin());
        let map = ZvonkinMap::build(&drift, t, 1.0).unwrap();
        let probes =
            law_equivalence_check(&map, &drift, 0.1, &[0.1, 0.2, 0.4], 10_000, dt, 23).unwrap();
        for p in &probes {
            assert!(p.p_value > 0.01, "KS p = {} at t = {}", p.p_value, p.time);
        }
    }

    #[test]
    fn tree_drift_laws_agree_through_the_map() {
        let grid = TorusGrid::new(128).unwrap();
        let dt = 1e-3;
        let t = 0.25;
        let noise = sample_noise(grid, dt, t, 1.0 / 16.0, 301).unwrap();
        let trees = build_trees(&noise).unwrap();
        let map = ZvonkinMap::build(&trees.drift, t, 1.0).unwrap();
        assert!(map.grad_bound() < 0.5);
        let probes =
            law_equivalence_check(&map, &trees.drift, 0.0, &[0.125, 0.25], 10_000, dt, 29)
                .unwrap();
        for p in &probes {
            assert!(p.p_value > 0.01, "KS p = {} at t = {}", p.p_value, p.time);
        }
    }

    #[test]
    fn search_traces_serialise_to_json() {
        let grid = TorusGrid::new(32).unwrap();
        let drift = static_drift(grid, 1e-2, 0.2, |y| 6.0 * (TAU * y).sin());
        let map = ZvonkinMap::build(&drift, 0.2, 1.0).unwrap();
        let json = serde_json::to_string(map.trace()).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        let entries = parsed.as_array().unwrap();
        assert_eq!(entries.len(), map.trace().len());
        assert!(entries[0]["lambda"].as_f64().unwrap() > 0.0);
        assert!(entries[0]["grad_bound"].as_f64().unwrap() >= 0.0);
    }
}