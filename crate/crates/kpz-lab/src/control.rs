//! Controlled path ensembles and the variational identities they certify.
//!
//! The remainder field `hR = h - Y - Y2 - YR` of the KPZ decomposition
//! admits a stochastic-control representation:
//!
//! ```text
//! hR(t, x) = sup_v E[ h0(g_t) - Y(0, g_t)
//!                     + int_0^t |dx YR(t-s, g_s)|^2 ds
//!                     - 1/2 int_0^t |v_s|^2 ds ]
//! ```
//!
//! over diffusions `dg = (b + v) ds + dB` started at `x`, with the
//! time-reversed transport drift `b(s, y) = dx(Y + Y2 + YR)(t - s, y)` and
//! the optimal control `v_s = dx hR(t - s, g_s)`. This module simulates the
//! ensembles, checks the log-Laplace variational formula they discretise
//! (any policy certifies a lower bound; the formula's value is the supremum),
//! and computes the entropies of terminal conditioning that turn those lower
//! bounds into initial-condition-independent estimates.
//!
//! Paths are simulated in unwrapped coordinates so increments stay Gaussian;
//! periodic fields wrap the coordinate at evaluation time. Path `p` draws
//! from the ChaCha stream `(seed, p)`, making every ensemble reproducible
//! and independent of the parallel schedule.

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeField, TorusField};
use crate::noise::EnhancedNoise;
use crate::rng;
use crate::stats;
use rand::Rng;
use rayon::prelude::*;

/// Control applied to a diffusion over `[0, t]`.
///
/// A feedback field is indexed by remaining time: the control at path time
/// `s` and position `y` is `field(t - s, y)`, piecewise constant in time and
/// linear in space, matching the left-endpoint quadrature of the cost.
#[derive(Debug, Clone)]
pub enum ControlPolicy {
    Zero,
    Constant(f64),
    Feedback(SpaceTimeField),
}

impl ControlPolicy {
    fn value(&self, remaining: f64, y: f64) -> f64 {
        match self {
            ControlPolicy::Zero => 0.0,
            ControlPolicy::Constant(c) => *c,
            ControlPolicy::Feedback(field) => field.eval(remaining, y),
        }
    }

    fn check(&self, t: f64) -> Result<()> {
        if let ControlPolicy::Feedback(field) = self {
            if !field.is_finite() {
                return Err(Error::InvalidParameter(
                    "feedback field has non-finite values".into(),
                ));
            }
            if field.t_max() + 1e-9 < t {
                return Err(Error::MeshMismatch(format!(
                    "feedback field covers [0, {}] but the horizon is {t}",
                    field.t_max()
                )));
            }
        }
        Ok(())
    }
}

/// Monte Carlo ensemble of controlled paths.
///
/// Terminal points are stored unwrapped; [`wrapped_terminals`] reduces them
/// to the fundamental domain of the period the fields were defined on.
///
/// [`wrapped_terminals`]: PathEnsemble::wrapped_terminals
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    start: f64,
    t: f64,
    dt: f64,
    seed: u64,
    period: f64,
    terminal: Vec<f64>,
    reward: Vec<f64>,
    cost: Vec<f64>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn horizon(&self) -> f64 {
        self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unwrapped terminal points.
    pub fn terminals(&self) -> &[f64] {
        &self.terminal
    }

    /// Terminal points wrapped to `[-period/2, period/2)`.
    pub fn wrapped_terminals(&self) -> Vec<f64> {
        let p = self.period;
        self.terminal
            .iter()
            .map(|&y| {
                let w = y - p * (y / p + 0.5).floor();
                if w >= 0.5 * p {
                    w - p
                } else {
                    w
                }
            })
            .collect()
    }

    /// Running rewards `int |dx YR(t-s, g_s)|^2 ds`, zero when the ensemble
    /// was simulated without a reward rate.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Control costs `1/2 int |v_s|^2 ds`.
    pub fn costs(&self) -> &[f64] {
        &self.cost
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl ValueEstimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let (mean, std_error) = stats::mean_and_se(samples)?;
        Ok(Self {
            mean,
            std_error,
            n_paths: samples.len(),
        })
    }
}

fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0 && t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon and step must be positive, got t = {t}, dt = {dt}"
        )));
    }
    let n = (t / dt).round();
    if (t - n * dt).abs() > 1e-9 * t.max(dt) {
        return Err(Error::MeshMismatch(format!(
            "dt = {dt} does not divide the horizon t = {t}"
        )));
    }
    Ok(n as usize)
}

fn check_coverage(field: &SpaceTimeField, t: f64, what: &str) -> Result<()> {
    if field.t_max() + 1e-9 < t {
        return Err(Error::MeshMismatch(format!(
            "{what} covers [0, {}] but the horizon is {t}",
            field.t_max()
        )));
    }
    Ok(())
}

/// Engine shared by every ensemble simulation: Euler-Maruyama with
/// left-endpoint quadrature for reward and cost. `drift` and `reward_rate`
/// are evaluated at path time `s` directly (callers pass time-reversed
/// fields); the policy is evaluated at remaining time `t - s`.
fn ensemble_engine(
    drift: Option<&SpaceTimeField>,
    reward_rate: Option<&SpaceTimeField>,
    policy: &ControlPolicy,
    x: f64,
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<PathEnsemble> {
    let n_steps = step_count(t, dt)?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter(
            "an ensemble needs at least one path".into(),
        ));
    }
    policy.check(t)?;
    if let Some(b) = drift {
        check_coverage(b, t, "drift field")?;
    }
    if let Some(r) = reward_rate {
        check_coverage(r, t, "reward-rate field")?;
    }
    let period = drift
        .or(reward_rate)
        .map(|f| f.grid().period())
        .or(match policy {
            ControlPolicy::Feedback(f) => Some(f.grid().period()),
            _ => None,
        })
        .unwrap_or(1.0);

    let sqdt = dt.sqrt();
    let paths: Vec<(f64, f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut gen = rng::stream_rng(seed, p as u64);
            let mut pos = x;
            let mut reward = 0.0;
            let mut cost = 0.0;
            for i in 0..n_steps {
                let s = i as f64 * dt;
                let v = policy.value(t - s, pos);
                if let Some(r) = reward_rate {
                    reward += r.eval(s, pos) * dt;
                }
                cost += 0.5 * v * v * dt;
                let mut b = v;
                if let Some(d) = drift {
                    b += d.eval(s, pos);
                }
                let z: f64 = gen.sample(rand_distr::StandardNormal);
                pos += b * dt + sqdt * z;
            }
            (pos, reward, cost)
        })
        .collect();

    let mut terminal = Vec::with_capacity(n_paths);
    let mut reward = Vec::with_capacity(n_paths);
    let mut cost = Vec::with_capacity(n_paths);
    for (p, r, c) in paths {
        if !(p.is_finite() && r.is_finite() && c.is_finite()) {
            return Err(Error::Instability(
                "a controlled path left the finite range".into(),
            ));
        }
        terminal.push(p);
        reward.push(r);
        cost.push(c);
    }
    Ok(PathEnsemble {
        start: x,
        t,
        dt,
        seed,
        period,
        terminal,
        reward,
        cost,
    })
}

/// Euler-Maruyama ensemble for `dg = (b(s, g) + v_s) ds + dB` from `x`.
///
/// `drift` is evaluated at path time directly, so transport drifts must be
/// passed already time-reversed; the policy follows the remaining-time
/// convention of [`ControlPolicy`].
pub fn simulate_paths(
    drift: Option<&SpaceTimeField>,
    policy: &ControlPolicy,
    x: f64,
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<PathEnsemble> {
    ensemble_engine(drift, None, policy, x, t, n_paths, dt, seed)
}

/// Apply a path functional to `n_paths` Brownian paths from 0 on the mesh
/// `s_i = i dt`, `i = 0..=t/dt`; sample `i` of the buffer is `B_{s_i}`.
pub fn brownian_functional_samples<F>(
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
    functional: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    controlled_functional_samples(&ControlPolicy::Zero, t, n_paths, dt, seed, functional)
        .map(|(values, _)| values)
}

/// Apply a path functional to controlled paths `g = int v + B` from 0,
/// returning `(functional values, control costs)` per path. The same seed
/// reproduces the same driving noise across policies.
fn controlled_functional_samples<F>(
    policy: &ControlPolicy,
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
    functional: F,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n_steps = step_count(t, dt)?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter(
            "an ensemble needs at least one path".into(),
        ));
    }
    policy.check(t)?;
    let sqdt = dt.sqrt();
    let out: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map_init(
            || vec![0.0; n_steps + 1],
            |path, p| {
                let mut gen = rng::stream_rng(seed, p as u64);
                path[0] = 0.0;
                let mut cost = 0.0;
                for i in 0..n_steps {
                    let s = i as f64 * dt;
                    let v = policy.value(t - s, path[i]);
                    cost += 0.5 * v * v * dt;
                    let z: f64 = gen.sample(rand_distr::StandardNormal);
                    path[i + 1] = path[i] + v * dt + sqdt * z;
                }
                (functional(path), cost)
            },
        )
        .collect();
    Ok(out.into_iter().unzip())
}

/// Two sides of the log-Laplace variational formula.
///
/// `lhs` estimates `ln E[e^{F(B)}]` (standard error by the delta method);
/// `policy_values[i]` estimates `E[F(B + int v_i) - 1/2 int |v_i|^2]`. Every
/// policy value is a lower bound for the left side, with equality at the
/// optimal control.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoueDupuisReport {
    pub lhs: ValueEstimate,
    pub policy_values: Vec<ValueEstimate>,
    pub best: usize,
}

impl BoueDupuisReport {
    pub fn rhs_best(&self) -> ValueEstimate {
        self.policy_values[self.best]
    }
}

/// Estimate both sides of the variational formula for a bounded path
/// functional and the supplied candidate policies, all under common driving
/// noise.
pub fn boue_dupuis_check<F>(
    functional: F,
    t: f64,
    policies: &[ControlPolicy],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<BoueDupuisReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if policies.is_empty() {
        return Err(Error::InvalidParameter(
            "the variational check needs at least one policy".into(),
        ));
    }
    let raw = brownian_functional_samples(t, n_paths, dt, seed, &functional)?;
    // ln of the exponential mean, shifted by the max for overflow safety;
    // the delta method gives se(ln m) = se(m) / m.
    let shift = raw.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let weights: Vec<f64> = raw.iter().map(|&v| (v - shift).exp()).collect();
    let (wmean, wse) = stats::mean_and_se(&weights)?;
    let lhs = ValueEstimate {
        mean: shift + wmean.ln(),
        std_error: wse / wmean,
        n_paths,
    };

    let mut policy_values = Vec::with_capacity(policies.len());
    for policy in policies {
        let (values, costs) =
            controlled_functional_samples(policy, t, n_paths, dt, seed, &functional)?;
        let net: Vec<f64> = values.iter().zip(&costs).map(|(f, c)| f - c).collect();
        policy_values.push(ValueEstimate::from_samples(&net)?);
    }
    let best = policy_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
        .map(|(i, _)| i)
        .expect("at least one policy");
    Ok(BoueDupuisReport {
        lhs,
        policy_values,
        best,
    })
}

/// Relative entropy of conditioning a Brownian motion from `x` on
/// `B_t in [a, b]`: `-ln P_x(B_t in [a, b])`, stable far in the tails.
pub fn conditioned_entropy(x: f64, t: f64, interval: (f64, f64)) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "conditioning needs t > 0, got {t}"
        )));
    }
    let scale = t.sqrt();
    let lp = stats::log_normal_interval((interval.0 - x) / scale, (interval.1 - x) / scale)?;
    Ok(-lp)
}

/// Conditioning entropy for the wrapped (periodised) Brownian motion: the
/// terminal probability sums the interval mass over all integer shifts of
/// the period.
pub fn conditioned_entropy_torus(x: f64, t: f64, interval: (f64, f64), period: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0 && period.is_finite() && period > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "conditioning needs t > 0 and a positive period, got t = {t}, period = {period}"
        )));
    }
    let (a, b) = interval;
    if !(a < b) {
        return Err(Error::InvalidParameter(format!(
            "interval must satisfy a < b, got [{a}, {b}]"
        )));
    }
    if b - a >= period {
        return Ok(0.0);
    }
    let scale = t.sqrt();
    // Images beyond ~10 standard deviations contribute below 1e-23 each.
    let reach = (10.0 * scale / period).ceil() as i64 + 1;
    let mut total = 0.0;
    for k in -reach..=reach {
        let shift = k as f64 * period;
        total += stats::normal_cdf((b - x + shift) / scale)
            - stats::normal_cdf((a - x + shift) / scale);
    }
    if !(total > 0.0) {
        return Err(Error::Underflow(format!(
            "periodised terminal probability underflowed for x = {x}, t = {t}"
        )));
    }
    // Rounding in the image sum can push the probability past 1 by an ulp.
    Ok((-total.ln()).max(0.0))
}

/// How to sample paths conditioned on the terminal interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum BridgeMethod {
    /// Draw the terminal point from the exact truncated Gaussian law by
    /// inverting its CDF; only valid without drift or running reward, where
    /// the integrand depends on the path through its endpoint alone.
    ExactTerminal,
    /// Simulate unconditioned paths and keep those that land in the
    /// interval. Works with arbitrary drift and running reward at the price
    /// of the acceptance rate.
    Rejection,
}

/// Conditional expectation of the terminal integrand given that the path
/// ends in the interval, together with the acceptance rate of the sampler.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BridgeEstimate {
    pub value: ValueEstimate,
    pub acceptance: f64,
    pub method: BridgeMethod,
}

/// Estimate `E[ h0(g_t) - Y(0, g_t) + int |dx YR|^2 ds | g_t in [a, b] ]`
/// for the transport diffusion started at `x`.
///
/// With `trees = None` the diffusion is a plain Brownian motion and the
/// integrand reduces to `h0(B_t)`; the exact-terminal method then samples
/// the conditional law directly. Combined with the conditioning entropy
/// this certifies the lower bound `value - entropy <= hR(t, x)` up to
/// discretisation, since conditioned measures are admissible competitors
/// in the variational formula.
#[allow(clippy::too_many_arguments)]
pub fn bridge_conditioned_terminal_value(
    initial: &TorusField,
    trees: Option<&EnhancedNoise>,
    x: f64,
    t: f64,
    interval: (f64, f64),
    n_paths: usize,
    dt: f64,
    seed: u64,
    method: BridgeMethod,
    acceptance_floor: f64,
) -> Result<BridgeEstimate> {
    let (samples, acceptance) = bridge_samples(
        initial,
        trees,
        x,
        t,
        interval,
        n_paths,
        dt,
        seed,
        method,
        acceptance_floor,
    )?;
    Ok(BridgeEstimate {
        value: ValueEstimate::from_samples(&samples)?,
        acceptance,
        method,
    })
}

/// Per-path integrand samples of the conditioned ensemble together with
/// the acceptance rate.
#[allow(clippy::too_many_arguments)]
fn bridge_samples(
    initial: &TorusField,
    trees: Option<&EnhancedNoise>,
    x: f64,
    t: f64,
    interval: (f64, f64),
    n_paths: usize,
    dt: f64,
    seed: u64,
    method: BridgeMethod,
    acceptance_floor: f64,
) -> Result<(Vec<f64>, f64)> {
    let (a, b) = interval;
    if !(a < b) {
        return Err(Error::InvalidParameter(format!(
            "interval must satisfy a < b, got [{a}, {b}]"
        )));
    }
    if n_paths == 0 {
        return Err(Error::InvalidParameter(
            "an ensemble needs at least one path".into(),
        ));
    }
    match method {
        BridgeMethod::ExactTerminal => {
            if trees.is_some() {
                return Err(Error::InvalidParameter(
                    "exact terminal sampling needs a driftless path; use rejection".into(),
                ));
            }
            step_count(t, dt)?;
            let scale = t.sqrt();
            let alpha = stats::normal_cdf((a - x) / scale);
            let beta = stats::normal_cdf((b - x) / scale);
            if !(beta > alpha) {
                return Err(Error::Underflow(format!(
                    "terminal interval mass underflowed for x = {x}, t = {t}"
                )));
            }
            let samples: Vec<f64> = (0..n_paths)
                .into_par_iter()
                .map(|p| {
                    let mut gen = rng::stream_rng(seed, p as u64);
                    let u: f64 = gen.sample(rand::distributions::Open01);
                    let q = stats::normal_quantile(alpha + u * (beta - alpha))
                        .expect("interior quantile");
                    initial.sample_at(x + scale * q)
                })
                .collect();
            Ok((samples, 1.0))
        }
        BridgeMethod::Rejection => {
            if !(acceptance_floor > 0.0 && acceptance_floor <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "acceptance floor must lie in (0, 1], got {acceptance_floor}"
                )));
            }
            let n_steps = step_count(t, dt)?;
            let (drift_rev, reward_rev, y0) = match trees {
                Some(noise) => {
                    let drift = noise.drift.time_reversed_through(t)?;
                    let reward = reward_rate_field(noise, t)?;
                    let y0 = noise.y.frame_field(0);
                    (Some(drift), Some(reward), Some(y0))
                }
                None => (None, None, None),
            };
            let max_attempts = ((n_paths as f64 / acceptance_floor).ceil() as usize).max(n_paths);
            let sqdt = dt.sqrt();
            let results: Vec<Option<f64>> = (0..max_attempts)
                .into_par_iter()
                .map(|p| {
                    let mut gen = rng::stream_rng(seed, p as u64);
                    let mut pos = x;
                    let mut reward = 0.0;
                    for i in 0..n_steps {
                        let s = i as f64 * dt;
                        if let Some(r) = &reward_rev {
                            reward += r.eval(s, pos) * dt;
                        }
                        let mut bdrift = 0.0;
                        if let Some(d) = &drift_rev {
                            bdrift = d.eval(s, pos);
                        }
                        let z: f64 = gen.sample(rand_distr::StandardNormal);
                        pos += bdrift * dt + sqdt * z;
                    }
                    if pos >= a && pos <= b {
                        let mut value = initial.sample_at(pos) + reward;
                        if let Some(y0) = &y0 {
                            value -= y0.sample_at(pos);
                        }
                        Some(value)
                    } else {
                        None
                    }
                })
                .collect();
            let attempts = results.len();
            let accepted: Vec<f64> = results.into_iter().flatten().collect();
            let acceptance = accepted.len() as f64 / attempts as f64;
            if accepted.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "only {} of {attempts} paths reached the interval",
                    accepted.len()
                )));
            }
            Ok((accepted, acceptance))
        }
    }
}

/// Squared remainder-gradient reward rate `|dx YR(t - s, y)|^2` as a field
/// in path time `s`, ready for left-endpoint quadrature.
fn reward_rate_field(trees: &EnhancedNoise, t: f64) -> Result<SpaceTimeField> {
    let reversed = trees.y_rem.time_reversed_through(t)?;
    let frames: Vec<Vec<f64>> = (0..reversed.n_frames())
        .map(|i| {
            let grad = crate::spectral::spectral_derivative(&reversed.frame_field(i));
            grad.values().iter().map(|g| g * g).collect()
        })
        .collect();
    SpaceTimeField::from_frames(reversed.grid(), reversed.dt(), frames)
}

/// Monte Carlo value of one admissible policy in the control representation
/// of the remainder field at `(t, x)`:
///
/// ```text
/// E[ h0(g_t) - Y(0, g_t) + int_0^t |dx YR(t-s, g_s)|^2 ds
///    - 1/2 int_0^t |v_s|^2 ds ]
/// ```
///
/// with `g` driven by the time-reversed transport drift plus the policy.
/// Every policy gives a lower bound for `hR(t, x)`; the feedback policy
/// `v = dx hR(t - s, y)` attains it.
pub fn representation_value(
    initial: &TorusField,
    trees: &EnhancedNoise,
    policy: &ControlPolicy,
    t: f64,
    x: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<ValueEstimate> {
    if initial.grid() != trees.grid() {
        return Err(Error::MeshMismatch(
            "initial data and noise live on different grids".into(),
        ));
    }
    let drift_rev = trees.drift.time_reversed_through(t)?;
    let reward_rev = reward_rate_field(trees, t)?;
    let y0 = trees.y.frame_field(0);
    let ensemble = ensemble_engine(
        Some(&drift_rev),
        Some(&reward_rev),
        policy,
        x,
        t,
        n_paths,
        dt,
        seed,
    )?;
    let values: Vec<f64> = ensemble
        .terminals()
        .iter()
        .zip(ensemble.rewards())
        .zip(ensemble.costs())
        .map(|((&term, &r), &c)| initial.sample_at(term) - y0.sample_at(term) + r - c)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability(
            "a representation value left the finite range".into(),
        ));
    }
    ValueEstimate::from_samples(&values)
}
