//! Transition-density estimation and Gaussian envelope checks.
//!
//! Monte Carlo terminal points go through a Gaussian kernel density
//! estimate ([`estimate_density`]); the estimate is then compared against
//! two-sided Gaussian envelopes
//!
//! ```text
//! C_lo (2 pi t)^{-1/2} e^{-c_lo r^2 / t} <= p(r) <= C_up (2 pi t)^{-1/2} e^{-c_up r^2 / t}
//! ```
//!
//! fitted as the tightest such lines in `(ln p, r^2/t)` coordinates, which
//! is a two-variable linear program solved exactly on the convex hull
//! ([`fit_gaussian_sandwich`]). The module also carries the torus heat
//! kernel as a truncated image sum with its two-sided bound
//! ([`torus_heat_bounds_check`]), periodisation of line densities
//! ([`periodize`]), and the gradient-to-density ratio whose `1/t` scaling
//! feeds the oscillation estimates ([`gradient_ratio`]).

use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::stats;

/// Where a density estimate came from.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DensityProvenance {
    /// Short description of the sampled process.
    pub label: String,
    /// Start point of the diffusion.
    pub x: f64,
    /// Terminal time of the sampled marginal.
    pub t: f64,
    /// Seed of the sampling ensemble, absent for analytic densities.
    pub seed: Option<u64>,
}

impl DensityProvenance {
    pub fn analytic(label: &str, x: f64, t: f64) -> Self {
        Self {
            label: label.to_string(),
            x,
            t,
            seed: None,
        }
    }

    pub fn sampled(label: &str, x: f64, t: f64, seed: u64) -> Self {
        Self {
            label: label.to_string(),
            x,
            t,
            seed: Some(seed),
        }
    }
}

/// Evaluation domain of a density estimate.
#[derive(Debug, Clone, Copy)]
pub enum DensityDomain {
    /// Wrapped estimate on the nodes of a torus grid.
    Torus(TorusGrid),
    /// Estimate on `n_points` even nodes of `[-half_width, half_width]`.
    Line { half_width: f64, n_points: usize },
}

/// A probability density sampled on an even grid, either periodic or on a
/// line window. Always nonnegative and integrating to one within 1%.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    positions: Vec<f64>,
    values: Vec<f64>,
    /// `Some(period)` for wrapped estimates, `None` for line windows.
    period: Option<f64>,
    bandwidth: f64,
    n_samples: usize,
    pub provenance: DensityProvenance,
}

/// Metadata block exported next to the CSV values.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DensityMetadata<'a> {
    pub bandwidth: f64,
    pub n_samples: usize,
    pub n_nodes: usize,
    pub period: Option<f64>,
    pub integral: f64,
    pub provenance: &'a DensityProvenance,
}

impl DensityEstimate {
    /// Wrap an analytic density given on a torus grid, normalising it to
    /// unit mass. Values must be nonnegative with positive total.
    pub fn from_torus_field(
        grid: TorusGrid,
        values: Vec<f64>,
        provenance: DensityProvenance,
    ) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::MeshMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.n_points()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let mass: f64 = stats::pairwise_sum(&values) * grid.spacing();
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter(
                "density has no mass to normalise".into(),
            ));
        }
        Ok(Self {
            positions: grid.points(),
            values: values.into_iter().map(|v| v / mass).collect(),
            period: Some(grid.period()),
            bandwidth: 0.0,
            n_samples: 0,
            provenance,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn is_torus(&self) -> bool {
        self.period.is_some()
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn spacing(&self) -> f64 {
        self.positions[1] - self.positions[0]
    }

    /// Trapezoid mass: exact Riemann sum on the circle, end-weighted
    /// trapezoid on a line window.
    pub fn integral(&self) -> f64 {
        let s = self.spacing();
        match self.period {
            Some(_) => stats::pairwise_sum(&self.values) * s,
            None => {
                (stats::pairwise_sum(&self.values)
                    - 0.5 * (self.values[0] + self.values[self.values.len() - 1]))
                    * s
            }
        }
    }

    /// Linear interpolation; wrapped on the torus, zero outside a line
    /// window.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.values.len();
        let s = self.spacing();
        match self.period {
            Some(p) => {
                let u = (x - self.positions[0]).rem_euclid(p) / s;
                let j = u.floor() as usize % n;
                let frac = u - u.floor();
                self.values[j] * (1.0 - frac) + self.values[(j + 1) % n] * frac
            }
            None => {
                let u = (x - self.positions[0]) / s;
                if u < 0.0 || u > (n - 1) as f64 {
                    return 0.0;
                }
                let j = (u.floor() as usize).min(n - 2);
                let frac = u - j as f64;
                self.values[j] * (1.0 - frac) + self.values[j + 1] * frac
            }
        }
    }

    /// Node of the largest density value.
    pub fn mode(&self) -> f64 {
        let (j, _) = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        self.positions[j]
    }

    /// Center of mass, the center used for envelope fitting: far more
    /// stable under estimation noise than the mode of a flat peak. On the
    /// torus this is the circular mean, falling back to the mode when the
    /// density is too uniform for a direction to be meaningful.
    pub fn center(&self) -> f64 {
        match self.period {
            Some(p) => {
                let tau = 2.0 * std::f64::consts::PI;
                let (mut sin_sum, mut cos_sum) = (0.0, 0.0);
                for (&x, &v) in self.positions.iter().zip(&self.values) {
                    sin_sum += v * (tau * x / p).sin();
                    cos_sum += v * (tau * x / p).cos();
                }
                let total: f64 = self.values.iter().sum();
                if sin_sum.hypot(cos_sum) < 1e-6 * total {
                    return self.mode();
                }
                sin_sum.atan2(cos_sum) * p / tau
            }
            None => {
                let mass: f64 = self.values.iter().sum();
                self.positions
                    .iter()
                    .zip(&self.values)
                    .map(|(&x, &v)| x * v)
                    .sum::<f64>()
                    / mass
            }
        }
    }

    fn distance_from(&self, center: f64, x: f64) -> f64 {
        match self.period {
            Some(p) => {
                let d = (x - center).rem_euclid(p);
                d.min(p - d)
            }
            None => (x - center).abs(),
        }
    }

    /// Smallest radius around the center of mass holding the given
    /// fraction of the total mass; nodes are accumulated in distance order.
    pub fn mass_quantile_radius(&self, q: f64) -> Result<f64> {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mass quantile must lie in (0, 1), got {q}"
            )));
        }
        let center = self.center();
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        let dist: Vec<f64> = self
            .positions
            .iter()
            .map(|&x| self.distance_from(center, x))
            .collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
        let total: f64 = stats::pairwise_sum(&self.values);
        let target = q * total;
        let mut acc = 0.0;
        for &j in &order {
            acc += self.values[j];
            if acc >= target {
                return Ok(dist[j]);
            }
        }
        Ok(dist[*order.last().expect("nonempty")])
    }

    /// Two-column CSV of the estimate, `position,density` per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,density\n");
        for (x, v) in self.positions.iter().zip(&self.values) {
            out.push_str(&format!("{x:.17e},{v:.17e}\n"));
        }
        out
    }

    /// JSON metadata block describing the estimate.
    pub fn metadata_json(&self) -> String {
        serde_json::to_string_pretty(&DensityMetadata {
            bandwidth: self.bandwidth,
            n_samples: self.n_samples,
            n_nodes: self.values.len(),
            period: self.period,
            integral: self.integral(),
            provenance: &self.provenance,
        })
        .expect("plain struct serialises")
    }
}

/// Silverman's rule on the (possibly wrapped) samples:
/// `0.9 min(sd, iqr / 1.34) n^{-1/5}`.
fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let sd = stats::variance(samples).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let u = p * (sorted.len() - 1) as f64;
        let j = u.floor() as usize;
        let frac = u - j as f64;
        sorted[j] * (1.0 - frac) + sorted[(j + 1).min(sorted.len() - 1)] * frac
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let scale = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * scale * (samples.len() as f64).powf(-0.2);
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(
            "samples have zero spread; pass an explicit bandwidth".into(),
        ));
    }
    Ok(h)
}

/// Gaussian kernel density estimate of terminal points.
///
/// The default bandwidth is Silverman's rule; on a torus domain the kernel
/// is wrapped over all periodic images that matter at the chosen bandwidth.
/// Line windows must be wide enough to catch the mass: the unit-integral
/// invariant is enforced at construction.
pub fn estimate_density(
    samples: &[f64],
    domain: DensityDomain,
    bandwidth: Option<f64>,
    provenance: DensityProvenance,
) -> Result<DensityEstimate> {
    if samples.len() < 1000 {
        return Err(Error::InsufficientData(format!(
            "kernel density estimation needs at least 1000 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    let (positions, period) = match domain {
        DensityDomain::Torus(grid) => (grid.points(), Some(grid.period())),
        DensityDomain::Line {
            half_width,
            n_points,
        } => {
            if !(half_width > 0.0) || n_points < 8 {
                return Err(Error::InvalidParameter(
                    "line windows need a positive half width and at least 8 nodes".into(),
                ));
            }
            let s = 2.0 * half_width / (n_points - 1) as f64;
            (
                (0..n_points).map(|j| -half_width + j as f64 * s).collect(),
                None,
            )
        }
    };

    let wrapped: Vec<f64> = match period {
        Some(p) => samples
            .iter()
            .map(|&s| {
                let w = s.rem_euclid(p);
                if w >= 0.5 * p {
                    w - p
                } else {
                    w
                }
            })
            .collect(),
        None => samples.to_vec(),
    };
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => silverman_bandwidth(&wrapped)?,
    };

    let norm = 1.0 / (wrapped.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let reach = period.map(|p| (8.0 * h / p).ceil() as i64 + 1);
    let values: Vec<f64> = positions
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for &s in &wrapped {
                match period {
                    Some(p) => {
                        let base = x - s;
                        for k in -reach.unwrap()..=reach.unwrap() {
                            let d = (base + k as f64 * p) / h;
                            if d.abs() < 9.0 {
                                acc += (-0.5 * d * d).exp();
                            }
                        }
                    }
                    None => {
                        let d = (x - s) / h;
                        if d.abs() < 9.0 {
                            acc += (-0.5 * d * d).exp();
                        }
                    }
                }
            }
            acc * norm
        })
        .collect();

    let estimate = DensityEstimate {
        positions,
        values,
        period,
        bandwidth: h,
        n_samples: samples.len(),
        provenance,
    };
    let mass = estimate.integral();
    if (mass - 1.0).abs() > 0.01 {
        return Err(Error::InvalidParameter(format!(
            "estimate integrates to {mass:.4}; widen the window or check the samples"
        )));
    }
    Ok(estimate)
}

/// Two-sided Gaussian envelope of a density around its mode:
/// `lower <= p <= upper` on every retained node, with
/// `upper(r) = C_up (2 pi t)^{-1/2} exp(-c_up r^2 / t)` and the mirrored
/// lower form. An exact Gaussian of variance `t` gives all four constants
/// `(1, 1/2)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GaussianSandwich {
    pub big_c_upper: f64,
    pub c_upper: f64,
    pub big_c_lower: f64,
    pub c_lower: f64,
    /// Center used for radii (the density's center of mass).
    pub center: f64,
    pub t: f64,
    /// Radius of the retained validity grid (the mass-quantile cutoff).
    pub cutoff_radius: f64,
    pub retained_nodes: usize,
    /// Largest log-gap between the upper envelope and the density.
    pub max_gap_upper: f64,
    /// Largest log-gap between the density and the lower envelope.
    pub max_gap_lower: f64,
}

impl GaussianSandwich {
    pub fn upper_at(&self, r: f64) -> f64 {
        self.big_c_upper * (2.0 * std::f64::consts::PI * self.t).sqrt().recip()
            * (-self.c_upper * r * r / self.t).exp()
    }

    pub fn lower_at(&self, r: f64) -> f64 {
        self.big_c_lower * (2.0 * std::f64::consts::PI * self.t).sqrt().recip()
            * (-self.c_lower * r * r / self.t).exp()
    }
}

/// Tightest line above (`upper = true`) or below all points `(q, l)`,
/// minimising the total gap: the optimum is an edge of the convex hull, so
/// scan hull edges. Returns `(intercept, slope)`.
fn tightest_line(points: &[(f64, f64)], upper: bool) -> (f64, f64) {
    // Dedupe by q, keeping the binding value for the requested side.
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        match dedup.last_mut() {
            Some(last) if (last.0 - p.0).abs() < 1e-12 => {
                if upper { last.1 = last.1.max(p.1) } else { last.1 = last.1.min(p.1) }
            }
            _ => dedup.push(p),
        }
    }
    let sign = if upper { 1.0 } else { -1.0 };
    // Monotone chain for the requested hull side.
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(dedup.len());
    for &(q, l) in &dedup {
        while hull.len() >= 2 {
            let (q1, l1) = hull[hull.len() - 2];
            let (q2, l2) = hull[hull.len() - 1];
            let cross = (q2 - q1) * (l - l1) - (l2 - l1) * (q - q1);
            if sign * cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((q, l));
    }
    let n = points.len() as f64;
    let q_sum: f64 = points.iter().map(|p| p.0).sum();
    // Objective: total gap of the envelope line over the points; sign
    // flips for the lower side where the line sits underneath.
    let objective = |intercept: f64, slope: f64| -> f64 {
        sign * (n * intercept + slope * q_sum) - sign * points.iter().map(|p| p.1).sum::<f64>()
    };
    let mut best: Option<(f64, (f64, f64))> = None;
    let mut consider = |intercept: f64, slope: f64| {
        if !(intercept.is_finite() && slope.is_finite() && slope <= 0.0) {
            return;
        }
        let val = objective(intercept, slope);
        if best.map(|(b, _)| val < b).unwrap_or(true) {
            best = Some((val, (intercept, slope)));
        }
    };
    for w in hull.windows(2) {
        let (q1, l1) = w[0];
        let (q2, l2) = w[1];
        if q2 - q1 > 1e-12 {
            let slope = (l2 - l1) / (q2 - q1);
            consider(l1 - slope * q1, slope);
        }
    }
    // Flat line through the binding extreme, the slope-zero vertex.
    let flat = if upper {
        dedup.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    } else {
        dedup.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    };
    consider(flat, 0.0);
    best.expect("at least the flat line is admissible").1
}

/// Fit the tightest Gaussian envelopes around the density's mode.
///
/// Nodes beyond the mass-quantile cutoff (default 99.5%, where kernel
/// estimates are all noise) are excluded; pass a custom `quantile` to move
/// the cutoff. Envelopes hold on every retained node by construction.
pub fn fit_gaussian_sandwich(
    d: &DensityEstimate,
    t: f64,
    quantile: Option<f64>,
) -> Result<GaussianSandwich> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sandwich fitting needs t > 0, got {t}"
        )));
    }
    let q_cut = quantile.unwrap_or(0.995);
    let cutoff_radius = d.mass_quantile_radius(q_cut)?;
    let center = d.center();
    let half_log = 0.5 * (2.0 * std::f64::consts::PI * t).ln();
    let mut points = Vec::new();
    for (&x, &p) in d.positions().iter().zip(d.values()) {
        let r = d.distance_from(center, x);
        if r <= cutoff_radius && p > 0.0 {
            points.push((r * r / t, p.ln() + half_log));
        }
    }
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "only {} usable nodes inside the cutoff radius {cutoff_radius}",
            points.len()
        )));
    }
    let (b_up, s_up) = tightest_line(&points, true);
    let (b_lo, s_lo) = tightest_line(&points, false);
    let max_gap_upper = points
        .iter()
        .map(|&(q, l)| b_up + s_up * q - l)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_gap_lower = points
        .iter()
        .map(|&(q, l)| l - (b_lo + s_lo * q))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GaussianSandwich {
        big_c_upper: b_up.exp(),
        c_upper: -s_up,
        big_c_lower: b_lo.exp(),
        c_lower: -s_lo,
        center,
        t,
        cutoff_radius,
        retained_nodes: points.len(),
        max_gap_upper,
        max_gap_lower,
    })
}

/// Wrap a line density onto a torus grid by summing all images that land
/// inside the window.
///
/// The window must cover at least one period and the density must have
/// decayed below `1e-12` at the window edges, so the discarded tail is
/// negligible; the wrapped estimate dominates the restriction of the line
/// density pointwise.
pub fn periodize(d: &DensityEstimate, grid: TorusGrid) -> Result<DensityEstimate> {
    if d.is_torus() {
        return Err(Error::InvalidParameter(
            "the estimate is already periodic".into(),
        ));
    }
    let half_width = *d.positions().last().expect("nonempty");
    let period = grid.period();
    if half_width < 0.5 * period {
        return Err(Error::InvalidParameter(format!(
            "window half width {half_width} does not cover half a period {period}"
        )));
    }
    let edge = d.values()[0].max(*d.values().last().expect("nonempty"));
    if edge > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "density is {edge:.2e} at the window edge; insufficient decay to wrap"
        )));
    }
    let reach = (half_width / period).ceil() as i64 + 1;
    let values: Vec<f64> = grid
        .points()
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for k in -reach..=reach {
                let y = x + k as f64 * period;
                if y.abs() <= half_width {
                    acc += d.value_at(y);
                }
            }
            acc
        })
        .collect();
    let estimate = DensityEstimate {
        positions: grid.points(),
        values,
        period: Some(period),
        bandwidth: d.bandwidth(),
        n_samples: d.n_samples(),
        provenance: d.provenance.clone(),
    };
    let mass = estimate.integral();
    if (mass - 1.0).abs() > 0.01 {
        return Err(Error::InvalidParameter(format!(
            "wrapped estimate integrates to {mass:.4}"
        )));
    }
    Ok(estimate)
}

/// Heat kernel on a torus of the given period, as a truncated image sum of
/// the line kernel with unit prefactor:
/// `sum_k (2 pi s)^{-1/2} exp(-(y + k period)^2 / (2 s))`.
pub fn torus_heat_kernel(s: f64, y: f64, period: f64) -> f64 {
    let reach = (10.0 * s.sqrt() / period).ceil() as i64 + 1;
    let norm = (2.0 * std::f64::consts::PI * s).sqrt().recip();
    let mut acc = 0.0;
    for k in -reach..=reach {
        let d = y + k as f64 * period;
        acc += norm * (-0.5 * d * d / s).exp();
    }
    acc
}

/// Which normalisation the torus heat bound runs in.
///
/// `TwoPi` is the literal convention of the source estimate: period `2 pi`
/// and kernel prefactor `2 pi`, giving
/// `sqrt(2 pi / s) e^{-d^2/(2s)} <= p <= 2 (1 + sqrt(2 pi / s)) e^{-d^2/(2s)}`
/// with `d` the torus distance to zero. `Unit` is the same inequality
/// transported to the unit torus with unit prefactor by the exact rescaling
/// `p_unit(s, y) = p_twopi(4 pi^2 s, 2 pi y)`, under which the envelopes
/// become `(2 pi s)^{-1/2}` and `2 (1 + (2 pi s)^{-1/2})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum PeriodMode {
    TwoPi,
    Unit,
}

/// Outcome of one torus heat-bound evaluation.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HeatBoundsReport {
    pub s: f64,
    pub y: f64,
    pub mode: PeriodMode,
    /// Torus distance from `y` to zero in the mode's period.
    pub distance: f64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
    pub pass: bool,
}

/// Evaluate the torus heat kernel and its two-sided Gaussian bound at one
/// point, returning the margins by which the bound holds.
pub fn torus_heat_bounds_check(s: f64, y: f64, mode: PeriodMode) -> Result<HeatBoundsReport> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "heat bounds need s > 0, got {s}"
        )));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let (period, prefactor) = match mode {
        PeriodMode::TwoPi => (tau, tau),
        PeriodMode::Unit => (1.0, 1.0),
    };
    let d = {
        let w = y.rem_euclid(period);
        w.min(period - w)
    };
    let value = prefactor * torus_heat_kernel(s, y, period);
    let envelope = (-0.5 * d * d / s).exp();
    let ratio = match mode {
        PeriodMode::TwoPi => (tau / s).sqrt(),
        PeriodMode::Unit => (tau * s).sqrt().recip(),
    };
    let lower = ratio * envelope;
    let upper = 2.0 * (1.0 + ratio) * envelope;
    Ok(HeatBoundsReport {
        s,
        y,
        mode,
        distance: d,
        value,
        lower,
        upper,
        lower_margin: value - lower,
        upper_margin: upper - value,
        pass: value >= lower - 1e-12 && value <= upper + 1e-12,
    })
}

/// Supremum of `|dx p / p|` over the estimate's nodes, from centred finite
/// differences after two passes of 1-2-1 smoothing.
///
/// On line windows the two edge nodes are excluded. Fails if the smoothed
/// density is not strictly positive, reporting the offending position.
pub fn gradient_ratio(d: &DensityEstimate) -> Result<f64> {
    let n = d.values().len();
    let wrap = d.is_torus();
    let smooth_pass = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let prev = if j > 0 {
                    v[j - 1]
                } else if wrap {
                    v[n - 1]
                } else {
                    v[0]
                };
                let next = if j + 1 < n {
                    v[j + 1]
                } else if wrap {
                    v[0]
                } else {
                    v[n - 1]
                };
                0.25 * prev + 0.5 * v[j] + 0.25 * next
            })
            .collect()
    };
    let smoothed = smooth_pass(&smooth_pass(d.values()));
    let s = d.spacing();
    let mut sup: f64 = 0.0;
    let range = if wrap { 0..n } else { 1..n - 1 };
    for j in range {
        let p = smoothed[j];
        if !(p > 0.0) {
            return Err(Error::Underflow(format!(
                "density is not positive near x = {}",
                d.positions()[j]
            )));
        }
        let prev = smoothed[(j + n - 1) % n];
        let next = smoothed[(j + 1) % n];
        sup = sup.max(((next - prev) / (2.0 * s) / p).abs());
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::noise::{build_trees, sample_noise};
    use crate::rng;
    use crate::zvonkin::{simulate_transformed, ZvonkinMap};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn normal_draws(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut gen = rng::stream_rng(seed, 0);
        (0..n)
            .map(|_| mean + sd * gen.sample::<f64, _>(rand_distr::StandardNormal))
            .collect()
    }

    #[test]
    fn wrapped_kde_matches_the_periodised_gaussian() {
        let grid = TorusGrid::new(256).unwrap();
        let t = 0.25f64;
        let samples = normal_draws(100_000, 0.0, t.sqrt(), 71);
        // A kernel slightly wider than Silverman's choice: the supremum
        // metric is dominated by the noise floor, not by smoothing bias.
        let d = estimate_density(
            &samples,
            DensityDomain::Torus(grid),
            Some(0.05),
            DensityProvenance::sampled("brownian terminal", 0.0, t, 71),
        )
        .unwrap();
        assert!((d.integral() - 1.0).abs() < 0.01);
        let mut sup_dist: f64 = 0.0;
        for (x, v) in d.positions().iter().zip(d.values()) {
            sup_dist = sup_dist.max((v - torus_heat_kernel(t, *x, 1.0)).abs());
        }
        assert!(sup_dist < 0.02, "sup distance {sup_dist}");
    }

    #[test]
    fn point_mass_returns_the_wrapped_kernel() {
        let grid = TorusGrid::new(128).unwrap();
        let h = 0.03;
        let samples = vec![0.2; 1000];
        let d = estimate_density(
            &samples,
            DensityDomain::Torus(grid),
            Some(h),
            DensityProvenance::sampled("point mass", 0.2, 0.0, 0),
        )
        .unwrap();
        assert!((d.integral() - 1.0).abs() < 0.01);
        // The estimate is the kernel itself: a wrapped Gaussian of width h.
        for (x, v) in d.positions().iter().zip(d.values()) {
            let expected = torus_heat_kernel(h * h, x - 0.2, 1.0);
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn kde_input_validation() {
        let grid = TorusGrid::new(64).unwrap();
        let few = vec![0.0; 999];
        let err = estimate_density(
            &few,
            DensityDomain::Torus(grid),
            Some(0.1),
            DensityProvenance::analytic("too few", 0.0, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
        let constant = vec![0.1; 2000];
        let err = estimate_density(
            &constant,
            DensityDomain::Torus(grid),
            None,
            DensityProvenance::analytic("degenerate", 0.0, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn exact_gaussian_recovers_unit_sandwich_constants() {
        let grid = TorusGrid::new(512).unwrap();
        let t = 0.01;
        let values: Vec<f64> = grid
            .points()
            .iter()
            .map(|&x| (-0.5 * x * x / t).exp() / (2.0 * std::f64::consts::PI * t).sqrt())
            .collect();
        let d = DensityEstimate::from_torus_field(
            grid,
            values,
            DensityProvenance::analytic("gaussian", 0.0, t),
        )
        .unwrap();
        let fit = fit_gaussian_sandwich(&d, t, None).unwrap();
        assert!((fit.big_c_upper - 1.0).abs() < 0.05, "C up {}", fit.big_c_upper);
        assert!((fit.big_c_lower - 1.0).abs() < 0.05, "C lo {}", fit.big_c_lower);
        assert!((fit.c_upper - 0.5).abs() < 0.025, "c up {}", fit.c_upper);
        assert!((fit.c_lower - 0.5).abs() < 0.025, "c lo {}", fit.c_lower);
        // The envelopes really do sandwich the density on retained nodes.
        assert!(fit.max_gap_upper >= -1e-9 && fit.max_gap_lower >= -1e-9);
        for (x, v) in d.positions().iter().zip(d.values()) {
            let r = x.abs();
            if r <= fit.cutoff_radius && *v > 0.0 {
                assert!(*v <= fit.upper_at(r) * (1.0 + 1e-9));
                assert!(*v >= fit.lower_at(r) * (1.0 - 1e-9));
            }
        }
    }

    #[test]
    fn brownian_kde_sweep_recovers_half_in_the_exponent() {
        for (k, &t) in [0.1f64, 0.25, 0.5].iter().enumerate() {
            let samples = normal_draws(20_000, 0.0, t.sqrt(), 100 + k as u64);
            let d = estimate_density(
                &samples,
                DensityDomain::Line {
                    half_width: 6.0 * t.sqrt(),
                    n_points: 257,
                },
                None,
                DensityProvenance::sampled("brownian terminal", 0.0, t, 100 + k as u64),
            )
            .unwrap();
            let fit = fit_gaussian_sandwich(&d, t, None).unwrap();
            assert!(
                (fit.c_upper - 0.5).abs() < 0.05,
                "t = {t}: c upper {}",
                fit.c_upper
            );
            assert!(
                (fit.c_lower - 0.5).abs() < 0.05,
                "t = {t}: c lower {}",
                fit.c_lower
            );
        }
    }

    #[test]
    fn transformed_diffusion_sandwich_is_stable_in_time() {
        let grid = TorusGrid::new(128).unwrap();
        let dt = 1e-3;
        let horizon = 0.25;
        let noise = sample_noise(grid, dt, horizon, 1.0 / 16.0, 401).unwrap();
        let trees = build_trees(&noise).unwrap();
        let map = ZvonkinMap::build(&trees.drift, horizon, 1.0).unwrap();
        let mut upper_c = Vec::new();
        let mut lower_c = Vec::new();
        for (k, &t) in [0.1, 0.25].iter().enumerate() {
            let ens = simulate_transformed(&map, 0.0, t, 6_000, dt, 500 + k as u64).unwrap();
            let d = estimate_density(
                ens.terminals(),
                DensityDomain::Line {
                    half_width: 4.0,
                    n_points: 257,
                },
                None,
                DensityProvenance::sampled("transformed diffusion", 0.0, t, 500 + k as u64),
            )
            .unwrap();
            let fit = fit_gaussian_sandwich(&d, t, None).unwrap();
            assert!(fit.c_upper > 0.0 && fit.c_lower > 0.0 && fit.big_c_upper.is_finite());
            upper_c.push(fit.c_upper);
            lower_c.push(fit.c_lower);
        }
        for pair in [&upper_c, &lower_c] {
            let hi = pair.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lo = pair.iter().fold(f64::INFINITY, |m, &v| m.min(v));
            assert!(hi / lo < 2.0, "constants {lo} .. {hi} spread beyond factor 2");
        }
    }

    #[test]
    fn periodisation_reduces_to_the_line_density_at_small_width() {
        // Standard deviation 0.05 on the unit torus: the nearest image of
        // any |y| <= 0.25 sits at least 15 standard deviations out.
        let sd = 0.05;
        let n = 2001;
        let half = 3.0;
        let values: Vec<f64> = (0..n)
            .map(|j| {
                let x = -half + j as f64 * (2.0 * half / (n - 1) as f64);
                (-0.5 * x * x / (sd * sd)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sd)
            })
            .collect();
        let line = DensityEstimate {
            positions: (0..n)
                .map(|j| -half + j as f64 * (2.0 * half / (n - 1) as f64))
                .collect(),
            values,
            period: None,
            bandwidth: 0.0,
            n_samples: 0,
            provenance: DensityProvenance::analytic("narrow gaussian", 0.0, sd * sd),
        };
        let grid = TorusGrid::new(256).unwrap();
        let wrapped = periodize(&line, grid).unwrap();
        for (x, v) in wrapped.positions().iter().zip(wrapped.values()) {
            assert!(*v >= line.value_at(*x) - 1e-15, "wrapped below line at {x}");
            if x.abs() <= 0.25 {
                assert!(
                    (v - line.value_at(*x)).abs() < 1e-6,
                    "images visible at {x}"
                );
            }
        }
    }

    #[test]
    fn periodisation_of_a_wide_gaussian_is_uniform() {
        let t: f64 = 10.0;
        let sd = t.sqrt();
        let n = 4001;
        let half = 8.0 * sd;
        let spacing = 2.0 * half / (n - 1) as f64;
        let positions: Vec<f64> = (0..n).map(|j| -half + j as f64 * spacing).collect();
        let values: Vec<f64> = positions
            .iter()
            .map(|&x| (-0.5 * x * x / t).exp() / (2.0 * std::f64::consts::PI * t).sqrt())
            .collect();
        let line = DensityEstimate {
            positions,
            values,
            period: None,
            bandwidth: 0.0,
            n_samples: 0,
            provenance: DensityProvenance::analytic("wide gaussian", 0.0, t),
        };
        let grid = TorusGrid::new(64).unwrap();
        let wrapped = periodize(&line, grid).unwrap();
        for v in wrapped.values() {
            assert!((v - 1.0).abs() < 1e-6, "wrapped value {v}");
        }
    }

    #[test]
    fn periodisation_rejects_undecayed_windows() {
        let n = 101;
        let positions: Vec<f64> = (0..n).map(|j| -1.0 + j as f64 * 0.02).collect();
        let line = DensityEstimate {
            positions,
            values: vec![0.5; n],
            period: None,
            bandwidth: 0.0,
            n_samples: 0,
            provenance: DensityProvenance::analytic("uniform", 0.0, 1.0),
        };
        let grid = TorusGrid::new(64).unwrap();
        assert!(matches!(
            periodize(&line, grid).unwrap_err(),
            Error::InvalidParameter(_)
        ));
    }

    #[test]
    fn torus_heat_bounds_hold_across_the_sweep() {
        // The quoted constants at the lemma's own normalisation.
        let report = torus_heat_bounds_check(1.0, 0.0, PeriodMode::TwoPi).unwrap();
        assert!(report.pass);
        assert!(report.lower_margin >= 0.0 && report.upper_margin >= 0.0);
        let report = torus_heat_bounds_check(0.01, std::f64::consts::PI, PeriodMode::TwoPi).unwrap();
        assert!(report.pass, "lower margin {}", report.lower_margin);

        for mode in [PeriodMode::TwoPi, PeriodMode::Unit] {
            let period = match mode {
                PeriodMode::TwoPi => 2.0 * std::f64::consts::PI,
                PeriodMode::Unit => 1.0,
            };
            for i in 0..13 {
                let s = 1e-3 * (1e4f64).powf(i as f64 / 12.0);
                for j in 0..17 {
                    let y = period * (j as f64 / 16.0 - 0.5);
                    let r = torus_heat_bounds_check(s, y, mode).unwrap();
                    assert!(
                        r.pass,
                        "bound failed at s = {s}, y = {y}, mode {mode:?}: \
                         {} not in [{}, {}]",
                        r.value, r.lower, r.upper
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_ratio_scales_inversely_with_time_for_restricted_gaussians() {
        // The Gaussian restricted to the torus window and renormalised has
        // dx p / p = -y / t exactly, so sup |dx p / p| t is the window
        // radius for every t: the 1/t shape with a stable constant.
        let grid = TorusGrid::new(256).unwrap();
        let mut scaled = Vec::new();
        for &t in &[0.05, 0.1, 0.2, 0.4] {
            let values: Vec<f64> = grid
                .points()
                .iter()
                .map(|&x| (-0.5 * x * x / t).exp())
                .collect();
            let d = DensityEstimate::from_torus_field(
                grid,
                values,
                DensityProvenance::analytic("restricted gaussian", 0.0, t),
            )
            .unwrap();
            scaled.push(gradient_ratio(&d).unwrap() * t);
        }
        let hi = scaled.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lo = scaled.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        assert!(
            hi / lo < 1.25,
            "sup |dx p / p| t varies {lo} .. {hi} across the sweep"
        );
        assert!((lo - 0.5).abs() < 0.1, "constant {lo} far from the window radius");
    }

    #[test]
    fn near_uniform_densities_have_tiny_gradient_ratio() {
        let grid = TorusGrid::new(128).unwrap();
        let t = 10.0;
        let values: Vec<f64> = grid
            .points()
            .iter()
            .map(|&x| torus_heat_kernel(t, x, 1.0))
            .collect();
        let d = DensityEstimate::from_torus_field(
            grid,
            values,
            DensityProvenance::analytic("wrapped gaussian", 0.0, t),
        )
        .unwrap();
        let ratio = gradient_ratio(&d).unwrap();
        assert!(ratio < 0.05, "ratio {ratio}");
    }

    #[test]
    fn transformed_density_obeys_the_pointwise_map_sandwich() {
        // p_X(y) = p_Z(Phi(t, y)) dx Phi(t, y) exactly, and dx Phi lies in
        // [1/2, 3/2]; check both through kernel estimates of the two laws.
        let grid = TorusGrid::new(128).unwrap();
        let dt = 1e-3;
        let t = 0.25;
        let noise = sample_noise(grid, dt, t, 1.0 / 16.0, 402).unwrap();
        let trees = build_trees(&noise).unwrap();
        let map = ZvonkinMap::build(&trees.drift, t, 1.0).unwrap();
        let n_paths = 20_000;
        let direct = crate::control::simulate_paths(
            Some(&trees.drift),
            &crate::control::ControlPolicy::Zero,
            0.0,
            t,
            n_paths,
            dt,
            600,
        )
        .unwrap();
        let p_x = estimate_density(
            direct.terminals(),
            DensityDomain::Torus(grid),
            None,
            DensityProvenance::sampled("direct diffusion", 0.0, t, 600),
        )
        .unwrap();
        let transformed = simulate_transformed(&map, 0.0, t, n_paths, dt, 601).unwrap();
        // Z has the same quasi-periodic structure, so wrap its terminals
        // through the same unit torus before estimating.
        let p_z = estimate_density(
            transformed.terminals(),
            DensityDomain::Torus(grid),
            None,
            DensityProvenance::sampled("transformed diffusion", 0.0, t, 601),
        )
        .unwrap();
        let peak = p_x.values().iter().fold(0.0f64, |m, &v| m.max(v));
        let mut checked = 0;
        for (&y, &px) in p_x.positions().iter().zip(p_x.values()) {
            if px < 0.2 * peak {
                continue;
            }
            let pz = p_z.value_at(map.forward(t, y));
            let slope = map.gradient(t, y);
            let predicted = pz * slope;
            assert!(
                (px - predicted).abs() < 0.25 * predicted + 0.02,
                "density transport off at y = {y}: {px} vs {predicted}"
            );
            assert!(px <= 1.5 * pz * 1.3 + 0.02, "upper sandwich at {y}");
            assert!(px >= 0.5 * pz * 0.7 - 0.02, "lower sandwich at {y}");
            checked += 1;
        }
        assert!(checked > 20, "only {checked} nodes compared");
    }

    #[test]
    fn estimates_export_csv_and_metadata() {
        let samples = normal_draws(2_000, 0.0, 0.3, 9);
        let grid = TorusGrid::new(64).unwrap();
        let d = estimate_density(
            &samples,
            DensityDomain::Torus(grid),
            None,
            DensityProvenance::sampled("export check", 0.0, 0.09, 9),
        )
        .unwrap();
        let csv = d.to_csv();
        assert_eq!(csv.lines().count(), 65);
        assert!(csv.starts_with("position,density\n"));
        let meta: serde_json::Value = serde_json::from_str(&d.metadata_json()).unwrap();
        assert_eq!(meta["n_samples"].as_u64(), Some(2000));
        assert_eq!(meta["provenance"]["seed"].as_u64(), Some(9));
        assert!((meta["integral"].as_f64().unwrap() - 1.0).abs() < 0.01);
    }
}