//! Space-time white noise on the torus and its enhancement.
//!
//! A [`NoiseRealization`] holds one cell value per (time step, grid node):
//! independent centred Gaussians of variance `1/(spacing * dt)` before
//! mollification, so the field integrates like white noise. Mollification is
//! a sharp Fourier cutoff in space only; cells stay independent across time
//! steps. A cutoff scale `eps` keeps the modes `|k| <= floor(period/eps)`.
//!
//! [`build_trees`] integrates the first response `Y` of the heat flow to the
//! noise, the renormalised square `Y2` driven by `|dx Y|^2 / 2 - c_ren`, and
//! the third-order remainder `YR`, plus the transport drift
//! `dx(Y + Y2 + YR)`. Between noise injections the coupled quadratic
//! sources evolve on the relaxation time of the stiffest kept modes, so
//! each noise step is integrated by [`spectral::INNER_SUBSTEPS`]
//! predictor-corrector exponential substeps; the noise itself enters once
//! per step as the full-step Duhamel increment, which every solver in this
//! crate shares verbatim. The constant `c_ren` is the space-time average of
//! `|dx Y|^2 / 2` after a diffusive burn-in at the cutoff scale, and every
//! solver downstream subtracts this same constant.

use rand::Rng;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeField, TorusField, TorusGrid};
use crate::spectral::{self, SpectralStepper, SubstepWeights};
use crate::stats;

/// Sup-norm ceiling for the tree integrations; beyond this the explicit
/// transport step is considered blown up.
const TREE_SUP_CEILING: f64 = 1e6;

/// One realisation of mollified space-time white noise cells.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    grid: TorusGrid,
    dt: f64,
    n_steps: usize,
    seed: u64,
    mollification_scale: f64,
    kept_modes: usize,
    cell_variance: f64,
    cells: Vec<f64>,
}

impl NoiseRealization {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mollification_scale(&self) -> f64 {
        self.mollification_scale
    }

    /// Number of spectral bins the mollifier keeps (`n` when unfiltered).
    pub fn kept_modes(&self) -> usize {
        self.kept_modes
    }

    /// Per-cell variance after mollification, `(kept/n) / (spacing * dt)`.
    /// Zero for synthetic deterministic noise.
    pub fn cell_variance(&self) -> f64 {
        self.cell_variance
    }

    /// Cells driving the step from `t_i` to `t_{i+1}`.
    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.grid.n_points();
        &self.cells[i * n..(i + 1) * n]
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Deterministic all-zero noise on the given mesh.
    pub fn zero(grid: TorusGrid, dt: f64, t_horizon: f64) -> Result<Self> {
        let n_steps = checked_steps(dt, t_horizon)?;
        Ok(Self {
            grid,
            dt,
            n_steps,
            seed: 0,
            mollification_scale: 0.0,
            kept_modes: grid.n_points(),
            cell_variance: 0.0,
            cells: vec![0.0; n_steps * grid.n_points()],
        })
    }

    /// Wrap caller-supplied cells (deterministic test forcings, replayed
    /// snapshots). `cell_variance` must describe the statistics of `cells`;
    /// pass zero for deterministic forcings so no Ito correction is applied.
    pub fn from_cells(
        grid: TorusGrid,
        dt: f64,
        cells: Vec<f64>,
        cell_variance: f64,
        kept_modes: usize,
        mollification_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = grid.n_points();
        if cells.is_empty() || cells.len() % n != 0 {
            return Err(Error::MeshMismatch(format!(
                "cells length {} is not a positive multiple of grid size {n}",
                cells.len()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive and finite, got {dt}"
            )));
        }
        if kept_modes == 0 || kept_modes > n {
            return Err(Error::InvalidParameter(format!(
                "kept_modes must lie in 1..={n}, got {kept_modes}"
            )));
        }
        let n_steps = cells.len() / n;
        Ok(Self {
            grid,
            dt,
            n_steps,
            seed,
            mollification_scale,
            kept_modes,
            cell_variance,
            cells,
        })
    }

    /// Aggregate `factor` consecutive frames by averaging, producing the
    /// same white noise on a mesh coarsened in time. Couples solver runs at
    /// different `dt` to one underlying realisation.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::MeshMismatch(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.n_steps
            )));
        }
        let n = self.grid.n_points();
        let coarse_steps = self.n_steps / factor;
        let mut cells = vec![0.0; coarse_steps * n];
        for ci in 0..coarse_steps {
            for sub in 0..factor {
                let frame = self.frame(ci * factor + sub);
                for j in 0..n {
                    cells[ci * n + j] += frame[j];
                }
            }
            for j in 0..n {
                cells[ci * n + j] /= factor as f64;
            }
        }
        Ok(Self {
            grid: self.grid,
            dt: self.dt * factor as f64,
            n_steps: coarse_steps,
            seed: self.seed,
            mollification_scale: self.mollification_scale,
            kept_modes: self.kept_modes,
            cell_variance: self.cell_variance / factor as f64,
            cells,
        })
    }
}

fn checked_steps(dt: f64, t_horizon: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive and finite, got {dt}"
        )));
    }
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "t_horizon must be positive and finite, got {t_horizon}"
        )));
    }
    let steps = (t_horizon / dt).round();
    if steps < 1.0 || (t_horizon - steps * dt).abs() > 1e-9 * t_horizon.max(dt) {
        return Err(Error::MeshMismatch(format!(
            "t_horizon = {t_horizon} is not a positive multiple of dt = {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Number of spectral bins kept by a sharp cutoff at scale `eps`.
fn kept_modes_for(grid: TorusGrid, eps: f64) -> usize {
    let n = grid.n_points();
    if eps <= 0.0 {
        return n;
    }
    let k_cut = (grid.period() / eps).floor() as usize;
    if 2 * k_cut + 1 >= n {
        n
    } else {
        2 * k_cut + 1
    }
}

/// Sample mollified white-noise cells on `[0, t_horizon] x torus`.
///
/// `mollification_scale = 0` means no spatial filtering. The draw is a pure
/// function of `(seed, grid, dt, t_horizon, mollification_scale)`; frames
/// are generated sequentially from one ChaCha stream, so the result is
/// independent of thread count.
pub fn sample_noise(
    grid: TorusGrid,
    dt: f64,
    t_horizon: f64,
    mollification_scale: f64,
    seed: u64,
) -> Result<NoiseRealization> {
    let n_steps = checked_steps(dt, t_horizon)?;
    if !(mollification_scale.is_finite() && mollification_scale >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mollification_scale must be nonnegative, got {mollification_scale}"
        )));
    }
    let n = grid.n_points();
    let kept = kept_modes_for(grid, mollification_scale);
    let raw_sd = 1.0 / (grid.spacing() * dt).sqrt();
    let mut rng = crate::rng::stream_rng(seed, 0);
    let mut cells = vec![0.0; n_steps * n];
    let k_half = kept / 2;
    for i in 0..n_steps {
        let frame = &mut cells[i * n..(i + 1) * n];
        for v in frame.iter_mut() {
            *v = raw_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        if kept < n {
            let mut spec = spectral::forward(frame);
            for (j, c) in spec.iter_mut().enumerate() {
                if spectral::signed_mode(j, n).unsigned_abs() as usize > k_half {
                    *c = Complex::new(0.0, 0.0);
                }
            }
            frame.copy_from_slice(&spectral::inverse_real(spec));
        }
    }
    let cell_variance = (kept as f64 / n as f64) / (grid.spacing() * dt);
    Ok(NoiseRealization {
        grid,
        dt,
        n_steps,
        seed,
        mollification_scale,
        kept_modes: kept,
        cell_variance,
        cells,
    })
}

/// The enhanced noise: three response trees, their transport drift, and the
/// renormalisation constant, all on the frames `t_i = i dt`, `i = 0..=N`,
/// started from zero.
#[derive(Debug, Clone)]
pub struct EnhancedNoise {
    /// First-order response: heat flow driven by the noise itself.
    pub y: SpaceTimeField,
    /// Second-order tree: heat flow driven by `|dx Y|^2 / 2 - c_ren`.
    pub y_quad: SpaceTimeField,
    /// Third-order remainder tree, driven by
    /// `|dx Y2|^2 / 2 + dx Y dx Y2 + dx(Y + Y2) dx YR`.
    pub y_rem: SpaceTimeField,
    /// Transport drift `dx(Y + Y2 + YR)` per frame.
    pub drift: SpaceTimeField,
    /// Space-time average of `|dx Y|^2 / 2` after burn-in.
    pub c_ren: f64,
    pub mollification_scale: f64,
    pub seed: u64,
}

impl EnhancedNoise {
    pub fn grid(&self) -> TorusGrid {
        self.y.grid()
    }

    pub fn dt(&self) -> f64 {
        self.y.dt()
    }

    pub fn n_frames(&self) -> usize {
        self.y.n_frames()
    }

    /// Sum of the three trees at one frame.
    pub fn tree_sum_frame(&self, i: usize) -> TorusField {
        let vals = self
            .y
            .frame(i)
            .iter()
            .zip(self.y_quad.frame(i))
            .zip(self.y_rem.frame(i))
            .map(|((a, b), c)| a + b + c)
            .collect();
        TorusField::new(self.grid(), vals).expect("frames share the grid")
    }
}

/// Diffusive burn-in time at the mollification scale (never below the grid
/// scale): `max(eps, spacing)^2`.
pub fn burn_in_time(grid: TorusGrid, mollification_scale: f64) -> f64 {
    mollification_scale.max(grid.spacing()).powi(2)
}

fn solve_first_tree(noise: &NoiseRealization) -> Result<SpaceTimeField> {
    let grid = noise.grid();
    let n = grid.n_points();
    let stepper = SpectralStepper::new(grid, noise.dt(), 0.0)?;
    let mut frames = vec![0.0; (noise.n_steps() + 1) * n];
    let mut state = vec![0.0; n];
    for i in 0..noise.n_steps() {
        stepper.step(&mut state, noise.frame(i));
        frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&state);
    }
    let field = SpaceTimeField::new(grid, noise.dt(), noise.n_steps() + 1, frames)?;
    if !field.is_finite() || field.sup_norm() > TREE_SUP_CEILING {
        return Err(Error::Instability(
            "first tree left the stable regime; reduce dt".into(),
        ));
    }
    Ok(field)
}

fn average_gradient_energy(y: &SpaceTimeField, t_burn: f64) -> Result<f64> {
    let first_frame = y.frame_index_at(t_burn) + 1;
    if first_frame + 2 > y.n_frames() {
        return Err(Error::InsufficientData(format!(
            "horizon {} leaves no frames after the burn-in {t_burn}",
            y.t_max()
        )));
    }
    let mut frame_means = Vec::with_capacity(y.n_frames() - first_frame);
    for i in first_frame..y.n_frames() {
        let dy = spectral::spectral_derivative(&y.frame_field(i));
        let vals: Vec<f64> = dy.values().iter().map(|g| 0.5 * g * g).collect();
        frame_means.push(stats::mean(&vals));
    }
    Ok(stats::mean(&frame_means))
}

/// Renormalisation constant of a noise realisation: the space-time average
/// of `|dx Y|^2 / 2` over frames past the burn-in. Fails when the horizon
/// does not reach past the burn-in.
pub fn renormalization_constant(noise: &NoiseRealization) -> Result<f64> {
    let y = solve_first_tree(noise)?;
    average_gradient_energy(&y, burn_in_time(noise.grid(), noise.mollification_scale()))
}

/// Transport drift at one frame: the spectral derivatives of the three tree
/// frames summed in tree order. The snapshot reader rebuilds drifts through
/// this same function, so stored and rebuilt values agree bit for bit.
pub(crate) fn drift_frame(
    grid: TorusGrid,
    y: &[f64],
    quad: &[f64],
    rem: &[f64],
) -> Result<Vec<f64>> {
    let dy = spectral::spectral_derivative(&TorusField::new(grid, y.to_vec())?);
    let dquad = spectral::spectral_derivative(&TorusField::new(grid, quad.to_vec())?);
    let drem = spectral::spectral_derivative(&TorusField::new(grid, rem.to_vec())?);
    Ok((0..grid.n_points())
        .map(|j| dy.values()[j] + dquad.values()[j] + drem.values()[j])
        .collect())
}

/// One noise step of the tree hierarchy: [`spectral::INNER_SUBSTEPS`]
/// predictor-corrector substeps of the coupled deterministic sources. `Y`
/// carries no source between injections (pure heat decay); the caller adds
/// the Duhamel noise increment afterwards. When `phi` is given it is
/// co-stepped as the fourth field with the remainder-equation source
/// `|dx phi|^2 / 2 + dx(Y + Y2 + YR) dx phi + |dx YR|^2 / 2`, evaluated at
/// the same stage states, so a sum of all four fields steps exactly like
/// the one-field quadratic dynamics.
pub(crate) fn advance_hierarchy(
    weights: &SubstepWeights,
    grid: TorusGrid,
    c_ren: f64,
    y: &mut [f64],
    quad: &mut [f64],
    rem: &mut [f64],
    mut phi: Option<&mut Vec<f64>>,
) {
    let n = grid.n_points();
    let period = grid.period();
    let mut y_hat = spectral::forward(y);
    let mut quad_hat = spectral::forward(quad);
    let mut rem_hat = spectral::forward(rem);
    let mut phi_hat = phi.as_ref().map(|p| spectral::forward(p));

    // Sources of the three driven fields at one stage, as spectra.
    let sources = |yh: &[Complex<f64>],
                   qh: &[Complex<f64>],
                   rh: &[Complex<f64>],
                   ph: Option<&Vec<Complex<f64>>>| {
        let a = spectral::derivative_from_spectrum(yh, period);
        let b = spectral::derivative_from_spectrum(qh, period);
        let c = spectral::derivative_from_spectrum(rh, period);
        let src_quad: Vec<f64> = (0..n).map(|j| 0.5 * a[j] * a[j] - c_ren).collect();
        let src_rem: Vec<f64> = (0..n)
            .map(|j| 0.5 * b[j] * b[j] + a[j] * b[j] + (a[j] + b[j]) * c[j])
            .collect();
        let src_phi = ph.map(|ph| {
            let d = spectral::derivative_from_spectrum(ph, period);
            let vals: Vec<f64> = (0..n)
                .map(|j| {
                    0.5 * c[j] * c[j] + (a[j] + b[j] + c[j]) * d[j] + 0.5 * d[j] * d[j]
                })
                .collect();
            spectral::forward(&vals)
        });
        (
            spectral::forward(&src_quad),
            spectral::forward(&src_rem),
            src_phi,
        )
    };

    let zero = vec![Complex::new(0.0, 0.0); n];
    for _ in 0..spectral::INNER_SUBSTEPS {
        let (gq0, gr0, gp0) = sources(&y_hat, &quad_hat, &rem_hat, phi_hat.as_ref());
        let y_star = weights.predictor(&y_hat, &zero);
        let quad_star = weights.predictor(&quad_hat, &gq0);
        let rem_star = weights.predictor(&rem_hat, &gr0);
        let phi_star = phi_hat
            .as_ref()
            .map(|ph| weights.predictor(ph, gp0.as_ref().expect("source set with phi")));

        let (gq1, gr1, gp1) = sources(&y_star, &quad_star, &rem_star, phi_star.as_ref());
        quad_hat = weights.corrector(&quad_star, &gq0, &gq1);
        rem_hat = weights.corrector(&rem_star, &gr0, &gr1);
        if let Some(ph) = phi_hat.as_mut() {
            *ph = weights.corrector(
                phi_star.as_ref().expect("stage set with phi"),
                gp0.as_ref().expect("source set with phi"),
                gp1.as_ref().expect("source set with phi"),
            );
        }
        // Zero source both stages: the corrector is inert for Y.
        y_hat = y_star;
    }

    y.copy_from_slice(&spectral::inverse_real(y_hat));
    quad.copy_from_slice(&spectral::inverse_real(quad_hat));
    rem.copy_from_slice(&spectral::inverse_real(rem_hat));
    if let Some(p) = phi.as_mut() {
        let vals = spectral::inverse_real(phi_hat.expect("tracked with phi"));
        p.copy_from_slice(&vals);
    }
}

/// Build the enhanced noise over the realisation's full horizon.
pub fn build_trees(noise: &NoiseRealization) -> Result<EnhancedNoise> {
    let grid = noise.grid();
    let n = grid.n_points();
    let dt = noise.dt();
    let c_ren = average_gradient_energy(
        &solve_first_tree(noise)?,
        burn_in_time(grid, noise.mollification_scale()),
    )?;

    let weights = SubstepWeights::new(grid, dt / spectral::INNER_SUBSTEPS as f64)?;
    let noise_stepper = SpectralStepper::new(grid, dt, 0.0)?;
    let n_frames = noise.n_steps() + 1;
    let mut y_frames = vec![0.0; n_frames * n];
    let mut quad_frames = vec![0.0; n_frames * n];
    let mut rem_frames = vec![0.0; n_frames * n];
    let mut drift_frames = vec![0.0; n_frames * n];

    let mut y = vec![0.0; n];
    let mut quad = vec![0.0; n];
    let mut rem = vec![0.0; n];

    // Frame 0 drift: all trees start at zero.
    for i in 0..noise.n_steps() {
        advance_hierarchy(&weights, grid, c_ren, &mut y, &mut quad, &mut rem, None);
        let eta = noise_stepper.duhamel_apply(noise.frame(i));
        for j in 0..n {
            y[j] += eta[j];
        }
        y_frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&y);
        quad_frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&quad);
        rem_frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&rem);
        let d = drift_frame(grid, &y, &quad, &rem)?;
        drift_frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&d);
    }

    let y = SpaceTimeField::new(grid, dt, n_frames, y_frames)?;
    let y_quad = SpaceTimeField::new(grid, dt, n_frames, quad_frames)?;
    let y_rem = SpaceTimeField::new(grid, dt, n_frames, rem_frames)?;
    let drift = SpaceTimeField::new(grid, dt, n_frames, drift_frames)?;
    for (name, f) in [
        ("first tree", &y),
        ("second tree", &y_quad),
        ("remainder tree", &y_rem),
    ] {
        if !f.is_finite() || f.sup_norm() > TREE_SUP_CEILING {
            return Err(Error::Instability(format!(
                "{name} left the stable regime; reduce dt"
            )));
        }
    }

    Ok(EnhancedNoise {
        y,
        y_quad,
        y_rem,
        drift,
        c_ren,
        mollification_scale: noise.mollification_scale(),
        seed: noise.seed(),
    })
}
