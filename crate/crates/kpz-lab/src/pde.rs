//! Exponential-integrator PDE solvers.
//!
//! All solvers apply the Fourier heat factor exactly and treat lower-order
//! terms with Duhamel weights; the additive KPZ-type equations resolve
//! their stiff quadratic sources with predictor-corrector substeps between
//! noise cells. The three KPZ-side solvers (direct, Cole-Hopf,
//! paracontrolled remainder) inject the identical noise increment
//! `eta_i = ifft(dt phi1(mu dt) fft(xi_i))` per step, which makes their
//! mutual differences purely deterministic discretisation terms.
//!
//! The Cole-Hopf solver works on `log w` throughout, with the heat step done
//! by log-sum-exp against the periodised Gaussian kernel; it never forms
//! `exp(h)`, so initial data with sup norms in the tens of thousands are
//! fine. Accounting in `w`-space: one step is
//! `w <- exp(eta - Var(eta)/2) K_dt w` (a Doleans factor, so `E[w]` is
//! conserved), and the returned field is `log w_i + (r - c_ren) t_i` with
//! the Ito rate `r = Var(eta) / (2 dt)`. On `log w` those corrections
//! telescope to the literal update `h <- lse(h) + eta - c_ren dt`.


use crate::error::{Error, Result};
use crate::grid::{SpaceTimeField, TorusField, TorusGrid};
use crate::noise::{EnhancedNoise, NoiseRealization};
use crate::spectral::{self, SpectralStepper, SubstepWeights};

/// Sup-norm ceiling for KPZ-type solves.
const SUP_CEILING: f64 = 1e8;

/// Source term of a [`BackwardPdeProblem`].
pub enum Source<'a> {
    Zero,
    /// `f = -b`, the right-hand side of the drift-removing equation.
    NegDrift,
    /// An explicit space-time field, evaluated on the same mesh as the
    /// drift.
    Field(&'a SpaceTimeField),
}

/// The terminal-value problem
/// `d/ds phi + lap phi / 2 + b dx phi = f + lambda phi` on `[0, horizon]`,
/// `phi(horizon) = terminal`.
///
/// `drift` and any `Source::Field` must live on the solver's `dt` mesh and
/// cover `[0, horizon]`; frames are indexed exactly, never interpolated in
/// time. `lambda` is folded into the exponential integrating factor, so
/// arbitrarily stiff damping is stable.
pub struct BackwardPdeProblem<'a> {
    pub drift: Option<&'a SpaceTimeField>,
    pub source: Source<'a>,
    pub lambda: f64,
    pub terminal: &'a TorusField,
    pub horizon: f64,
    pub dt: f64,
}

fn check_mesh_compat(
    name: &str,
    field: &SpaceTimeField,
    grid: TorusGrid,
    dt: f64,
    n_steps: usize,
) -> Result<()> {
    if field.grid() != grid {
        return Err(Error::MeshMismatch(format!(
            "{name} lives on a different grid than the state"
        )));
    }
    if (field.dt() - dt).abs() > 1e-9 * dt {
        return Err(Error::MeshMismatch(format!(
            "{name} has dt = {} but the solver steps by {dt}",
            field.dt()
        )));
    }
    if field.n_frames() < n_steps + 1 {
        return Err(Error::MeshMismatch(format!(
            "{name} has {} frames, needs {} to cover the horizon",
            field.n_frames(),
            n_steps + 1
        )));
    }
    Ok(())
}

fn checked_step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive and finite, got {dt}"
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 || (horizon - steps * dt).abs() > 1e-9 * horizon.max(dt) {
        return Err(Error::MeshMismatch(format!(
            "horizon {horizon} is not a positive multiple of dt = {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Solve a [`BackwardPdeProblem`]. The result's frame `i` is `phi(i dt)`,
/// ascending from `phi(0)` to the terminal condition.
pub fn solve_backward_pde(p: &BackwardPdeProblem) -> Result<SpaceTimeField> {
    let grid = p.terminal.grid();
    let n = grid.n_points();
    let n_steps = checked_step_count(p.horizon, p.dt)?;
    if !(p.lambda.is_finite() && p.lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be nonnegative and finite, got {}",
            p.lambda
        )));
    }
    if let Some(b) = p.drift {
        check_mesh_compat("drift", b, grid, p.dt, n_steps)?;
    }
    if let Source::Field(f) = p.source {
        check_mesh_compat("source", f, grid, p.dt, n_steps)?;
    }
    if matches!(p.source, Source::NegDrift) && p.drift.is_none() {
        return Err(Error::InvalidParameter(
            "source NegDrift needs a drift field".into(),
        ));
    }

    // March psi(sigma) = phi(horizon - sigma) forward in sigma.
    let stepper = SpectralStepper::new(grid, p.dt, p.lambda)?;
    let mut state = p.terminal.values().to_vec();
    let mut frames_desc: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    frames_desc.push(state.clone());
    let mut source_buf = vec![0.0; n];
    for i in 0..n_steps {
        // psi sees coefficients at forward time horizon - sigma_i.
        let fwd_frame = n_steps - i;
        source_buf.iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = p.drift {
            let dpsi = spectral::spectral_derivative(&TorusField::new(grid, state.clone())?);
            let bf = b.frame(fwd_frame);
            for j in 0..n {
                source_buf[j] += bf[j] * dpsi.values()[j];
            }
        }
        match p.source {
            Source::Zero => {}
            Source::NegDrift => {
                let bf = p.drift.expect("checked above").frame(fwd_frame);
                for j in 0..n {
                    // G = b dx psi - f with f = -b.
                    source_buf[j] += bf[j];
                }
            }
            Source::Field(f) => {
                let ff = f.frame(fwd_frame);
                for j in 0..n {
                    source_buf[j] -= ff[j];
                }
            }
        }
        stepper.step(&mut state, &source_buf);
        frames_desc.push(state.clone());
    }

    let mut values = Vec::with_capacity((n_steps + 1) * n);
    for f in frames_desc.iter().rev() {
        values.extend_from_slice(f);
    }
    let out = SpaceTimeField::new(grid, p.dt, n_steps + 1, values)?;
    if !out.is_finite() || out.sup_norm() > SUP_CEILING {
        return Err(Error::Instability(
            "backward solve left the stable regime; reduce dt or raise lambda".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum KpzMethod {
    ColeHopf,
    Direct,
}

/// A solved KPZ trajectory on the frames `t_i = i dt`.
#[derive(Debug, Clone)]
pub struct KpzSolution {
    pub field: SpaceTimeField,
    pub c_ren: f64,
    pub method: KpzMethod,
}

fn check_kpz_inputs(
    initial: &TorusField,
    noise: &NoiseRealization,
    c_ren: f64,
) -> Result<()> {
    if initial.grid() != noise.grid() {
        return Err(Error::MeshMismatch(
            "initial condition and noise live on different grids".into(),
        ));
    }
    if !initial.is_finite() {
        return Err(Error::InvalidParameter(
            "initial condition has non-finite values".into(),
        ));
    }
    if !c_ren.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "c_ren must be finite, got {c_ren}"
        )));
    }
    Ok(())
}

/// Direct solver for
/// `(d/dt - lap/2) h = |dx h|^2 / 2 - c_ren + noise`. Each noise step runs
/// [`spectral::INNER_SUBSTEPS`] predictor-corrector exponential substeps of
/// the deterministic dynamics with the exact spectral gradient, then adds
/// the full-step Duhamel noise increment shared with the other solvers.
pub fn solve_kpz_direct(
    initial: &TorusField,
    noise: &NoiseRealization,
    c_ren: f64,
) -> Result<KpzSolution> {
    check_kpz_inputs(initial, noise, c_ren)?;
    let grid = noise.grid();
    let n = grid.n_points();
    let period = grid.period();
    let dt = noise.dt();
    let weights = SubstepWeights::new(grid, dt / spectral::INNER_SUBSTEPS as f64)?;
    let noise_stepper = SpectralStepper::new(grid, dt, 0.0)?;

    let source_of = |spec: &[rustfft::num_complex::Complex<f64>]| {
        let grad = spectral::derivative_from_spectrum(spec, period);
        let vals: Vec<f64> = grad.iter().map(|d| 0.5 * d * d - c_ren).collect();
        spectral::forward(&vals)
    };

    let n_frames = noise.n_steps() + 1;
    let mut frames = vec![0.0; n_frames * n];
    frames[..n].copy_from_slice(initial.values());
    let mut state = initial.values().to_vec();
    for i in 0..noise.n_steps() {
        let mut s_hat = spectral::forward(&state);
        for _ in 0..spectral::INNER_SUBSTEPS {
            let g0 = source_of(&s_hat);
            let star = weights.predictor(&s_hat, &g0);
            let g1 = source_of(&star);
            s_hat = weights.corrector(&star, &g0, &g1);
        }
        state = spectral::inverse_real(s_hat);
        let eta = noise_stepper.duhamel_apply(noise.frame(i));
        for j in 0..n {
            state[j] += eta[j];
        }
        frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&state);
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::Instability(
                "direct KPZ solve left the stable regime; reduce dt".into(),
            ));
        }
    }
    let field = SpaceTimeField::new(grid, dt, n_frames, frames)?;
    if !field.is_finite() || field.sup_norm() > SUP_CEILING {
        return Err(Error::Instability(
            "direct KPZ solve left the stable regime; reduce dt".into(),
        ));
    }
    Ok(KpzSolution {
        field,
        c_ren,
        method: KpzMethod::Direct,
    })
}

/// Log-weights of the periodised Gaussian heat kernel for one time step,
/// normalised so the weights sum to one. Entry `j` is the weight of the
/// node at offset `j` (torus offset `grid.point(j) + period/2` from zero,
/// i.e. indexed like a circular convolution).
fn log_heat_weights(grid: TorusGrid, dt: f64) -> Vec<f64> {
    let n = grid.n_points();
    let p = grid.period();
    let dx = grid.spacing();
    let sd = dt.sqrt();
    let reach = (40.0 * sd + 0.5 * p) / p;
    let m_max = reach.ceil() as i64;
    let mut weights = vec![0.0_f64; n];
    for (j, w) in weights.iter_mut().enumerate() {
        // Offset of node j as a circular shift: distances to 0 mod period.
        let base = j as f64 * dx;
        let mut acc = 0.0;
        for m in -m_max..=m_max {
            let r = base + m as f64 * p;
            let z = r / sd;
            if z.abs() <= 40.0 {
                acc += (-0.5 * z * z).exp();
            }
        }
        *w = acc / (std::f64::consts::TAU * dt).sqrt();
    }
    let total: f64 = crate::stats::pairwise_sum(&weights) * dx;
    weights
        .iter()
        .map(|&w| {
            if w > 0.0 {
                (w * dx / total).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Circular log-sum-exp convolution of `state` with log-weights, restricted
/// to the offsets that can matter given the state's dynamic range.
fn lse_convolve(state: &[f64], order: &[usize], logw: &[f64], out: &mut [f64]) {
    let n = state.len();
    let range = {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in state {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    };
    // Offsets with log-weight below best - (range + 60) contribute less than
    // e^-60 of the kept mass even if they sit at the state's maximum.
    let threshold = logw[order[0]] - range - 60.0;
    let mut kept = order.len();
    for (pos, &j) in order.iter().enumerate() {
        if logw[j] < threshold {
            kept = pos;
            break;
        }
    }
    let offsets = &order[..kept];
    for (l, o) in out.iter_mut().enumerate() {
        let mut m = f64::NEG_INFINITY;
        for &j in offsets {
            let v = state[(l + n - j) % n] + logw[j];
            if v > m {
                m = v;
            }
        }
        let mut sum = 0.0;
        for &j in offsets {
            sum += (state[(l + n - j) % n] + logw[j] - m).exp();
        }
        *o = m + sum.ln();
    }
}

/// Cole-Hopf solver in log space. Works for initial data of any sup norm;
/// uses the same renormalisation constant as the direct solver.
pub fn solve_kpz_cole_hopf(
    initial: &TorusField,
    noise: &NoiseRealization,
    c_ren: f64,
) -> Result<KpzSolution> {
    check_kpz_inputs(initial, noise, c_ren)?;
    let grid = noise.grid();
    let n = grid.n_points();
    let dt = noise.dt();
    if dt.sqrt() < grid.spacing() {
        return Err(Error::MeshMismatch(format!(
            "heat kernel with sqrt(dt) = {} is narrower than the spacing {}; refine the grid or enlarge dt",
            dt.sqrt(),
            grid.spacing()
        )));
    }
    let stepper = SpectralStepper::new(grid, dt, 0.0)?;
    let logw = log_heat_weights(grid, dt);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| logw[b].total_cmp(&logw[a]));

    let n_frames = noise.n_steps() + 1;
    let mut frames = vec![0.0; n_frames * n];
    frames[..n].copy_from_slice(initial.values());
    let mut state = initial.values().to_vec();
    let mut next = vec![0.0; n];
    for i in 0..noise.n_steps() {
        lse_convolve(&state, &order, &logw, &mut next);
        let eta = stepper.duhamel_apply(noise.frame(i));
        for j in 0..n {
            next[j] += eta[j] - c_ren * dt;
        }
        std::mem::swap(&mut state, &mut next);
        frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&state);
    }
    let field = SpaceTimeField::new(grid, dt, n_frames, frames)?;
    if !field.is_finite() {
        return Err(Error::Instability(
            "Cole-Hopf solve produced non-finite values".into(),
        ));
    }
    Ok(KpzSolution {
        field,
        c_ren,
        method: KpzMethod::ColeHopf,
    })
}

/// Forward solve of the paracontrolled remainder equation
/// `(d/dt - lap/2) phi = |dx YR|^2 / 2 + dx(Y + Y2 + YR) dx phi
/// + |dx phi|^2 / 2` on the trees' mesh, `phi(0) = initial`. The remainder
/// is co-stepped through the same substepped hierarchy that built the
/// trees, with the transport coefficients re-evaluated at every inner
/// stage, so adding the three trees to the result reproduces the direct
/// KPZ solution exactly (the per-stage source algebra telescopes).
pub fn solve_remainder_pde(trees: &EnhancedNoise, initial: &TorusField) -> Result<SpaceTimeField> {
    if initial.grid() != trees.grid() {
        return Err(Error::MeshMismatch(
            "initial condition and trees live on different grids".into(),
        ));
    }
    if !initial.is_finite() {
        return Err(Error::InvalidParameter(
            "initial condition has non-finite values".into(),
        ));
    }
    let grid = trees.grid();
    let n = grid.n_points();
    let dt = trees.dt();
    let weights = SubstepWeights::new(grid, dt / spectral::INNER_SUBSTEPS as f64)?;
    let n_frames = trees.n_frames();
    let mut frames = vec![0.0; n_frames * n];
    frames[..n].copy_from_slice(initial.values());
    let mut phi = initial.values().to_vec();
    let mut y = vec![0.0; n];
    let mut quad = vec![0.0; n];
    let mut rem = vec![0.0; n];
    for i in 0..n_frames - 1 {
        // Tree states reload from the stored frames each step, so their
        // substep trajectories repeat the builder's bit for bit (the noise
        // increment is already inside the stored Y frames).
        y.copy_from_slice(trees.y.frame(i));
        quad.copy_from_slice(trees.y_quad.frame(i));
        rem.copy_from_slice(trees.y_rem.frame(i));
        crate::noise::advance_hierarchy(
            &weights,
            grid,
            trees.c_ren,
            &mut y,
            &mut quad,
            &mut rem,
            Some(&mut phi),
        );
        frames[(i + 1) * n..(i + 2) * n].copy_from_slice(&phi);
    }
    let field = SpaceTimeField::new(grid, dt, n_frames, frames)?;
    if !field.is_finite() || field.sup_norm() > SUP_CEILING {
        return Err(Error::Instability(
            "remainder solve left the stable regime; reduce dt".into(),
        ));
    }
    Ok(field)
}
