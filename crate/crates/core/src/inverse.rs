//! Discrepancy functional, adjoint gradient and the projected Landweber iteration.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::linsolve::SymbolicCache;
use crate::norms;
use crate::par;
use crate::phantoms::{self, ExcitationSpec, PhantomSpec};
use crate::stokes::{restrict_vector, Discretization, SolverOptions, StokesOperator, StokesProblem, StokesSolution};

/// One excitation and its interior measurement.
#[derive(Clone, Debug)]
pub struct Channel {
    pub boundary: VectorField,
    pub measured: VectorField,
}

pub struct InverseProblem {
    disc: Arc<Discretization>,
    cache: SymbolicCache,
    omega: f64,
    channels: Vec<Channel>,
    trace: ScalarField,
    mu_min: f64,
    mu_max: f64,
    options: SolverOptions,
    truth: Option<ScalarField>,
}

/// How synthetic measurements are produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataOptions {
    /// Solve on a grid refined by 2 and inject back.
    #[serde(default = "yes")]
    pub finer_grid: bool,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn yes() -> bool {
    true
}

impl Default for DataOptions {
    fn default() -> Self {
        Self { finer_grid: true, noise: 0.0, noise_seed: 0 }
    }
}

impl InverseProblem {
    /// `trace` supplies the known boundary values of μ; its interior is ignored.
    pub fn new(omega: f64, channels: Vec<Channel>, trace: &ScalarField, mu_min: f64, mu_max: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::MissingData("at least one measurement channel is required".into()));
        }
        if !(mu_min > 0.0 && mu_max > mu_min) {
            return Err(Error::InvalidInput(format!("admissible bounds [{mu_min}, {mu_max}] are not a positive interval")));
        }
        if !omega.is_finite() {
            return Err(Error::InvalidInput("ω must be finite".into()));
        }
        let g = *trace.grid();
        for ch in &channels {
            g.ensure_same(ch.boundary.grid())?;
            g.ensure_same(ch.measured.grid())?;
        }
        for i in g.boundary_indices() {
            let v = trace.values()[i];
            if v < mu_min || v > mu_max {
                return Err(Error::ContrastViolation(format!("boundary trace value {v} outside [{mu_min}, {mu_max}]")));
            }
        }
        Ok(Self {
            disc: Arc::new(Discretization::new(&g)?),
            cache: SymbolicCache::default(),
            omega,
            channels,
            trace: trace.clone(),
            mu_min,
            mu_max,
            options: SolverOptions::default(),
            truth: None,
        })
    }

    /// Synthetic problem: μ_tr from the phantom, one channel per excitation.
    pub fn synthetic(grid: &Grid, phantom: &PhantomSpec, omega: f64, excitations: &[ExcitationSpec], data: DataOptions, bounds: (f64, f64)) -> Result<Self> {
        let truth = phantoms::make_phantom(phantom, grid)?;
        let data_grid = if data.finer_grid { grid.refined(2) } else { *grid };
        let fine_mu = if data.finer_grid { phantoms::make_phantom(phantom, &data_grid)? } else { truth.clone() };
        let fine_disc = Arc::new(Discretization::new(&data_grid)?);
        let op = StokesOperator::new(fine_disc, &fine_mu, omega, SolverOptions::default(), None)?;
        let mut channels = Vec::with_capacity(excitations.len());
        for (k, ex) in excitations.iter().enumerate() {
            let f_data = phantoms::excitation(ex, &data_grid)?;
            let u = op.solve(&f_data, None)?.u;
            let u = if data.finer_grid { restrict_vector(&u, grid)? } else { u };
            let measured = phantoms::add_noise(&u, data.noise, data.noise_seed.wrapping_add(k as u64))?;
            channels.push(Channel { boundary: phantoms::excitation(ex, grid)?, measured });
        }
        let mut ip = Self::new(omega, channels, &truth, bounds.0, bounds.1)?;
        ip.truth = Some(truth);
        Ok(ip)
    }

    pub fn with_truth(mut self, truth: ScalarField) -> Result<Self> {
        self.grid().ensure_same(truth.grid())?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    /// Requires exactly two channels (the 3D two-dataset mode).
    pub fn require_two_channels(&self) -> Result<()> {
        if self.channels.len() != 2 {
            return Err(Error::MissingData(format!("two-channel mode needs 2 channels, got {}", self.channels.len())));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        self.disc.grid()
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn truth(&self) -> Option<&ScalarField> {
        self.truth.as_ref()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.mu_min, self.mu_max)
    }

    /// Background start: the constant `value` with the known boundary trace.
    pub fn constant_start(&self, value: f64) -> ScalarField {
        self.project(&ScalarField::constant(*self.grid(), value))
    }

    /// Clip to the admissible interval and restore the boundary trace.
    pub fn project(&self, mu: &ScalarField) -> ScalarField {
        let g = *self.grid();
        let mut v: Vec<f64> = mu.values().iter().map(|x| x.clamp(self.mu_min, self.mu_max)).collect();
        for i in g.boundary_indices() {
            v[i] = self.trace.values()[i];
        }
        ScalarField::new(g, v).expect("projection keeps values finite")
    }

    fn check_admissible(&self, mu: &ScalarField) -> Result<()> {
        self.grid().ensure_same(mu.grid())?;
        let (lo, hi) = (mu.min(), mu.max());
        if lo < self.mu_min || hi > self.mu_max {
            return Err(Error::ContrastViolation(format!("μ range [{lo:.6e}, {hi:.6e}] outside [{}, {}]", self.mu_min, self.mu_max)));
        }
        Ok(())
    }

    fn operator(&self, mu: &ScalarField) -> Result<StokesOperator> {
        self.check_admissible(mu)?;
        StokesOperator::new(self.disc.clone(), mu, self.omega, self.options, Some(&self.cache))
    }

    fn forward(&self, op: &StokesOperator) -> Result<Vec<VectorField>> {
        par::map_slice(&self.channels, |ch| op.solve(&ch.boundary, None).map(|s| s.u)).into_iter().collect()
    }

    fn misfit_of(&self, states: &[VectorField]) -> Result<f64> {
        states.iter().zip(&self.channels).map(|(u, ch)| misfit(u, &ch.measured)).sum()
    }

    fn gradient_at(&self, op: &StokesOperator, states: &[VectorField]) -> Result<ScalarField> {
        let g = *self.grid();
        let pairs: Vec<(&VectorField, &Channel)> = states.iter().zip(&self.channels).collect();
        let parts: Vec<Result<Vec<f64>>> = par::map_slice(&pairs, |(u, ch)| {
            let r = u.sub(&ch.measured)?;
            let v = op.solve(&VectorField::zeros(g), Some(&r))?.u;
            let eu = self.disc.strains(u.values());
            let ev = self.disc.strains(v.values());
            Ok(self.disc.energy_density(&eu, &ev))
        });
        let mut total = vec![0.0; g.node_count()];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p?) {
                *t += v;
            }
        }
        for i in g.boundary_indices() {
            total[i] = 0.0;
        }
        ScalarField::new(g, total)
    }
}

/// `½ Σ_n w_n |u − u_m|²` with trapezoid weights.
pub fn misfit(u: &VectorField, measured: &VectorField) -> Result<f64> {
    let d = u.sub(measured)?;
    let g = d.grid();
    let n = g.node_count();
    let w = g.weights();
    Ok(0.5 * (0..d.dim()).map(|c| (0..n).map(|i| w[i] * d.values()[c * n + i].powi(2)).sum::<f64>()).sum::<f64>())
}

#[allow(non_snake_case)]
pub fn evaluate_J(mu: &ScalarField, ip: &InverseProblem) -> Result<f64> {
    let op = ip.operator(mu)?;
    ip.misfit_of(&ip.forward(&op)?)
}

/// Adjoint system with homogeneous Dirichlet data and the residual as source.
pub fn solve_adjoint(mu: &ScalarField, residual: &VectorField, omega: f64) -> Result<StokesSolution> {
    let zero = VectorField::zeros(*mu.grid());
    let prob = StokesProblem::new(mu.clone(), omega, zero)?.with_source(residual.clone())?;
    crate::stokes::solve_stokes(&prob)
}

/// Nodal density `g` with `⟨D𝒥[μ], δμ⟩ = Σ_k w_k g_k δμ_k`, summed over
/// channels and zero on the boundary. In the continuum `g = 2∇ˢu : ∇ˢv`.
#[allow(non_snake_case)]
pub fn gradient_J(mu: &ScalarField, ip: &InverseProblem) -> Result<ScalarField> {
    let op = ip.operator(mu)?;
    let states = ip.forward(&op)?;
    ip.gradient_at(&op, &states)
}

/// Weighted pairing `Σ_k w_k a_k b_k`.
pub fn pairing(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    let w = a.grid().weights();
    Ok(a.values().iter().zip(b.values()).zip(&w).map(|((x, y), wi)| wi * x * y).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandweberOptions {
    /// Initial and maximal step.
    pub sigma0: f64,
    pub n_max: usize,
    pub stop_tol: f64,
    /// Keep μ every `snapshot_stride` accepted iterations (0 disables).
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    /// StalledStep once σ falls below `sigma_floor · σ₀`.
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
}

fn default_eps() -> f64 {
    0.01
}

fn default_floor() -> f64 {
    1e-10
}

impl LandweberOptions {
    pub fn new(sigma0: f64, n_max: usize, stop_tol: f64) -> Self {
        Self { sigma0, n_max, stop_tol, snapshot_stride: 0, epsilon: default_eps(), sigma_floor: default_floor() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: f64,
    /// Step that produced this iterate (0 for the start).
    pub sigma: f64,
    pub l2_error: Option<f64>,
    pub hs_error: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    Stalled,
    Failed,
}

#[derive(Clone, Debug)]
pub struct ReconstructionTrace {
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<(usize, ScalarField)>,
    pub mu: ScalarField,
    pub status: RunStatus,
    pub rejected_steps: usize,
    truth_norm: Option<f64>,
}

impl ReconstructionTrace {
    /// `‖μ_n − μ_tr‖ / ‖μ_tr‖` per row, when the truth is known.
    pub fn relative_l2(&self) -> Option<Vec<f64>> {
        let t = self.truth_norm?;
        self.rows.iter().map(|r| r.l2_error.map(|e| e / t)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,J,sigma,l2_error,hs_error,grad_norm\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(s, "{},{:e},{:e},{},{},{:e}", r.n, r.j, r.sigma, opt(r.l2_error), opt(r.hs_error), r.grad_norm);
        }
        s
    }

    /// 𝒥 over accepted iterates never increases.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].j <= w[0].j)
    }
}

/// A Landweber run that ended in an error, with everything recorded so far.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct LandweberFailure {
    pub error: Error,
    pub trace: Box<ReconstructionTrace>,
}

struct Iterate {
    mu: ScalarField,
    op: StokesOperator,
    states: Vec<VectorField>,
    j: f64,
}

impl InverseProblem {
    fn iterate(&self, mu: ScalarField) -> Result<Iterate> {
        let op = self.operator(&mu)?;
        let states = self.forward(&op)?;
        let j = self.misfit_of(&states)?;
        if !j.is_finite() {
            return Err(Error::SingularSystem(format!("non-finite misfit {j}")));
        }
        Ok(Iterate { mu, op, states, j })
    }

    fn errors(&self, mu: &ScalarField, eps: f64) -> Result<(Option<f64>, Option<f64>)> {
        let Some(t) = &self.truth else { return Ok((None, None)) };
        let e = mu.sub(t)?;
        let l2 = pairing(&e, &e)?.sqrt();
        // the trace is fixed, so the error vanishes on the boundary
        let hs = norms::h_s_norm(&e, 0.5 + eps)?;
        Ok((Some(l2), Some(hs)))
    }
}

/// Projected Landweber iteration `μ ← P(μ − σ D𝒥[μ])` with backtracking.
pub fn landweber_run(ip: &InverseProblem, mu0: &ScalarField, opts: &LandweberOptions) -> std::result::Result<ReconstructionTrace, LandweberFailure> {
    let truth_norm = ip.truth.as_ref().and_then(|t| pairing(t, t).ok()).map(f64::sqrt);
    let mut trace = ReconstructionTrace { rows: vec![], snapshots: vec![], mu: mu0.clone(), status: RunStatus::Failed, rejected_steps: 0, truth_norm };
    macro_rules! tri {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    trace.status = RunStatus::Failed;
                    return Err(LandweberFailure { error, trace: Box::new(trace) });
                }
            }
        };
    }
    if !(opts.sigma0 > 0.0 && opts.sigma0.is_finite()) || !(opts.stop_tol >= 0.0) || !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        tri!(Err(Error::InvalidInput("σ₀ must be positive, stop_tol non-negative and ε in (0, 1)".into())));
    }
    tri!(ip.grid().ensure_same(mu0.grid()));
    let g = *ip.grid();
    let off_trace = g.boundary_indices().into_iter().any(|i| mu0.values()[i] != ip.trace.values()[i]);
    if off_trace {
        tri!(Err(Error::InvalidInput("μ₀ does not match the known boundary trace".into())));
    }
    let mut cur = tri!(ip.iterate(mu0.clone()));
    let mut sigma = opts.sigma0;
    let floor = opts.sigma_floor * opts.sigma0;
    let mut streak = 0;
    let mut last_sigma = 0.0;
    for n in 0.. {
        let grad = tri!(ip.gradient_at(&cur.op, &cur.states));
        let grad_norm = tri!(pairing(&grad, &grad)).sqrt();
        let (l2, hs) = tri!(ip.errors(&cur.mu, opts.epsilon));
        trace.rows.push(TraceRow { n, j: cur.j, sigma: last_sigma, l2_error: l2, hs_error: hs, grad_norm });
        trace.mu = cur.mu.clone();
        if opts.snapshot_stride > 0 && n % opts.snapshot_stride == 0 {
            trace.snapshots.push((n, cur.mu.clone()));
        }
        if grad_norm <= opts.stop_tol {
            trace.status = RunStatus::Converged;
            return Ok(trace);
        }
        if n >= opts.n_max {
            trace.status = RunStatus::MaxIterations;
            return Ok(trace);
        }
        loop {
            let cand = ip.project(&tri!(cur.mu.zip_map(&grad, |m, d| m - sigma * d)));
            let next = tri!(ip.iterate(cand));
            if next.j <= cur.j {
                cur = next;
                last_sigma = sigma;
                streak += 1;
                if streak >= 5 {
                    sigma = (sigma * 1.2).min(opts.sigma0);
                    streak = 0;
                }
                break;
            }
            trace.rejected_steps += 1;
            streak = 0;
            sigma *= 0.5;
            if sigma < floor {
                trace.status = RunStatus::Stalled;
                return Err(LandweberFailure { error: Error::StalledStep { floor }, trace: Box::new(trace) });
            }
        }
    }
    unreachable!("the loop returns")
}
