use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use shearmod::certificates::{cert_2d, cert_3d};
use shearmod::inverse::{evaluate_J, landweber_run, Channel, InverseProblem};
use shearmod::io::read_field;
use shearmod::norms::{bump_pairs, stability_experiment};
use shearmod::phantoms::{excitation, make_phantom, ExcitationKind, ExcitationSpec};
use shearmod::residual::{g_bound_probe, kernel_probe, LinearizedMap};
use shearmod::stokes::{solve_elasticity, solve_stokes, verify_stokes_limit, Discretization, ElasticityProblem, SolverOptions, StokesOperator, StokesProblem};
use shearmod::{par, Error, Grid, Result, ScalarField, VectorField};

use crate::config::{self, CertifyConfig, FieldSource, ForwardConfig, KernelConfig, ReconstructConfig, StabilityConfig};
use crate::run::Run;

pub struct Common<'a> {
    pub config: &'a Path,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub quiet: bool,
}

/// Applies a seed override to randomized excitations and records every random source.
fn seed_excitations(excitations: &mut [ExcitationSpec], seed: Option<u64>, run: &mut Run) {
    for (k, e) in excitations.iter_mut().enumerate() {
        if e.kind != ExcitationKind::RandomSolenoidal {
            continue;
        }
        if let Some(s) = seed {
            e.seed = s.wrapping_add(k as u64);
        }
        run.seed(&format!("excitation[{k}]"), e.seed);
    }
}

fn excitations(specs: &[ExcitationSpec], g: &Grid) -> Result<Vec<VectorField>> {
    if specs.is_empty() {
        return Err(Error::MissingData("no excitations configured".into()));
    }
    specs.iter().map(|e| excitation(e, g)).collect()
}

pub fn forward(c: &Common) -> Result<()> {
    let (mut cfg, text): (ForwardConfig, _) = config::load(c.config)?;
    let seed = c.seed.or(cfg.seed);
    let mut run = Run::new("forward", c.out, c.config, text, &cfg, seed, c.quiet)?;
    seed_excitations(&mut cfg.excitations, seed, &mut run);
    let g = cfg.grid.build()?;
    let mu = make_phantom(&cfg.phantom, &g)?;
    let fs = excitations(&cfg.excitations, &g)?;
    run.field("mu", mu.clone().into())?;
    let mut channels = vec![];
    match cfg.lambda {
        Some(lambda) => {
            for (k, f) in fs.iter().enumerate() {
                run.note(format!("elasticity solve {k} (λ = {lambda})"));
                let prob = ElasticityProblem::new(ScalarField::constant(g, lambda), mu.clone(), cfg.omega, f.clone())?;
                let u = solve_elasticity(&prob)?;
                run.field(&format!("u_{k}"), u.into())?;
                channels.push(json!({ "channel": k }));
            }
        }
        None => {
            let op = StokesOperator::new(Arc::new(Discretization::new(&g)?), &mu, cfg.omega, SolverOptions::default(), None)?;
            for (k, f) in fs.iter().enumerate() {
                run.note(format!("stokes solve {k}"));
                let sol = op.solve(f, None)?;
                channels.push(json!({
                    "channel": k,
                    "residual": sol.residual,
                    "max_divergence": sol.max_divergence,
                    "condition": sol.condition,
                    "near_resonance": sol.near_resonance,
                }));
                run.field(&format!("u_{k}"), sol.u.into())?;
                run.field(&format!("p_{k}"), sol.p.into())?;
            }
        }
    }
    run.finish(json!({ "channels": channels }))
}

fn kernel_report(run: &mut Run, mu: &ScalarField, boundaries: &[VectorField], omega: f64, kc: &KernelConfig) -> Result<Value> {
    let dim = mu.grid().dim();
    let used = boundaries.len().min(if dim == 3 { 2 } else { 1 });
    let bgs = boundaries[..used].iter().map(|f| Ok(solve_stokes(&StokesProblem::new(mu.clone(), omega, f.clone())?)?.u)).collect::<Result<Vec<_>>>()?;
    run.note("kernel probe");
    let rep = kernel_probe(&LinearizedMap::new(&bgs, omega)?, kc.k, kc.threshold)?;
    run.text("kernel_probe.json", &(rep.to_json() + "\n"))?;
    Ok(json!({ "sigma_1": rep.singular_values[0], "trivial": rep.trivial }))
}

pub fn reconstruct(c: &Common) -> Result<()> {
    let (mut cfg, text): (ReconstructConfig, _) = config::load(c.config)?;
    let seed = c.seed.or(cfg.seed);
    let g = cfg.grid.build()?;
    if let (Some(s), Some(syn)) = (seed, cfg.synthetic.as_mut()) {
        syn.noise_seed = s;
    }
    let mut run = Run::new("reconstruct", c.out, c.config, text, &cfg, seed, c.quiet)?;
    seed_excitations(&mut cfg.excitations, seed, &mut run);
    let bounds = (cfg.mu_min, cfg.mu_max);
    let ip = match (&cfg.synthetic, &cfg.measured) {
        (Some(syn), None) => {
            if syn.noise > 0.0 {
                run.seed("noise", syn.noise_seed);
            }
            run.note("generating synthetic data");
            let ip = InverseProblem::synthetic(&g, &syn.phantom, cfg.omega, &cfg.excitations, syn.options(), bounds)?;
            run.field("mu_true", ip.truth().expect("synthetic truth").clone().into())?;
            ip
        }
        (None, Some(m)) => {
            if m.files.is_empty() {
                return Err(Error::MissingData("no measurement files configured".into()));
            }
            let mut channels = vec![];
            for f in &m.files {
                let path = config::resolve(c.config, f);
                if !path.exists() {
                    return Err(Error::MissingData(format!("measurement file {} not found", path.display())));
                }
                let u = read_field(&path)?.into_vector()?;
                g.ensure_same(u.grid())?;
                channels.push(Channel { boundary: u.clone(), measured: u });
            }
            let ip = InverseProblem::new(cfg.omega, channels, &ScalarField::constant(g, m.trace), cfg.mu_min, cfg.mu_max)?;
            match &m.truth {
                Some(t) => ip.with_truth(read_field(config::resolve(c.config, t))?.into_scalar()?)?,
                None => ip,
            }
        }
        (None, None) => return Err(Error::MissingData("config has neither [synthetic] nor [measured] data".into())),
        (Some(_), Some(_)) => return Err(Error::InvalidInput("[synthetic] and [measured] are mutually exclusive".into())),
    };
    let mu0 = ip.constant_start(cfg.start);
    run.note(format!("landweber: J(μ₀) = {:.4e}", evaluate_J(&mu0, &ip)?));
    let trace = match landweber_run(&ip, &mu0, &cfg.landweber) {
        Ok(t) => t,
        Err(fail) => {
            run.text("trace.csv", &fail.trace.to_csv())?;
            return Err(fail.error);
        }
    };
    run.text("trace.csv", &trace.to_csv())?;
    run.field("mu_final", trace.mu.clone().into())?;
    for (n, snap) in &trace.snapshots {
        run.field(&format!("mu_{n:05}"), snap.clone().into())?;
    }
    let boundaries: Vec<VectorField> = ip.channels().iter().map(|ch| ch.boundary.clone()).collect();
    let kernel = kernel_report(&mut run, &trace.mu, &boundaries, cfg.omega, &cfg.kernel)?;
    let rel = trace.relative_l2();
    let first = trace.rows.first().expect("trace has a start row");
    let last = trace.rows.last().expect("trace has a start row");
    run.note(format!("{:?} after {} iterations, J = {:.4e}", trace.status, last.n, last.j));
    run.finish(json!({
        "status": trace.status,
        "iterations": last.n,
        "rejected_steps": trace.rejected_steps,
        "J_initial": first.j,
        "J_final": last.j,
        "J_monotone": trace.is_monotone(),
        "relative_l2_initial": rel.as_ref().map(|r| r[0]),
        "relative_l2_final": rel.as_ref().map(|r| r[r.len() - 1]),
        "kernel": kernel,
    }))
}

fn certify_field(src: &FieldSource, cfg: &CertifyConfig, g: &Grid, base: &Path) -> Result<VectorField> {
    match src {
        FieldSource::Affine { matrix } => {
            let d = g.dim();
            if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidInput(format!("affine matrix must be {d}×{d}")));
            }
            let c = g.center();
            Ok(VectorField::from_fn(*g, |x| {
                let mut u = [0.0; 3];
                for (a, row) in matrix.iter().enumerate() {
                    u[a] = row.iter().enumerate().map(|(b, m)| m * (x[b] - c[b])).sum();
                }
                u
            }))
        }
        FieldSource::File { path } => {
            let u = read_field(config::resolve(base, path))?.into_vector()?;
            g.ensure_same(u.grid())?;
            Ok(u)
        }
        FieldSource::Solve { excitation: ex } => {
            let (Some(ph), Some(omega)) = (&cfg.phantom, cfg.omega) else {
                return Err(Error::MissingData("solve fields need phantom and omega".into()));
            };
            let mu = make_phantom(ph, g)?;
            Ok(solve_stokes(&StokesProblem::new(mu, omega, excitation(ex, g)?)?)?.u)
        }
    }
}

pub fn certify(c: &Common) -> Result<()> {
    let (mut cfg, text): (CertifyConfig, _) = config::load(c.config)?;
    let seed = c.seed.or(cfg.seed);
    let mut run = Run::new("certify", c.out, c.config, text, &cfg, seed, c.quiet)?;
    for (k, f) in cfg.fields.iter_mut().enumerate() {
        if let FieldSource::Solve { excitation: e } = f {
            seed_excitations(std::slice::from_mut(e), seed.map(|s| s.wrapping_add(k as u64)), &mut run);
        }
    }
    let g = cfg.grid.build()?;
    let fields = cfg.fields.iter().map(|s| certify_field(s, &cfg, &g, c.config)).collect::<Result<Vec<_>>>()?;
    let report = match (g.dim(), fields.as_slice()) {
        (2, [u, ..]) => cert_2d(u, cfg.threshold)?,
        (3, [u, v, ..]) => cert_3d(u, v, cfg.threshold, cfg.samples)?,
        (d, fs) => return Err(Error::MissingData(format!("{d}D certificate needs {} field(s), got {}", d - 1, fs.len()))),
    };
    run.note(format!("{}: pass = {}, inf = {:.4e}", report.kind, report.pass, report.inf));
    run.text("certificate.json", &(report.to_json() + "\n"))?;
    run.finish(json!({ "pass": report.pass, "inf": report.inf, "sup": report.sup }))
}

pub fn stability(c: &Common) -> Result<()> {
    let (mut cfg, text): (StabilityConfig, _) = config::load(c.config)?;
    let seed = c.seed.or(cfg.seed);
    if let Some(s) = seed {
        cfg.pairs.seed = s;
    }
    let mut run = Run::new("stability", c.out, c.config, text, &cfg, seed, c.quiet)?;
    seed_excitations(&mut cfg.excitations, seed, &mut run);
    run.seed("pairs", cfg.pairs.seed);
    let g = cfg.grid.build()?;
    let mu2 = make_phantom(&cfg.background, &g)?;
    let fs = excitations(&cfg.excitations, &g)?;
    let pairs = bump_pairs(&mu2, cfg.pairs.count, &cfg.pairs.amplitudes, cfg.pairs.seed);
    run.note(format!("{} pairs × {} excitations", pairs.len(), fs.len()));
    let table = stability_experiment(&pairs, &fs, cfg.omega, &cfg.norm)?;
    run.text("ratios.csv", &table.to_csv())?;
    run.text("summary.json", &(table.summary_json() + "\n"))?;
    let mut results = json!({ "summary": table.summary });
    if let Some(kc) = &cfg.kernel {
        results["kernel"] = kernel_report(&mut run, &mu2, &fs, cfg.omega, kc)?;
    }
    if let Some(sl) = &cfg.stokes_limit {
        let f = fs.get(sl.excitation).ok_or_else(|| Error::InvalidInput(format!("no excitation {}", sl.excitation)))?;
        run.note("stokes-limit sweep");
        let rep = verify_stokes_limit(&sl.lambdas, &mu2, cfg.omega, f)?;
        run.json("stokes_limit.json", &rep)?;
        results["stokes_limit_slope"] = json!(rep.slope);
    }
    if let Some(gb) = &cfg.g_bound {
        run.note("g-bound probes");
        let u2 = solve_stokes(&StokesProblem::new(mu2.clone(), cfg.omega, fs[0].clone())?)?.u;
        let ws = par::map_slice(&pairs, |p| -> Result<VectorField> {
            let u1 = solve_stokes(&StokesProblem::new(p.mu1.clone(), cfg.omega, fs[0].clone())?)?.u;
            u1.sub(&u2)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut rows = vec![];
        for &l in &gb.orders {
            let ratios = ws.iter().map(|w| g_bound_probe(w, &mu2, cfg.omega, l)).collect::<Result<Vec<_>>>()?;
            let max = ratios.iter().copied().fold(0.0, f64::max);
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            rows.push(json!({ "l": l, "ratios": ratios, "max": max, "spread": max / min }));
        }
        run.json("g_bound.json", &rows)?;
        results["g_bound"] = Value::Array(rows);
    }
    run.finish(results)
}

