//! Pointwise ellipticity certificates and boundary-root checks.

use faer::c64;
use faer::Mat;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::diff;
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::grid::Grid;
use crate::par;

/// Sphere directions used by `cert_3d` unless configured otherwise.
pub const DEFAULT_SAMPLES: usize = 2048;
/// Default certificate threshold on the infimum.
pub const DEFAULT_THRESHOLD: f64 = 1e-6;
/// Roots closer than this are one root of higher multiplicity.
pub const CLUSTER_RADIUS: f64 = 1e-8;
/// Minimum `|det|` of the boundary matrix.
pub const SL_DET_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstNode {
    pub index: usize,
    pub position: Vec<f64>,
    /// Minimizing direction (3D only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub kind: String,
    pub pass: bool,
    pub inf: f64,
    pub sup: f64,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub worst_node: WorstNode,
    pub samples: usize,
    pub threshold: f64,
    pub grid_cells: Vec<usize>,
    /// `inf |∂₁u¹|` for the 2D certificate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inf_d1u1: Option<f64>,
}

impl CertificateReport {
    fn build(kind: &str, grid: &Grid, inf: f64, sup: f64, worst: usize, dir: Option<[f64; 3]>, samples: usize, threshold: f64) -> Self {
        let c = (inf > 0.0 && sup.is_finite()).then(|| sup.max(1.0 / inf));
        let pos = grid.position_of(worst)[..grid.dim()].to_vec();
        Self {
            kind: kind.into(),
            pass: inf > threshold,
            inf,
            sup,
            c,
            worst_node: WorstNode { index: worst, position: pos, direction: dir },
            samples,
            threshold,
            grid_cells: (0..grid.dim()).map(|a| grid.cells(a)).collect(),
            inf_d1u1: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold.is_finite() && threshold >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("threshold must be non-negative, got {threshold}")))
    }
}

/// Infimum over nodes of the Frobenius norm `|∇ˢu|` of a planar field.
pub fn cert_2d(u: &VectorField, threshold: f64) -> Result<CertificateReport> {
    let g = *u.grid();
    if g.dim() != 2 {
        return Err(Error::InvalidInput("cert_2d needs a 2D field".into()));
    }
    check_threshold(threshold)?;
    let s = diff::sym_grad(u)?;
    let d1u1 = diff::partial(&g, u.component(0), 0);
    let mut inf = f64::INFINITY;
    let mut sup = 0.0f64;
    let mut worst = 0;
    for i in 0..g.node_count() {
        let m = s.matrix_at(i);
        let v = (m[0][0] * m[0][0] + 2.0 * m[0][1] * m[0][1] + m[1][1] * m[1][1]).sqrt();
        if v < inf {
            inf = v;
            worst = i;
        }
        sup = sup.max(v);
    }
    let mut rep = CertificateReport::build("cert_2d", &g, inf, sup, worst, None, g.node_count(), threshold);
    rep.inf_d1u1 = Some(d1u1.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
    Ok(rep)
}

pub type Sym3 = [[f64; 3]; 3];

fn mat_vec(s: &Sym3, x: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| s[r][0] * x[0] + s[r][1] * x[1] + s[r][2] * x[2])
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(x: [f64; 3]) -> [f64; 3] {
    let n = dot(x, x).sqrt();
    [x[0] / n, x[1] / n, x[2] / n]
}

/// `|S₁ξ × ξ|² + |S₂ξ × ξ|²` on the unit sphere, in the form
/// `Σ_i |S_i ξ|² − (ξᵀ S_i ξ)²`.
#[derive(Clone, Copy, Debug)]
pub struct PairForm {
    s: [Sym3; 2],
}

impl PairForm {
    pub fn new(s1: Sym3, s2: Sym3) -> Self {
        Self { s: [s1, s2] }
    }

    pub fn eval(&self, xi: [f64; 3]) -> f64 {
        self.s
            .iter()
            .map(|s| {
                let sx = mat_vec(s, xi);
                let a = dot(sx, sx);
                let b = dot(xi, sx);
                a - b * b
            })
            .sum()
    }

    // Euclidean gradient and Hessian of the homogeneous extension used above.
    fn derivatives(&self, xi: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for s in &self.s {
            let sx = mat_vec(s, xi);
            let b = dot(xi, sx);
            let ssx = mat_vec(s, sx);
            for r in 0..3 {
                g[r] += 2.0 * ssx[r] - 4.0 * b * sx[r];
                for c in 0..3 {
                    let s2 = s[r][0] * s[0][c] + s[r][1] * s[1][c] + s[r][2] * s[2][c];
                    h[r][c] += 2.0 * s2 - 8.0 * sx[r] * sx[c] - 4.0 * b * s[r][c];
                }
            }
        }
        (g, h)
    }

    /// Riemannian Newton on the sphere from `xi`, safeguarded by descent.
    /// `sign = 1` minimizes, `-1` maximizes.
    fn polish(&self, mut xi: [f64; 3], sign: f64) -> ([f64; 3], f64) {
        let mut f = sign * self.eval(xi);
        for _ in 0..30 {
            let (g, h) = self.derivatives(xi);
            let (g, h) = (g.map(|v| sign * v), h.map(|r| r.map(|v| sign * v)));
            // tangent basis
            let seed = if xi[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let t1 = normalize(cross(xi, seed));
            let t2 = cross(xi, t1);
            let gx = dot(g, xi);
            let g1 = dot(g, t1);
            let g2 = dot(g, t2);
            if g1.abs().max(g2.abs()) < 1e-15 {
                break;
            }
            let ht = |a: [f64; 3], b: [f64; 3]| dot(a, mat_vec(&h, b)) - gx * dot(a, b);
            let (h11, h12, h22) = (ht(t1, t1), ht(t1, t2), ht(t2, t2));
            let det = h11 * h22 - h12 * h12;
            let (mut a, mut b) = if h11 > 0.0 && det > 0.0 {
                (-(h22 * g1 - h12 * g2) / det, -(h11 * g2 - h12 * g1) / det)
            } else {
                let scale = 1.0 / (h11.abs() + h22.abs() + 1e-300);
                (-g1 * scale, -g2 * scale)
            };
            let mut improved = false;
            for _ in 0..40 {
                let cand = normalize([0, 1, 2].map(|k| xi[k] + a * t1[k] + b * t2[k]));
                let fc = sign * self.eval(cand);
                if fc < f {
                    xi = cand;
                    f = fc;
                    improved = true;
                    break;
                }
                a *= 0.5;
                b *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (xi, sign * f)
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Quasi-uniform Fibonacci lattice on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Minimum and maximum of the pair form over the sphere: lattice sampling
/// followed by Newton polish of the best few lattice points.
pub fn sphere_extrema(form: &PairForm, directions: &[[f64; 3]]) -> ((f64, [f64; 3]), f64) {
    let mut vals: Vec<(f64, usize)> = directions.iter().enumerate().map(|(k, &d)| (form.eval(d), k)).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (vals[0].0, directions[vals[0].1]);
    for &(_, k) in vals.iter().take(4) {
        let (x, f) = form.polish(directions[k], 1.0);
        if f < best.0 {
            best = (f, x);
        }
    }
    let mut sup = vals[vals.len() - 1].0;
    for &(_, k) in vals.iter().rev().take(2) {
        sup = sup.max(form.polish(directions[k], -1.0).1);
    }
    (best, sup)
}

/// Two-channel certificate: per node, `min_{|ξ|=1} |S₁ξ×ξ|² + |S₂ξ×ξ|²`.
pub fn cert_3d(u: &VectorField, v: &VectorField, threshold: f64, samples: usize) -> Result<CertificateReport> {
    let g = *u.grid();
    if g.dim() != 3 {
        return Err(Error::InvalidInput("cert_3d needs 3D fields".into()));
    }
    g.ensure_same(v.grid())?;
    check_threshold(threshold)?;
    if samples < 8 {
        return Err(Error::InvalidInput(format!("at least 8 sphere samples required, got {samples}")));
    }
    let s1 = diff::sym_grad(u)?;
    let s2 = diff::sym_grad(v)?;
    let dirs = fibonacci_sphere(samples);
    let per_node = par::map_range(g.node_count(), |i| sphere_extrema(&PairForm::new(s1.matrix_at(i), s2.matrix_at(i)), &dirs));
    let mut inf = f64::INFINITY;
    let mut sup = 0.0f64;
    let mut worst = 0;
    let mut dir = [0.0; 3];
    for (i, ((lo, x), hi)) in per_node.into_iter().enumerate() {
        if lo < inf {
            inf = lo;
            worst = i;
            dir = x;
        }
        sup = sup.max(hi);
    }
    Ok(CertificateReport::build("cert_3d", &g, inf.max(0.0), sup, worst, Some(dir), samples, threshold))
}

/// Constant-strain version of `cert_3d` for a single point.
pub fn cert_pair(s1: Sym3, s2: Sym3, samples: usize) -> (f64, f64, [f64; 3]) {
    let dirs = fibonacci_sphere(samples.max(8));
    let ((lo, x), hi) = sphere_extrema(&PairForm::new(s1, s2), &dirs);
    (lo.max(0.0), hi, x)
}

/// Polynomial with real coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    fn mul(&self, o: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn combine(&self, o: &Poly, sign: f64) -> Poly {
        let n = self.0.len().max(o.0.len());
        Poly((0..n).map(|k| self.0.get(k).copied().unwrap_or(0.0) + sign * o.0.get(k).copied().unwrap_or(0.0)).collect())
    }

    fn add(&self, o: &Poly) -> Poly {
        self.combine(o, 1.0)
    }

    fn sub(&self, o: &Poly) -> Poly {
        self.combine(o, -1.0)
    }

    pub fn eval(&self, z: c64) -> c64 {
        self.0.iter().rev().fold(c64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    /// Roots from the eigenvalues of the companion matrix.
    pub fn roots(&self) -> Result<Vec<c64>> {
        let n = self.degree();
        let lead = self.0[n];
        if n == 0 || lead == 0.0 {
            return Err(Error::DegenerateInput("polynomial has no roots or zero leading coefficient".into()));
        }
        let comp = Mat::<f64>::from_fn(n, n, |r, c| {
            if c == n - 1 {
                -self.0[r] / lead
            } else if r == c + 1 {
                1.0
            } else {
                0.0
            }
        });
        comp.eigenvalues().map_err(|e| Error::ConvergenceFailure(format!("companion eigenvalues: {e:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootReport {
    /// `[re, im]` pairs.
    pub roots: Vec<[f64; 2]>,
    pub upper: usize,
    pub lower: usize,
    pub real: usize,
    pub min_separation: f64,
    pub min_abs_imag: f64,
    /// Lopatinskii determinant as `[re, im]`.
    pub determinant: [f64; 2],
    pub contour_nodes: usize,
    pub ill_conditioned: bool,
    pub pass: bool,
}

fn is_real(z: c64) -> bool {
    z.im.abs() <= 1e-6 * z.norm().max(1.0)
}

fn min_separation(roots: &[c64]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            m = m.min((roots[i] - roots[j]).norm());
        }
    }
    m
}

/// `(1/2πi) ∮ f` over the circle `c + r e^{iθ}`, trapezoid rule doubled
/// until successive values agree to `1e-14`.
pub fn circle_integral(f: impl Fn(c64) -> c64, center: c64, radius: f64) -> (c64, usize) {
    let eval = |n: usize| {
        let mut acc = c64::new(0.0, 0.0);
        for k in 0..n {
            let e = c64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
            // dz = i r e^{iθ} dθ, divided by 2πi
            acc += f(center + e * radius) * e * radius;
        }
        acc / n as f64
    };
    let mut n = 32;
    let mut prev = eval(n);
    while n < 1 << 18 {
        n *= 2;
        let cur = eval(n);
        let done = (cur - prev).norm() <= 1e-14 * cur.norm().max(1.0);
        prev = cur;
        if done {
            break;
        }
    }
    (prev, n)
}

/// Circle in the τ-plane enclosing exactly the given upper-half-plane
/// points: the preimage of `|w| = r` under `w = (τ − is)/(τ + is)`.
fn upper_contour(upper: &[c64], s: f64) -> (c64, f64) {
    let is = c64::new(0.0, s);
    let rmax = upper.iter().map(|&t| ((t - is) / (t + is)).norm()).fold(0.0f64, f64::max);
    let r = 0.5 * (rmax + 1.0);
    let center = c64::new(0.0, s * (1.0 + r * r) / (1.0 - r * r));
    (center, 2.0 * s * r / (1.0 - r * r))
}

fn root_report(roots: &[c64], det: c64, nodes: usize) -> RootReport {
    let real = roots.iter().filter(|&&z| is_real(z)).count();
    let upper = roots.iter().filter(|&&z| !is_real(z) && z.im > 0.0).count();
    let sep = min_separation(roots);
    let min_im = roots.iter().filter(|&&z| !is_real(z)).map(|z| z.im.abs()).fold(f64::INFINITY, f64::min);
    RootReport {
        roots: roots.iter().map(|z| [z.re, z.im]).collect(),
        upper,
        lower: roots.len() - upper - real,
        real,
        min_separation: sep,
        min_abs_imag: min_im,
        determinant: [det.re, det.im],
        contour_nodes: nodes,
        ill_conditioned: sep < 1e-6,
        pass: det.norm() > SL_DET_THRESHOLD,
    }
}

/// Planar check: roots of `2c(τ² + 1)` and `(1/2πi)∮ 1/(z − τ₊)` around the upper root.
pub fn sl_check_2d(coefficient: f64) -> Result<RootReport> {
    if coefficient == 0.0 {
        return Err(Error::ZeroCoefficient);
    }
    if !coefficient.is_finite() {
        return Err(Error::InvalidInput(format!("coefficient {coefficient} is not finite")));
    }
    let symbol = Poly(vec![2.0 * coefficient, 0.0, 2.0 * coefficient]);
    let mut roots = symbol.roots()?;
    roots.sort_by(|a, b| b.im.total_cmp(&a.im));
    let upper: Vec<c64> = roots.iter().copied().filter(|z| !is_real(*z) && z.im > 0.0).collect();
    if upper.len() != 1 {
        return Err(Error::HalfPlaneSplitViolation(format!("{} upper roots", upper.len())));
    }
    let t = upper[0];
    let (center, radius) = upper_contour(&upper, 1.0);
    let (val, nodes) = circle_integral(|z| c64::new(1.0, 0.0) / (z - t), center, radius);
    Ok(root_report(&roots, val, nodes))
}

/// Quartic `τ ↦ |S₁ξ×ξ|² + |S₂ξ×ξ|²` with `ξ = (τ, ξ′)`, built from
/// `|Sξ×ξ|² = |Sξ|²|ξ|² − (ξᵀSξ)²`.
pub fn boundary_quartic(s1: &Sym3, s2: &Sym3, xi_t: [f64; 2]) -> Poly {
    let eta = [0.0, xi_t[0], xi_t[1]];
    let norm2 = Poly(vec![dot(eta, eta), 0.0, 1.0]);
    let mut total = Poly(vec![0.0]);
    for s in [s1, s2] {
        // S ξ = τ S e₁ + S η
        let se1 = [s[0][0], s[1][0], s[2][0]];
        let seta = mat_vec(s, eta);
        let sxi2 = Poly(vec![dot(seta, seta), 2.0 * dot(se1, seta), dot(se1, se1)]);
        let quad = Poly(vec![dot(eta, seta), 2.0 * seta[0], s[0][0]]);
        total = total.add(&sxi2.mul(&norm2)).sub(&quad.mul(&quad));
    }
    total
}

/// Two-channel boundary check at a point with normal `e₁`: 2/2 root split
/// and the Dirichlet {trace, normal derivative} Lopatinskii determinant
/// `det[(1/2πi)∮ τ^{j+k}/A₊(τ) dτ]_{j,k=0,1}`.
pub fn sl_check_3d(s1: &Sym3, s2: &Sym3, xi_t: [f64; 2]) -> Result<RootReport> {
    let scale = (xi_t[0] * xi_t[0] + xi_t[1] * xi_t[1]).sqrt();
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("tangential frequency must be nonzero".into()));
    }
    let p = boundary_quartic(s1, s2, xi_t);
    let size = p.0.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if size == 0.0 || p.0[4].abs() <= 1e-12 * size {
        return Err(Error::HalfPlaneSplitViolation("normal direction is characteristic (leading coefficient vanishes)".into()));
    }
    let roots = p.roots()?;
    let real: Vec<c64> = roots.iter().copied().filter(|&z| is_real(z)).collect();
    let upper: Vec<c64> = roots.iter().copied().filter(|&z| !is_real(z) && z.im > 0.0).collect();
    if !real.is_empty() {
        return Err(Error::HalfPlaneSplitViolation(format!("real root at τ = {:.6e}", real[0].re)));
    }
    if upper.len() != 2 {
        return Err(Error::HalfPlaneSplitViolation(format!("{}/{} split", upper.len(), 4 - upper.len())));
    }
    let (center, radius) = upper_contour(&upper, scale);
    let a_plus = |z: c64| (z - upper[0]) * (z - upper[1]);
    let mut nodes = 0;
    let mut b = [[c64::new(0.0, 0.0); 2]; 2];
    for j in 0..2 {
        for k in 0..2 {
            let (v, n) = circle_integral(|z| z.powi((j + k) as i32) / a_plus(z), center, radius);
            b[j][k] = v;
            nodes = nodes.max(n);
        }
    }
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    Ok(root_report(&roots, det, nodes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootCluster {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
    pub real: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootConditions {
    pub pass: bool,
    pub clusters: Vec<RootCluster>,
    pub min_separation: f64,
    pub min_abs_imag: f64,
    pub violations: Vec<String>,
}

/// Multiplicity, separation and imaginary-part conditions on a root set.
pub fn root_conditions(roots: &[c64], eps: f64) -> Result<RootConditions> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("ε must be positive, got {eps}")));
    }
    let mut clusters: Vec<(c64, usize)> = vec![];
    for &z in roots {
        match clusters.iter_mut().find(|(c, _)| (*c - z).norm() <= CLUSTER_RADIUS) {
            Some(cl) => cl.1 += 1,
            None => clusters.push((z, 1)),
        }
    }
    let mut violations = vec![];
    let out: Vec<RootCluster> = clusters
        .iter()
        .map(|&(z, m)| {
            let real = z.im.abs() <= CLUSTER_RADIUS;
            if real && m > 1 {
                violations.push(format!("real zero {:.3e} has multiplicity {m}", z.re));
            }
            if !real && m > 2 {
                violations.push(format!("complex zero {:.3e}{:+.3e}i has multiplicity {m}", z.re, z.im));
            }
            RootCluster { re: z.re, im: z.im, multiplicity: m, real }
        })
        .collect();
    let centers: Vec<c64> = clusters.iter().map(|c| c.0).collect();
    let sep = min_separation(&centers);
    if sep < eps {
        violations.push(format!("separation {sep:.3e} below ε = {eps}"));
    }
    let min_im = out.iter().filter(|c| !c.real).map(|c| c.im.abs()).fold(f64::INFINITY, f64::min);
    if min_im < eps {
        violations.push(format!("|Im τ| = {min_im:.3e} below ε = {eps}"));
    }
    Ok(RootConditions { pass: violations.is_empty(), clusters: out, min_separation: sep, min_abs_imag: min_im, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(a: f64, b: f64, c: f64) -> Sym3 {
        [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
    }

    fn rotate_z(s: &Sym3, angle: f64) -> Sym3 {
        rotate(s, [0.0, 0.0, 1.0], angle)
    }

    // Rodrigues rotation about a unit axis, applied as R S Rᵀ
    fn rotate(s: &Sym3, k: [f64; 3], angle: f64) -> Sym3 {
        let (sn, cs) = angle.sin_cos();
        let mut r = [[0.0; 3]; 3];
        let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = if i == j { cs } else { 0.0 } + sn * kx[i][j] + (1.0 - cs) * k[i] * k[j];
            }
        }
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        out[i][j] += r[i][k] * s[k][l] * r[j][l];
                    }
                }
            }
        }
        out
    }

    // brute force over a latitude-longitude lattice with cross products written out
    fn brute_min(s1: &Sym3, s2: &Sym3, n: usize) -> f64 {
        let mut m = f64::INFINITY;
        for a in 0..=n {
            let th = PI * a as f64 / n as f64;
            for b in 0..2 * n {
                let ph = PI * b as f64 / n as f64;
                let x = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                let mut q = 0.0;
                for s in [s1, s2] {
                    let c = cross(mat_vec(s, x), x);
                    q += dot(c, c);
                }
                m = m.min(q);
            }
        }
        m
    }

    fn constant_strain(g: Grid, s: Sym3) -> VectorField {
        VectorField::from_fn(g, |x| mat_vec(&s, x))
    }

    #[test]
    fn planar_pure_shear_passes() {
        let g = Grid::unit_square(8).unwrap();
        let u = VectorField::from_fn(g, |x| [x[0], -x[1], 0.0]);
        let r = cert_2d(&u, 1e-6).unwrap();
        assert!(r.pass);
        assert!((r.inf - 2f64.sqrt()).abs() < 1e-12 && (r.sup - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.c, Some(2f64.sqrt()));
        let z = cert_2d(&VectorField::from_fn(g, |_| [1.0, 2.0, 0.0]), 1e-6).unwrap();
        assert!(!z.pass && z.inf == 0.0 && z.c.is_none());
    }

    #[test]
    fn common_eigenvector_fails() {
        let g = Grid::unit_cube(4).unwrap();
        let r = cert_3d(&constant_strain(g, diag(1.0, -1.0, 0.0)), &constant_strain(g, diag(0.0, 1.0, -1.0)), 1e-6, DEFAULT_SAMPLES).unwrap();
        assert!(!r.pass && r.inf <= 1e-6);
        assert!(brute_min(&diag(1.0, -1.0, 0.0), &diag(0.0, 1.0, -1.0), 400) <= 1e-6);
    }

    fn generic_pair() -> (Sym3, Sym3) {
        let s1 = diag(1.0, -1.0, 0.0);
        let k = 1.0 / 3f64.sqrt();
        (s1, rotate(&s1, [k, k, k], PI / 4.0))
    }

    #[test]
    fn rotation_about_an_eigenvector_keeps_it_common() {
        let s1 = diag(1.0, -1.0, 0.0);
        let (lo, _, x) = cert_pair(s1, rotate_z(&s1, PI / 4.0), DEFAULT_SAMPLES);
        assert!(lo < 1e-12 && x[2].abs() > 1.0 - 1e-6);
    }

    #[test]
    fn rotated_pair_passes_and_matches_brute_force() {
        let (s1, s2) = generic_pair();
        let g = Grid::unit_cube(3).unwrap();
        let r = cert_3d(&constant_strain(g, s1), &constant_strain(g, s2), 1e-6, DEFAULT_SAMPLES).unwrap();
        let oracle = brute_min(&s1, &s2, 300);
        assert!(r.pass && r.inf > 1e-3);
        assert!(r.inf <= oracle + 1e-12 && oracle - r.inf < 1e-4, "{} vs {oracle}", r.inf);
        assert!(r.inf <= r.sup);
        let zero = cert_3d(&VectorField::zeros(g), &VectorField::zeros(g), 1e-6, 64).unwrap();
        assert_eq!((zero.inf, zero.sup, zero.pass), (0.0, 0.0, false));
    }

    #[test]
    fn report_json_has_stable_keys() {
        let g = Grid::unit_square(4).unwrap();
        let r = cert_2d(&VectorField::from_fn(g, |x| [x[1], 0.0, 0.0]), 1e-6).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["kind", "pass", "inf", "sup", "C", "worst_node", "samples"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn planar_roots_and_residue() {
        for c in [1.0, -3.7, 1e-3] {
            let r = sl_check_2d(c).unwrap();
            assert!((r.roots[0][0]).abs() < 1e-10 && (r.roots[0][1] - 1.0).abs() < 1e-10);
            assert!((r.roots[1][0]).abs() < 1e-10 && (r.roots[1][1] + 1.0).abs() < 1e-10);
            assert!((r.determinant[0] - 1.0).abs() < 1e-8 && r.determinant[1].abs() < 1e-8);
            assert!(r.pass && r.upper == 1 && r.lower == 1);
        }
        assert_eq!(sl_check_2d(0.0).unwrap_err().kind(), "ZeroCoefficient");
    }

    // counts zeros with Im > 0 by the argument principle on a large upper half-disc
    fn upper_count_oracle(p: &Poly) -> usize {
        let r: f64 = 1e3;
        let n = 200_000;
        let mut winding = 0.0;
        let mut prev = p.eval(c64::new(-r, 0.0)).arg();
        let pts = (1..=n).map(|k| c64::new(-r + 2.0 * r * k as f64 / n as f64, 0.0)).chain((1..=n).map(|k| c64::from_polar(r, PI * k as f64 / n as f64)));
        for z in pts {
            let a = p.eval(z).arg();
            let mut d = a - prev;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
            }
            winding += d;
            prev = a;
        }
        (winding / (2.0 * PI)).round() as usize
    }

    #[test]
    fn quartic_split_is_two_two_for_certified_pair() {
        let (s1, s2) = generic_pair();
        let r = sl_check_3d(&s1, &s2, [1.0, 0.0]).unwrap();
        assert_eq!((r.upper, r.lower, r.real), (2, 2, 0));
        assert!(r.pass);
        assert_eq!(upper_count_oracle(&boundary_quartic(&s1, &s2, [1.0, 0.0])), 2);
    }

    #[test]
    fn quartic_matches_direct_evaluation() {
        let s1 = [[0.3, 0.2, -0.5], [0.2, -0.7, 0.1], [-0.5, 0.1, 0.4]];
        let s2 = [[-0.1, 0.6, 0.2], [0.6, 0.5, -0.3], [0.2, -0.3, -0.4]];
        let p = boundary_quartic(&s1, &s2, [0.7, -1.1]);
        for tau in [-2.0, -0.3, 0.0, 0.9, 3.0] {
            let x = [tau, 0.7, -1.1];
            let direct: f64 = [s1, s2].iter().map(|s| dot(cross(mat_vec(s, x), x), cross(mat_vec(s, x), x))).sum();
            assert!((p.eval(c64::new(tau, 0.0)).re - direct).abs() < 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn shared_eigenvector_gives_real_root() {
        let s = diag(1.0, -0.5, 2.0);
        let err = sl_check_3d(&s, &s, [0.0, 1.0]).unwrap_err();
        assert_eq!(err.kind(), "HalfPlaneSplitViolation");
        assert!(boundary_quartic(&s, &s, [0.0, 1.0]).eval(c64::new(0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn roots_scale_with_tangential_frequency() {
        let (s1, s2) = generic_pair();
        let mut a = sl_check_3d(&s1, &s2, [1.0, 0.3]).unwrap().roots;
        let mut b = sl_check_3d(&s1, &s2, [2.0, 0.6]).unwrap().roots;
        let key = |z: &[f64; 2]| (z[1] * 1e6).round() as i64 * 1_000_000 + (z[0] * 1e3).round() as i64;
        a.sort_by_key(key);
        b.sort_by_key(key);
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x[0] - y[0]).abs() < 1e-8 && (2.0 * x[1] - y[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn root_condition_examples() {
        let i = c64::new(0.0, 1.0);
        assert!(root_conditions(&[i, -i], 0.5).unwrap().pass);
        let r = root_conditions(&[c64::new(0.1, 0.0), c64::new(0.1 + 1e-12, 0.0)], 0.5).unwrap();
        assert!(!r.pass && r.clusters[0].multiplicity == 2);
        assert!(root_conditions(&[2.0 * i, 2.0 * i, -2.0 * i, -2.0 * i], 1.0).unwrap().pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rotation_invariance(angle in 0.0f64..6.28, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let s1 = [[a, 0.3, 0.0], [0.3, -a, 0.2], [0.0, 0.2, 0.0]];
            let s2 = [[0.1, b, 0.4], [b, 0.5, 0.0], [0.4, 0.0, -0.6]];
            let (lo, _, _) = cert_pair(s1, s2, DEFAULT_SAMPLES);
            let (lo_r, _, _) = cert_pair(rotate_z(&s1, angle), rotate_z(&s2, angle), DEFAULT_SAMPLES);
            prop_assert!((lo - lo_r).abs() < 1e-6 * (1.0 + lo));
        }

        #[test]
        fn zero_infimum_iff_common_eigenvector(seed in 0u64..1000, shared in any::<bool>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut sym = || {
                let mut m = [[0.0; 3]; 3];
                for i in 0..3 { for j in i..3 { let v = rng.random_range(-1.0..1.0); m[i][j] = v; m[j][i] = v; } }
                m
            };
            let (mut s1, mut s2) = (sym(), sym());
            if shared {
                // make e₂ an eigenvector of both
                for s in [&mut s1, &mut s2] {
                    s[0][1] = 0.0; s[1][0] = 0.0; s[2][1] = 0.0; s[1][2] = 0.0;
                }
            }
            let (lo, _, _) = cert_pair(s1, s2, DEFAULT_SAMPLES);
            // oracle: eigenvectors of s1 checked against s2
            let evd = Mat::<f64>::from_fn(3, 3, |r, c| s1[r][c]).self_adjoint_eigen(faer::Side::Lower).unwrap();
            let common = (0..3).any(|k| {
                let v = [evd.U()[(0, k)], evd.U()[(1, k)], evd.U()[(2, k)]];
                let c = cross(mat_vec(&s2, v), v);
                dot(c, c) < 1e-20
            });
            prop_assert_eq!(common, shared);
            if shared { prop_assert!(lo < 1e-10); } else { prop_assert!(lo > 0.0); }
        }

        #[test]
        fn doubling_samples_never_raises_inf(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = || { let mut s = [[0.0; 3]; 3]; for i in 0..3 { for j in i..3 { let v = rng.random_range(-1.0..1.0); s[i][j] = v; s[j][i] = v; } } s };
            let (s1, s2) = (m(), m());
            let (a, _, _) = cert_pair(s1, s2, 512);
            let (b, _, _) = cert_pair(s1, s2, 1024);
            prop_assert!(b <= a + 1e-9);
        }
    }
}
