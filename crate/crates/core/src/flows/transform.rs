use rand_chacha::ChaCha8Rng;

use super::{FlowField, Lattice};
use crate::domain::Domain;
use crate::error::{param, LabError, Result};
use crate::linalg;
use crate::rng;
use crate::solver::CoefficientSet;

/// Coefficients of the equation satisfied by `v_t(x) = u_t(X_t(x))`:
/// `dv = (α^{ij} D_i D_j v + β^i D_i v + φ) dt`.
#[derive(Debug, Clone, Copy)]
pub struct TransformedCoefficients<'a> {
    coeffs: &'a CoefficientSet,
    flow: &'a FlowField,
}

/// All transformed quantities at one space-time point.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedPoint {
    /// `X_t(y)`.
    pub x: Vec<f64>,
    pub jac: Vec<f64>,
    /// `α = J⁻¹ ā(X) J⁻ᵀ`, row-major.
    pub alpha: Vec<f64>,
    /// `β = −J⁻¹ (Σ(X) + ∇²X : α)`.
    pub beta: Vec<f64>,
    /// `φ = f ∘ X`.
    pub phi: f64,
    /// `Σ^j = σ^{ik} D_i σ^{jk}` at `X`.
    pub sigma_drift: Vec<f64>,
    /// `ρ̄ = J⁻¹ ρ(X)` with `ρ` the symmetric square root of `ā`.
    pub rho_bar: Vec<f64>,
}

fn matmul(d: usize, a: &[f64], b: &[f64]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|l| a[i * d + l] * b[l * d + j]).sum();
        }
    }
    out
}

fn transpose(d: usize, a: &[f64]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

fn inverse_small(d: usize, m: &[f64]) -> Option<[f64; 4]> {
    let det = super::det(d, m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(match d {
        1 => [1.0 / m[0], 0.0, 0.0, 0.0],
        _ => [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det],
    })
}

/// Symmetric square root of a symmetric positive semidefinite 1x1 or 2x2 matrix:
/// `√M = (M + √det M · I) / √(tr M + 2√det M)`.
fn sqrt_psd(d: usize, a: &[f64]) -> [f64; 4] {
    if d == 1 {
        return [a[0].max(0.0).sqrt(), 0.0, 0.0, 0.0];
    }
    let sd = (a[0] * a[3] - a[1] * a[2]).max(0.0).sqrt();
    let tau = (a[0] + a[3] + 2.0 * sd).max(0.0).sqrt();
    if tau == 0.0 {
        return [0.0; 4];
    }
    [(a[0] + sd) / tau, a[1] / tau, a[2] / tau, (a[3] + sd) / tau]
}

/// Largest eigenvalue of `r rᵀ`.
fn spectral_sq(d: usize, r: &[f64]) -> f64 {
    if d == 1 {
        return r[0] * r[0];
    }
    let m = matmul(d, r, &transpose(d, r));
    let half = 0.5 * (m[0] + m[3]);
    let det = m[0] * m[3] - m[1] * m[2];
    half + (half * half - det).max(0.0).sqrt()
}

/// `Σ^j = σ^{ik} D_i σ^{jk}`.
fn fill_sigma_drift(d: usize, d1: usize, sig: &[f64], dsig: &[f64], out: &mut [f64; 2]) {
    for (j, sd) in out.iter_mut().enumerate().take(d) {
        *sd = (0..d1).map(|k| (0..d).map(|i| sig[i * d1 + k] * dsig[(k * d + j) * d + i]).sum::<f64>()).sum();
    }
}

/// Fixed-size transformed quantities at one point.
struct Local {
    x: [f64; 2],
    jac: [f64; 4],
    alpha: [f64; 4],
    beta: [f64; 2],
    phi: f64,
    sigma_drift: [f64; 2],
    rho_bar: [f64; 4],
}

impl<'a> TransformedCoefficients<'a> {
    /// Checks that the square root of `ā` reproduces `ā` to `10⁻¹⁰` at the
    /// initial lattice points.
    pub fn new(coeffs: &'a CoefficientSet, flow: &'a FlowField) -> Result<Self> {
        if coeffs.dim() != flow.dim() {
            return param("coefficient and flow dimensions differ");
        }
        let d = flow.dim();
        let snap = flow.snapshot(0);
        for p in 0..flow.lattice().len() {
            let x = &snap.x[p * d..(p + 1) * d];
            let abar = coeffs.reduced_diffusion(snap.time, x);
            let rho = sqrt_psd(d, &abar);
            let rr = &matmul(d, &rho, &transpose(d, &rho))[..d * d];
            let scale = abar.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if rr.iter().zip(&abar).any(|(a, b)| (a - b).abs() > 1e-10 * scale) {
                return Err(LabError::Validation(format!("no real square root of the reduced diffusion at {x:?}")));
            }
        }
        Ok(TransformedCoefficients { coeffs, flow })
    }

    pub fn flow(&self) -> &'a FlowField {
        self.flow
    }

    /// Transformed coefficients at snapshot `idx` and point `y`.
    pub fn at(&self, idx: usize, y: &[f64]) -> Result<TransformedPoint> {
        let d = self.flow.dim();
        let l = self.local(idx, y)?;
        Ok(TransformedPoint {
            x: l.x[..d].to_vec(),
            jac: l.jac[..d * d].to_vec(),
            alpha: l.alpha[..d * d].to_vec(),
            beta: l.beta[..d].to_vec(),
            phi: l.phi,
            sigma_drift: l.sigma_drift[..d].to_vec(),
            rho_bar: l.rho_bar[..d * d].to_vec(),
        })
    }

    fn local(&self, idx: usize, y: &[f64]) -> Result<Local> {
        let d = self.flow.dim();
        let d1 = self.coeffs.noise_dim();
        let view = self.flow.view(idx);
        let t = view.time();
        let mut x = [0.0; 2];
        let mut jac = [0.0; 4];
        view.eval(y, &mut x[..d], &mut jac[..d * d]);
        let x_s = &x[..d];
        let jinv = inverse_small(d, &jac).ok_or_else(|| LabError::Numerical { t, reason: format!("singular flow Jacobian at {y:?}") })?;
        let mut abar = [0.0; 4];
        self.coeffs.reduced_diffusion_into(t, x_s, &mut abar[..d * d]);
        let alpha = matmul(d, &matmul(d, &jinv, &abar), &transpose(d, &jinv));

        let mut sigma_drift = [0.0; 2];
        if d1 <= 8 {
            let (mut sig, mut dsig) = ([0.0; 16], [0.0; 32]);
            self.coeffs.eval_sigma(t, x_s, &mut sig[..d * d1]);
            self.coeffs.eval_sigma_jacobian(t, x_s, &mut dsig[..d * d * d1]);
            fill_sigma_drift(d, d1, &sig, &dsig, &mut sigma_drift);
        } else {
            let (mut sig, mut dsig) = (vec![0.0; d * d1], vec![0.0; d * d * d1]);
            self.coeffs.eval_sigma(t, x_s, &mut sig);
            self.coeffs.eval_sigma_jacobian(t, x_s, &mut dsig);
            fill_sigma_drift(d, d1, &sig, &dsig, &mut sigma_drift);
        }

        let mut hess = [0.0; 8];
        view.hessian_into(y, &mut hess);
        let mut inner = sigma_drift;
        for (i, v) in inner.iter_mut().enumerate().take(d) {
            for j in 0..d {
                for l in 0..d {
                    *v += hess[(i * d + j) * d + l] * alpha[j * d + l];
                }
            }
        }
        let mut beta = [0.0; 2];
        for (l, b) in beta.iter_mut().enumerate().take(d) {
            *b = -(0..d).map(|i| jinv[l * d + i] * inner[i]).sum::<f64>();
        }
        let phi = self.coeffs.eval_f(t, x_s, 0.0, &[0.0; 2][..d]);
        let rho_bar = matmul(d, &jinv, &sqrt_psd(d, &abar));
        Ok(Local { x, jac, alpha, beta, phi, sigma_drift, rho_bar })
    }
}

/// Drift, diffusion and running source of backward characteristics.
pub trait CharacteristicField: Sync {
    fn dim(&self) -> usize;
    /// Writes `β(s, y)` and the row-major diffusion matrix `ρ̄(s, y)`; returns the source `φ(s, y)`.
    fn eval(&self, s: f64, y: &[f64], drift: &mut [f64], diffusion: &mut [f64]) -> Result<f64>;
    /// Terminal payoff at time 0.
    fn terminal(&self, y: &[f64]) -> f64;
}

/// Characteristics of the untransformed operator: `β = 0`, `ρ̄ = √ā`, `φ = f`.
/// This is the identity transformation and applies when `σ ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct StaticField<'a> {
    pub coeffs: &'a CoefficientSet,
}

impl CharacteristicField for StaticField<'_> {
    fn dim(&self) -> usize {
        self.coeffs.dim()
    }
    fn eval(&self, s: f64, y: &[f64], drift: &mut [f64], diffusion: &mut [f64]) -> Result<f64> {
        let d = self.coeffs.dim();
        let mut abar = [0.0; 4];
        self.coeffs.reduced_diffusion_into(s, y, &mut abar[..d * d]);
        drift.fill(0.0);
        diffusion.copy_from_slice(&sqrt_psd(d, &abar)[..d * d]);
        Ok(self.coeffs.eval_f(s, y, 0.0, &[0.0; 2][..d]))
    }
    fn terminal(&self, y: &[f64]) -> f64 {
        self.coeffs.psi(y)
    }
}

impl CharacteristicField for TransformedCoefficients<'_> {
    fn dim(&self) -> usize {
        self.flow.dim()
    }
    fn eval(&self, s: f64, y: &[f64], drift: &mut [f64], diffusion: &mut [f64]) -> Result<f64> {
        let d = self.flow.dim();
        let p = self.local(self.flow.nearest_index(s), y)?;
        drift.copy_from_slice(&p.beta[..d]);
        diffusion.copy_from_slice(&p.rho_bar[..d * d]);
        Ok(p.phi)
    }
    fn terminal(&self, y: &[f64]) -> f64 {
        self.coeffs.psi(&self.flow.view(0).position(y))
    }
}

/// Space-time region for exit detection, given by a signed distance (positive inside).
pub trait Region: Sync {
    fn signed_distance(&self, s: f64, y: &[f64]) -> f64;
}

/// No boundary at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllSpace;

impl Region for AllSpace {
    fn signed_distance(&self, _: f64, _: &[f64]) -> f64 {
        f64::INFINITY
    }
}

impl Region for Domain {
    fn signed_distance(&self, _: f64, y: &[f64]) -> f64 {
        Domain::signed_distance(self, y)
    }
}

/// `{(s, y): X_s(y) ∈ G}`; distances are pulled back through the local Jacobian.
#[derive(Debug, Clone, Copy)]
pub struct FlowRegion<'a> {
    pub flow: &'a FlowField,
    pub domain: Domain,
}

impl Region for FlowRegion<'_> {
    fn signed_distance(&self, s: f64, y: &[f64]) -> f64 {
        let d = self.flow.dim();
        let mut x = [0.0; 2];
        let mut j = [0.0; 4];
        self.flow.view(self.flow.nearest_index(s)).eval(y, &mut x[..d], &mut j[..d * d]);
        self.domain.signed_distance(&x[..d]) / spectral_sq(d, &j).sqrt()
    }
}

/// Step size and conventions for backward characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardConfig {
    pub dt: f64,
    /// Multiplier on `ρ̄`; `√2` makes the generator `ā^{ij} D_i D_j`.
    pub diffusion_scale: f64,
    /// Brownian-bridge test for excursions between grid times.
    pub bridge: bool,
}

impl BackwardConfig {
    pub fn new(dt: f64) -> Self {
        BackwardConfig { dt, diffusion_scale: std::f64::consts::SQRT_2, bridge: true }
    }
}

/// Outcome of one backward characteristic started at `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Characteristic {
    /// `τ`: the last time in `[0, t]` spent outside the region, `0` if it never left.
    pub exit_time: f64,
    pub exit_point: Option<Vec<f64>>,
    /// Position at exit, or at time 0.
    pub end: Vec<f64>,
    /// `∫_τ^t φ_s(U_s) ds`.
    pub source_integral: f64,
    /// `ψ(U_0) 1{τ = 0} + ∫_τ^t φ`.
    pub payoff: f64,
}

/// Time-reversed Euler–Maruyama `U ← U + β dt + ρ̄ ΔB` from `(t, x)` down to 0,
/// stopped at the first exit from `region`.
pub fn backward_flow(
    field: &dyn CharacteristicField,
    region: &dyn Region,
    t: f64,
    x: &[f64],
    cfg: &BackwardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Characteristic> {
    let d = field.dim();
    if x.len() != d {
        return param(format!("start point has {} coordinates, field has {d}", x.len()));
    }
    if !(cfg.dt > 0.0) || t < 0.0 {
        return param(format!("need dt > 0 and t >= 0, got dt = {}, t = {t}", cfg.dt));
    }
    let mut g0 = region.signed_distance(t, x);
    if !(g0 > 0.0) {
        return Ok(Characteristic { exit_time: t, exit_point: Some(x.to_vec()), end: x.to_vec(), source_integral: 0.0, payoff: 0.0 });
    }
    let steps = (t / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let mut u = x.to_vec();
    let mut next = vec![0.0; d];
    let mut beta = vec![0.0; d];
    let mut rho = vec![0.0; d * d];
    let mut z = vec![0.0; d];
    let mut s = t;
    let mut integral = 0.0;
    for k in 0..steps {
        let s_next = (t - (k + 1) as f64 * cfg.dt).max(0.0);
        let h = s - s_next;
        let phi = field.eval(s, &u, &mut beta, &mut rho)?;
        for zi in z.iter_mut() {
            *zi = rng::normal(rng);
        }
        let coin = rng::open01(rng);
        let sq = cfg.diffusion_scale * h.sqrt();
        for i in 0..d {
            next[i] = u[i] + beta[i] * h + sq * (0..d).map(|j| rho[i * d + j] * z[j]).sum::<f64>();
        }
        let g1 = region.signed_distance(s_next, &next);
        let crossing = if g1 <= 0.0 {
            Some(g0 / (g0 - g1))
        } else if cfg.bridge && g0.is_finite() && g1.is_finite() {
            let v = cfg.diffusion_scale * cfg.diffusion_scale * spectral_sq(d, &rho);
            let p = if v > 0.0 { (-2.0 * g0 * g1 / (v * h)).exp() } else { 0.0 };
            (coin < p).then_some(0.5)
        } else {
            None
        };
        if let Some(theta) = crossing {
            integral += phi * theta * h;
            let point: Vec<f64> = (0..d).map(|i| u[i] + theta * (next[i] - u[i])).collect();
            return Ok(Characteristic {
                exit_time: s - theta * h,
                exit_point: Some(point.clone()),
                end: point,
                source_integral: integral,
                payoff: integral,
            });
        }
        integral += phi * h;
        std::mem::swap(&mut u, &mut next);
        s = s_next;
        g0 = g1;
    }
    let payoff = field.terminal(&u) + integral;
    Ok(Characteristic { exit_time: 0.0, exit_point: None, end: u, source_integral: integral, payoff })
}

/// Grid solution of the transformed equation in one dimension.
#[derive(Debug, Clone)]
pub struct TransformedSolution {
    pub lattice: Lattice,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl TransformedSolution {
    /// `v` at snapshot `idx`, linearly interpolated at `y`.
    pub fn value(&self, idx: usize, y: f64) -> f64 {
        let (cell, loc) = self.lattice.locate(&[y]);
        let v = &self.values[idx];
        let w = loc[0].clamp(0.0, 1.0);
        v[cell[0]] * (1.0 - w) + v[cell[0] + 1] * w
    }
}

/// Implicit Euler for `dv = (α v'' + β v' + φ) dt` on the flow lattice, with
/// `v = 0` wherever `X_t(y) ∉ G`. The flow must start at 0 and record every step.
pub fn solve_transformed(coeffs: &CoefficientSet, domain: &Domain, flow: &FlowField) -> Result<TransformedSolution> {
    if flow.dim() != 1 || domain.dim() != 1 {
        return param("transformed grid solve is one-dimensional");
    }
    if flow.start() != 0.0 {
        return param("transformed solve needs a flow started at time 0");
    }
    let tc = TransformedCoefficients::new(coeffs, flow)?;
    let lattice = flow.lattice().clone();
    let n = lattice.len();
    let h = lattice.steps()[0];
    let nodes: Vec<f64> = (0..n).map(|p| lattice.point(p)[0]).collect();
    let mut v: Vec<f64> = nodes.iter().map(|&y| if domain.inside(&[y]) { coeffs.psi(&[y]) } else { 0.0 }).collect();
    let mut values = vec![v.clone()];
    let mut times = vec![flow.snapshot(0).time];
    let (mut lower, mut diag, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut scratch = Vec::new();
    for idx in 1..flow.len() {
        let snap = flow.snapshot(idx);
        let dt = snap.time - flow.snapshot(idx - 1).time;
        let mut rhs = v.clone();
        for p in 0..n {
            let inside = p > 0 && p + 1 < n && domain.inside(&snap.x[p..p + 1]);
            if !inside {
                lower[p] = 0.0;
                upper[p] = 0.0;
                diag[p] = 1.0;
                rhs[p] = 0.0;
                continue;
            }
            let c = tc.at(idx, &[nodes[p]])?;
            let (a, b) = (c.alpha[0] * dt / (h * h), c.beta[0] * dt / (2.0 * h));
            lower[p] = -(a - b);
            upper[p] = -(a + b);
            diag[p] = 1.0 + 2.0 * a;
            rhs[p] += dt * c.phi;
        }
        linalg::solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch)
            .ok_or_else(|| LabError::Numerical { t: snap.time, reason: "singular transformed system".into() })?;
        v = rhs;
        values.push(v.clone());
        times.push(snap.time);
    }
    Ok(TransformedSolution { lattice, times, values })
}
