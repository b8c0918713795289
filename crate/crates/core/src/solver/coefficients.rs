use std::f64::consts::PI;
use std::sync::Arc;

use crate::domain::Domain;

/// Writes a row-major matrix evaluated at `(t, x)` into the output slice.
pub type MatrixField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `f(t, x, y, z)`: drift nonlinearity in the solution value `y` and gradient `z`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// `g(t, x, y)`: noise nonlinearity, one entry per noise component.
pub type NoiseFn = Arc<dyn Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync>;
pub type InitialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Coefficients `a, σ, f, g, ψ` of
/// `du = (a^{ij} D_i D_j u + f(u, ∇u)) dt + (σ^{ik} D_i u + g^k(u)) dW^k`.
#[derive(Clone)]
pub struct CoefficientSet {
    dim: usize,
    noise_dim: usize,
    a: MatrixField,
    sigma: MatrixField,
    sigma_jacobian: Option<MatrixField>,
    f: Option<DriftFn>,
    g: Option<NoiseFn>,
    psi: InitialFn,
    time_dependent: bool,
    support: Option<Domain>,
    label: String,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("label", &self.label)
            .field("time_dependent", &self.time_dependent)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// Identity diffusion, no noise loading, zero data.
    pub fn new(dim: usize, noise_dim: usize) -> Self {
        CoefficientSet {
            dim,
            noise_dim,
            a: Arc::new(move |_, _, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..dim {
                    out[i * dim + i] = 1.0;
                }
            }),
            sigma: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            sigma_jacobian: Some(Arc::new(|_, _, out: &mut [f64]| out.fill(0.0))),
            f: None,
            g: None,
            psi: Arc::new(|_| 0.0),
            time_dependent: false,
            support: None,
            label: "custom".into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_a(mut self, a: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.a = Arc::new(a);
        self
    }

    pub fn with_constant_a(self, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), self.dim * self.dim);
        self.with_a(move |_, _, out| out.copy_from_slice(&a))
    }

    /// Noise loading `σ` as a row-major `d x d1` matrix. The Jacobian falls
    /// back to central differences unless supplied with [`Self::with_sigma_jacobian`].
    pub fn with_sigma(mut self, sigma: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.sigma = Arc::new(sigma);
        self.sigma_jacobian = None;
        self
    }

    pub fn with_constant_sigma(mut self, sigma: Vec<f64>) -> Self {
        assert_eq!(sigma.len(), self.dim * self.noise_dim);
        self = self.with_sigma(move |_, _, out| out.copy_from_slice(&sigma));
        self.sigma_jacobian = Some(Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)));
        self
    }

    /// Jacobian layout: `out[(k * d + i) * d + j] = D_j σ^{ik}`.
    pub fn with_sigma_jacobian(mut self, jac: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.sigma_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_drift(mut self, f: impl Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Some(Arc::new(f));
        self
    }

    pub fn with_drift_fn(mut self, f: Option<DriftFn>) -> Self {
        self.f = f;
        self
    }

    pub fn with_noise_term(mut self, g: impl Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.g = Some(Arc::new(g));
        self
    }

    pub fn with_initial(mut self, psi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.psi = Arc::new(psi);
        self
    }

    pub fn time_dependent(mut self, yes: bool) -> Self {
        self.time_dependent = yes;
        self
    }

    /// Forces every coefficient to vanish outside `G+` of the given domain.
    pub fn with_support(mut self, domain: Domain) -> Self {
        self.support = Some(domain);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }
    pub fn has_drift(&self) -> bool {
        self.f.is_some()
    }
    pub fn has_noise_term(&self) -> bool {
        self.g.is_some()
    }
    pub fn drift_fn(&self) -> Option<&DriftFn> {
        self.f.as_ref()
    }

    #[inline]
    fn outside(&self, x: &[f64]) -> bool {
        self.support.is_some_and(|d| !d.in_extension(x))
    }

    pub fn eval_a(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if self.outside(x) {
            out.fill(0.0);
        } else {
            (self.a)(t, x, out)
        }
    }

    pub fn eval_sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if self.outside(x) {
            out.fill(0.0);
        } else {
            (self.sigma)(t, x, out)
        }
    }

    pub fn eval_sigma_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (d, d1) = (self.dim, self.noise_dim);
        if self.outside(x) {
            out.fill(0.0);
            return;
        }
        if let Some(jac) = &self.sigma_jacobian {
            jac(t, x, out);
            return;
        }
        let eps = 1e-6;
        let mut xp = x.to_vec();
        let mut plus = vec![0.0; d * d1];
        let mut minus = vec![0.0; d * d1];
        for j in 0..d {
            xp[j] = x[j] + eps;
            self.eval_sigma(t, &xp, &mut plus);
            xp[j] = x[j] - eps;
            self.eval_sigma(t, &xp, &mut minus);
            xp[j] = x[j];
            for i in 0..d {
                for k in 0..d1 {
                    out[(k * d + i) * d + j] = (plus[i * d1 + k] - minus[i * d1 + k]) / (2.0 * eps);
                }
            }
        }
    }

    pub fn eval_f(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        match &self.f {
            Some(f) if !self.outside(x) => f(t, x, y, z),
            _ => 0.0,
        }
    }

    pub fn eval_g(&self, t: f64, x: &[f64], y: f64, out: &mut [f64]) {
        match &self.g {
            Some(g) if !self.outside(x) => g(t, x, y, out),
            _ => out.fill(0.0),
        }
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        if self.outside(x) {
            0.0
        } else {
            (self.psi)(x)
        }
    }

    /// `ā = a − ½σσ*` at `(t, x)`, row-major.
    pub fn reduced_diffusion(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.dim * self.dim];
        self.reduced_diffusion_into(t, x, &mut a);
        a
    }

    /// As [`Self::reduced_diffusion`], writing into `out` (length `d²`).
    pub fn reduced_diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (d, d1) = (self.dim, self.noise_dim);
        let mut stack = [0.0; 16];
        let mut heap = Vec::new();
        let s: &mut [f64] = if d * d1 <= 16 {
            &mut stack[..d * d1]
        } else {
            heap.resize(d * d1, 0.0);
            &mut heap
        };
        self.eval_a(t, x, out);
        self.eval_sigma(t, x, s);
        for i in 0..d {
            for j in 0..d {
                let ss: f64 = (0..d1).map(|k| s[i * d1 + k] * s[j * d1 + k]).sum();
                out[i * d + j] -= 0.5 * ss;
            }
        }
    }

    /// Heat equation `u_t = u_xx` with `ψ = sin(π (x − lo)/(hi − lo))`.
    pub fn heat(lo: f64, hi: f64) -> Self {
        CoefficientSet::new(1, 1)
            .with_initial(move |x| (PI * (x[0] - lo) / (hi - lo)).sin())
            .with_label("heat-sine")
    }

    /// `du = D²u dt + √(2−λ) Du dW` with a smooth bump initial condition on `[0.2, 0.8]`.
    pub fn krylov(lambda: f64) -> Self {
        CoefficientSet::new(1, 1)
            .with_constant_sigma(vec![(2.0 - lambda).sqrt()])
            .with_initial(|x| bump(x[0], KRYLOV_BUMP.0, KRYLOV_BUMP.1))
            .with_label(format!("krylov(lambda={lambda})"))
    }
}

/// Support of the Krylov initial condition.
pub const KRYLOV_BUMP: (f64, f64) = (0.2, 0.8);

/// Smooth compactly supported bump `exp(1 − 1/(1 − z²))`, `z` the affine
/// image of `[lo, hi]` onto `[−1, 1]`; peak value 1 at the midpoint.
pub fn bump(x: f64, lo: f64, hi: f64) -> f64 {
    let z = (2.0 * x - lo - hi) / (hi - lo);
    if z.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - z * z)).exp()
    }
}

/// The drift with its solution argument clamped to `[−n, m]`.
pub fn truncate_nonlinearity(f: &DriftFn, n: f64, m: f64) -> DriftFn {
    assert!(n >= 0.0 && m >= 0.0, "truncation levels must be nonnegative");
    let f = f.clone();
    Arc::new(move |t, x, y, z| f(t, x, y.max(-n).min(m), z))
}
