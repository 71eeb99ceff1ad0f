//! Problem catalog: coefficient data, nonlinearities, potentials, exact
//! solutions and the strong-form residual source feeding the estimator.

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{CoefficientField, DivA, FeFunction};
use crate::mesh::{self, Triangulation};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem id {0:?}; available: {}", CATALOG_IDS.join(", "))]
    UnknownId(String),
    #[error("eigenvalue variant requires a discrete eigenvalue for the residual")]
    MissingLambda,
    #[error("operation requires the {0:?} variant")]
    WrongVariant(ProblemVariant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemVariant {
    BoundaryValue,
    Nonsymmetric,
    Nonlinear,
    Eigenvalue,
}

pub const CATALOG_IDS: [&str; 5] = [
    "lshape_poisson",
    "conv_diffusion_2d",
    "nonlinear_sine_2d",
    "square_laplace_eigen",
    "singular_potential_eigen",
];

type Scalar = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Vector2 = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
type Matrix2 = Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>;

pub struct ExactSolution {
    pub u: Option<Scalar>,
    pub grad: Option<Vector2>,
    pub lambda: Option<f64>,
}

pub struct ProblemSpec {
    pub id: String,
    pub description: String,
    pub variant: ProblemVariant,
    a: Matrix2,
    b: Option<Vector2>,
    c: Option<Scalar>,
    f_src: Option<Scalar>,
    /// f(x, y, u) and its u-derivative, for the nonlinear variant.
    nonlin: Option<(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>, Scalar3)>,
    potential: Option<Scalar>,
    g: Option<Scalar>,
    pub exact: Option<ExactSolution>,
    /// Spectral shift placing the smallest eigenvalue above the shifted origin.
    eigen_shift: f64,
    initial_mesh: fn() -> Triangulation,
}

type Scalar3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

impl ProblemSpec {
    pub fn is_symmetric(&self) -> bool {
        self.b.is_none()
    }

    pub fn dirichlet(&self, x: f64, y: f64) -> f64 {
        self.g.as_ref().map_or(0.0, |g| g(x, y))
    }

    pub fn initial_mesh(&self) -> Triangulation {
        (self.initial_mesh)()
    }

    pub fn eigen_shift(&self) -> f64 {
        self.eigen_shift
    }

    pub fn nonlinearity(&self, x: f64, y: f64, u: f64) -> f64 {
        let (f, _) = self.nonlin.as_ref().expect("nonlinear variant");
        f(x, y, u)
    }

    pub fn nonlinearity_derivative(&self, x: f64, y: f64, u: f64) -> f64 {
        let (_, fu) = self.nonlin.as_ref().expect("nonlinear variant");
        fu(x, y, u)
    }

    pub fn potential(&self, x: f64, y: f64) -> f64 {
        self.potential.as_ref().map_or(0.0, |v| v(x, y))
    }

    /// Coefficients of the bilinear form for assembly. The eigenvalue
    /// variant uses A = ½I and c = V so that ½(∇u,∇v) + (Vu,v) matches.
    pub fn coefficients(&self) -> CoefficientField {
        match self.variant {
            ProblemVariant::BoundaryValue | ProblemVariant::Nonsymmetric => {
                let a = Arc::clone(&self.a);
                CoefficientField {
                    a: Box::new(move |_, x, y| a(x, y)),
                    b: self.b.as_ref().map(|b| {
                        let b = Arc::clone(b);
                        Box::new(move |_: usize, x: f64, y: f64| b(x, y)) as _
                    }),
                    c: self.c.as_ref().map(|c| {
                        let c = Arc::clone(c);
                        Box::new(move |_: usize, x: f64, y: f64| c(x, y)) as _
                    }),
                    f: self.f_src.as_ref().map(|f| {
                        let f = Arc::clone(f);
                        Box::new(move |_: usize, x: f64, y: f64| f(x, y)) as _
                    }),
                    div_a: DivA::Zero,
                }
            }
            ProblemVariant::Nonlinear => CoefficientField::laplace(),
            ProblemVariant::Eigenvalue => {
                let v = self.potential.clone();
                CoefficientField {
                    a: Box::new(|_, _, _| [[0.5, 0.0], [0.0, 0.5]]),
                    b: None,
                    c: v.map(|v| {
                        Box::new(move |_: usize, x: f64, y: f64| v(x, y)) as _
                    }),
                    f: None,
                    div_a: DivA::Zero,
                }
            }
        }
    }

    /// The part of the element residual that does not involve second
    /// derivatives of u_h: the full residual is r(x) + ∇·(A∇u_h).
    pub fn residual_source(
        &self,
        u_h: &FeFunction,
        lambda: Option<f64>,
    ) -> Result<Box<dyn Fn(usize, f64, f64) -> f64 + '_>, ProblemError> {
        match self.variant {
            ProblemVariant::BoundaryValue | ProblemVariant::Nonsymmetric => {
                let u = u_h.clone();
                let b = self.b.clone();
                let c = self.c.clone();
                let f = self.f_src.clone();
                Ok(Box::new(move |e, x, y| {
                    let mut r = f.as_ref().map_or(0.0, |f| f(x, y));
                    if let Some(b) = &b {
                        let bv = b(x, y);
                        let g = u.grad_on(e, x, y);
                        r -= bv[0] * g[0] + bv[1] * g[1];
                    }
                    if let Some(c) = &c {
                        r -= c(x, y) * u.eval_on(e, x, y);
                    }
                    r
                }))
            }
            ProblemVariant::Nonlinear => {
                let u = u_h.clone();
                let (f, _) = self.nonlin.as_ref().expect("nonlinear data present");
                let f = Arc::clone(f);
                Ok(Box::new(move |e, x, y| -f(x, y, u.eval_on(e, x, y))))
            }
            ProblemVariant::Eigenvalue => {
                let lambda = lambda.ok_or(ProblemError::MissingLambda)?;
                let u = u_h.clone();
                let v = self.potential.clone();
                Ok(Box::new(move |e, x, y| {
                    let uv = u.eval_on(e, x, y);
                    lambda * uv - v.as_ref().map_or(0.0, |v| v(x, y)) * uv
                }))
            }
        }
    }

    /// Coefficients of the Newton linearization −Δ + f_u(x, w).
    pub fn linearized_coefficients(&self, w: &FeFunction) -> CoefficientField {
        assert_eq!(self.variant, ProblemVariant::Nonlinear);
        let (_, fu) = self.nonlin.as_ref().expect("nonlinear data present");
        let fu = Arc::clone(fu);
        let w = w.clone();
        CoefficientField {
            a: Box::new(|_, _, _| [[1.0, 0.0], [0.0, 1.0]]),
            b: None,
            c: Some(Box::new(move |e, x, y| fu(x, y, w.eval_on(e, x, y)))),
            f: None,
            div_a: DivA::Zero,
        }
    }

    /// Poisson problem −Δu = f on the unit square with zero boundary data,
    /// handy for hand-checked estimator and driver examples.
    pub fn poisson_with_source(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            id: "custom_poisson".into(),
            description: "Poisson problem with custom source".into(),
            variant: ProblemVariant::BoundaryValue,
            a: Arc::new(|_, _| [[1.0, 0.0], [0.0, 1.0]]),
            b: None,
            c: None,
            f_src: Some(Arc::new(f)),
            nonlin: None,
            potential: None,
            g: None,
            exact: None,
            eigen_shift: 0.0,
            initial_mesh: mesh::two_triangle_square,
        }
    }

    /// Replaces the Dirichlet boundary data.
    pub fn with_dirichlet(mut self, g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Some(Arc::new(g));
        self
    }

    /// Eigenvalue spec on the unit square with an arbitrary bounded potential.
    pub fn eigen_with_potential(
        v: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: "custom_eigen".into(),
            description: "eigenvalue problem with custom potential".into(),
            variant: ProblemVariant::Eigenvalue,
            a: Arc::new(|_, _| [[0.5, 0.0], [0.0, 0.5]]),
            b: None,
            c: None,
            f_src: None,
            nonlin: None,
            potential: Some(Arc::new(v)),
            g: None,
            exact: None,
            eigen_shift: 0.0,
            initial_mesh: || mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2),
        }
    }
}

/// Exact L-shape corner solution r^{2/3} sin(2θ/3) with θ ∈ [0, 3π/2].
fn lshape_exact(x: f64, y: f64) -> f64 {
    let r = (x * x + y * y).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let mut theta = y.atan2(x);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    r.powf(2.0 / 3.0) * (2.0 * theta / 3.0).sin()
}

fn lshape_exact_grad(x: f64, y: f64) -> [f64; 2] {
    let r = (x * x + y * y).sqrt();
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let mut theta = y.atan2(x);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    let (s, c) = (2.0 * theta / 3.0).sin_cos();
    let dr = 2.0 / 3.0 * r.powf(-1.0 / 3.0) * s;
    let dt = 2.0 / 3.0 * r.powf(-1.0 / 3.0) * c;
    let (st, ct) = theta.sin_cos();
    [dr * ct - dt * st, dr * st + dt * ct]
}

const CONV_EPS: f64 = 1e-2;

fn conv_factors(x: f64, y: f64) -> (f64, f64, f64, f64, f64, f64) {
    let e2 = (2.0 * (x - 1.0) / CONV_EPS).exp();
    let e3 = (3.0 * (y - 1.0) / CONV_EPS).exp();
    let fx = x.powi(3) - e2;
    let dfx = 3.0 * x * x - 2.0 / CONV_EPS * e2;
    let ddfx = 6.0 * x - 4.0 / (CONV_EPS * CONV_EPS) * e2;
    let fy = y * y - e3;
    let dfy = 2.0 * y - 3.0 / CONV_EPS * e3;
    let ddfy = 2.0 - 9.0 / (CONV_EPS * CONV_EPS) * e3;
    (fx, dfx, ddfx, fy, dfy, ddfy)
}

fn conv_exact(x: f64, y: f64) -> f64 {
    let (fx, _, _, fy, _, _) = conv_factors(x, y);
    fx * fy
}

fn conv_exact_grad(x: f64, y: f64) -> [f64; 2] {
    let (fx, dfx, _, fy, dfy, _) = conv_factors(x, y);
    [dfx * fy, fx * dfy]
}

/// f = −ε Δu + b·∇u with b = (2, 3).
fn conv_source(x: f64, y: f64) -> f64 {
    let (fx, dfx, ddfx, fy, dfy, ddfy) = conv_factors(x, y);
    -CONV_EPS * (ddfx * fy + fx * ddfy) + 2.0 * dfx * fy + 3.0 * fx * dfy
}

const SINE_DELTA: f64 = 0.1;

/// u = sin(πx) sin(πy) / √(x² + y² + δ₀²).
fn sine_exact(x: f64, y: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (pi * x).sin() * (pi * y).sin() / (x * x + y * y + SINE_DELTA * SINE_DELTA).sqrt()
}

fn sine_exact_grad(x: f64, y: f64) -> [f64; 2] {
    let pi = std::f64::consts::PI;
    let s = (pi * x).sin() * (pi * y).sin();
    let sx = pi * (pi * x).cos() * (pi * y).sin();
    let sy = pi * (pi * x).sin() * (pi * y).cos();
    let q2 = x * x + y * y + SINE_DELTA * SINE_DELTA;
    let q = q2.sqrt();
    let q3 = q * q2;
    [sx / q - s * x / q3, sy / q - s * y / q3]
}

/// Source making u the exact solution of −Δu + u³ = f:
/// Δ(s·q) = Δs·q + 2∇s·∇q + sΔq with q = (x²+y²+δ₀²)^{-1/2}.
fn sine_source(x: f64, y: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let s = (pi * x).sin() * (pi * y).sin();
    let sx = pi * (pi * x).cos() * (pi * y).sin();
    let sy = pi * (pi * x).sin() * (pi * y).cos();
    let q2 = x * x + y * y + SINE_DELTA * SINE_DELTA;
    let q = 1.0 / q2.sqrt();
    let q3 = q * q * q;
    let q5 = q3 * q * q;
    let lap_s = -2.0 * pi * pi * s;
    let qx = -x * q3;
    let qy = -y * q3;
    let lap_q = -2.0 * q3 + 3.0 * (x * x + y * y) * q5;
    let u = s * q;
    -(lap_s * q + 2.0 * (sx * qx + sy * qy) + s * lap_q) + u * u * u
}

pub fn catalog(id: &str) -> Result<ProblemSpec, ProblemError> {
    match id {
        "lshape_poisson" => Ok(ProblemSpec {
            id: id.into(),
            description: "Poisson on the L-shaped domain with the r^(2/3) corner solution".into(),
            variant: ProblemVariant::BoundaryValue,
            a: Arc::new(|_, _| [[1.0, 0.0], [0.0, 1.0]]),
            b: None,
            c: None,
            f_src: None,
            nonlin: None,
            potential: None,
            g: Some(Arc::new(lshape_exact)),
            exact: Some(ExactSolution {
                u: Some(Arc::new(lshape_exact)),
                grad: Some(Arc::new(lshape_exact_grad)),
                lambda: None,
            }),
            eigen_shift: 0.0,
            initial_mesh: mesh::lshape_mesh,
        }),
        "conv_diffusion_2d" => Ok(ProblemSpec {
            id: id.into(),
            description: "convection-diffusion with eps=1e-2, b=(2,3) and boundary layers".into(),
            variant: ProblemVariant::Nonsymmetric,
            a: Arc::new(|_, _| [[CONV_EPS, 0.0], [0.0, CONV_EPS]]),
            b: Some(Arc::new(|_, _| [2.0, 3.0])),
            c: None,
            f_src: Some(Arc::new(conv_source)),
            nonlin: None,
            potential: None,
            g: Some(Arc::new(conv_exact)),
            exact: Some(ExactSolution {
                u: Some(Arc::new(conv_exact)),
                grad: Some(Arc::new(conv_exact_grad)),
                lambda: None,
            }),
            eigen_shift: 0.0,
            initial_mesh: || mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2),
        }),
        "nonlinear_sine_2d" => Ok(ProblemSpec {
            id: id.into(),
            description: "semilinear -Δu + u³ = f with a regularized 1/r amplitude".into(),
            variant: ProblemVariant::Nonlinear,
            a: Arc::new(|_, _| [[1.0, 0.0], [0.0, 1.0]]),
            b: None,
            c: None,
            f_src: None,
            nonlin: Some((
                Arc::new(|x, y, u: f64| u * u * u - sine_source(x, y)),
                Arc::new(|_, _, u: f64| 3.0 * u * u),
            )),
            potential: None,
            g: None,
            exact: Some(ExactSolution {
                u: Some(Arc::new(sine_exact)),
                grad: Some(Arc::new(sine_exact_grad)),
                lambda: None,
            }),
            eigen_shift: 0.0,
            initial_mesh: || mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2),
        }),
        "square_laplace_eigen" => Ok(ProblemSpec {
            id: id.into(),
            description: "smallest eigenpair of -(1/2)Δ on the unit square, λ = π²".into(),
            variant: ProblemVariant::Eigenvalue,
            a: Arc::new(|_, _| [[0.5, 0.0], [0.0, 0.5]]),
            b: None,
            c: None,
            f_src: None,
            nonlin: None,
            potential: None,
            g: None,
            exact: Some(ExactSolution {
                u: None,
                grad: None,
                lambda: Some(std::f64::consts::PI * std::f64::consts::PI),
            }),
            eigen_shift: 0.0,
            initial_mesh: || mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2),
        }),
        "singular_potential_eigen" => Ok(ProblemSpec {
            id: id.into(),
            description: "-(1/2)Δ - 2/|x| on (-10,10)², Coulomb-like singular potential".into(),
            variant: ProblemVariant::Eigenvalue,
            a: Arc::new(|_, _| [[0.5, 0.0], [0.0, 0.5]]),
            b: None,
            c: None,
            f_src: None,
            nonlin: None,
            potential: Some(Arc::new(|x: f64, y: f64| -2.0 / (x * x + y * y).sqrt())),
            g: None,
            exact: None,
            eigen_shift: -50.0,
            initial_mesh: || mesh::structured_rectangle(-10.0, 10.0, -10.0, 10.0, 4, 4),
        }),
        other => Err(ProblemError::UnknownId(other.to_string())),
    }
}

/// (id, one-line description) pairs in stable catalog order.
pub fn catalog_descriptions() -> Vec<(String, String)> {
    CATALOG_IDS
        .iter()
        .map(|id| {
            let p = catalog(id).expect("catalog id");
            (p.id, p.description)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FeSpace;
    use std::f64::consts::PI;

    #[test]
    fn catalog_contents() {
        for id in CATALOG_IDS {
            assert!(catalog(id).is_ok(), "{id}");
        }
        assert!(matches!(
            catalog("nope"),
            Err(ProblemError::UnknownId(_))
        ));
        // Harmonic exact solution: zero source.
        let l = catalog("lshape_poisson").unwrap();
        assert!(l.f_src.is_none());
        // Layer solution vanishes at the outflow corner.
        assert!(conv_exact(1.0, 1.0).abs() < 1e-14);
        let eig = catalog("square_laplace_eigen").unwrap();
        let lam = eig.exact.unwrap().lambda.unwrap();
        assert!((lam - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn initial_meshes_are_conforming() {
        for id in CATALOG_IDS {
            let p = catalog(id).unwrap();
            p.initial_mesh().check_conforming().unwrap();
        }
    }

    #[test]
    fn residual_source_examples() {
        let sq = Arc::new(mesh::two_triangle_square());
        let space = FeSpace::build(sq, 1).unwrap();

        // Linear variant with u_h = 0: r = f.
        let p = catalog("conv_diffusion_2d").unwrap();
        let z = space.zero_function();
        let r = p.residual_source(&z, None).unwrap();
        let e = space.elems[0];
        assert!((r(e, 0.3, 0.4) - conv_source(0.3, 0.4)).abs() < 1e-12);

        // Nonlinear with f(x,u) = u³ (no source) and u_h ≡ 2: r = −8.
        let p = ProblemSpec {
            nonlin: Some((
                Arc::new(|_, _, u: f64| u * u * u),
                Arc::new(|_, _, u: f64| 3.0 * u * u),
            )),
            ..catalog("nonlinear_sine_2d").unwrap()
        };
        let two = space.interpolate(|_, _| 2.0);
        let r = p.residual_source(&two, None).unwrap();
        assert!((r(e, 0.25, 0.5) + 8.0).abs() < 1e-12);

        // Eigenvalue with V = 0, λ = 1: r = u_h pointwise.
        let p = ProblemSpec::eigen_with_potential(|_, _| 0.0);
        let w = space.interpolate(|x, y| x + 2.0 * y);
        let r = p.residual_source(&w, Some(1.0)).unwrap();
        assert!((r(e, 0.3, 0.25) - w.eval_on(e, 0.3, 0.25)).abs() < 1e-12);
        assert!(matches!(
            p.residual_source(&w, None),
            Err(ProblemError::MissingLambda)
        ));
    }

    #[test]
    fn linearized_coefficients_examples() {
        let p = catalog("nonlinear_sine_2d").unwrap();
        let sq = Arc::new(mesh::two_triangle_square());
        let space = FeSpace::build(sq, 1).unwrap();
        let e = space.elems[0];
        let one = space.interpolate(|_, _| 1.0);
        let cf = p.linearized_coefficients(&one);
        assert!((cf.eval_c(e, 0.3, 0.2) - 3.0).abs() < 1e-14);
        let zero = space.zero_function();
        let cf = p.linearized_coefficients(&zero);
        assert_eq!(cf.eval_c(e, 0.3, 0.2), 0.0);
        // c at points equals 3w² sampled there.
        let w = space.interpolate(|x, y| x - y);
        let cf = p.linearized_coefficients(&w);
        let wv = w.eval_on(e, 0.6, 0.1);
        assert!((cf.eval_c(e, 0.6, 0.1) - 3.0 * wv * wv).abs() < 1e-14);
    }
}
