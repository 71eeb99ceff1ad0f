//! Strong-form consistency of the catalog's exact solutions: automatic
//! second-order differentiation of the closed-form u reproduces the stated
//! source term at randomly sampled points.

use afem2d::problems;

/// Second-order forward-mode dual number in two variables: value, gradient
/// and Hessian (xx, xy, yy) propagate exactly through arithmetic, so the
/// check below needs no finite-difference tolerance.
#[derive(Debug, Clone, Copy)]
struct Dual2 {
    v: f64,
    d: [f64; 2],
    /// [xx, xy, yy]
    h: [f64; 3],
}

impl Dual2 {
    fn var_x(x: f64) -> Self {
        Self { v: x, d: [1.0, 0.0], h: [0.0; 3] }
    }
    fn var_y(y: f64) -> Self {
        Self { v: y, d: [0.0, 1.0], h: [0.0; 3] }
    }
    fn con(c: f64) -> Self {
        Self { v: c, d: [0.0; 2], h: [0.0; 3] }
    }

    /// Chain rule for a scalar map g with derivatives g', g'' at self.v.
    fn map(self, g: f64, dg: f64, ddg: f64) -> Self {
        Self {
            v: g,
            d: [dg * self.d[0], dg * self.d[1]],
            h: [
                ddg * self.d[0] * self.d[0] + dg * self.h[0],
                ddg * self.d[0] * self.d[1] + dg * self.h[1],
                ddg * self.d[1] * self.d[1] + dg * self.h[2],
            ],
        }
    }

    fn sin(self) -> Self {
        self.map(self.v.sin(), self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.map(e, e, e)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.map(s, 0.5 / s, -0.25 / (s * s * s))
    }
    fn powf(self, p: f64) -> Self {
        self.map(
            self.v.powf(p),
            p * self.v.powf(p - 1.0),
            p * (p - 1.0) * self.v.powf(p - 2.0),
        )
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.map(r, -r * r, 2.0 * r * r * r)
    }

    fn laplacian(self) -> f64 {
        self.h[0] + self.h[2]
    }
}

impl std::ops::Add for Dual2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1]],
            h: [self.h[0] + o.h[0], self.h[1] + o.h[1], self.h[2] + o.h[2]],
        }
    }
}

impl std::ops::Sub for Dual2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1]],
            h: [self.h[0] - o.h[0], self.h[1] - o.h[1], self.h[2] - o.h[2]],
        }
    }
}

impl std::ops::Mul for Dual2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
            ],
            h: [
                self.h[0] * o.v + 2.0 * self.d[0] * o.d[0] + self.v * o.h[0],
                self.h[1] * o.v + self.d[0] * o.d[1] + self.d[1] * o.d[0] + self.v * o.h[1],
                self.h[2] * o.v + 2.0 * self.d[1] * o.d[1] + self.v * o.h[2],
            ],
        }
    }
}

impl std::ops::Div for Dual2 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

/// atan2(y, x) as a function of two dual arguments.
fn atan2(y: Dual2, x: Dual2) -> Dual2 {
    let r2 = x.v * x.v + y.v * y.v;
    let fy = x.v / r2;
    let fx = -y.v / r2;
    let fyy = -2.0 * x.v * y.v / (r2 * r2);
    let fxx = 2.0 * x.v * y.v / (r2 * r2);
    let fxy = (y.v * y.v - x.v * x.v) / (r2 * r2);
    // Second-order composition for a binary map f(x, y).
    let di = |i: usize| fx * x.d[i] + fy * y.d[i];
    let hij = |hi: usize, i: usize, j: usize| {
        fxx * x.d[i] * x.d[j]
            + fxy * (x.d[i] * y.d[j] + x.d[j] * y.d[i])
            + fyy * y.d[i] * y.d[j]
            + fx * x.h[hi]
            + fy * y.h[hi]
    };
    Dual2 {
        v: y.v.atan2(x.v),
        d: [di(0), di(1)],
        h: [hij(0, 0, 0), hij(1, 0, 1), hij(2, 1, 1)],
    }
}

/// Deterministic uniform samples in (0, 1) via SplitMix64.
struct Rng(u64);

impl Rng {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}

const N_POINTS: usize = 10_000;

#[test]
fn lshape_solution_is_harmonic_with_matching_gradient() {
    let p = problems::catalog("lshape_poisson").unwrap();
    let exact = p.exact.as_ref().unwrap();
    let (u_ex, g_ex) = (exact.u.as_ref().unwrap(), exact.grad.as_ref().unwrap());
    let mut rng = Rng(1);
    let mut n = 0;
    while n < N_POINTS {
        let x = 2.0 * rng.next() - 1.0;
        let y = 2.0 * rng.next() - 1.0;
        // Stay inside the L (drop the fourth quadrant) and off the corner.
        if (x > 0.0 && y < 0.0) || x * x + y * y < 1e-4 {
            continue;
        }
        n += 1;
        let (dx, dy) = (Dual2::var_x(x), Dual2::var_y(y));
        let r = (dx * dx + dy * dy).sqrt();
        let mut theta = atan2(dy, dx);
        if theta.v < 0.0 {
            theta.v += 2.0 * std::f64::consts::PI;
        }
        let u = r.powf(2.0 / 3.0) * (Dual2::con(2.0 / 3.0) * theta).sin();
        // u matches the catalog closed form.
        assert!((u.v - u_ex(x, y)).abs() <= 1e-8 * (1.0 + u.v.abs()));
        let g = g_ex(x, y);
        for i in 0..2 {
            assert!((u.d[i] - g[i]).abs() <= 1e-8 * (1.0 + u.d[i].abs()));
        }
        // −Δu = f = 0 relative to the size of the second derivatives.
        let scale = u.h[0].abs() + u.h[2].abs() + 1.0;
        assert!(u.laplacian().abs() <= 1e-8 * scale, "Δu = {} at ({x},{y})", u.laplacian());
    }
}

#[test]
fn conv_diffusion_source_matches_strong_form() {
    let p = problems::catalog("conv_diffusion_2d").unwrap();
    let exact = p.exact.as_ref().unwrap();
    let (u_ex, g_ex) = (exact.u.as_ref().unwrap(), exact.grad.as_ref().unwrap());
    let coeffs = p.coefficients();
    let eps = coeffs.eval_a(0, 0.5, 0.5)[0][0];
    let mut rng = Rng(2);
    for _ in 0..N_POINTS {
        let x = rng.next();
        let y = rng.next();
        let (dx, dy) = (Dual2::var_x(x), Dual2::var_y(y));
        let xf = dx * dx * dx - (Dual2::con(2.0 / eps) * (dx - Dual2::con(1.0))).exp();
        let yf = dy * dy - (Dual2::con(3.0 / eps) * (dy - Dual2::con(1.0))).exp();
        let u = xf * yf;
        assert!((u.v - u_ex(x, y)).abs() <= 1e-8 * (1.0 + u.v.abs()));
        let g = g_ex(x, y);
        for i in 0..2 {
            assert!((u.d[i] - g[i]).abs() <= 1e-8 * (1.0 + u.d[i].abs()));
        }
        // −ε Δu + b·∇u = f.
        let b = coeffs.eval_b(0, x, y);
        let lhs = -eps * u.laplacian() + b[0] * u.d[0] + b[1] * u.d[1];
        let f = coeffs.eval_f(0, x, y);
        let scale = eps * (u.h[0].abs() + u.h[2].abs())
            + (b[0] * u.d[0]).abs()
            + (b[1] * u.d[1]).abs()
            + f.abs()
            + 1.0;
        assert!((lhs - f).abs() <= 1e-8 * scale, "mismatch {} at ({x},{y})", lhs - f);
    }
}

#[test]
fn nonlinear_sine_source_matches_strong_form() {
    let p = problems::catalog("nonlinear_sine_2d").unwrap();
    let exact = p.exact.as_ref().unwrap();
    let (u_ex, g_ex) = (exact.u.as_ref().unwrap(), exact.grad.as_ref().unwrap());
    let pi = std::f64::consts::PI;
    let mut rng = Rng(3);
    for _ in 0..N_POINTS {
        let x = rng.next();
        let y = rng.next();
        let (dx, dy) = (Dual2::var_x(x), Dual2::var_y(y));
        let u = (Dual2::con(pi) * dx).sin() * (Dual2::con(pi) * dy).sin()
            / (dx * dx + dy * dy + Dual2::con(0.01)).sqrt();
        assert!((u.v - u_ex(x, y)).abs() <= 1e-8 * (1.0 + u.v.abs()));
        let g = g_ex(x, y);
        for i in 0..2 {
            assert!((u.d[i] - g[i]).abs() <= 1e-8 * (1.0 + u.d[i].abs()));
        }
        // −Δu + u³ = f; the catalog stores f(x, u) = u³ − f_src.
        let f = -p.nonlinearity(x, y, 0.0);
        let lhs = -u.laplacian() + u.v * u.v * u.v;
        let scale = u.h[0].abs() + u.h[2].abs() + f.abs() + 1.0;
        assert!((lhs - f).abs() <= 1e-8 * scale, "mismatch {} at ({x},{y})", lhs - f);
    }
}
