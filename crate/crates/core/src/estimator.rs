//! Residual a posteriori error estimation: element residuals, edge jump
//! residuals, local indicators η²_τ, oscillations osc²_τ and global sums.
//!
//! Each interior edge contributes its full jump term to both adjacent
//! elements, so the global η² counts every interior edge twice. This is a
//! fixed convention; marking and contraction diagnostics are insensitive to
//! it.

use thiserror::Error;

use crate::fem::{edge_rule, triangle_rule, CoefficientField, FeFunction, FemError};
use crate::mesh::Triangulation;
use crate::problems::{ProblemError, ProblemSpec};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Per-element squared indicators and oscillations with cached global sums.
#[derive(Debug, Clone)]
pub struct Indicators {
    per_elem: Vec<(usize, f64)>,
    per_elem_osc: Vec<(usize, f64)>,
    eta2_total: f64,
    osc2_total: f64,
}

impl Indicators {
    pub fn from_parts(per_elem: Vec<(usize, f64)>, per_elem_osc: Vec<(usize, f64)>) -> Self {
        let eta2_total = per_elem.iter().map(|&(_, v)| v).sum();
        let osc2_total = per_elem_osc.iter().map(|&(_, v)| v).sum();
        Self { per_elem, per_elem_osc, eta2_total, osc2_total }
    }

    /// (element id, η²_τ) pairs in element order.
    pub fn per_element(&self) -> &[(usize, f64)] {
        &self.per_elem
    }

    pub fn per_element_osc(&self) -> &[(usize, f64)] {
        &self.per_elem_osc
    }

    pub fn eta2_total(&self) -> f64 {
        self.eta2_total
    }

    pub fn osc2_total(&self) -> f64 {
        self.osc2_total
    }

    /// (η, osc) over a subset of elements, or over everything.
    pub fn global(&self, subset: Option<&[usize]>) -> (f64, f64) {
        match subset {
            None => (self.eta2_total.sqrt(), self.osc2_total.sqrt()),
            Some(ids) => {
                let mut eta2 = 0.0;
                let mut osc2 = 0.0;
                for &id in ids {
                    if let Some(&(_, v)) = self.per_elem.iter().find(|&&(e, _)| e == id) {
                        eta2 += v;
                    }
                    if let Some(&(_, v)) = self.per_elem_osc.iter().find(|&&(e, _)| e == id) {
                        osc2 += v;
                    }
                }
                (eta2.sqrt(), osc2.sqrt())
            }
        }
    }
}

/// Weighted least-squares projection of sampled values onto constants
/// (degree 0) or linear polynomials (degree 1) in the sample coordinates.
/// Returns the projected values at the sample points.
fn project_samples(
    degree: usize,
    points: &[[f64; 2]],
    weights: &[f64],
    values: &[f64],
) -> Vec<f64> {
    if degree == 0 {
        let wsum: f64 = weights.iter().sum();
        let mean: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / wsum;
        return vec![mean; values.len()];
    }
    // Centered coordinates for conditioning.
    let wsum: f64 = weights.iter().sum();
    let cx: f64 = weights.iter().zip(points).map(|(w, p)| w * p[0]).sum::<f64>() / wsum;
    let cy: f64 = weights.iter().zip(points).map(|(w, p)| w * p[1]).sum::<f64>() / wsum;
    // Normal equations for p(x,y) = a + b·(x−cx) + c·(y−cy).
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for ((w, p), v) in weights.iter().zip(points).zip(values) {
        let basis = [1.0, p[0] - cx, p[1] - cy];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += w * basis[i] * basis[j];
            }
            rhs[i] += w * basis[i] * v;
        }
    }
    let sol = solve3(m, rhs);
    points
        .iter()
        .map(|p| sol[0] + sol[1] * (p[0] - cx) + sol[2] * (p[1] - cy))
        .collect()
}

/// 3×3 solve with partial pivoting; falls back to the mean for a singular
/// system (collinear samples).
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for k in 0..3 {
        let piv = (k..3).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(k, piv);
        b.swap(k, piv);
        if m[k][k].abs() < 1e-300 {
            let mean = if m[0][0] != 0.0 { b[0] / m[0][0] } else { 0.0 };
            return [mean, 0.0, 0.0];
        }
        for i in k + 1..3 {
            let f = m[i][k] / m[k][k];
            for j in k..3 {
                m[i][j] -= f * m[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = [0.0f64; 3];
    for i in (0..3).rev() {
        let mut acc = b[i];
        for j in i + 1..3 {
            acc -= m[i][j] * x[j];
        }
        x[i] = acc / m[i][i];
    }
    x
}

/// Computes η²_τ and osc²_τ for every active element:
/// η²_τ = h²_τ‖R_τ‖²_{0,τ} + Σ_{e⊂∂τ interior} h_e‖J_e‖²_{0,e}, with the
/// oscillation subtracting the degree n−1 projections of R_τ and J_e.
pub fn indicators(
    p: &ProblemSpec,
    u_h: &FeFunction,
    lambda: Option<f64>,
) -> Result<Indicators, EstimatorError> {
    let space = &u_h.space;
    let mesh = &space.mesh;
    let coeffs = p.coefficients();
    let source = p.residual_source(u_h, lambda)?;
    let rule = triangle_rule();
    let erule = edge_rule();
    let proj_degree = space.degree - 1;

    let mut per_elem = Vec::with_capacity(space.elems.len());
    let mut per_elem_osc = Vec::with_capacity(space.elems.len());

    for &e in &space.elems {
        let geom = space.geometry(e);
        let h_tau = mesh.diameter(e);
        let scale = geom.area / 0.5;

        // Interior residual R_τ = r + ∇·(A∇u_h) at the volume quadrature.
        let mut pts = Vec::with_capacity(rule.points.len());
        let mut wts = Vec::with_capacity(rule.points.len());
        let mut vals = Vec::with_capacity(rule.points.len());
        let hess = u_h.hess_on(e);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let [x, y] = geom.point(*l);
            let r = source(e, x, y);
            let a = coeffs.eval_a(e, x, y);
            let da = coeffs.eval_div_a(e, x, y, h_tau);
            let g = u_h.grad_on(e, x, y);
            let div_flux = da[0] * g[0]
                + da[1] * g[1]
                + a[0][0] * hess[0][0]
                + a[0][1] * hess[0][1]
                + a[1][0] * hess[1][0]
                + a[1][1] * hess[1][1];
            pts.push([x, y]);
            wts.push(w * scale);
            vals.push(r + div_flux);
        }
        let mut eta2 = 0.0;
        for (w, v) in wts.iter().zip(&vals) {
            eta2 += w * v * v;
        }
        eta2 *= h_tau * h_tau;
        let proj = project_samples(proj_degree, &pts, &wts, &vals);
        let mut osc2 = 0.0;
        for ((w, v), pv) in wts.iter().zip(&vals).zip(&proj) {
            osc2 += w * (v - pv) * (v - pv);
        }
        osc2 *= h_tau * h_tau;

        // Jump terms over the interior edges of ∂τ, full value to this element.
        let v = mesh.element(e).v;
        for j in 0..3 {
            let (va, vb) = (v[j], v[(j + 1) % 3]);
            if mesh.is_boundary_edge(va, vb) {
                continue;
            }
            let adj = mesh.edge_adjacent(va, vb);
            let other = adj.iter().copied().find(|&n| n != e).expect("interior edge");
            let (pa, pb) = (mesh.vertex(va), mesh.vertex(vb));
            let tangent = [pb.x - pa.x, pb.y - pa.y];
            let len = (tangent[0] * tangent[0] + tangent[1] * tangent[1]).sqrt();
            let normal = [tangent[1] / len, -tangent[0] / len];

            let mut epts = Vec::with_capacity(erule.len());
            let mut ewts = Vec::with_capacity(erule.len());
            let mut evals = Vec::with_capacity(erule.len());
            for &(t, w) in &erule {
                let x = pa.x + t * tangent[0];
                let y = pa.y + t * tangent[1];
                let flux = |el: usize| {
                    let a = coeffs.eval_a(el, x, y);
                    let g = u_h.grad_on(el, x, y);
                    [
                        a[0][0] * g[0] + a[0][1] * g[1],
                        a[1][0] * g[0] + a[1][1] * g[1],
                    ]
                };
                let fe = flux(e);
                let fo = flux(other);
                let jump = (fe[0] - fo[0]) * normal[0] + (fe[1] - fo[1]) * normal[1];
                epts.push([t, 0.0]);
                ewts.push(w * len);
                evals.push(jump);
            }
            let h_e = len;
            let mut j2 = 0.0;
            for (w, v) in ewts.iter().zip(&evals) {
                j2 += w * v * v;
            }
            eta2 += h_e * j2;
            let proj = project_samples(proj_degree, &epts, &ewts, &evals);
            let mut jo2 = 0.0;
            for ((w, v), pv) in ewts.iter().zip(&evals).zip(&proj) {
                jo2 += w * (v - pv) * (v - pv);
            }
            osc2 += h_e * jo2;
        }

        per_elem.push((e, eta2));
        per_elem_osc.push((e, osc2));
    }
    Ok(Indicators::from_parts(per_elem, per_elem_osc))
}

/// Per-element osc²_τ only.
pub fn oscillation(
    p: &ProblemSpec,
    u_h: &FeFunction,
    lambda: Option<f64>,
) -> Result<Vec<(usize, f64)>, EstimatorError> {
    Ok(indicators(p, u_h, lambda)?.per_elem_osc)
}

/// Coefficient oscillation osc_h(A,τ): sup-norm deviation of div A on τ and
/// of A on the side-neighbor patch ω_τ from their best constants, sampled at
/// quadrature points and vertices. Returns per-element values and the max.
pub fn coefficient_oscillation(
    coeffs: &CoefficientField,
    mesh: &Triangulation,
) -> (Vec<(usize, f64)>, f64) {
    let rule = triangle_rule();
    let sample_elem = |e: usize, a_min: &mut [[f64; 2]; 2], a_max: &mut [[f64; 2]; 2]| {
        let geom = crate::fem::ElementGeometry::new(mesh.coords(e));
        let mut points: Vec<[f64; 2]> = rule.points.iter().map(|l| geom.point(*l)).collect();
        points.extend_from_slice(&geom.coords);
        for [x, y] in points {
            let a = coeffs.eval_a(e, x, y);
            for r in 0..2 {
                for c in 0..2 {
                    a_min[r][c] = a_min[r][c].min(a[r][c]);
                    a_max[r][c] = a_max[r][c].max(a[r][c]);
                }
            }
        }
    };

    let mut out = Vec::new();
    let mut max_osc = 0.0f64;
    for e in mesh.active_elements() {
        let h = mesh.diameter(e);
        // div A deviation on τ itself.
        let geom = crate::fem::ElementGeometry::new(mesh.coords(e));
        let mut d_min = [f64::INFINITY; 2];
        let mut d_max = [f64::NEG_INFINITY; 2];
        let mut points: Vec<[f64; 2]> = rule.points.iter().map(|l| geom.point(*l)).collect();
        points.extend_from_slice(&geom.coords);
        for [x, y] in points {
            let d = coeffs.eval_div_a(e, x, y, h);
            for k in 0..2 {
                d_min[k] = d_min[k].min(d[k]);
                d_max[k] = d_max[k].max(d[k]);
            }
        }
        let dev_div = (0..2).map(|k| 0.5 * (d_max[k] - d_min[k])).fold(0.0f64, f64::max);

        // A deviation on the patch ω_τ (τ plus side neighbors).
        let mut a_min = [[f64::INFINITY; 2]; 2];
        let mut a_max = [[f64::NEG_INFINITY; 2]; 2];
        sample_elem(e, &mut a_min, &mut a_max);
        let v = mesh.element(e).v;
        for j in 0..3 {
            for &n in mesh.edge_adjacent(v[j], v[(j + 1) % 3]) {
                if n != e {
                    sample_elem(n, &mut a_min, &mut a_max);
                }
            }
        }
        let mut dev_a = 0.0f64;
        for r in 0..2 {
            for c in 0..2 {
                dev_a = dev_a.max(0.5 * (a_max[r][c] - a_min[r][c]));
            }
        }

        let osc2 = h * h * (dev_div * dev_div + dev_a * dev_a / (h * h));
        let osc = osc2.sqrt();
        max_osc = max_osc.max(osc);
        out.push((e, osc));
    }
    (out, max_osc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{DivA, FeSpace};
    use crate::mesh;
    use crate::problems;
    use std::sync::Arc;

    #[test]
    fn zero_solution_zero_source_gives_zero_indicators() {
        let p = problems::catalog("lshape_poisson").unwrap();
        let m = Arc::new(p.initial_mesh());
        let space = FeSpace::build(m, 1).unwrap();
        let z = space.zero_function();
        let ind = indicators(&p, &z, None).unwrap();
        assert_eq!(ind.eta2_total(), 0.0);
        assert_eq!(ind.osc2_total(), 0.0);
    }

    #[test]
    fn unit_source_on_square_hand_value() {
        // A=I, f=1, u_h=0 on the 2-triangle square: η²_τ = h²_τ·|τ| = 2·(1/2).
        let p = problems::ProblemSpec::poisson_with_source(|_, _| 1.0);
        let m = Arc::new(mesh::two_triangle_square());
        let space = FeSpace::build(m, 1).unwrap();
        let z = space.zero_function();
        let ind = indicators(&p, &z, None).unwrap();
        for &(_, eta2) in ind.per_element() {
            assert!((eta2 - 1.0).abs() < 1e-12, "{eta2}");
        }
        let (eta, _) = ind.global(None);
        assert!((eta - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn linear_solution_has_no_jumps() {
        let p = problems::ProblemSpec::poisson_with_source(|_, _| 0.0);
        let m = Arc::new(mesh::two_triangle_square());
        let space = FeSpace::build(m, 1).unwrap();
        let u = space.interpolate(|x, y| 3.0 * x - 2.0 * y);
        let ind = indicators(&p, &u, None).unwrap();
        assert!(ind.eta2_total() < 1e-26);
    }

    #[test]
    fn oscillation_examples() {
        // Constant residual, n=1: projection is exact.
        let p = problems::ProblemSpec::poisson_with_source(|_, _| 5.0);
        let m = Arc::new(mesh::reference_triangle());
        let space = FeSpace::build(Arc::clone(&m), 1).unwrap();
        let z = space.zero_function();
        let ind = indicators(&p, &z, None).unwrap();
        assert!(ind.osc2_total() < 1e-26);

        // Linear residual r(x) = x: osc² = h²·∫(x − 1/3)² = 2·(1/36).
        let p = problems::ProblemSpec::poisson_with_source(|x, _| x);
        let ind = indicators(&p, &z, None).unwrap();
        let osc2 = ind.osc2_total();
        assert!((osc2 - 2.0 / 36.0).abs() < 1e-12, "{osc2}");
    }

    #[test]
    fn oscillation_bounded_by_indicator() {
        let p = problems::catalog("conv_diffusion_2d").unwrap();
        let m = Arc::new(p.initial_mesh().uniform_refine());
        for degree in [1, 2] {
            let space = FeSpace::build(Arc::clone(&m), degree).unwrap();
            let u = space.interpolate(|x, y| x * y * (1.0 - x));
            let ind = indicators(&p, &u, None).unwrap();
            for (&(_, eta2), &(_, osc2)) in
                ind.per_element().iter().zip(ind.per_element_osc())
            {
                assert!(osc2 <= eta2 * (1.0 + 1e-12) + 1e-300, "osc {osc2} > eta {eta2}");
            }
            let (eta, osc) = ind.global(None);
            assert!(
                (eta * eta - ind.eta2_total()).abs() <= 1e-12 * ind.eta2_total(),
                "cached sum mismatch"
            );
            assert!(osc <= eta);
        }
    }

    #[test]
    fn global_subset_additivity() {
        let p = problems::ProblemSpec::poisson_with_source(|x, y| x + y);
        let m = Arc::new(mesh::two_triangle_square().uniform_refine());
        let space = FeSpace::build(m, 1).unwrap();
        let z = space.zero_function();
        let ind = indicators(&p, &z, None).unwrap();
        let ids: Vec<usize> = ind.per_element().iter().map(|&(e, _)| e).collect();
        let (half1, _) = ind.global(Some(&ids[..2]));
        let (half2, _) = ind.global(Some(&ids[2..]));
        let (all, _) = ind.global(None);
        assert!((half1 * half1 + half2 * half2 - all * all).abs() < 1e-12 * all * all);
        let (single, _) = ind.global(Some(&ids[..1]));
        assert!((single * single - ind.per_element()[0].1).abs() < 1e-15);
    }

    #[test]
    fn coefficient_oscillation_cases() {
        let m = mesh::reference_triangle();
        let constant = CoefficientField::laplace();
        let (per, max) = coefficient_oscillation(&constant, &m);
        assert_eq!(per.len(), 1);
        assert_eq!(max, 0.0);

        // A = diag(1+x, 1): deviation is half the x-range over the patch.
        let varying = CoefficientField {
            a: Box::new(|_, x, _| [[1.0 + x, 0.0], [0.0, 1.0]]),
            b: None,
            c: None,
            f: None,
            div_a: DivA::FiniteDifference,
        };
        let (_, max) = coefficient_oscillation(&varying, &m);
        assert!((max - 0.5).abs() < 1e-9, "{max}");

        // Uniform refinement roughly halves the reported maximum.
        let mut s = mesh::two_triangle_square();
        s = s.uniform_refine().uniform_refine();
        let (_, coarse) = coefficient_oscillation(&varying, &s);
        let fine_mesh = s.uniform_refine().uniform_refine();
        let (_, fine) = coefficient_oscillation(&varying, &fine_mesh);
        let ratio = coarse / fine;
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }
}
