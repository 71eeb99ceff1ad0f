//! Lagrange finite element spaces of degree 1 and 2 on triangulations:
//! quadrature, assembly of bilinear and linear forms, nodal interpolation,
//! transfer between nested meshes and energy-norm evaluation.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::Triangulation;
use crate::solver::SparseMatrix;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("unsupported polynomial degree {0}; only 1 and 2 are available")]
    UnsupportedDegree(usize),
    #[error("coefficient evaluation failed on element {element}: non-finite value")]
    CoefficientEval { element: usize },
    #[error("target mesh is not a nested refinement of the source mesh")]
    NotNested,
    #[error("coefficient vector length {got} does not match space dof count {want}")]
    LengthMismatch { got: usize, want: usize },
}

/// Symmetric triangle rule with positive weights, exact to the stated degree.
/// Points are barycentric; weights sum to the reference-triangle measure 1/2.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// 7-point degree-5 symmetric rule.
pub fn triangle_rule() -> QuadratureRule {
    let s15 = 15.0_f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let w0 = 9.0 / 80.0;
    let w1 = (155.0 - s15) / 2400.0;
    let w2 = (155.0 + s15) / 2400.0;
    let mut points = vec![[1.0 / 3.0; 3]];
    let mut weights = vec![w0];
    for (a, w) in [(a1, w1), (a2, w2)] {
        let b = 1.0 - 2.0 * a;
        points.push([b, a, a]);
        points.push([a, b, a]);
        points.push([a, a, b]);
        weights.extend([w, w, w]);
    }
    QuadratureRule { points, weights, degree: 5 }
}

/// 3-point Gauss rule on [0,1], exact to degree 5. Returns (t, weight) pairs.
pub fn edge_rule() -> [(f64, f64); 3] {
    let r = (3.0f64 / 5.0).sqrt();
    [
        (0.5 * (1.0 - r), 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 * (1.0 + r), 5.0 / 18.0),
    ]
}

/// Per-element geometry: barycentric gradients and measure.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub coords: [[f64; 2]; 3],
    pub grad_lambda: [[f64; 2]; 3],
    pub area: f64,
}

impl ElementGeometry {
    pub fn new(coords: [[f64; 2]; 3]) -> Self {
        let [p0, p1, p2] = coords;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let area = 0.5 * det;
        let grad_lambda = [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ];
        Self { coords, grad_lambda, area }
    }

    pub fn point(&self, lambda: [f64; 3]) -> [f64; 2] {
        let [p0, p1, p2] = self.coords;
        [
            lambda[0] * p0[0] + lambda[1] * p1[0] + lambda[2] * p2[0],
            lambda[0] * p0[1] + lambda[1] * p1[1] + lambda[2] * p2[1],
        ]
    }

    pub fn barycentric(&self, x: f64, y: f64) -> [f64; 3] {
        let [p0, _, _] = self.coords;
        let g = self.grad_lambda;
        let l1 = g[1][0] * (x - p0[0]) + g[1][1] * (y - p0[1]);
        let l2 = g[2][0] * (x - p0[0]) + g[2][1] * (y - p0[1]);
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Values of the local basis at a barycentric point.
/// For degree 1 only the first 3 entries are meaningful, for degree 2 all 6.
pub fn shape_values(degree: usize, l: [f64; 3]) -> [f64; 6] {
    match degree {
        1 => [l[0], l[1], l[2], 0.0, 0.0, 0.0],
        2 => [
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[1] * l[2],
            4.0 * l[2] * l[0],
            4.0 * l[0] * l[1],
        ],
        _ => unreachable!("degree checked at space construction"),
    }
}

pub fn shape_gradients(degree: usize, geom: &ElementGeometry, l: [f64; 3]) -> [[f64; 2]; 6] {
    let g = geom.grad_lambda;
    match degree {
        1 => [g[0], g[1], g[2], [0.0; 2], [0.0; 2], [0.0; 2]],
        2 => {
            let mut out = [[0.0; 2]; 6];
            for i in 0..3 {
                let c = 4.0 * l[i] - 1.0;
                out[i] = [c * g[i][0], c * g[i][1]];
            }
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                out[3 + i] = [
                    4.0 * (l[j] * g[k][0] + l[k] * g[j][0]),
                    4.0 * (l[j] * g[k][1] + l[k] * g[j][1]),
                ];
            }
            out
        }
        _ => unreachable!(),
    }
}

/// Constant-per-element Hessians of the local basis (zero for degree 1).
pub fn shape_hessians(degree: usize, geom: &ElementGeometry) -> [[[f64; 2]; 2]; 6] {
    let mut out = [[[0.0; 2]; 2]; 6];
    if degree == 1 {
        return out;
    }
    let g = geom.grad_lambda;
    let outer = |a: [f64; 2], b: [f64; 2]| {
        [[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]]
    };
    for i in 0..3 {
        let o = outer(g[i], g[i]);
        for r in 0..2 {
            for c in 0..2 {
                out[i][r][c] = 4.0 * o[r][c];
            }
        }
    }
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let o1 = outer(g[j], g[k]);
        let o2 = outer(g[k], g[j]);
        for r in 0..2 {
            for c in 0..2 {
                out[3 + i][r][c] = 4.0 * (o1[r][c] + o2[r][c]);
            }
        }
    }
    out
}

/// Variable coefficients of the operator −∇·(A∇u) + b·∇u + cu and source f.
/// Evaluators receive the active element id along with the point, so fields
/// may depend on discrete functions or on the initial-mesh piece.
pub struct CoefficientField {
    pub a: Box<dyn Fn(usize, f64, f64) -> [[f64; 2]; 2] + Send + Sync>,
    pub b: Option<Box<dyn Fn(usize, f64, f64) -> [f64; 2] + Send + Sync>>,
    pub c: Option<Box<dyn Fn(usize, f64, f64) -> f64 + Send + Sync>>,
    pub f: Option<Box<dyn Fn(usize, f64, f64) -> f64 + Send + Sync>>,
    /// Row-wise divergence of A, used by the residual term ∇·(A∇u_h).
    pub div_a: DivA,
}

pub enum DivA {
    /// A is piecewise constant; the divergence vanishes.
    Zero,
    Analytic(Box<dyn Fn(usize, f64, f64) -> [f64; 2] + Send + Sync>),
    /// Central finite difference with step 1e-6·h_τ.
    FiniteDifference,
}

impl CoefficientField {
    pub fn laplace() -> Self {
        Self::scaled_laplace(1.0)
    }

    /// A = ε·I, b = 0, c = 0, f = 0.
    pub fn scaled_laplace(eps: f64) -> Self {
        Self {
            a: Box::new(move |_, _, _| [[eps, 0.0], [0.0, eps]]),
            b: None,
            c: None,
            f: None,
            div_a: DivA::Zero,
        }
    }

    pub fn eval_a(&self, e: usize, x: f64, y: f64) -> [[f64; 2]; 2] {
        (self.a)(e, x, y)
    }

    pub fn eval_b(&self, e: usize, x: f64, y: f64) -> [f64; 2] {
        self.b.as_ref().map_or([0.0; 2], |b| b(e, x, y))
    }

    pub fn eval_c(&self, e: usize, x: f64, y: f64) -> f64 {
        self.c.as_ref().map_or(0.0, |c| c(e, x, y))
    }

    pub fn eval_f(&self, e: usize, x: f64, y: f64) -> f64 {
        self.f.as_ref().map_or(0.0, |f| f(e, x, y))
    }

    pub fn eval_div_a(&self, e: usize, x: f64, y: f64, h: f64) -> [f64; 2] {
        match &self.div_a {
            DivA::Zero => [0.0; 2],
            DivA::Analytic(d) => d(e, x, y),
            DivA::FiniteDifference => {
                let s = 1e-6 * h;
                let ax_p = (self.a)(e, x + s, y);
                let ax_m = (self.a)(e, x - s, y);
                let ay_p = (self.a)(e, x, y + s);
                let ay_m = (self.a)(e, x, y - s);
                [
                    (ax_p[0][0] - ax_m[0][0]) / (2.0 * s) + (ay_p[0][1] - ay_m[0][1]) / (2.0 * s),
                    (ax_p[1][0] - ax_m[1][0]) / (2.0 * s) + (ay_p[1][1] - ay_m[1][1]) / (2.0 * s),
                ]
            }
        }
    }
}

/// Continuous Lagrange space of degree 1 or 2 with deterministic numbering:
/// vertex dofs in vertex order, then (degree 2) edge dofs in sorted edge order.
pub struct FeSpace {
    pub mesh: Arc<Triangulation>,
    pub degree: usize,
    pub ndofs: usize,
    /// Active element ids in ascending order.
    pub elems: Vec<usize>,
    elem_index: Vec<usize>,
    elem_dofs: Vec<[usize; 6]>,
    pub is_boundary: Vec<bool>,
    pub dof_coords: Vec<[f64; 2]>,
}

impl FeSpace {
    pub fn build(mesh: Arc<Triangulation>, degree: usize) -> Result<Arc<Self>, FemError> {
        if degree != 1 && degree != 2 {
            return Err(FemError::UnsupportedDegree(degree));
        }
        let nv = mesh.num_vertices();
        let elems: Vec<usize> = mesh.active_elements().collect();
        let mut elem_index = vec![usize::MAX; mesh.num_elements()];
        for (i, &e) in elems.iter().enumerate() {
            elem_index[e] = i;
        }

        let mut edge_dof: HashMap<(usize, usize), usize> = HashMap::new();
        if degree == 2 {
            let mut edges: Vec<(usize, usize)> = Vec::new();
            for &e in &elems {
                let v = mesh.element(e).v;
                for j in 0..3 {
                    let (a, b) = (v[j], v[(j + 1) % 3]);
                    edges.push(if a < b { (a, b) } else { (b, a) });
                }
            }
            edges.sort_unstable();
            edges.dedup();
            for (i, e) in edges.into_iter().enumerate() {
                edge_dof.insert(e, nv + i);
            }
        }
        let ndofs = nv + edge_dof.len();

        let mut dof_coords = vec![[0.0; 2]; ndofs];
        for i in 0..nv {
            let v = mesh.vertex(i);
            dof_coords[i] = [v.x, v.y];
        }
        for (&(a, b), &d) in &edge_dof {
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            dof_coords[d] = [0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)];
        }

        let mut elem_dofs = Vec::with_capacity(elems.len());
        for &e in &elems {
            let v = mesh.element(e).v;
            let mut d = [usize::MAX; 6];
            d[..3].copy_from_slice(&v);
            if degree == 2 {
                for j in 0..3 {
                    let (a, b) = (v[(j + 1) % 3], v[(j + 2) % 3]);
                    let key = if a < b { (a, b) } else { (b, a) };
                    d[3 + j] = edge_dof[&key];
                }
            }
            elem_dofs.push(d);
        }

        let mut is_boundary = vec![false; ndofs];
        for (a, b, _) in mesh.boundary_edges() {
            is_boundary[a] = true;
            is_boundary[b] = true;
            if degree == 2 {
                let key = if a < b { (a, b) } else { (b, a) };
                is_boundary[edge_dof[&key]] = true;
            }
        }

        Ok(Arc::new(Self {
            mesh,
            degree,
            ndofs,
            elems,
            elem_index,
            elem_dofs,
            is_boundary,
            dof_coords,
        }))
    }

    pub fn local_dofs_per_elem(&self) -> usize {
        if self.degree == 1 {
            3
        } else {
            6
        }
    }

    /// Global dofs of active element `e` (id in the mesh).
    pub fn element_dofs(&self, e: usize) -> &[usize] {
        let i = self.elem_index[e];
        &self.elem_dofs[i][..self.local_dofs_per_elem()]
    }

    pub fn geometry(&self, e: usize) -> ElementGeometry {
        ElementGeometry::new(self.mesh.coords(e))
    }

    /// Nodal interpolant of a scalar field.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn(f64, f64) -> f64) -> FeFunction {
        let coeffs = self.dof_coords.iter().map(|p| f(p[0], p[1])).collect();
        FeFunction { space: Arc::clone(self), coeffs }
    }

    pub fn zero_function(self: &Arc<Self>) -> FeFunction {
        FeFunction { space: Arc::clone(self), coeffs: vec![0.0; self.ndofs] }
    }

    pub fn function_from(self: &Arc<Self>, coeffs: Vec<f64>) -> Result<FeFunction, FemError> {
        if coeffs.len() != self.ndofs {
            return Err(FemError::LengthMismatch { got: coeffs.len(), want: self.ndofs });
        }
        Ok(FeFunction { space: Arc::clone(self), coeffs })
    }
}

/// A finite element function: one coefficient per global dof.
#[derive(Clone)]
pub struct FeFunction {
    pub space: Arc<FeSpace>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    /// Value at a point known to lie in active element `e`.
    pub fn eval_on(&self, e: usize, x: f64, y: f64) -> f64 {
        let geom = self.space.geometry(e);
        let l = geom.barycentric(x, y);
        let n = shape_values(self.space.degree, l);
        let dofs = self.space.element_dofs(e);
        dofs.iter().zip(n).map(|(&d, v)| self.coeffs[d] * v).sum()
    }

    pub fn grad_on(&self, e: usize, x: f64, y: f64) -> [f64; 2] {
        let geom = self.space.geometry(e);
        let l = geom.barycentric(x, y);
        let g = shape_gradients(self.space.degree, &geom, l);
        let dofs = self.space.element_dofs(e);
        let mut out = [0.0; 2];
        for (&d, gd) in dofs.iter().zip(g) {
            out[0] += self.coeffs[d] * gd[0];
            out[1] += self.coeffs[d] * gd[1];
        }
        out
    }

    /// Hessian, constant on each element (zero for degree 1).
    pub fn hess_on(&self, e: usize) -> [[f64; 2]; 2] {
        let geom = self.space.geometry(e);
        let h = shape_hessians(self.space.degree, &geom);
        let dofs = self.space.element_dofs(e);
        let mut out = [[0.0; 2]; 2];
        for (&d, hd) in dofs.iter().zip(h) {
            for r in 0..2 {
                for c in 0..2 {
                    out[r][c] += self.coeffs[d] * hd[r][c];
                }
            }
        }
        out
    }

    /// ∫_Ω u_h dx by element quadrature.
    pub fn integral(&self) -> f64 {
        let rule = triangle_rule();
        let mut total = 0.0;
        for &e in &self.space.elems {
            let geom = self.space.geometry(e);
            let scale = geom.area / 0.5;
            let dofs = self.space.element_dofs(e);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let n = shape_values(self.space.degree, *l);
                let v: f64 = dofs.iter().zip(n).map(|(&d, nv)| self.coeffs[d] * nv).sum();
                total += w * scale * v;
            }
        }
        total
    }
}

/// Assembles the matrix of (A∇u,∇v) + (b·∇u,v) + (c u,v) without boundary
/// conditions. Entries accumulate in element order for bit reproducibility.
pub fn assemble_operator(space: &FeSpace, coeffs: &CoefficientField) -> Result<SparseMatrix, FemError> {
    let rule = triangle_rule();
    let nl = space.local_dofs_per_elem();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for &e in &space.elems {
        let geom = space.geometry(e);
        let scale = geom.area / 0.5;
        let dofs = space.element_dofs(e);
        let mut local = [[0.0f64; 6]; 6];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let [x, y] = geom.point(*l);
            let a = coeffs.eval_a(e, x, y);
            let b = coeffs.eval_b(e, x, y);
            let c = coeffs.eval_c(e, x, y);
            if !a.iter().flatten().all(|v| v.is_finite())
                || !b.iter().all(|v| v.is_finite())
                || !c.is_finite()
            {
                return Err(FemError::CoefficientEval { element: e });
            }
            let n = shape_values(space.degree, *l);
            let g = shape_gradients(space.degree, &geom, *l);
            let wq = w * scale;
            for j in 0..nl {
                let agj = [
                    a[0][0] * g[j][0] + a[0][1] * g[j][1],
                    a[1][0] * g[j][0] + a[1][1] * g[j][1],
                ];
                let bgj = b[0] * g[j][0] + b[1] * g[j][1];
                for i in 0..nl {
                    local[i][j] += wq
                        * (agj[0] * g[i][0] + agj[1] * g[i][1] + bgj * n[i] + c * n[j] * n[i]);
                }
            }
        }
        for i in 0..nl {
            for j in 0..nl {
                triplets.push((dofs[i], dofs[j], local[i][j]));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(space.ndofs, &triplets))
}

/// Mass matrix (u, v).
pub fn assemble_mass(space: &FeSpace) -> SparseMatrix {
    let rule = triangle_rule();
    let nl = space.local_dofs_per_elem();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for &e in &space.elems {
        let geom = space.geometry(e);
        let scale = geom.area / 0.5;
        let dofs = space.element_dofs(e);
        let mut local = [[0.0f64; 6]; 6];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let n = shape_values(space.degree, *l);
            let wq = w * scale;
            for i in 0..nl {
                for j in 0..nl {
                    local[i][j] += wq * n[i] * n[j];
                }
            }
        }
        for i in 0..nl {
            for j in 0..nl {
                triplets.push((dofs[i], dofs[j], local[i][j]));
            }
        }
    }
    SparseMatrix::from_triplets(space.ndofs, &triplets)
}

/// Load vector entries ∫ r φ_i with an element-aware source.
pub fn assemble_load_elem(
    space: &FeSpace,
    r: impl Fn(usize, f64, f64) -> f64,
) -> Result<Vec<f64>, FemError> {
    let rule = triangle_rule();
    let nl = space.local_dofs_per_elem();
    let mut out = vec![0.0; space.ndofs];
    for &e in &space.elems {
        let geom = space.geometry(e);
        let scale = geom.area / 0.5;
        let dofs = space.element_dofs(e);
        let mut local = [0.0f64; 6];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let [x, y] = geom.point(*l);
            let rv = r(e, x, y);
            if !rv.is_finite() {
                return Err(FemError::CoefficientEval { element: e });
            }
            let n = shape_values(space.degree, *l);
            for i in 0..nl {
                local[i] += w * scale * rv * n[i];
            }
        }
        for i in 0..nl {
            out[dofs[i]] += local[i];
        }
    }
    Ok(out)
}

pub fn assemble_load(
    space: &FeSpace,
    r: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>, FemError> {
    assemble_load_elem(space, |_, x, y| r(x, y))
}

/// Symmetric elimination of Dirichlet dofs: clears their rows and columns,
/// sets a unit diagonal, moves the lifted values to the right-hand side.
pub fn apply_dirichlet(
    mat: &SparseMatrix,
    rhs: &mut [f64],
    is_boundary: &[bool],
    values: &[f64],
) -> SparseMatrix {
    let n = mat.dim();
    // rhs_i -= sum_{j boundary} A_ij g_j for interior i.
    for i in 0..n {
        if is_boundary[i] {
            continue;
        }
        let mut acc = 0.0;
        for (j, v) in mat.row(i) {
            if is_boundary[j] {
                acc += v * values[j];
            }
        }
        rhs[i] -= acc;
    }
    let mut triplets = Vec::new();
    for i in 0..n {
        if is_boundary[i] {
            triplets.push((i, i, 1.0));
            rhs[i] = values[i];
        } else {
            for (j, v) in mat.row(i) {
                if !is_boundary[j] {
                    triplets.push((i, j, v));
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, &triplets)
}

/// Exact transfer of a finite element function to a space on a nested
/// refinement of its mesh (same degree).
pub fn transfer(u: &FeFunction, fine: &Arc<FeSpace>) -> Result<FeFunction, FemError> {
    let coarse_space = &u.space;
    if !fine.mesh.is_refinement_of(&coarse_space.mesh) {
        return Err(FemError::NotNested);
    }
    let mut coeffs = vec![0.0; fine.ndofs];
    for &e in &fine.elems {
        let anc = fine
            .mesh
            .coarse_ancestor(e, &coarse_space.mesh)
            .ok_or(FemError::NotNested)?;
        for &d in fine.element_dofs(e) {
            let [x, y] = fine.dof_coords[d];
            coeffs[d] = u.eval_on(anc, x, y);
        }
    }
    Ok(FeFunction { space: Arc::clone(fine), coeffs })
}

/// Energy error ‖u − u_h‖_a = √(Σ_τ ∫ A(∇u−∇u_h)·(∇u−∇u_h)) using the
/// exact gradient of u.
pub fn energy_error(
    exact_grad: impl Fn(f64, f64) -> [f64; 2],
    u_h: &FeFunction,
    coeffs: &CoefficientField,
) -> f64 {
    let rule = triangle_rule();
    let space = &u_h.space;
    let mut total = 0.0;
    for &e in &space.elems {
        let geom = space.geometry(e);
        let scale = geom.area / 0.5;
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let [x, y] = geom.point(*l);
            let gu = exact_grad(x, y);
            let gh = u_h.grad_on(e, x, y);
            let d = [gu[0] - gh[0], gu[1] - gh[1]];
            let a = coeffs.eval_a(e, x, y);
            total += w
                * scale
                * (d[0] * (a[0][0] * d[0] + a[0][1] * d[1])
                    + d[1] * (a[1][0] * d[0] + a[1][1] * d[1]));
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    #[test]
    fn triangle_rule_exact_to_degree_5() {
        let rule = triangle_rule();
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 0.5).abs() < 1e-15);
        // ∫_ref x^p y^q = p! q! / (p+q+2)!
        for p in 0..=5u32 {
            for q in 0..=(5 - p) {
                let exact = factorial(p) * factorial(q) / factorial(p + q + 2);
                let approx: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(l, w)| w * l[1].powi(p as i32) * l[2].powi(q as i32))
                    .sum();
                assert!(
                    (approx - exact).abs() <= 1e-14 * exact.max(1.0),
                    "monomial x^{p} y^{q}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn edge_rule_exact_to_degree_5() {
        for p in 0..=5u32 {
            let exact = 1.0 / (p + 1) as f64;
            let approx: f64 = edge_rule()
                .iter()
                .map(|&(t, w)| w * t.powi(p as i32))
                .sum();
            assert!((approx - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn dof_counts() {
        let sq = Arc::new(mesh::two_triangle_square());
        assert_eq!(FeSpace::build(Arc::clone(&sq), 1).unwrap().ndofs, 4);
        assert_eq!(FeSpace::build(Arc::clone(&sq), 2).unwrap().ndofs, 9);
        let rt = Arc::new(mesh::reference_triangle());
        assert_eq!(FeSpace::build(rt, 2).unwrap().ndofs, 6);
        assert!(matches!(
            FeSpace::build(sq, 3),
            Err(FemError::UnsupportedDegree(3))
        ));
    }

    #[test]
    fn reference_stiffness_and_mass_p1() {
        let rt = Arc::new(mesh::reference_triangle());
        let space = FeSpace::build(rt, 1).unwrap();
        let k = assemble_operator(&space, &CoefficientField::laplace()).unwrap();
        let expect = [
            [1.0, -0.5, -0.5],
            [-0.5, 0.5, 0.0],
            [-0.5, 0.0, 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - expect[i][j]).abs() < 1e-14, "K[{i}][{j}]");
            }
        }
        let m = assemble_mass(&space);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 2.0 } else { 1.0 } / 24.0;
                assert!((m.get(i, j) - e).abs() < 1e-15, "M[{i}][{j}]");
            }
        }
    }

    #[test]
    fn zero_coefficients_zero_matrix() {
        let rt = Arc::new(mesh::reference_triangle());
        let space = FeSpace::build(rt, 1).unwrap();
        let field = CoefficientField {
            a: Box::new(|_, _, _| [[0.0; 2]; 2]),
            b: None,
            c: None,
            f: None,
            div_a: DivA::Zero,
        };
        let k = assemble_operator(&space, &field).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn load_vector_examples() {
        let rt = Arc::new(mesh::reference_triangle());
        let space = FeSpace::build(Arc::clone(&rt), 1).unwrap();
        let zero = assemble_load(&space, |_, _| 0.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let one = assemble_load(&space, |_, _| 1.0).unwrap();
        for v in one {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        // Linear source against the analytic moments ∫_ref x φ_i.
        let fx = assemble_load(&space, |x, _| x).unwrap();
        let exact = [1.0 / 24.0, 1.0 / 12.0, 1.0 / 24.0];
        for (v, e) in fx.iter().zip(exact) {
            assert!((v - e).abs() < 1e-14);
        }
    }

    #[test]
    fn operator_symmetric_without_convection() {
        let mut m = mesh::two_triangle_square();
        m = m.uniform_refine().uniform_refine();
        let space = FeSpace::build(Arc::new(m), 2).unwrap();
        let field = CoefficientField {
            a: Box::new(|_, x, y| [[1.0 + x, 0.1], [0.1, 2.0 + y]]),
            b: None,
            c: Some(Box::new(|_, x, _| 1.0 + x)),
            f: None,
            div_a: DivA::FiniteDifference,
        };
        let k = assemble_operator(&space, &field).unwrap();
        let asym = k.max_asymmetry();
        assert!(asym < 1e-13 * k.max_abs(), "asymmetry {asym}");
    }

    #[test]
    fn interpolation_reproduces_degree_n_polynomials() {
        for degree in [1usize, 2] {
            let m = Arc::new(mesh::two_triangle_square().uniform_refine());
            let space = FeSpace::build(m, degree).unwrap();
            let poly = move |x: f64, y: f64| {
                if degree == 1 {
                    1.0 + 2.0 * x - 3.0 * y
                } else {
                    1.0 + 2.0 * x - 3.0 * y + x * y - 0.5 * x * x + 0.25 * y * y
                }
            };
            let u = space.interpolate(poly);
            let rule = triangle_rule();
            for &e in &space.elems {
                let geom = space.geometry(e);
                for l in &rule.points {
                    let [x, y] = geom.point(*l);
                    assert!((u.eval_on(e, x, y) - poly(x, y)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transfer_is_exact_on_nested_meshes() {
        let coarse = Arc::new(mesh::two_triangle_square());
        let fine_mesh = Arc::new(coarse.refine(&[0], 1).unwrap());
        for degree in [1usize, 2] {
            let cs = FeSpace::build(Arc::clone(&coarse), degree).unwrap();
            let fs = FeSpace::build(Arc::clone(&fine_mesh), degree).unwrap();
            let u = cs.interpolate(|x, y| 0.3 + x - 0.7 * y + if degree == 2 { x * y } else { 0.0 });
            let v = transfer(&u, &fs).unwrap();
            for &e in &fs.elems {
                let geom = fs.geometry(e);
                let [x, y] = geom.point([1.0 / 3.0; 3]);
                let anc = fine_mesh.coarse_ancestor(e, &coarse).unwrap();
                assert!((v.eval_on(e, x, y) - u.eval_on(anc, x, y)).abs() < 1e-12);
            }
            // Constants transfer to constants.
            let c = transfer(&cs.interpolate(|_, _| 1.0), &fs).unwrap();
            assert!(c.coeffs.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
        // Non-nested direction is rejected.
        let fs = FeSpace::build(fine_mesh, 1).unwrap();
        let cs = FeSpace::build(coarse, 1).unwrap();
        let w = fs.zero_function();
        assert!(matches!(transfer(&w, &cs), Err(FemError::NotNested)));
    }

    #[test]
    fn energy_error_examples() {
        let m = Arc::new(mesh::two_triangle_square().uniform_refine());
        let space = FeSpace::build(m, 1).unwrap();
        // Interpolant of a linear function is exact.
        let u = space.interpolate(|x, y| 2.0 * x - y);
        let err = energy_error(|_, _| [2.0, -1.0], &u, &CoefficientField::laplace());
        assert!(err < 1e-12);
        // ‖∇ sin(πx)sin(πy)‖ = π/√2 against the zero function; the degree-5
        // rule integrates the trig integrand to quadrature accuracy only.
        let fine = Arc::new(mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 16, 16));
        let z = FeSpace::build(fine, 1).unwrap().zero_function();
        let pi = std::f64::consts::PI;
        let err = energy_error(
            |x, y| [pi * (pi * x).cos() * (pi * y).sin(), pi * (pi * x).sin() * (pi * y).cos()],
            &z,
            &CoefficientField::laplace(),
        );
        assert!((err - pi / 2.0f64.sqrt()).abs() < 1e-6, "got {err}");
    }
}
