//! Conforming 2D triangulations with newest-vertex bisection.
//!
//! Elements store their vertices so that the refinement edge is the one
//! opposite local vertex 0. Bisection inserts the midpoint of that edge and
//! produces two children whose refinement edges are the other two parent
//! edges, which keeps the number of similarity classes finite. Refining a
//! marked set completes recursively so the output mesh is again conforming.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("vertex index {0} out of range")]
    BadVertexIndex(usize),
    #[error("element {0} has repeated vertex ids")]
    RepeatedVertex(usize),
    #[error("element {0} has non-positive signed area {1:.3e}")]
    DegenerateElement(usize, f64),
    #[error("vertex {0} is not referenced by any element")]
    DanglingVertex(usize),
    #[error("edge ({0},{1}) is shared by more than two elements")]
    NonConforming(usize, usize),
    #[error("boundary edge list does not match mesh topology at edge ({0},{1})")]
    BoundaryMismatch(usize, usize),
    #[error("non-finite vertex coordinate at vertex {0}")]
    NonFiniteCoordinate(usize),
    #[error("unknown or inactive element id {0}")]
    UnknownElement(usize),
    #[error("completion recursion exceeded depth {0}; initial labeling is incompatible")]
    CompletionDepth(usize),
    #[error("complexity ratio undefined: no elements were marked")]
    NoMarkedElements,
    #[error("refinement history too short")]
    HistoryTooShort,
    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct Element {
    /// Vertex ids; the refinement edge is (v[1], v[2]).
    pub v: [usize; 3],
    pub parent: Option<usize>,
    pub children: Option<[usize; 2]>,
    pub generation: u32,
    /// Ancestor element id in the initial mesh.
    pub ancestor: usize,
}

/// Min angle and the deduplicated set of distinct angles over active elements.
#[derive(Debug, Clone)]
pub struct MeshQuality {
    pub min_angle: f64,
    pub distinct_angles: Vec<f64>,
    pub element_count: usize,
    pub vertex_count: usize,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    vertices: Vec<Vertex>,
    elements: Vec<Element>,
    active: Vec<bool>,
    active_count: usize,
    /// Undirected edge -> boundary marker, for edges of the active mesh.
    boundary: HashMap<(usize, usize), i32>,
    /// Undirected edge -> adjacent active elements (1 or 2).
    edge_elems: HashMap<(usize, usize), Vec<usize>>,
    /// Undirected edge -> midpoint vertex id, shared across refinements.
    midpoints: HashMap<(usize, usize), usize>,
    initial_elements: usize,
}

impl Triangulation {
    /// Builds a triangulation from raw vertex/triangle/boundary lists.
    ///
    /// The refinement edge of each input triangle is its longest edge, ties
    /// broken by the smallest opposite-vertex id. Input triangles must be
    /// positively oriented and conforming.
    pub fn from_description(
        vertices: Vec<Vertex>,
        triangles: &[[usize; 3]],
        boundary_edges: &[(usize, usize, i32)],
    ) -> Result<Self, MeshError> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.x.is_finite() || !v.y.is_finite() {
                return Err(MeshError::NonFiniteCoordinate(i));
            }
        }
        let nv = vertices.len();
        let mut used = vec![false; nv];
        let mut elements = Vec::with_capacity(triangles.len());
        for (i, t) in triangles.iter().enumerate() {
            for &vi in t {
                if vi >= nv {
                    return Err(MeshError::BadVertexIndex(vi));
                }
                used[vi] = true;
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MeshError::RepeatedVertex(i));
            }
            let area = signed_area(&vertices, *t);
            if !(area > 1e-300) || !area.is_finite() {
                return Err(MeshError::DegenerateElement(i, area));
            }
            // Longest edge; ties by smallest opposite-vertex id. Edge j is
            // opposite local vertex j.
            let mut best = 0usize;
            let mut best_len = -1.0f64;
            for j in 0..3 {
                let a = vertices[t[(j + 1) % 3]];
                let b = vertices[t[(j + 2) % 3]];
                let len = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                let tie = (len - best_len).abs() <= 1e-12 * len.max(best_len);
                if len > best_len && !tie || (tie && t[j] < t[best]) {
                    best = j;
                    best_len = len;
                }
            }
            // Cyclic rotation keeps orientation.
            let v = [t[best], t[(best + 1) % 3], t[(best + 2) % 3]];
            elements.push(Element {
                v,
                parent: None,
                children: None,
                generation: 0,
                ancestor: i,
            });
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(MeshError::DanglingVertex(i));
        }

        let mut edge_elems: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, e) in elements.iter().enumerate() {
            for j in 0..3 {
                let k = edge_key(e.v[j], e.v[(j + 1) % 3]);
                let adj = edge_elems.entry(k).or_default();
                adj.push(i);
                if adj.len() > 2 {
                    return Err(MeshError::NonConforming(k.0, k.1));
                }
            }
        }
        let mut boundary = HashMap::new();
        for &(a, b, m) in boundary_edges {
            if a >= nv {
                return Err(MeshError::BadVertexIndex(a));
            }
            if b >= nv {
                return Err(MeshError::BadVertexIndex(b));
            }
            boundary.insert(edge_key(a, b), m);
        }
        for (k, adj) in &edge_elems {
            let on_boundary = boundary.contains_key(k);
            if (adj.len() == 1) != on_boundary {
                return Err(MeshError::BoundaryMismatch(k.0, k.1));
            }
        }
        let n = elements.len();
        Ok(Self {
            vertices,
            elements,
            active: vec![true; n],
            active_count: n,
            boundary,
            edge_elems,
            midpoints: HashMap::new(),
            initial_elements: n,
        })
    }

    /// Parses the mesh text format: header `nv ne nb`, then `x y` lines,
    /// `v0 v1 v2` lines and `va vb marker` boundary lines.
    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut tokens = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                tokens.push((ln + 1, tok));
            }
        }
        fn next<'a>(
            tokens: &[(usize, &'a str)],
            pos: &mut usize,
            what: &str,
        ) -> Result<(usize, &'a str), MeshError> {
            let t = tokens.get(*pos).copied().ok_or_else(|| MeshError::Parse {
                line: tokens.last().map_or(0, |t| t.0),
                msg: format!("unexpected end of input, expected {what}"),
            })?;
            *pos += 1;
            Ok(t)
        }
        fn tok<T: std::str::FromStr>(
            tokens: &[(usize, &str)],
            pos: &mut usize,
            what: &str,
        ) -> Result<T, MeshError> {
            let (ln, t) = next(tokens, pos, what)?;
            t.parse().map_err(|_| MeshError::Parse {
                line: ln,
                msg: format!("bad {what}: {t:?}"),
            })
        }
        let mut pos = 0usize;
        let nv: usize = tok(&tokens, &mut pos, "vertex count")?;
        let ne: usize = tok(&tokens, &mut pos, "element count")?;
        let nb: usize = tok(&tokens, &mut pos, "boundary edge count")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let x: f64 = tok(&tokens, &mut pos, "x coordinate")?;
            let y: f64 = tok(&tokens, &mut pos, "y coordinate")?;
            vertices.push(Vertex { x, y });
        }
        let mut triangles = Vec::with_capacity(ne);
        for _ in 0..ne {
            triangles.push([
                tok(&tokens, &mut pos, "vertex id")?,
                tok(&tokens, &mut pos, "vertex id")?,
                tok(&tokens, &mut pos, "vertex id")?,
            ]);
        }
        let mut bnd = Vec::with_capacity(nb);
        for _ in 0..nb {
            let a: usize = tok(&tokens, &mut pos, "boundary vertex id")?;
            let b: usize = tok(&tokens, &mut pos, "boundary vertex id")?;
            let m: i32 = tok(&tokens, &mut pos, "boundary marker")?;
            bnd.push((a, b, m));
        }
        Self::from_description(vertices, &triangles, &bnd)
    }

    /// Writes the active mesh in the text format accepted by [`parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut bnd: Vec<_> = self.boundary.iter().map(|(&(a, b), &m)| (a, b, m)).collect();
        bnd.sort_unstable();
        let actives: Vec<usize> = self.active_elements().collect();
        let _ = writeln!(out, "{} {} {}", self.vertices.len(), actives.len(), bnd.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{} {}", fmt_f64(v.x), fmt_f64(v.y));
        }
        for e in &actives {
            let v = self.elements[*e].v;
            let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
        }
        for (a, b, m) in bnd {
            let _ = writeln!(out, "{a} {b} {m}");
        }
        out
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_active(&self) -> usize {
        self.active_count
    }

    pub fn num_initial(&self) -> usize {
        self.initial_elements
    }

    pub fn vertex(&self, i: usize) -> Vertex {
        self.vertices[i]
    }

    pub fn element(&self, e: usize) -> &Element {
        &self.elements[e]
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn is_active(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn active_elements(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.elements.len()).filter(move |&e| self.active[e])
    }

    pub fn coords(&self, e: usize) -> [[f64; 2]; 3] {
        let v = self.elements[e].v;
        [
            [self.vertices[v[0]].x, self.vertices[v[0]].y],
            [self.vertices[v[1]].x, self.vertices[v[1]].y],
            [self.vertices[v[2]].x, self.vertices[v[2]].y],
        ]
    }

    pub fn area(&self, e: usize) -> f64 {
        signed_area(&self.vertices, self.elements[e].v)
    }

    /// Element diameter: the longest edge length.
    pub fn diameter(&self, e: usize) -> f64 {
        let c = self.coords(e);
        let mut h: f64 = 0.0;
        for j in 0..3 {
            let a = c[j];
            let b = c[(j + 1) % 3];
            h = h.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
        h
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        ((pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2)).sqrt()
    }

    pub fn is_boundary_edge(&self, a: usize, b: usize) -> bool {
        self.boundary.contains_key(&edge_key(a, b))
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = (usize, usize, i32)> + '_ {
        self.boundary.iter().map(|(&(a, b), &m)| (a, b, m))
    }

    /// Active elements adjacent to the undirected edge (a, b).
    pub fn edge_adjacent(&self, a: usize, b: usize) -> &[usize] {
        self.edge_elems
            .get(&edge_key(a, b))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn refinement_edge(&self, e: usize) -> (usize, usize) {
        let v = self.elements[e].v;
        edge_key(v[1], v[2])
    }

    fn other_active_on(&self, key: (usize, usize), e: usize) -> Option<usize> {
        self.edge_elems
            .get(&key)?
            .iter()
            .copied()
            .find(|&n| n != e)
    }

    fn midpoint_of(&mut self, key: (usize, usize)) -> usize {
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let (a, b) = (self.vertices[key.0], self.vertices[key.1]);
        let m = self.vertices.len();
        self.vertices.push(Vertex {
            x: 0.5 * (a.x + b.x),
            y: 0.5 * (a.y + b.y),
        });
        self.midpoints.insert(key, m);
        if let Some(marker) = self.boundary.remove(&key) {
            self.boundary.insert(edge_key(key.0, m), marker);
            self.boundary.insert(edge_key(m, key.1), marker);
        }
        m
    }

    fn detach_edges(&mut self, e: usize) {
        let v = self.elements[e].v;
        for j in 0..3 {
            let k = edge_key(v[j], v[(j + 1) % 3]);
            if let Some(adj) = self.edge_elems.get_mut(&k) {
                adj.retain(|&x| x != e);
                if adj.is_empty() {
                    self.edge_elems.remove(&k);
                }
            }
        }
    }

    fn attach_edges(&mut self, e: usize) {
        let v = self.elements[e].v;
        for j in 0..3 {
            let k = edge_key(v[j], v[(j + 1) % 3]);
            self.edge_elems.entry(k).or_default().push(e);
        }
    }

    /// Raw bisection of a single active element through midpoint `m` of its
    /// refinement edge. Caller is responsible for conformity.
    fn split(&mut self, e: usize, m: usize) {
        debug_assert!(self.active[e]);
        let Element { v: [v0, v1, v2], generation, ancestor, .. } = self.elements[e];
        self.detach_edges(e);
        self.active[e] = false;
        self.active_count -= 1;
        let base = self.elements.len();
        // Children keep positive orientation; their refinement edges are the
        // two non-refinement edges of the parent.
        for v in [[m, v0, v1], [m, v2, v0]] {
            self.elements.push(Element {
                v,
                parent: Some(e),
                children: None,
                generation: generation + 1,
                ancestor,
            });
            self.active.push(true);
            self.active_count += 1;
        }
        self.elements[e].children = Some([base, base + 1]);
        self.attach_edges(base);
        self.attach_edges(base + 1);
    }

    /// Bisects `e` together with its refinement-edge neighbor, recursively
    /// making the neighbor compatible first.
    fn bisect_compat(&mut self, e: usize, depth: usize, cap: usize) -> Result<(), MeshError> {
        if depth > cap {
            return Err(MeshError::CompletionDepth(cap));
        }
        debug_assert!(self.active[e]);
        let key = self.refinement_edge(e);
        match self.other_active_on(key, e) {
            None => {
                let m = self.midpoint_of(key);
                self.split(e, m);
            }
            Some(n) => {
                let n = if self.refinement_edge(n) == key {
                    n
                } else {
                    self.bisect_compat(n, depth + 1, cap)?;
                    let n2 = self
                        .other_active_on(key, e)
                        .expect("completion must leave a neighbor on the shared edge");
                    debug_assert_eq!(self.refinement_edge(n2), key);
                    n2
                };
                let m = self.midpoint_of(key);
                self.split(e, m);
                self.split(n, m);
            }
        }
        Ok(())
    }

    fn ensure_bisected(&mut self, e: usize, times: u32, cap: usize) -> Result<(), MeshError> {
        if times == 0 {
            return Ok(());
        }
        if self.active[e] {
            self.bisect_compat(e, 0, cap)?;
        }
        let [c1, c2] = self.elements[e].children.expect("bisected element has children");
        self.ensure_bisected(c1, times - 1, cap)?;
        self.ensure_bisected(c2, times - 1, cap)?;
        Ok(())
    }

    /// Bisects every marked element at least `b` times and completes to a
    /// conforming mesh. Returns a new triangulation; `self` is unchanged.
    pub fn refine(&self, marked: &[usize], b: u32) -> Result<Self, MeshError> {
        let mut out = self.clone();
        for &e in marked {
            if e >= self.elements.len() || !self.active[e] {
                return Err(MeshError::UnknownElement(e));
            }
        }
        let cap = (self.active_count + 64).min(100_000);
        for &e in marked {
            out.ensure_bisected(e, b, cap)?;
        }
        debug_assert!(out.check_conforming().is_ok());
        Ok(out)
    }

    pub fn uniform_refine(&self) -> Self {
        let all: Vec<usize> = self.active_elements().collect();
        self.refine(&all, 1).expect("uniform refinement cannot fail")
    }

    /// Edge-table audit: every interior edge has exactly two adjacent active
    /// elements, every boundary edge exactly one.
    pub fn check_conforming(&self) -> Result<(), MeshError> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for e in self.active_elements() {
            let v = self.elements[e].v;
            for j in 0..3 {
                *count.entry(edge_key(v[j], v[(j + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (k, c) in &count {
            if *c > 2 {
                return Err(MeshError::NonConforming(k.0, k.1));
            }
            if (*c == 1) != self.boundary.contains_key(k) {
                return Err(MeshError::BoundaryMismatch(k.0, k.1));
            }
        }
        Ok(())
    }

    pub fn quality(&self) -> MeshQuality {
        let mut angles = Vec::with_capacity(3 * self.active_count);
        for e in self.active_elements() {
            let c = self.coords(e);
            for j in 0..3 {
                let p = c[j];
                let q = c[(j + 1) % 3];
                let r = c[(j + 2) % 3];
                let u = [q[0] - p[0], q[1] - p[1]];
                let w = [r[0] - p[0], r[1] - p[1]];
                let cross = u[0] * w[1] - u[1] * w[0];
                let dot = u[0] * w[0] + u[1] * w[1];
                angles.push(cross.atan2(dot));
            }
        }
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min_angle = angles.first().copied().unwrap_or(0.0);
        let mut distinct: Vec<f64> = Vec::new();
        for a in angles {
            if distinct.last().map_or(true, |&d| (a - d).abs() > 1e-12) {
                distinct.push(a);
            }
        }
        MeshQuality {
            min_angle,
            distinct_angles: distinct,
            element_count: self.active_count,
            vertex_count: self.vertices.len(),
        }
    }

    /// True when `self` was produced from `coarse` by refinement: the two
    /// share genealogy and every active element here descends from (or is)
    /// an active element of `coarse`.
    pub fn is_refinement_of(&self, coarse: &Self) -> bool {
        if coarse.elements.len() > self.elements.len() {
            return false;
        }
        for (a, b) in coarse.elements.iter().zip(&self.elements) {
            if a.v != b.v {
                return false;
            }
        }
        self.active_elements().all(|e| self.coarse_ancestor(e, coarse).is_some())
    }

    /// The active element of `coarse` containing active element `e` of `self`.
    pub fn coarse_ancestor(&self, e: usize, coarse: &Self) -> Option<usize> {
        let mut cur = e;
        loop {
            if cur < coarse.elements.len() && coarse.active[cur] {
                return Some(cur);
            }
            cur = self.elements[cur].parent?;
        }
    }
}

fn signed_area(vertices: &[Vertex], v: [usize; 3]) -> f64 {
    let a = vertices[v[0]];
    let b = vertices[v[1]];
    let c = vertices[v[2]];
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
}

/// Shortest representation that round-trips through `parse`.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// (#T_k − #T₀) / Σ_{j<k} #M_j over a refinement history of
/// (active element count, marked count) pairs.
pub fn complexity_ratio(history: &[(usize, usize)]) -> Result<f64, MeshError> {
    if history.len() < 2 {
        return Err(MeshError::HistoryTooShort);
    }
    let t0 = history[0].0;
    let tk = history[history.len() - 1].0;
    let marked: usize = history[..history.len() - 1].iter().map(|&(_, m)| m).sum();
    if marked == 0 {
        return Err(MeshError::NoMarkedElements);
    }
    Ok((tk - t0) as f64 / marked as f64)
}

/// Reference triangle (0,0), (1,0), (0,1) as a one-element mesh.
pub fn reference_triangle() -> Triangulation {
    Triangulation::from_description(
        vec![
            Vertex { x: 0.0, y: 0.0 },
            Vertex { x: 1.0, y: 0.0 },
            Vertex { x: 0.0, y: 1.0 },
        ],
        &[[0, 1, 2]],
        &[(0, 1, 1), (1, 2, 1), (2, 0, 1)],
    )
    .unwrap()
}

/// Unit square split into two triangles by the main diagonal.
pub fn two_triangle_square() -> Triangulation {
    Triangulation::from_description(
        vec![
            Vertex { x: 0.0, y: 0.0 },
            Vertex { x: 1.0, y: 0.0 },
            Vertex { x: 1.0, y: 1.0 },
            Vertex { x: 0.0, y: 1.0 },
        ],
        &[[0, 1, 2], [0, 2, 3]],
        &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 1)],
    )
    .unwrap()
}

/// Axis-aligned rectangle [x0,x1]×[y0,y1] as an nx×ny grid of square cells,
/// each split by the diagonal of positive slope.
pub fn structured_rectangle(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    nx: usize,
    ny: usize,
) -> Triangulation {
    assert!(nx >= 1 && ny >= 1);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vertex {
                x: x0 + (x1 - x0) * i as f64 / nx as f64,
                y: y0 + (y1 - y0) * j as f64 / ny as f64,
            });
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut bnd = Vec::new();
    for i in 0..nx {
        bnd.push((id(i, 0), id(i + 1, 0), 1));
        bnd.push((id(i, ny), id(i + 1, ny), 1));
    }
    for j in 0..ny {
        bnd.push((id(0, j), id(0, j + 1), 1));
        bnd.push((id(nx, j), id(nx, j + 1), 1));
    }
    Triangulation::from_description(vertices, &triangles, &bnd).unwrap()
}

/// L-shaped domain (−1,1)² without the closed quadrant [0,1)×(−1,0],
/// meshed by six right isoceles triangles.
pub fn lshape_mesh() -> Triangulation {
    let vertices = vec![
        Vertex { x: -1.0, y: -1.0 }, // 0
        Vertex { x: 0.0, y: -1.0 },  // 1
        Vertex { x: -1.0, y: 0.0 },  // 2
        Vertex { x: 0.0, y: 0.0 },   // 3
        Vertex { x: 1.0, y: 0.0 },   // 4
        Vertex { x: -1.0, y: 1.0 },  // 5
        Vertex { x: 0.0, y: 1.0 },   // 6
        Vertex { x: 1.0, y: 1.0 },   // 7
    ];
    let triangles = [
        [0, 1, 3],
        [0, 3, 2],
        [2, 3, 6],
        [2, 6, 5],
        [3, 4, 7],
        [3, 7, 6],
    ];
    let bnd = [
        (0, 1, 1),
        (1, 3, 1),
        (3, 4, 1),
        (4, 7, 1),
        (7, 6, 1),
        (6, 5, 1),
        (5, 2, 1),
        (2, 0, 1),
    ];
    Triangulation::from_description(vertices, &triangles, &bnd).unwrap()
}
