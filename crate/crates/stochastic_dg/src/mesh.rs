//! Conforming triangulations of an axis-aligned rectangle: edge topology,
//! uniform red refinement, and recursive longest-edge bisection of marked
//! elements with conformity closure.

use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoint vertex ids, ordered as traversed by the first incident
    /// triangle (counterclockwise), so the interior of that triangle lies
    /// to the left.
    pub v: [usize; 2],
    /// Incident triangle of lowest index.
    pub tri_in: usize,
    /// Second incident triangle, `None` on the boundary.
    pub tri_out: Option<usize>,
    /// Unit normal pointing out of `tri_in`.
    pub normal: [f64; 2],
    pub length: f64,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.tri_out.is_none()
    }

    pub fn midpoint(&self, verts: &[[f64; 2]]) -> [f64; 2] {
        let a = verts[self.v[0]];
        let b = verts[self.v[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge ids per triangle; local edge k joins local vertices k and (k+1)%3.
    pub tri_edges: Vec<[usize; 3]>,
    tri_area: Vec<f64>,
    tri_diam: Vec<f64>,
    x_range: [f64; 2],
    y_range: [f64; 2],
}

fn signed_area(v: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let a = v[t[0]];
    let b = v[t[1]];
    let c = v[t[2]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

impl TriangleMesh {
    pub fn rectangle(x_range: [f64; 2], y_range: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        if !(x_range[1] > x_range[0]) || !(y_range[1] > y_range[0]) {
            return Err(Error::InvalidDomain(format!(
                "rectangle [{},{}]x[{},{}]",
                x_range[0], x_range[1], y_range[0], y_range[1]
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidDomain("nx, ny must be >= 1".into()));
        }
        let dx = (x_range[1] - x_range[0]) / nx as f64;
        let dy = (y_range[1] - y_range[0]) / ny as f64;
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([x_range[0] + i as f64 * dx, y_range[0] + j as f64 * dy]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (ll, lr, ur, ul) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push([ll, lr, ur]);
                triangles.push([ll, ur, ul]);
            }
        }
        Ok(Self::finalize(vertices, triangles, x_range, y_range))
    }

    fn finalize(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        x_range: [f64; 2],
        y_range: [f64; 2],
    ) -> Self {
        let mut edges: Vec<Edge> = Vec::with_capacity(triangles.len() * 3 / 2 + 2);
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.capacity());
        for (t, tri) in triangles.iter().enumerate() {
            debug_assert!(signed_area(&vertices, tri) > 0.0, "triangle {t} not CCW");
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                match lookup.get(&key) {
                    Some(&e) => {
                        debug_assert!(edges[e].tri_out.is_none());
                        edges[e].tri_out = Some(t);
                        tri_edges[t][k] = e;
                    }
                    None => {
                        let pa = vertices[a];
                        let pb = vertices[b];
                        let len = dist2(pa, pb).sqrt();
                        // interior of the CCW triangle lies left of a->b
                        let normal = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
                        let e = edges.len();
                        edges.push(Edge {
                            v: [a, b],
                            tri_in: t,
                            tri_out: None,
                            normal,
                            length: len,
                        });
                        lookup.insert(key, e);
                        tri_edges[t][k] = e;
                    }
                }
            }
        }
        let tri_area: Vec<f64> = triangles.iter().map(|t| signed_area(&vertices, t)).collect();
        let tri_diam: Vec<f64> = triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
                dist2(a, b).max(dist2(b, c)).max(dist2(c, a)).sqrt()
            })
            .collect();
        TriangleMesh {
            vertices,
            triangles,
            edges,
            tri_edges,
            tri_area,
            tri_diam,
            x_range,
            y_range,
        }
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn tri_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.tri_area[t]
    }

    pub fn diameter(&self, t: usize) -> f64 {
        self.tri_diam[t]
    }

    pub fn total_area(&self) -> f64 {
        self.tri_area.iter().sum()
    }

    pub fn x_range(&self) -> [f64; 2] {
        self.x_range
    }

    pub fn y_range(&self) -> [f64; 2] {
        self.y_range
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let v = self.tri_vertices(t);
        [
            (v[0][0] + v[1][0] + v[2][0]) / 3.0,
            (v[0][1] + v[1][1] + v[2][1]) / 3.0,
        ]
    }

    /// (inside triangle, outside triangle or `None` on the boundary).
    pub fn edge_neighbors(&self, e: usize) -> (usize, Option<usize>) {
        (self.edges[e].tri_in, self.edges[e].tri_out)
    }

    pub fn uniform_refine(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let pa = vertices[a];
                let pb = vertices[b];
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for tri in &self.triangles {
            let [a, b, c] = *tri;
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Self::finalize(vertices, triangles, self.x_range, self.y_range)
    }

    /// Longest-edge bisection of the marked triangles with recursive
    /// conformity closure (Rivara). Unmarked neighbors are bisected as
    /// needed so no hanging vertices remain.
    pub fn bisect_marked(&self, marked: &[usize]) -> Self {
        let mut vertices = self.vertices.clone();
        let mut tris: Vec<Option<[usize; 3]>> = self.triangles.iter().map(|t| Some(*t)).collect();
        // live adjacency: sorted vertex pair -> incident live triangles
        let mut adj: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(tri[k], tri[(k + 1) % 3]);
                adj.entry(key).or_default().push(t);
            }
        }

        let longest = |tri: &[usize; 3], vertices: &[[f64; 2]]| -> (usize, usize) {
            let mut best = (0usize, f64::MIN);
            for k in 0..3 {
                let l2 = dist2(vertices[tri[k]], vertices[tri[(k + 1) % 3]]);
                if l2 > best.1 * (1.0 + 1e-12) {
                    best = (k, l2);
                }
            }
            (tri[best.0], tri[(best.0 + 1) % 3])
        };

        let mut stack: Vec<usize> = marked.to_vec();
        stack.dedup();
        let mut guard = 0usize;
        let cap = 100 * (self.triangles.len() + marked.len() + 16);
        while let Some(&t) = stack.last() {
            guard += 1;
            assert!(guard < cap, "bisection closure failed to terminate");
            if tris[t].is_none() {
                stack.pop();
                continue;
            }
            let tri = tris[t].unwrap();
            let (ea, eb) = longest(&tri, &vertices);
            let key = edge_key(ea, eb);
            let nb = adj
                .get(&key)
                .into_iter()
                .flatten()
                .copied()
                .find(|&s| s != t && tris[s].is_some());
            if let Some(n) = nb {
                let ntri = tris[n].unwrap();
                let (na, nbv) = longest(&ntri, &vertices);
                if edge_key(na, nbv) != key {
                    stack.push(n);
                    continue;
                }
            }
            // bisect t (and the compatible neighbor) across (ea, eb)
            let pa = vertices[ea];
            let pb = vertices[eb];
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            let m = vertices.len() - 1;
            let split = |s: usize,
                             tris: &mut Vec<Option<[usize; 3]>>,
                             adj: &mut HashMap<(usize, usize), Vec<usize>>| {
                let tri = tris[s].take().unwrap();
                for k in 0..3 {
                    let key = edge_key(tri[k], tri[(k + 1) % 3]);
                    if let Some(list) = adj.get_mut(&key) {
                        list.retain(|&x| x != s);
                    }
                }
                // rotate so the split edge is (v0, v1)
                let k = (0..3)
                    .find(|&k| edge_key(tri[k], tri[(k + 1) % 3]) == key_of(ea, eb))
                    .unwrap();
                let (v0, v1, v2) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                for child in [[v0, m, v2], [m, v1, v2]] {
                    let c = tris.len();
                    tris.push(Some(child));
                    for k in 0..3 {
                        let key = edge_key(child[k], child[(k + 1) % 3]);
                        adj.entry(key).or_default().push(c);
                    }
                }
            };
            split(t, &mut tris, &mut adj);
            if let Some(n) = nb {
                split(n, &mut tris, &mut adj);
            }
            stack.pop();
        }

        let triangles: Vec<[usize; 3]> = tris.into_iter().flatten().collect();
        // drop unreferenced vertices? none are created, keep all
        Self::finalize(vertices, triangles, self.x_range, self.y_range)
    }

    /// True when both endpoints lie on the same side of the domain rectangle.
    pub fn edge_on_domain_boundary(&self, e: usize) -> bool {
        let tol = 1e-12;
        let a = self.vertices[self.edges[e].v[0]];
        let b = self.vertices[self.edges[e].v[1]];
        for xr in [self.x_range[0], self.x_range[1]] {
            if (a[0] - xr).abs() < tol && (b[0] - xr).abs() < tol {
                return true;
            }
        }
        for yr in [self.y_range[0], self.y_range[1]] {
            if (a[1] - yr).abs() < tol && (b[1] - yr).abs() < tol {
                return true;
            }
        }
        false
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn key_of(a: usize, b: usize) -> (usize, usize) {
    edge_key(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_mesh_counts() {
        let m = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 8, 8).unwrap();
        assert_eq!(m.n_triangles(), 128);
        let m1 = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 1, 1).unwrap();
        assert_eq!(m1.n_triangles(), 2);
        assert_eq!(m1.n_edges(), 5);
        assert_eq!(m1.edges.iter().filter(|e| e.is_boundary()).count(), 4);
    }

    #[test]
    fn area_conservation() {
        let m = TriangleMesh::rectangle([0.0, 2.0], [0.0, 1.0], 2, 1).unwrap();
        assert!((m.total_area() - 2.0).abs() < 1e-12);
        let r = m.uniform_refine().uniform_refine();
        assert!((r.total_area() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_domain_rejected() {
        assert!(TriangleMesh::rectangle([1.0, 1.0], [0.0, 1.0], 2, 2).is_err());
        assert!(TriangleMesh::rectangle([0.0, 1.0], [0.0, 1.0], 0, 2).is_err());
    }

    #[test]
    fn uniform_refine_counts_and_diameter() {
        let m = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 8, 8).unwrap();
        assert_eq!(m.uniform_refine().n_triangles(), 512);
        let m1 = TriangleMesh::rectangle([0.0, 1.0], [0.0, 1.0], 1, 1).unwrap();
        let r = m1.uniform_refine();
        assert_eq!(r.n_triangles(), 8);
        let hmax = |m: &TriangleMesh| (0..m.n_triangles()).map(|t| m.diameter(t)).fold(0.0, f64::max);
        assert!((hmax(&r) - 0.5 * hmax(&m1)).abs() < 1e-14);
    }

    #[test]
    fn bisect_all_of_two_triangles() {
        let m = TriangleMesh::rectangle([0.0, 1.0], [0.0, 1.0], 1, 1).unwrap();
        let r = m.bisect_marked(&[0, 1]);
        assert_eq!(r.n_triangles(), 4);
        assert!((r.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisect_one_forces_shared_diagonal() {
        let m = TriangleMesh::rectangle([0.0, 1.0], [0.0, 1.0], 1, 1).unwrap();
        let r = m.bisect_marked(&[0]);
        assert_eq!(r.n_triangles(), 4);
    }

    #[test]
    fn bisect_empty_is_identity() {
        let m = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 2, 2).unwrap();
        let r = m.bisect_marked(&[]);
        assert_eq!(r.n_triangles(), m.n_triangles());
        assert_eq!(r.triangles, m.triangles);
    }

    #[test]
    fn interior_edge_topology() {
        let m = TriangleMesh::rectangle([0.0, 1.0], [0.0, 1.0], 1, 1).unwrap();
        let interior: Vec<&Edge> = m.edges.iter().filter(|e| !e.is_boundary()).collect();
        assert_eq!(interior.len(), 1);
        let e = interior[0];
        assert_eq!(e.tri_in, 0);
        assert_eq!(e.tri_out, Some(1));
        // refined mesh: both triangles of an interior edge share exactly 2 vertices
        let r = m.uniform_refine();
        for e in r.edges.iter().filter(|e| !e.is_boundary()) {
            let a = r.triangles[e.tri_in];
            let b = r.triangles[e.tri_out.unwrap()];
            let shared = a.iter().filter(|v| b.contains(v)).count();
            assert_eq!(shared, 2);
        }
    }

    #[test]
    fn normals_point_outward_from_first_triangle() {
        let m = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 3, 2).unwrap();
        for e in &m.edges {
            let c = m.centroid(e.tri_in);
            let mid = e.midpoint(&m.vertices);
            let d = [mid[0] - c[0], mid[1] - c[1]];
            assert!(d[0] * e.normal[0] + d[1] * e.normal[1] > 0.0);
        }
    }

    #[test]
    fn orientation_preserved_by_refinement() {
        let m = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 2, 2).unwrap();
        let r = m.uniform_refine().bisect_marked(&[0, 3, 5, 7]);
        for t in &r.triangles {
            assert!(signed_area(&r.vertices, t) > 0.0);
        }
    }

    fn assert_conforming(m: &TriangleMesh) {
        // every count-1 vertex-pair edge must lie on the domain boundary;
        // a hanging vertex would leave an interior edge with a single triangle
        for (e, edge) in m.edges.iter().enumerate() {
            if edge.is_boundary() {
                assert!(
                    m.edge_on_domain_boundary(e),
                    "interior edge {:?} has one incident triangle",
                    edge.v
                );
            }
        }
        assert!((m.total_area() - 4.0).abs() < 1e-12 * 4.0);
    }

    #[test]
    fn repeated_bisection_stays_conforming_and_shape_regular() {
        let mut m = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let init_ratio = (0..m.n_triangles())
            .map(|t| m.diameter(t).powi(2) / m.area(t))
            .fold(0.0, f64::max);
        // deterministic pseudo-random marking
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..10 {
            let n = m.n_triangles();
            let mut marked = Vec::new();
            for t in 0..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if state >> 62 == 0 {
                    marked.push(t);
                }
            }
            m = m.bisect_marked(&marked);
            assert_conforming(&m);
            let ratio = (0..m.n_triangles())
                .map(|t| m.diameter(t).powi(2) / m.area(t))
                .fold(0.0, f64::max);
            assert!(ratio <= 4.0 * init_ratio + 1e-9);
        }
    }

    #[test]
    fn bisection_children_smaller() {
        let m = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 2, 2).unwrap();
        let h0 = m.diameter(0);
        let r = m.bisect_marked(&[0]);
        for t in 0..r.n_triangles() {
            assert!(r.diameter(t) <= h0 + 1e-14);
        }
        let hmin = |m: &TriangleMesh| {
            (0..m.n_triangles()).map(|t| m.diameter(t)).fold(f64::MAX, f64::min)
        };
        assert!(hmin(&r) < hmin(&m));
    }
}
