//! Planar triangulations, piecewise-linear finite elements and
//! point-to-mesh projection.

mod fem;
mod io;
mod projector;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use fem::{assemble, FemMatrices};
pub use io::{format_triangles, format_vertices, load_mesh, parse_mesh, save_mesh};
pub use projector::projector;

/// Triangles with area below this are rejected as degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;
/// Barycentric tolerance for point location.
pub const LOCATE_TOLERANCE: f64 = 1e-10;

/// Validated triangulation with counter-clockwise triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    /// `neighbors[t][e]`: triangle across the edge opposite local vertex `e`.
    neighbors: Vec<[Option<usize>; 3]>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl TriMesh {
    /// Validates and canonicalizes a triangulation: clockwise triangles are
    /// flipped, degenerate ones rejected, conformity checked.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        check_duplicate_vertices(&vertices)?;
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references a vertex outside 0..{nv}"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle { index: t, area: 0.0 });
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area.abs() < MIN_TRIANGLE_AREA {
                return Err(Error::DegenerateTriangle { index: t, area: area.abs() });
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }

        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[(e + 1) % 3], tri[(e + 2) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push((t, e));
            }
        }
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for ((a, b), owners) in &edges {
            match owners.as_slice() {
                [_] => {}
                [(t1, e1), (t2, e2)] => {
                    neighbors[*t1][*e1] = Some(*t2);
                    neighbors[*t2][*e2] = Some(*t1);
                }
                _ => {
                    return Err(Error::NonConformingMesh(format!(
                        "edge ({a}, {b}) is shared by {} triangles",
                        owners.len()
                    )))
                }
            }
        }
        Ok(Self {
            vertices,
            triangles,
            neighbors,
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let area = signed_area(a, b, c);
        [
            signed_area(p, b, c) / area,
            signed_area(a, p, c) / area,
            signed_area(a, b, p) / area,
        ]
    }

    /// Finds a triangle containing `p`, walking from `start` across edges and
    /// falling back to an exhaustive scan.
    pub fn locate(&self, p: [f64; 2], start: usize) -> Option<(usize, [f64; 3])> {
        if self.triangles.is_empty() {
            return None;
        }
        let mut t = start.min(self.triangles.len() - 1);
        for _ in 0..self.triangles.len() {
            let w = self.barycentric(t, p);
            let (e, &wmin) = w
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("three weights");
            if wmin >= -LOCATE_TOLERANCE {
                return Some((t, w));
            }
            match self.neighbors[t][e] {
                Some(next) => t = next,
                None => break,
            }
        }
        (0..self.triangles.len()).find_map(|t| {
            let w = self.barycentric(t, p);
            w.iter().all(|&x| x >= -LOCATE_TOLERANCE).then_some((t, w))
        })
    }

    /// Indices of vertices with both coordinates inside the closed box.
    pub fn vertices_in_box(&self, x: [f64; 2], y: [f64; 2]) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&i| {
                let [vx, vy] = self.vertices[i];
                vx >= x[0] && vx <= x[1] && vy >= y[0] && vy <= y[1]
            })
            .collect()
    }
}

fn check_duplicate_vertices(vertices: &[[f64; 2]]) -> Result<()> {
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| vertices[a][0].total_cmp(&vertices[b][0]));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if vertices[j][0] - vertices[i][0] > 1e-12 {
                break;
            }
            if (vertices[j][1] - vertices[i][1]).abs() <= 1e-12 {
                return Err(Error::InvalidMesh(format!("vertices {i} and {j} coincide")));
            }
        }
    }
    Ok(())
}

/// Regular triangulation of a rectangle: `(nx+1)(ny+1)` vertices in
/// row-major order (x fastest), each cell split along its lower-left to
/// upper-right diagonal.
pub fn structured_mesh(
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    nx: usize,
    ny: usize,
) -> Result<TriMesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidRectangle(format!("cell counts must be >= 1, got {nx}x{ny}")));
    }
    if !(x_max > x_min) || !(y_max > y_min) {
        return Err(Error::InvalidRectangle(format!(
            "empty extent [{x_min}, {x_max}] x [{y_min}, {y_max}]"
        )));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = y_min + (y_max - y_min) * j as f64 / ny as f64;
        for i in 0..=nx {
            let x = x_min + (x_max - x_min) * i as f64 / nx as f64;
            vertices.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (ll, lr, ul, ur) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([ll, lr, ur]);
            triangles.push([ll, ur, ul]);
        }
    }
    TriMesh::new(vertices, triangles)
}
