use super::TriMesh;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Barycentric interpolation matrix (`points × vertices`). Each row has at
/// most three nonzeros summing to one.
pub fn projector(mesh: &TriMesh, points: &[[f64; 2]]) -> Result<SparseMatrix> {
    let mut rows = Vec::with_capacity(points.len());
    let mut start = 0;
    for &p in points {
        let (t, w) = mesh
            .locate(p, start)
            .ok_or(Error::PointOutsideMesh { x: p[0], y: p[1] })?;
        start = t;
        // clip roundoff-level negatives so rows remain convex combinations
        let w = w.map(|x| if x.abs() <= super::LOCATE_TOLERANCE { 0.0 } else { x.max(0.0) });
        let total: f64 = w.iter().sum();
        let tri = mesh.triangles()[t];
        let row: Vec<(usize, f64)> = (0..3)
            .filter(|&k| w[k] != 0.0)
            .map(|k| (tri[k], w[k] / total))
            .collect();
        rows.push(row);
    }
    SparseMatrix::from_rows(mesh.n_vertices(), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::structured_mesh;

    #[test]
    fn vertex_point_gives_unit_row() {
        let m = structured_mesh(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let a = projector(&m, &[[0.25, 0.5]]).unwrap();
        let (cols, vals) = a.row(0);
        assert_eq!(cols.len(), 1);
        assert_eq!(m.vertices()[cols[0]], [0.25, 0.5]);
        assert!((vals[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn centroid_gives_equal_weights() {
        let m = structured_mesh(0.0, 1.0, 0.0, 1.0, 1, 1).unwrap();
        let tri = m.triangles()[0].map(|v| m.vertices()[v]);
        let c = [
            (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
            (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
        ];
        let a = projector(&m, &[c]).unwrap();
        let (_, vals) = a.row(0);
        assert_eq!(vals.len(), 3);
        for v in vals {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn outside_point_is_an_error() {
        let m = structured_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        assert!(matches!(projector(&m, &[[1.2, 0.5]]), Err(Error::PointOutsideMesh { .. })));
    }
}
