use super::TriMesh;
use crate::sparse::SparseSymmetric;

/// Lumped mass matrix `C` (diagonal, area units) and stiffness matrix `G`
/// for piecewise-linear elements.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    c: Vec<f64>,
    g: SparseSymmetric,
}

impl FemMatrices {
    /// Diagonal of the lumped mass matrix.
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn g(&self) -> &SparseSymmetric {
        &self.g
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }
}

/// Assembles `C_ii = Σ area/3` over incident triangles and
/// `G_ij = Σ area ∇ψ_i·∇ψ_j`.
pub fn assemble(mesh: &TriMesh) -> FemMatrices {
    let n = mesh.n_vertices();
    let mut c = vec![0.0; n];
    let mut triplets = Vec::with_capacity(mesh.n_triangles() * 6 + n);
    // keep every diagonal position even for vertices outside all triangles
    triplets.extend((0..n).map(|i| (i, i, 0.0)));
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let p = tri.map(|v| mesh.vertices()[v]);
        // ∇ψ_k = perp(edge opposite k) / (2 area)
        let grads: [[f64; 2]; 3] = std::array::from_fn(|k| {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)]
        });
        for a in 0..3 {
            c[tri[a]] += area / 3.0;
            for b in 0..=a {
                let v = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                triplets.push((tri[a], tri[b], v));
            }
        }
    }
    let g = SparseSymmetric::from_triplets(n, triplets).expect("mesh indices are validated");
    FemMatrices { c, g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::structured_mesh;

    fn right_triangle() -> TriMesh {
        TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn single_triangle_mass_is_area_over_three() {
        let fem = assemble(&right_triangle());
        for &ci in fem.c() {
            assert!((ci - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_triangle_stiffness_rows_sum_to_zero_and_psd() {
        let fem = assemble(&right_triangle());
        let g = fem.g().to_dense();
        for i in 0..3 {
            assert!(g.row(i).sum().abs() < 1e-14);
        }
        let eig = g.symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l > -1e-14));
        // standard element matrix for the unit right triangle
        assert!((g[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((g[(1, 1)] - 0.5).abs() < 1e-14);
        assert!((g[(0, 1)] + 0.5).abs() < 1e-14);
        assert!(g[(1, 2)].abs() < 1e-14);
    }

    #[test]
    fn unit_square_mass_partition_of_unity() {
        let fem = assemble(&structured_mesh(0.0, 1.0, 0.0, 1.0, 1, 1).unwrap());
        assert!((fem.c().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_order_does_not_change_assembly() {
        let m = structured_mesh(0.0, 2.0, 0.0, 1.0, 4, 3).unwrap();
        let mut tris = m.triangles().to_vec();
        tris.reverse();
        tris.rotate_left(5);
        let m2 = TriMesh::new(m.vertices().to_vec(), tris).unwrap();
        let (a, b) = (assemble(&m), assemble(&m2));
        for (x, y) in a.c().iter().zip(b.c()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.g().to_dense() - b.g().to_dense()).abs().max() < 1e-14);
    }
}
