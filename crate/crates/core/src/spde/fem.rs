use super::Mesh;
use crate::error::{Error, Result};
use crate::linalg::CscMatrix;

/// Lumped mass `C` (diagonal), stiffness `G1` and `G2 = G1 C^{-1} G1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FemMatrices {
    pub c: Vec<f64>,
    pub g1: CscMatrix,
    pub g2: CscMatrix,
}

impl FemMatrices {
    pub fn n_nodes(&self) -> usize {
        self.c.len()
    }

    /// Builds `G2` from given `C` and `G1`.
    pub fn from_mass_and_stiffness(c: Vec<f64>, g1: CscMatrix) -> Result<Self> {
        if let Some(k) = c.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Mesh(format!("lumped mass at node {k} is not positive")));
        }
        let inv: Vec<f64> = c.iter().map(|v| 1.0 / v).collect();
        let g2 = g1.scale_columns(&inv).matmul(&g1);
        Ok(Self { c, g1, g2 })
    }
}

/// Assembles linear finite-element matrices on `mesh`.
///
/// Per triangle of area `T` with edge vectors `e_k` opposite vertex `k`, each
/// vertex receives `T/3` lumped mass and `G1[k,l] += e_k . e_l / (4T)`.
pub fn assemble_fem(mesh: &Mesh) -> Result<FemMatrices> {
    let n = mesh.n_vertices();
    let mut c = vec![0.0; n];
    let mut trips = Vec::with_capacity(9 * mesh.n_triangles());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.corners(k);
        let area = mesh.area(k);
        if !(area > 0.0) {
            return Err(Error::Mesh(format!("triangle {k} is degenerate (area {area})")));
        }
        let edges: [[f64; 2]; 3] = std::array::from_fn(|v| {
            let (a, b) = (p[(v + 1) % 3], p[(v + 2) % 3]);
            [b[0] - a[0], b[1] - a[1]]
        });
        for a in 0..3 {
            c[tri[a]] += area / 3.0;
            for b in 0..3 {
                let dot = edges[a][0] * edges[b][0] + edges[a][1] * edges[b][1];
                trips.push((tri[a], tri[b], dot / (4.0 * area)));
            }
        }
    }
    let g1 = CscMatrix::from_triplets(n, n, &trips);
    FemMatrices::from_mass_and_stiffness(c, g1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spde::{regular_mesh, BoundingBox};
    use nalgebra::DMatrix;

    #[test]
    fn unit_right_triangle() {
        let mesh = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        for v in &fem.c {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5]);
        assert!((fem.g1.to_dense() - expect).abs().max() < 1e-15);
    }

    #[test]
    fn structural_properties() {
        let square = regular_mesh(BoundingBox::new(0.0, 0.0, 1.0, 1.0), 1.0, 0.0).unwrap();
        let fem = assemble_fem(&square).unwrap();
        assert!((fem.c.iter().sum::<f64>() - 1.0).abs() < 1e-14);

        let mesh = regular_mesh(BoundingBox::new(0.0, 0.0, 1.3, 0.8), 0.25, 0.1).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        let g1 = fem.g1.to_dense();
        assert!((&g1 - g1.transpose()).abs().max() < 1e-14);
        for r in 0..g1.nrows() {
            assert!(g1.row(r).sum().abs() < 1e-10);
        }
        let cinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(fem.c.len(), fem.c.iter().map(|v| 1.0 / v)));
        let triple = &g1 * cinv * &g1;
        assert!(mesh.n_vertices() <= 50);
        assert!((fem.g2.to_dense() - &triple).abs().max() < 1e-10);
        let eig = triple.symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-10);
    }
}
