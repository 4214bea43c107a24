use super::mesh::signed_area;
use super::Mesh;
use crate::error::{Error, Result};
use crate::linalg::CscMatrix;
use crate::model::SpatialLocation;

/// `n x N` barycentric interpolation matrix from mesh nodes to sites.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    a: CscMatrix,
}

impl Projector {
    /// Wraps an arbitrary `n x N` matrix (e.g. the identity when nodes are the sites).
    pub fn from_matrix(a: CscMatrix) -> Self {
        Self { a }
    }

    pub fn matrix(&self) -> &CscMatrix {
        &self.a
    }

    pub fn n_sites(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.a.ncols()
    }

    /// `A x`
    pub fn project(&self, node_values: &[f64]) -> Vec<f64> {
        self.a.mul_vec(node_values)
    }
}

const TOL: f64 = 1e-12;

/// Containing triangle of `point` and its barycentric weights; the lowest
/// triangle index wins on shared edges and vertices.
pub fn locate(mesh: &Mesh, point: SpatialLocation) -> Option<(usize, [f64; 3])> {
    let p = [point.x, point.y];
    for k in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.corners(k);
        let area = signed_area(a, b, c);
        let w = [signed_area(p, b, c) / area, signed_area(a, p, c) / area, signed_area(a, b, p) / area];
        if w.iter().all(|&v| v >= -TOL) {
            let mut w = w.map(|v| v.max(0.0));
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            return Some((k, w));
        }
    }
    None
}

/// Barycentric projector rows for `sites`.
pub fn build_projector(mesh: &Mesh, sites: &[SpatialLocation]) -> Result<Projector> {
    let mut trips = Vec::with_capacity(3 * sites.len());
    for (i, &s) in sites.iter().enumerate() {
        let (k, w) = locate(mesh, s).ok_or(Error::Coverage { site: i, x: s.x, y: s.y })?;
        let tri = mesh.triangles()[k];
        for v in 0..3 {
            if w[v] != 0.0 {
                trips.push((i, tri[v], w[v]));
            }
        }
    }
    Ok(Projector { a: CscMatrix::from_triplets(sites.len(), mesh.n_vertices(), &trips) })
}
