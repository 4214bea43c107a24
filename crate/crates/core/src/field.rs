//! The spatial prior on intercept increments, `omega_t ~ N(0, sigma2 Q_kappa^{-1})`,
//! in either representation.
//!
//! On the dense path the nodes are the data sites, `A` is the identity and
//! `Q_kappa = Omega^{-1}`; on the sparse path `Q_kappa` comes from the FEM
//! matrices and `A` is the barycentric projector.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, CscMatrix, DenseFactor, Ordering, SymbolicCholesky};
use crate::model::{dense_correlation_unchecked, ModelPath, SpatialLocation};
use crate::spde::{assemble_fem, build_projector, FemMatrices, Mesh, PrecisionBuilder, Projector, SparsePrecision};

/// Structure of the spatial prior that does not depend on `kappa`.
#[derive(Clone, Debug)]
pub enum SpatialModel {
    Dense(DenseStructure),
    Sparse(SparseStructure),
}

#[derive(Clone, Debug)]
pub struct DenseStructure {
    sites: Vec<SpatialLocation>,
    nu: f64,
}

#[derive(Clone, Debug)]
pub struct SparseStructure {
    mesh: Option<Mesh>,
    fem: FemMatrices,
    builder: PrecisionBuilder,
    projector: Projector,
    /// Pattern of `a Q + b A'A`.
    union: CscMatrix,
    q_to_union: Vec<usize>,
    ata_on_union: Vec<f64>,
    symbolic: Arc<SymbolicCholesky>,
}

/// `Q_kappa` for one value of `kappa`.
#[derive(Clone, Debug)]
pub enum FieldPrecision {
    Dense(DensePrecision),
    Sparse(SparsePrecision),
}

#[derive(Clone, Debug)]
pub struct DensePrecision {
    kappa: f64,
    omega: DMatrix<f64>,
    factor: DenseFactor,
    omega_inv: Option<DMatrix<f64>>,
    spectrum: Option<(DMatrix<f64>, Vec<f64>)>,
}

/// Factor of a Gaussian full-conditional precision `a Q_kappa + b A'A`.
#[derive(Clone, Debug)]
pub enum ConditionalFactor {
    Dense(DenseFactor),
    Sparse(CholeskyFactor),
}

impl SpatialModel {
    pub fn dense(sites: Vec<SpatialLocation>, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::domain(format!("smoothness must be positive, got {nu}")));
        }
        Ok(Self::Dense(DenseStructure { sites, nu }))
    }

    /// SPDE field on `mesh`, projected to `sites`.
    pub fn sparse(mesh: Mesh, sites: &[SpatialLocation]) -> Result<Self> {
        let fem = assemble_fem(&mesh)?;
        let projector = build_projector(&mesh, sites)?;
        let mut s = Self::sparse_from_parts(fem, projector)?;
        if let Self::Sparse(ref mut st) = s {
            st.mesh = Some(mesh);
        }
        Ok(s)
    }

    /// SPDE-type field from explicit FEM matrices and projector.
    pub fn sparse_from_parts(fem: FemMatrices, projector: Projector) -> Result<Self> {
        if projector.n_nodes() != fem.n_nodes() {
            return Err(Error::dim(format!(
                "projector has {} columns but the field has {} nodes",
                projector.n_nodes(),
                fem.n_nodes()
            )));
        }
        let builder = PrecisionBuilder::new(&fem)?;
        let a = projector.matrix();
        let ata = a.transpose().matmul(a);
        let union = CscMatrix::pattern_union(&[builder.pattern(), &ata]);
        let ata_on_union = ata.values_on_pattern(&union);
        let q_to_union = {
            let mut map = Vec::with_capacity(builder.pattern().nnz());
            for j in 0..union.ncols() {
                let r = union.colptr()[j]..union.colptr()[j + 1];
                let rows = &union.rowidx()[r.clone()];
                for (i, _) in builder.pattern().column(j) {
                    map.push(r.start + rows.binary_search(&i).expect("union contains Q pattern"));
                }
            }
            map
        };
        let symbolic = SymbolicCholesky::analyze(&union, Ordering::default())?;
        Ok(Self::Sparse(SparseStructure {
            mesh: None,
            fem,
            builder,
            projector,
            union,
            q_to_union,
            ata_on_union,
            symbolic,
        }))
    }

    pub fn path(&self) -> ModelPath {
        match self {
            Self::Dense(_) => ModelPath::Dense,
            Self::Sparse(_) => ModelPath::Sparse,
        }
    }

    /// `N`, the length of each intercept weight vector.
    pub fn n_nodes(&self) -> usize {
        match self {
            Self::Dense(d) => d.sites.len(),
            Self::Sparse(s) => s.fem.n_nodes(),
        }
    }

    pub fn n_sites(&self) -> usize {
        match self {
            Self::Dense(d) => d.sites.len(),
            Self::Sparse(s) => s.projector.n_sites(),
        }
    }

    pub fn mesh(&self) -> Option<&Mesh> {
        match self {
            Self::Dense(_) => None,
            Self::Sparse(s) => s.mesh.as_ref(),
        }
    }

    /// Smoothness of the implied Matérn field.
    pub fn nu(&self) -> f64 {
        match self {
            Self::Dense(d) => d.nu,
            Self::Sparse(_) => 1.0,
        }
    }

    /// The data sites of a dense model.
    pub fn dense_sites(&self) -> Option<&[SpatialLocation]> {
        match self {
            Self::Dense(d) => Some(&d.sites),
            Self::Sparse(_) => None,
        }
    }

    /// `A` on the sparse path, `None` (identity) on the dense path.
    pub fn projector(&self) -> Option<&CscMatrix> {
        match self {
            Self::Dense(_) => None,
            Self::Sparse(s) => Some(s.projector.matrix()),
        }
    }

    pub fn precision(&self, kappa: f64) -> Result<FieldPrecision> {
        match self {
            Self::Dense(d) => {
                let omega = dense_correlation_unchecked(&d.sites, kappa, d.nu)?;
                let factor = DenseFactor::new(&omega)?;
                Ok(FieldPrecision::Dense(DensePrecision { kappa, omega, factor, omega_inv: None, spectrum: None }))
            }
            Self::Sparse(s) => Ok(FieldPrecision::Sparse(s.builder.build(kappa)?)),
        }
    }

    /// `A x`: intercept at the sites from node weights.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Dense(_) => out.copy_from_slice(x),
            Self::Sparse(s) => s.projector.matrix().mul_vec_into(x, out),
        }
    }

    /// `A' r`
    pub fn project_transpose_into(&self, r: &[f64], out: &mut [f64]) {
        match self {
            Self::Dense(_) => out.copy_from_slice(r),
            Self::Sparse(s) => s.projector.matrix().tr_mul_vec_into(r, out),
        }
    }

    /// Factor of `prior_scale * Q_kappa + lik_scale * A'A`.
    pub fn conditional_factor(
        &self,
        precision: &mut FieldPrecision,
        prior_scale: f64,
        lik_scale: f64,
    ) -> Result<ConditionalFactor> {
        match (self, precision) {
            (Self::Dense(_), FieldPrecision::Dense(p)) => {
                let mut m = p.inverse().clone() * prior_scale;
                for i in 0..m.nrows() {
                    m[(i, i)] += lik_scale;
                }
                Ok(ConditionalFactor::Dense(DenseFactor::new(&m)?))
            }
            (Self::Sparse(s), FieldPrecision::Sparse(p)) => {
                let mut vals: Vec<f64> = s.ata_on_union.iter().map(|v| v * lik_scale).collect();
                for (k, &dst) in s.q_to_union.iter().enumerate() {
                    vals[dst] += prior_scale * p.matrix().values()[k];
                }
                Ok(ConditionalFactor::Sparse(s.symbolic.factor(&vals)?))
            }
            _ => Err(Error::Config("precision does not match the spatial model path".into())),
        }
    }

    /// Dense form of `prior_scale * Q + lik_scale * A'A`, for diagnostics and tests.
    pub fn conditional_precision_dense(
        &self,
        precision: &mut FieldPrecision,
        prior_scale: f64,
        lik_scale: f64,
    ) -> DMatrix<f64> {
        match (self, precision) {
            (Self::Sparse(s), FieldPrecision::Sparse(p)) => {
                let mut vals: Vec<f64> = s.ata_on_union.iter().map(|v| v * lik_scale).collect();
                for (k, &dst) in s.q_to_union.iter().enumerate() {
                    vals[dst] += prior_scale * p.matrix().values()[k];
                }
                s.union.with_values(vals).to_dense()
            }
            (_, p) => {
                let mut m = p.dense_matrix() * prior_scale;
                for i in 0..m.nrows() {
                    m[(i, i)] += lik_scale;
                }
                m
            }
        }
    }
}

impl DensePrecision {
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn factor(&self) -> &DenseFactor {
        &self.factor
    }

    /// `Omega^{-1}`, computed once on first use.
    pub fn inverse(&mut self) -> &DMatrix<f64> {
        if self.omega_inv.is_none() {
            self.omega_inv = Some(self.factor.inverse());
        }
        self.omega_inv.as_ref().unwrap()
    }

    /// Orthonormal eigenvectors (as columns) and eigenvalues of `Omega`,
    /// computed once on first use. Fails unless every eigenvalue is positive.
    pub fn spectrum(&mut self) -> Result<(&DMatrix<f64>, &[f64])> {
        if self.spectrum.is_none() {
            let eig = self.omega.clone().symmetric_eigen();
            if let Some(v) = eig.eigenvalues.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::cond(format!("correlation matrix has eigenvalue {v:e}")));
            }
            self.spectrum = Some((eig.eigenvectors, eig.eigenvalues.iter().copied().collect()));
        }
        let (v, l) = self.spectrum.as_ref().unwrap();
        Ok((v, l))
    }
}

impl FieldPrecision {
    pub fn kappa(&self) -> f64 {
        match self {
            Self::Dense(d) => d.kappa,
            Self::Sparse(s) => s.kappa(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(d) => d.omega.nrows(),
            Self::Sparse(s) => s.dim(),
        }
    }

    /// `log det Q_kappa`
    pub fn logdet(&self) -> f64 {
        match self {
            Self::Dense(d) => -d.factor.logdet(),
            Self::Sparse(s) => s.logdet(),
        }
    }

    /// `sum_t d_t' Q_kappa d_t` over the columns of `d`.
    pub fn quad_sum(&self, d: &DMatrix<f64>) -> f64 {
        match self {
            Self::Dense(p) => p.factor.lower_solve(d).norm_squared(),
            Self::Sparse(s) => (0..d.ncols()).map(|t| s.quad_form(d.column(t).as_slice())).sum(),
        }
    }

    /// `Q_kappa x`
    pub fn mul_into(&mut self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Dense(p) => {
                let inv = p.inverse();
                let n = x.len();
                out.iter_mut().for_each(|v| *v = 0.0);
                for (j, &xj) in x.iter().enumerate() {
                    let col = &inv.as_slice()[j * n..(j + 1) * n];
                    for (o, c) in out.iter_mut().zip(col) {
                        *o += c * xj;
                    }
                }
            }
            Self::Sparse(s) => s.matrix().mul_vec_into(x, out),
        }
    }

    /// Standard normals that [`unwhiten`](Self::unwhiten) maps back to `x`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense(d) => d.factor.whiten(x),
            Self::Sparse(s) => s.factor().whiten(x),
        }
    }

    /// Maps standard normals to a draw from `N(0, Q_kappa^{-1})`.
    pub fn unwhiten(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense(d) => d.factor.color(z),
            Self::Sparse(s) => s.factor().whiten_inverse(z),
        }
    }

    /// Draw from `N(0, scale * Q_kappa^{-1})`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        if scale == 0.0 {
            return vec![0.0; n];
        }
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let sd = scale.sqrt();
        self.unwhiten(&z).into_iter().map(|v| v * sd).collect()
    }

    /// Dense `Q_kappa`.
    pub fn dense_matrix(&mut self) -> DMatrix<f64> {
        match self {
            Self::Dense(d) => d.inverse().clone(),
            Self::Sparse(s) => s.matrix().to_dense(),
        }
    }

    /// Dense `Q_kappa^{-1}`.
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        match self {
            Self::Dense(d) => d.omega.clone(),
            Self::Sparse(s) => {
                let n = s.dim();
                let mut m = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    m.column_mut(j).copy_from_slice(&s.solve(&e));
                }
                m
            }
        }
    }
}

impl ConditionalFactor {
    pub fn logdet(&self) -> f64 {
        match self {
            Self::Dense(f) => f.logdet(),
            Self::Sparse(f) => f.logdet(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense(f) => f.solve(b),
            Self::Sparse(f) => f.solve(b),
        }
    }

    /// Draw from `N(P^{-1} b, P^{-1})`.
    pub fn sample<R: Rng + ?Sized>(&self, b: &[f64], rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..b.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        match self {
            Self::Dense(f) => f.sample_with(b, &z),
            Self::Sparse(f) => f.sample_with(b, &z),
        }
    }
}
