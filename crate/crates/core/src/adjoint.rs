//! Adjoint chain for functionals constrained by staggered residuals.
//!
//! Stage `i` has residual `R_i(u_1, …, u_i, v_i, φ)`, linear in the test
//! function and independent of later stages. With the Lagrangian
//! `L = J − Σ_i R_i(u_1..u_i, λ_i, φ)` the adjoints are solved from the last
//! stage back to the first,
//!
//! ```text
//! (∂_{u_i} R_i)ᵀ λ_i = ∂_{u_i} J − Σ_{j > i} (∂_{u_i} R_j)ᵀ λ_j,
//! ```
//!
//! and the shape derivative is `dJ = ∂_φ J − Σ_i ∂_φ R_i(u, λ_i, φ)`.
//!
//! Stage unknowns are full-length nodal vectors. Dofs that are prescribed or
//! inactive keep an identity row (see [`Pinning`]).

use crate::error::{Error, Result};
use crate::fem::{
    cut_mass_matrix, thermal_coupling, CutOperator, ElasticForm, FESpace, Lame, MassForm, MeanForm,
    ScalarForm, ThermalLoadForm, DEFAULT_GHOST_GAMMA,
};
use crate::functionals::{ad_gradient, evaluate_levelset};
use crate::levelset::{build_cut, perturb, CutTopology, LevelSet};
use crate::linalg::{CsrMatrix, Factorization};
use crate::mesh::{build_skeleton, FacetSkeleton, Mesh2D};

pub trait StaggeredProblem: Sync {
    fn num_stages(&self) -> usize;

    /// `∂_{u_i} R_i` at `φ`, given the earlier stages in `u[..i]`.
    fn stage_operator(&self, i: usize, phi: &LevelSet, u: &[Vec<f64>]) -> Result<CsrMatrix>;

    /// `R_i(u_1..u_i, ·, φ)` as a vector over stage-`i` test functions.
    fn residual(&self, i: usize, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// `(∂_{u_j} R_i)ᵀ y` for `j < i`.
    fn coupling_transpose(&self, i: usize, j: usize, phi: &LevelSet, u: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>>;

    fn objective(&self, phi: &LevelSet, u: &[Vec<f64>]) -> Result<f64>;

    fn objective_du(&self, i: usize, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// `∂_φ R_i(u, λ_i, φ)` in the direction of each nodal hat function.
    fn residual_dphi(&self, i: usize, phi: &LevelSet, u: &[Vec<f64>], lambda: &[f64]) -> Result<Vec<f64>>;

    /// `∂_φ J(u, φ)` per node, at fixed `u`.
    fn objective_dphi(&self, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>>;
}

fn in_stage<T>(stage: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

/// Solve the stages in order. Each stage is affine in its own unknown, so
/// one linear solve from `u_i = 0` is exact.
pub fn solve_forward<P: StaggeredProblem + ?Sized>(p: &P, phi: &LevelSet) -> Result<Vec<Vec<f64>>> {
    let mut u: Vec<Vec<f64>> = Vec::with_capacity(p.num_stages());
    for i in 0..p.num_stages() {
        let k = in_stage(i, p.stage_operator(i, phi, &u))?;
        u.push(vec![0.0; k.dim()]);
        let r0 = in_stage(i, p.residual(i, phi, &u))?;
        let rhs: Vec<f64> = r0.iter().map(|r| -r).collect();
        u[i] = in_stage(i, Factorization::new(&k).and_then(|f| f.solve(&rhs)))?;
    }
    Ok(u)
}

/// Adjoint solutions, last stage first, with transposed operators.
pub fn solve_adjoint<P: StaggeredProblem + ?Sized>(p: &P, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = p.num_stages();
    let mut lambda: Vec<Vec<f64>> = vec![Vec::new(); k];
    for i in (0..k).rev() {
        let mut rhs = in_stage(i, p.objective_du(i, phi, u))?;
        for j in i + 1..k {
            let c = in_stage(j, p.coupling_transpose(j, i, phi, u, &lambda[j]))?;
            for (r, v) in rhs.iter_mut().zip(c) {
                *r -= v;
            }
        }
        let op = in_stage(i, p.stage_operator(i, phi, &u[..i]))?;
        lambda[i] = in_stage(i, Factorization::new(&op).and_then(|f| f.solve_transpose(&rhs)))?;
    }
    Ok(lambda)
}

/// `dJ(φ; w_n)` for every node `n`.
pub fn total_derivative<P: StaggeredProblem + ?Sized>(
    p: &P,
    phi: &LevelSet,
    u: &[Vec<f64>],
    lambda: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let mut d = p.objective_dphi(phi, u)?;
    for (i, l) in lambda.iter().enumerate() {
        let r = in_stage(i, p.residual_dphi(i, phi, u, l))?;
        for (a, b) in d.iter_mut().zip(r) {
            *a -= b;
        }
    }
    Ok(d)
}

/// Objective value and its shape derivative in one call.
pub fn objective_and_derivative<P: StaggeredProblem + ?Sized>(p: &P, phi: &LevelSet) -> Result<(f64, Vec<f64>)> {
    let u = solve_forward(p, phi)?;
    let lambda = solve_adjoint(p, phi, &u)?;
    Ok((p.objective(phi, &u)?, total_derivative(p, phi, &u, &lambda)?))
}

/// `J − Σ_i R_i(u, λ_i, φ)`.
pub fn lagrangian<P: StaggeredProblem + ?Sized>(p: &P, phi: &LevelSet, u: &[Vec<f64>], lambda: &[Vec<f64>]) -> Result<f64> {
    let mut l = p.objective(phi, u)?;
    for (i, li) in lambda.iter().enumerate() {
        let r = p.residual(i, phi, &u[..=i])?;
        l -= r.iter().zip(li).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(l)
}

/// Central finite difference of the full pipeline (re-cut, re-solve) at the
/// given nodes.
pub fn fd_total_derivative<P: StaggeredProblem + ?Sized>(p: &P, phi: &LevelSet, nodes: &[usize], step: f64) -> Result<Vec<f64>> {
    let mesh_len = phi.len();
    nodes
        .iter()
        .map(|&n| {
            if n >= mesh_len {
                return Err(Error::InvalidArgument(format!("node {n} out of range")));
            }
            let eval = |t: f64| -> Result<f64> {
                let q = perturb(phi, n, t)?;
                p.objective(&q, &solve_forward(p, &q)?)
            };
            Ok((eval(step)? - eval(-step)?) / (2.0 * step))
        })
        .collect()
}

/// Free-dof mask of a space. Non-free dofs get an identity row and column
/// in stage operators and a residual equal to their value.
#[derive(Debug, Clone, PartialEq)]
pub struct Pinning {
    pub free: Vec<bool>,
}

impl Pinning {
    pub fn new(space: &FESpace) -> Self {
        Self {
            free: (0..space.ndofs()).map(|d| space.is_free(d)).collect(),
        }
    }

    pub fn operator(&self, k: &CsrMatrix) -> Result<CsrMatrix> {
        let mut trips: Vec<_> = k
            .triplets()
            .into_iter()
            .filter(|&(i, j, _)| self.free[i] && self.free[j])
            .collect();
        trips.extend((0..self.free.len()).filter(|&d| !self.free[d]).map(|d| (d, d, 1.0)));
        CsrMatrix::from_triplets(k.dim(), &trips)
    }

    /// Zero the non-free entries.
    pub fn mask(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.free).map(|(&x, &f)| if f { x } else { 0.0 }).collect()
    }

    /// `K u − b` on free rows and `u` on the others.
    pub fn residual(&self, k: &CsrMatrix, u: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let ku = self.operator(k)?.matvec(u);
        Ok(ku.iter().zip(b).zip(&self.free).map(|((ku, b), &f)| if f { ku - b } else { *ku }).collect())
    }
}

/// Background data shared by the demo problems.
#[derive(Debug, Clone)]
pub struct CutSetting {
    pub mesh: Mesh2D,
    pub skeleton: FacetSkeleton,
    /// Boundary tag carrying the homogeneous Dirichlet condition.
    pub dirichlet: String,
    pub gamma: f64,
}

impl CutSetting {
    pub fn new(mesh: Mesh2D, dirichlet: &str) -> Result<Self> {
        if mesh.tagged(dirichlet).is_empty() {
            return Err(Error::InvalidArgument(format!("boundary tag '{dirichlet}' is empty or unknown")));
        }
        Ok(Self {
            skeleton: build_skeleton(&mesh)?,
            mesh,
            dirichlet: dirichlet.to_string(),
            gamma: DEFAULT_GHOST_GAMMA,
        })
    }

    pub fn cut(&self, phi: &LevelSet) -> Result<CutTopology<f64>> {
        build_cut(&self.mesh, phi.values())
    }

    pub fn pinning(&self, cut: &CutTopology<f64>, components: usize) -> Pinning {
        let mut space = FESpace::new(&self.mesh, &cut.states, components);
        space.fix_nodes(&self.mesh.tagged_vertices(&self.dirichlet), 0.0);
        Pinning::new(&space)
    }

    pub(crate) fn operator<'a>(&'a self, cut: &'a CutTopology<f64>) -> CutOperator<'a> {
        CutOperator {
            mesh: &self.mesh,
            skeleton: &self.skeleton,
            cut,
            psi: None,
            gamma: self.gamma,
        }
    }
}

/// Cut Poisson problem `−Δu = f` in Ω, `u = 0` on the Dirichlet tag,
/// natural conditions elsewhere, with compliance `J = ∫_Ω f u`.
#[derive(Debug, Clone)]
pub struct PoissonCompliance {
    pub setting: CutSetting,
    pub f: f64,
}

impl StaggeredProblem for PoissonCompliance {
    fn num_stages(&self) -> usize {
        1
    }

    fn stage_operator(&self, _: usize, phi: &LevelSet, _: &[Vec<f64>]) -> Result<CsrMatrix> {
        let cut = self.setting.cut(phi)?;
        let (k, _) = self.setting.operator(&cut).poisson()?;
        self.setting.pinning(&cut, 1).operator(&k)
    }

    fn residual(&self, _: usize, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        let cut = self.setting.cut(phi)?;
        let op = self.setting.operator(&cut);
        let (k, _) = op.poisson()?;
        self.setting.pinning(&cut, 1).residual(&k, &u[0], &op.scalar_load(self.f))
    }

    fn coupling_transpose(&self, i: usize, j: usize, _: &LevelSet, _: &[Vec<f64>], _: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Internal(format!("single-stage problem has no coupling {i} <- {j}")))
    }

    fn objective(&self, phi: &LevelSet, u: &[Vec<f64>]) -> Result<f64> {
        let cut = self.setting.cut(phi)?;
        let b = self.setting.operator(&cut).scalar_load(self.f);
        Ok(b.iter().zip(&u[0]).map(|(a, b)| a * b).sum())
    }

    fn objective_du(&self, _: usize, phi: &LevelSet, _: &[Vec<f64>]) -> Result<Vec<f64>> {
        let cut = self.setting.cut(phi)?;
        let b = self.setting.operator(&cut).scalar_load(self.f);
        Ok(self.setting.pinning(&cut, 1).mask(&b))
    }

    fn residual_dphi(&self, _: usize, phi: &LevelSet, u: &[Vec<f64>], lambda: &[f64]) -> Result<Vec<f64>> {
        let cut = self.setting.cut(phi)?;
        let lam = self.setting.pinning(&cut, 1).mask(lambda);
        let form = ScalarForm {
            u: &u[0],
            v: &lam,
            f: self.f,
            psi: None,
        };
        ad_gradient(&form, &self.setting.mesh, phi)
    }

    fn objective_dphi(&self, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        let g = ad_gradient(&MeanForm { u: &u[0] }, &self.setting.mesh, phi)?;
        Ok(g.into_iter().map(|x| self.f * x).collect())
    }
}

/// Two-stage thermo-elastic toy. Stage 1: `−Δθ = q` in Ω. Stage 2:
/// elasticity loaded by thermal expansion, `a(s, v) = ∫_Ω c θ div v`. Both
/// clamped on the Dirichlet tag. `J = ∫_Ω θ + ∫_Ω |s|²`.
#[derive(Debug, Clone)]
pub struct ThermoElastic {
    pub setting: CutSetting,
    pub q: f64,
    pub expansion: f64,
    pub lame: Lame,
}

impl ThermoElastic {
    fn coupling(&self, cut: &CutTopology<f64>) -> Vec<(usize, usize, f64)> {
        thermal_coupling(&self.setting.mesh, cut, self.expansion)
    }
}

impl StaggeredProblem for ThermoElastic {
    fn num_stages(&self) -> usize {
        2
    }

    fn stage_operator(&self, i: usize, phi: &LevelSet, _: &[Vec<f64>]) -> Result<CsrMatrix> {
        let cut = self.setting.cut(phi)?;
        let op = self.setting.operator(&cut);
        match i {
            0 => self.setting.pinning(&cut, 1).operator(&op.poisson()?.0),
            1 => self.setting.pinning(&cut, 2).operator(&op.elasticity(self.lame)?.0),
            _ => Err(Error::InvalidArgument(format!("no stage {i}"))),
        }
    }

    fn residual(&self, i: usize, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        let cut = self.setting.cut(phi)?;
        let op = self.setting.operator(&cut);
        match i {
            0 => self.setting.pinning(&cut, 1).residual(&op.poisson()?.0, &u[0], &op.scalar_load(self.q)),
            1 => {
                let mut load = vec![0.0; 2 * self.setting.mesh.num_vertices()];
                for (r, c, v) in self.coupling(&cut) {
                    load[r] += v * u[0][c];
                }
                self.setting.pinning(&cut, 2).residual(&op.elasticity(self.lame)?.0, &u[1], &load)
            }
            _ => Err(Error::InvalidArgument(format!("no stage {i}"))),
        }
    }

    fn coupling_transpose(&self, i: usize, j: usize, phi: &LevelSet, _: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
        if (i, j) != (1, 0) {
            return Err(Error::InvalidArgument(format!("no coupling {i} <- {j}")));
        }
        // ∂_θ R_2 = −C on free rows of stage 2.
        let cut = self.setting.cut(phi)?;
        let free = self.setting.pinning(&cut, 2).free;
        let mut out = vec![0.0; self.setting.mesh.num_vertices()];
        for (r, c, v) in self.coupling(&cut) {
            if free[r] {
                out[c] -= v * y[r];
            }
        }
        Ok(out)
    }

    fn objective(&self, phi: &LevelSet, u: &[Vec<f64>]) -> Result<f64> {
        let mesh = &self.setting.mesh;
        let mean = evaluate_levelset(&MeanForm { u: &u[0] }, mesh, phi)?;
        let energy = MassForm {
            u: &u[1],
            v: &u[1],
            components: 2,
        };
        Ok(mean + evaluate_levelset(&energy, mesh, phi)?)
    }

    fn objective_du(&self, i: usize, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        let cut = self.setting.cut(phi)?;
        let mesh = &self.setting.mesh;
        match i {
            0 => Ok(self.setting.operator(&cut).scalar_load(1.0)),
            1 => {
                let m = cut_mass_matrix(mesh, &cut, 2)?;
                Ok(m.matvec(&u[1]).into_iter().map(|x| 2.0 * x).collect())
            }
            _ => Err(Error::InvalidArgument(format!("no stage {i}"))),
        }
    }

    fn residual_dphi(&self, i: usize, phi: &LevelSet, u: &[Vec<f64>], lambda: &[f64]) -> Result<Vec<f64>> {
        let cut = self.setting.cut(phi)?;
        let mesh = &self.setting.mesh;
        match i {
            0 => {
                let lam = self.setting.pinning(&cut, 1).mask(lambda);
                let form = ScalarForm {
                    u: &u[0],
                    v: &lam,
                    f: self.q,
                    psi: None,
                };
                ad_gradient(&form, mesh, phi)
            }
            1 => {
                let lam = self.setting.pinning(&cut, 2).mask(lambda);
                let a = ad_gradient(
                    &ElasticForm {
                        u: &u[1],
                        v: &lam,
                        lame: self.lame,
                        psi: None,
                    },
                    mesh,
                    phi,
                )?;
                let l = ad_gradient(
                    &ThermalLoadForm {
                        theta: &u[0],
                        v: &lam,
                        c: self.expansion,
                    },
                    mesh,
                    phi,
                )?;
                Ok(a.iter().zip(l).map(|(a, l)| a - l).collect())
            }
            _ => Err(Error::InvalidArgument(format!("no stage {i}"))),
        }
    }

    fn objective_dphi(&self, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mesh = &self.setting.mesh;
        let a = ad_gradient(&MeanForm { u: &u[0] }, mesh, phi)?;
        let b = ad_gradient(
            &MassForm {
                u: &u[1],
                v: &u[1],
                components: 2,
            },
            mesh,
            phi,
        )?;
        Ok(a.iter().zip(b).map(|(a, b)| a + b).collect())
    }
}
