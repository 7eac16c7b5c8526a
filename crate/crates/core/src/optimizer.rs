//! Volume-constrained shape optimisation with an augmented Lagrangian.
//!
//! Each iteration computes the derivative of
//! `L = J + λ C + ρ/2 C²` with `C = |Ω| − V_f |D|`, smooths it with the
//! Hilbertian extension, moves the interface by transport along
//! `β = g ∇φ/|∇φ|`, and updates the multiplier and penalty. The level set is
//! reinitialised every few iterations.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::adjoint::{objective_and_derivative, CutSetting, Pinning, StaggeredProblem};
use crate::error::{Error, Result};
use crate::evolve::{evolve, reinitialize, EvolveConfig, ReinitConfig};
use crate::fem::{compute_velocity, traction_load, CutOperator, ElasticForm, HilbertianExtension, Isolation, Lame};
use crate::functionals::{ad_gradient, evaluate_levelset, Const, Volume};
use crate::isovol::isolated_cells;
use crate::levelset::{CutTopology, LevelSet, Phase};
use crate::linalg::{dot, CsrMatrix};
use crate::mesh::{build_structured_mesh, BBox, FacetSkeleton, Mesh2D};

/// Objective `J(φ)` with its shape derivative per node.
pub trait Objective: Sync {
    fn evaluate(&self, phi: &LevelSet) -> Result<(f64, Vec<f64>)>;

    /// Whether `φ` is an acceptable iterate. A step landing on an
    /// inadmissible level set is retried with a smaller time step.
    fn admissible(&self, _phi: &LevelSet) -> Result<bool> {
        Ok(true)
    }
}

/// `J ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoObjective;

impl Objective for NoObjective {
    fn evaluate(&self, phi: &LevelSet) -> Result<(f64, Vec<f64>)> {
        Ok((0.0, vec![0.0; phi.len()]))
    }
}

/// Compliance `J = ∫_{Γ_N} g·u` of a cut linear-elastic body, clamped on a
/// Dirichlet tag and loaded by a constant traction on a second tag. The
/// traction facets must stay inside Ω (see [`OptProblem::frozen`]).
/// Volumes not connected to the clamp are found by graph colouring and held
/// by the `k_ψ` term.
#[derive(Debug, Clone)]
pub struct ElasticCompliance {
    pub setting: CutSetting,
    pub lame: Lame,
    pub load_tag: String,
    pub traction: [f64; 2],
    /// Weight of `k_ψ`. Isolated volumes share nodes and ghost facets with
    /// nearby connected ones, so a unit weight can stiffen a slender body
    /// noticeably.
    pub psi_weight: f64,
}

impl ElasticCompliance {
    fn state(&self, phi: &LevelSet) -> Result<(CutTopology<f64>, Isolation)> {
        let cut = self.setting.cut(phi)?;
        let flags = isolated_cells(&self.setting.mesh, &cut, &[&self.setting.dirichlet], Phase::In)?;
        let psi = Isolation::weighted(&self.setting.mesh, flags, self.psi_weight)?;
        Ok((cut, psi))
    }

    fn load(&self, phi: &LevelSet) -> Result<Vec<f64>> {
        let mesh = &self.setting.mesh;
        let facets = mesh.tagged(&self.load_tag);
        if facets.is_empty() {
            return Err(Error::InvalidArgument(format!("boundary tag '{}' is empty or unknown", self.load_tag)));
        }
        for &f in facets {
            if mesh.boundary_facets()[f].iter().any(|&v| phi.values()[v] > 0.0) {
                return Err(Error::AssumptionViolation(format!(
                    "loaded facet {f} is not inside the body; freeze the load region"
                )));
            }
        }
        Ok(traction_load(mesh, phi.values(), facets, self.traction))
    }

    fn operator(&self, cut: &CutTopology<f64>, psi: &Isolation) -> Result<CsrMatrix> {
        let op = CutOperator {
            mesh: &self.setting.mesh,
            skeleton: &self.setting.skeleton,
            cut,
            psi: Some(psi),
            gamma: self.setting.gamma,
        };
        Ok(op.elasticity(self.lame)?.0)
    }
}

impl StaggeredProblem for ElasticCompliance {
    fn num_stages(&self) -> usize {
        1
    }

    fn stage_operator(&self, _: usize, phi: &LevelSet, _: &[Vec<f64>]) -> Result<CsrMatrix> {
        let (cut, psi) = self.state(phi)?;
        self.setting.pinning(&cut, 2).operator(&self.operator(&cut, &psi)?)
    }

    fn residual(&self, _: usize, phi: &LevelSet, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (cut, psi) = self.state(phi)?;
        let pin: Pinning = self.setting.pinning(&cut, 2);
        pin.residual(&self.operator(&cut, &psi)?, &u[0], &self.load(phi)?)
    }

    fn coupling_transpose(&self, i: usize, j: usize, _: &LevelSet, _: &[Vec<f64>], _: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Internal(format!("single-stage problem has no coupling {i} <- {j}")))
    }

    fn objective(&self, phi: &LevelSet, u: &[Vec<f64>]) -> Result<f64> {
        Ok(dot(&self.load(phi)?, &u[0]))
    }

    fn objective_du(&self, _: usize, phi: &LevelSet, _: &[Vec<f64>]) -> Result<Vec<f64>> {
        let cut = self.setting.cut(phi)?;
        Ok(self.setting.pinning(&cut, 2).mask(&self.load(phi)?))
    }

    /// Loaded facets lie in Ω, so the load does not move with `φ`. The
    /// indicator `ψ` changes only by topology events and is held fixed.
    fn residual_dphi(&self, _: usize, phi: &LevelSet, u: &[Vec<f64>], lambda: &[f64]) -> Result<Vec<f64>> {
        let (cut, psi) = self.state(phi)?;
        let lam = self.setting.pinning(&cut, 2).mask(lambda);
        let form = ElasticForm {
            u: &u[0],
            v: &lam,
            lame: self.lame,
            psi: Some(&psi),
        };
        ad_gradient(&form, &self.setting.mesh, phi)
    }

    fn objective_dphi(&self, phi: &LevelSet, _: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(vec![0.0; phi.len()])
    }
}

impl Objective for ElasticCompliance {
    fn evaluate(&self, phi: &LevelSet) -> Result<(f64, Vec<f64>)> {
        objective_and_derivative(self, phi)
    }

    /// A loaded volume cut off from the clamp is held only by the `k_ψ`
    /// term, which makes `J` spuriously small.
    fn admissible(&self, phi: &LevelSet) -> Result<bool> {
        let (_, psi) = self.state(phi)?;
        let mesh = &self.setting.mesh;
        Ok(mesh.tagged(&self.load_tag).iter().all(|&f| {
            let [a, b] = mesh.boundary_facets()[f];
            mesh.vertex_cells(a)
                .iter()
                .filter(|c| mesh.vertex_cells(b).contains(c))
                .all(|&c| !psi.cells()[c])
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlConfig {
    pub volume_fraction: f64,
    /// Initial penalty; `None` picks `0.1 |J₀| / max(|C₀|, 1e-2)²`, or
    /// `1 / max(|C₀|, 1e-2)` when `J₀ = 0`.
    pub rho0: Option<f64>,
    pub rho_growth: f64,
    /// Penalty cap; `None` is ten times the initial penalty.
    pub rho_max: Option<f64>,
    /// Time step as a fraction of `h / β_ref`, with `β_ref` the largest
    /// velocity of the first iteration.
    pub cfl: f64,
    pub evolve_steps: usize,
    pub c_e: f64,
    pub reinit_every: usize,
    /// Hilbertian smoothing length in units of the mesh size.
    pub alpha_factor: f64,
    pub max_iters: usize,
    pub c_tol: f64,
    /// Stop once `|C| ≤ c_tol` and the last `window` values of `J` are all
    /// within `j_tol` (relative) of the current one.
    pub j_tol: f64,
    pub window: usize,
    /// Halvings of the time step tried before an inadmissible iterate is
    /// accepted anyway.
    pub max_retries: usize,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            volume_fraction: 0.4,
            rho0: None,
            rho_growth: 1.1,
            rho_max: None,
            cfl: 0.1,
            evolve_steps: 5,
            c_e: 0.01,
            reinit_every: 5,
            alpha_factor: 4.0,
            max_iters: 300,
            c_tol: 1e-3,
            j_tol: 1e-3,
            window: 5,
            max_retries: 4,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.volume_fraction > 0.0
            && self.volume_fraction < 1.0
            && self.rho0.is_none_or(|r| r > 0.0)
            && self.rho_growth >= 1.0
            && self.rho_max.is_none_or(|r| r > 0.0)
            && self.cfl > 0.0
            && self.evolve_steps > 0
            && self.c_e > 0.0
            && self.alpha_factor >= 0.0
            && self.c_tol > 0.0
            && self.j_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimiser configuration {self:?}")))
        }
    }
}

/// One row of the iteration history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub j: f64,
    pub c: f64,
    pub lambda: f64,
    pub rho: f64,
    /// `⟨g, dL⟩`, non-negative for a descent direction.
    pub descent: f64,
    pub max_velocity: f64,
    /// A reinitialisation was applied after this step.
    pub reinit: bool,
    /// Time-step halvings needed to reach an admissible iterate.
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlState {
    pub lambda: f64,
    pub rho: f64,
    pub rho_max: f64,
    pub beta_ref: f64,
    pub history: Vec<HistoryRow>,
}

/// Shape optimisation problem on a fixed background mesh.
pub struct OptProblem<'a> {
    pub mesh: &'a Mesh2D,
    pub skeleton: &'a FacetSkeleton,
    pub objective: &'a dyn Objective,
    /// Non-designable nodes: zero velocity, and their values are restored
    /// after every evolution and reinitialisation.
    pub frozen: Vec<bool>,
}

impl OptProblem<'_> {
    /// `C(φ) = |Ω| − V_f |D|` and its derivative.
    pub fn constraint(&self, phi: &LevelSet, vf: f64) -> Result<(f64, Vec<f64>)> {
        let vol = Volume::inside(Const(1.0));
        let c = evaluate_levelset(&vol, self.mesh, phi)? - vf * self.mesh.total_area();
        Ok((c, ad_gradient(&vol, self.mesh, phi)?))
    }

    pub fn constraint_value(&self, phi: &LevelSet, vf: f64) -> Result<f64> {
        let vol = Volume::inside(Const(1.0));
        Ok(evaluate_levelset(&vol, self.mesh, phi)? - vf * self.mesh.total_area())
    }

    fn restore_frozen(&self, phi: Vec<f64>, reference: &LevelSet) -> Result<LevelSet> {
        let mut phi = phi;
        for (v, &f) in self.frozen.iter().enumerate() {
            let r = reference.values()[v];
            if f {
                phi[v] = if r < 0.0 { phi[v].min(r) } else { phi[v].max(r) };
            }
        }
        LevelSet::new(self.mesh, phi)
    }
}

fn check_finite(iter: usize, j: f64, c: f64, state: &AlState) -> Result<()> {
    if j.is_finite() && c.is_finite() {
        return Ok(());
    }
    let last = state.history.last();
    Err(Error::NonFinite(format!(
        "iteration {iter}: J = {j}, C = {c}, λ = {}, ρ = {}; previous row {last:?}",
        state.lambda, state.rho
    )))
}

/// Work shared by all iterations of a run.
pub struct Optimizer<'a> {
    pub problem: OptProblem<'a>,
    pub config: AlConfig,
    extension: HilbertianExtension,
    reference: LevelSet,
}

impl<'a> Optimizer<'a> {
    /// `reference` supplies the values restored on frozen nodes.
    pub fn new(problem: OptProblem<'a>, config: AlConfig, reference: &LevelSet) -> Result<Self> {
        config.validate()?;
        if problem.frozen.len() != problem.mesh.num_vertices() {
            return Err(Error::InvalidArgument("frozen mask length does not match mesh".into()));
        }
        let alpha = config.alpha_factor * problem.mesh.mesh_size();
        Ok(Self {
            extension: HilbertianExtension::new(problem.mesh, alpha)?,
            problem,
            config,
            reference: reference.clone(),
        })
    }

    pub fn initial_state(&self, phi: &LevelSet) -> Result<AlState> {
        let (j, _) = self.problem.objective.evaluate(phi)?;
        let (c, _) = self.problem.constraint(phi, self.config.volume_fraction)?;
        let cs = c.abs().max(1e-2);
        let rho = self
            .config
            .rho0
            .unwrap_or(if j == 0.0 { 1.0 / cs } else { 0.1 * j.abs() / (cs * cs) });
        Ok(AlState {
            lambda: 0.0,
            rho,
            rho_max: self.config.rho_max.unwrap_or(10.0 * rho),
            beta_ref: 0.0,
            history: Vec::new(),
        })
    }

    /// One augmented-Lagrangian iteration.
    pub fn step(&self, phi: &LevelSet, state: &AlState) -> Result<(LevelSet, AlState)> {
        let cfg = &self.config;
        let p = &self.problem;
        let iter = state.history.len();
        let (j, dj) = p.objective.evaluate(phi)?;
        let (c, dc) = p.constraint(phi, cfg.volume_fraction)?;
        check_finite(iter, j, c, state)?;

        let w = state.lambda + state.rho * c;
        let dl: Vec<f64> = dj.iter().zip(&dc).map(|(a, b)| a + w * b).collect();
        let mut g = self.extension.apply(&dl)?;
        let descent = dot(&g, &dl);
        for (gi, &f) in g.iter_mut().zip(&p.frozen) {
            if f {
                *gi = 0.0;
            }
        }
        let beta = compute_velocity(p.mesh, phi.values(), &g);
        let bmax = beta.iter().fold(0.0f64, |m, b| m.max(b[0].hypot(b[1])));
        let mut next = state.clone();
        if next.beta_ref == 0.0 {
            next.beta_ref = bmax;
        }
        let due = cfg.reinit_every > 0 && (iter + 1) % cfg.reinit_every == 0;
        let h = p.mesh.mesh_size();
        let mut dt = cfg.cfl * h / next.beta_ref.max(bmax);
        let mut retries = 0;
        let (moved, reinit) = loop {
            let (moved, kept) = self.advance(phi, &beta, bmax, dt, due)?;
            if retries == cfg.max_retries || p.objective.admissible(&moved)? {
                break (moved, kept);
            }
            retries += 1;
            dt *= 0.5;
        };
        if retries == cfg.max_retries && cfg.max_retries > 0 {
            log::warn!("iteration {iter}: accepted an inadmissible iterate after {retries} retries");
        }
        next.history.push(HistoryRow {
            iter,
            j,
            c,
            lambda: state.lambda,
            rho: state.rho,
            descent,
            max_velocity: bmax,
            reinit,
            retries,
        });
        // Multiplier update with the constraint at the new iterate; using
        // the old one leaves the (C, λ) iteration undamped.
        next.lambda = state.lambda + state.rho * p.constraint_value(&moved, cfg.volume_fraction)?;
        next.rho = (state.rho * cfg.rho_growth).min(state.rho_max).max(state.rho);
        Ok((moved, next))
    }

    /// Transport, then reinitialise if asked. Returns whether the
    /// reinitialised field was kept.
    fn advance(&self, phi: &LevelSet, beta: &[[f64; 2]], bmax: f64, dt: f64, reinit: bool) -> Result<(LevelSet, bool)> {
        let p = &self.problem;
        let mut moved = phi.clone();
        if bmax > 0.0 {
            let ecfg = EvolveConfig {
                c_e: self.config.c_e,
                dt,
                steps: self.config.evolve_steps,
                velocity_weighted: true,
            };
            let out = evolve(p.mesh, p.skeleton, phi, beta, ecfg)?;
            moved = p.restore_frozen(out.into_values(), &self.reference)?;
        }
        let mut kept = false;
        if reinit {
            let out = reinitialize(p.mesh, p.skeleton, &moved, ReinitConfig::default())?;
            if out.converged && out.sign_changes == 0 {
                moved = p.restore_frozen(out.phi.into_values(), &self.reference)?;
                kept = true;
            } else {
                log::warn!(
                    "reinitialisation discarded ({} Picard iterations, converged {}, {} sign changes)",
                    out.iterations,
                    out.converged,
                    out.sign_changes
                );
            }
        }
        Ok((moved, kept))
    }

    fn converged(&self, state: &AlState) -> bool {
        let h = &state.history;
        let cfg = &self.config;
        let Some(last) = h.last() else { return false };
        if last.c.abs() > cfg.c_tol || h.len() <= cfg.window {
            return false;
        }
        let scale = last.j.abs().max(f64::MIN_POSITIVE);
        h[h.len() - 1 - cfg.window..h.len() - 1]
            .iter()
            .all(|r| (r.j - last.j).abs() <= cfg.j_tol * scale || last.j == r.j)
    }

    /// Iterate until converged or `max_iters`. `observe` sees every new
    /// iterate with its history row.
    pub fn run<F>(&self, phi0: &LevelSet, mut observe: F) -> Result<OptOutcome>
    where
        F: FnMut(&LevelSet, &HistoryRow) -> Result<()>,
    {
        let mut phi = phi0.clone();
        if self.config.max_iters == 0 {
            return Ok(OptOutcome {
                phi,
                state: AlState {
                    lambda: 0.0,
                    rho: 0.0,
                    rho_max: 0.0,
                    beta_ref: 0.0,
                    history: Vec::new(),
                },
                converged: false,
            });
        }
        let mut state = self.initial_state(&phi)?;
        for _ in 0..self.config.max_iters {
            let (next, s) = self.step(&phi, &state)?;
            observe(&phi, s.history.last().expect("step records a row"))?;
            // The last row describes `phi`, so that is the iterate returned.
            if self.converged(&s) {
                return Ok(OptOutcome {
                    phi,
                    state: s,
                    converged: true,
                });
            }
            phi = next;
            state = s;
        }
        Ok(OptOutcome {
            phi,
            state,
            converged: false,
        })
    }
}

#[derive(Debug, Clone)]
pub struct OptOutcome {
    pub phi: LevelSet,
    pub state: AlState,
    pub converged: bool,
}

/// Iteration history as CSV with 17 significant digits.
pub fn write_history<W: Write>(out: W, history: &[HistoryRow]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(format!("writing history: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "J", "C", "lambda", "rho", "descent", "max_velocity", "reinit", "retries"])
        .map_err(io)?;
    for r in history {
        let f = |x: f64| format!("{x:.16e}");
        w.write_record([
            r.iter.to_string(),
            f(r.j),
            f(r.c),
            f(r.lambda),
            f(r.rho),
            f(r.descent),
            f(r.max_velocity),
            (r.reinit as u8).to_string(),
            r.retries.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(format!("writing history: {e}")))
}

pub fn write_history_file(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let f = std::fs::File::create(path)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", path.display())))?;
    write_history(std::io::BufWriter::new(f), history)
}

/// Cantilever on `[0, 2] × [0, 1]`: left edge clamped, downward unit
/// traction on the right edge for `|y − 0.5| ≤ 0.05`. The start has a
/// regular pattern of holes and the region around the load is frozen
/// solid.
pub struct Cantilever {
    pub compliance: ElasticCompliance,
    pub phi0: LevelSet,
    pub frozen: Vec<bool>,
}

impl Cantilever {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        let mut mesh = build_structured_mesh(nx, ny, BBox::new([0.0, 0.0], [2.0, 1.0]))?;
        let tol = 1e-9;
        mesh.tag_boundary("load", |p| (p[0] - 2.0).abs() <= tol && (p[1] - 0.5).abs() <= 0.05 + tol);
        let h = mesh.mesh_size();
        let frozen: Vec<bool> = mesh
            .vertices()
            .iter()
            .map(|p| p[0] >= 1.9 - tol && (p[1] - 0.5).abs() <= 0.1 + tol)
            .collect();
        let values: Vec<f64> = mesh
            .vertices()
            .iter()
            .zip(&frozen)
            .map(|(p, &f)| {
                let v = -(4.0 * PI * p[0]).cos() * (4.0 * PI * p[1]).cos() - 0.1;
                if f {
                    v.min(-2.0 * h)
                } else {
                    v
                }
            })
            .collect();
        let setting = CutSetting::new(mesh, "left")?;
        let raw = LevelSet::new(&setting.mesh, values)?;
        // Start from a distance function so velocities are on the same scale
        // as after later reinitialisations.
        let out = reinitialize(&setting.mesh, &setting.skeleton, &raw, ReinitConfig::default())?;
        let mut values = out.phi.into_values();
        for (v, &f) in values.iter_mut().zip(&frozen) {
            if f {
                *v = v.min(-2.0 * h);
            }
        }
        let phi0 = LevelSet::new(&setting.mesh, values)?;
        let compliance = ElasticCompliance {
            setting,
            lame: Lame::default(),
            load_tag: "load".into(),
            traction: [0.0, -1.0],
            // A unit spring on an island next to the body is as stiff as the
            // whole beam and drags J around; keep it small.
            psi_weight: 1e-3,
        };
        Ok(Self {
            compliance,
            phi0,
            frozen,
        })
    }
}
