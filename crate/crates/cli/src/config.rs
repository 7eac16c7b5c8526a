use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub verify: VerifyConfig,
    pub hessian: HessianConfig,
    pub isovol: IsovolConfig,
    pub reinit: ReinitSection,
    pub evolve: EvolveSection,
    pub optimize: OptimizeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("cutform-out"),
            seed: 0,
            threads: 1,
            verify: VerifyConfig::default(),
            hessian: HessianConfig::default(),
            isovol: IsovolConfig::default(),
            reinit: ReinitSection::default(),
            evolve: EvolveSection::default(),
            optimize: OptimizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub geometries: Vec<String>,
    pub meshes: Vec<usize>,
    pub functionals: Vec<String>,
    pub fd_step: f64,
    /// Bound on `‖AD − exact‖∞ / max(1, ‖exact‖∞)`.
    pub exact_tol: f64,
    /// Bound on `‖AD − FD‖∞`.
    pub fd_tol: f64,
    /// Also dump every gradient as `gradients/<geometry>_<J>_<n>.csv`.
    pub write_gradients: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            geometries: vec!["circle".into(), "coscos".into()],
            meshes: vec![16, 32, 64],
            functionals: ["J1", "J2", "J3", "J4"].map(String::from).to_vec(),
            fd_step: 1e-6,
            exact_tol: 1e-13,
            fd_tol: 1e-7,
            write_gradients: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HessianConfig {
    pub geometry: String,
    pub mesh: usize,
    pub fd_step: f64,
    pub tol: f64,
    pub symmetry_tol: f64,
}

impl Default for HessianConfig {
    fn default() -> Self {
        Self {
            geometry: "circle".into(),
            mesh: 16,
            fd_step: 1e-6,
            tol: 1e-4,
            symmetry_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    None,
    Quadrants,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsovolConfig {
    /// snake | circle | coscos
    pub geometry: String,
    pub mesh: usize,
    pub partition: PartitionKind,
    /// Number of parts for the random partition.
    pub parts: usize,
    pub dirichlet: Vec<String>,
}

impl Default for IsovolConfig {
    fn default() -> Self {
        Self {
            geometry: "snake".into(),
            mesh: 48,
            partition: PartitionKind::Quadrants,
            parts: 4,
            dirichlet: vec!["left".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinitSection {
    /// quadratic | circle | coscos | snake
    pub geometry: String,
    pub mesh: usize,
    /// viscosity | interior-penalty
    pub variant: String,
    pub c_r1: f64,
    pub c_r2: f64,
    pub gamma_d: f64,
    pub picard_tol: f64,
    pub picard_maxit: usize,
    pub relaxation: f64,
}

impl Default for ReinitSection {
    fn default() -> Self {
        let d = cutform::evolve::ReinitConfig::default();
        Self {
            geometry: "quadratic".into(),
            mesh: 40,
            variant: "viscosity".into(),
            c_r1: d.c_r1,
            c_r2: 0.1,
            gamma_d: d.gamma_d,
            picard_tol: d.picard_tol,
            picard_maxit: d.picard_maxit,
            relaxation: d.relaxation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSection {
    /// Only `nondesignable` is available.
    pub geometry: String,
    pub mesh: usize,
    pub steps: usize,
    /// `dt = cfl · h`.
    pub cfl: f64,
    pub c_e: f64,
    /// Write a VTK snapshot every this many steps (0 = final state only).
    pub snapshot_every: usize,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            geometry: "nondesignable".into(),
            mesh: 40,
            steps: 20,
            cfl: 0.5,
            c_e: 0.01,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    /// cantilever | volume
    pub problem: String,
    pub nx: usize,
    pub ny: usize,
    pub volume_fraction: f64,
    pub max_iters: usize,
    pub cfl: f64,
    pub evolve_steps: usize,
    pub c_e: f64,
    pub reinit_every: usize,
    pub alpha_factor: f64,
    pub c_tol: f64,
    pub j_tol: f64,
    pub window: usize,
    pub rho_growth: f64,
    pub max_retries: usize,
    /// Write φ every this many iterations (0 = final design only).
    pub snapshot_every: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        let d = cutform::optimizer::AlConfig::default();
        Self {
            problem: "cantilever".into(),
            nx: 100,
            ny: 50,
            volume_fraction: d.volume_fraction,
            max_iters: d.max_iters,
            cfl: d.cfl,
            evolve_steps: d.evolve_steps,
            c_e: d.c_e,
            reinit_every: d.reinit_every,
            alpha_factor: d.alpha_factor,
            c_tol: d.c_tol,
            j_tol: d.j_tol,
            window: d.window,
            rho_growth: d.rho_growth,
            max_retries: d.max_retries,
            snapshot_every: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn al_config(&self) -> cutform::optimizer::AlConfig {
        cutform::optimizer::AlConfig {
            volume_fraction: self.volume_fraction,
            max_iters: self.max_iters,
            cfl: self.cfl,
            evolve_steps: self.evolve_steps,
            c_e: self.c_e,
            reinit_every: self.reinit_every,
            alpha_factor: self.alpha_factor,
            c_tol: self.c_tol,
            j_tol: self.j_tol,
            window: self.window,
            rho_growth: self.rho_growth,
            max_retries: self.max_retries,
            ..Default::default()
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: String,
    pub mesh: Option<usize>,
    pub geometry: Option<String>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub fd_step: Option<f64>,
    pub snapshot_every: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    /// Apply flag overrides to the section of `o.command`, then the
    /// `CUTFORM_OUT` environment variable.
    pub fn apply(&mut self, o: &Overrides, env_out: Option<PathBuf>) -> Result<(), Failure> {
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(out) = env_out {
            self.out = out;
        }
        let unsupported = |flag: &str| Failure::Config(format!("{flag} does not apply to '{}'", o.command));
        match o.command.as_str() {
            "verify" => {
                if let Some(n) = o.mesh {
                    self.verify.meshes = vec![n];
                }
                if let Some(g) = &o.geometry {
                    self.verify.geometries = vec![g.clone()];
                }
                if let Some(s) = o.fd_step {
                    self.verify.fd_step = s;
                }
            }
            "hessian-check" => {
                set(&mut self.hessian.mesh, o.mesh);
                set(&mut self.hessian.geometry, o.geometry.clone());
                set(&mut self.hessian.fd_step, o.fd_step);
            }
            "isovol" => {
                set(&mut self.isovol.mesh, o.mesh);
                set(&mut self.isovol.geometry, o.geometry.clone());
            }
            "reinit" => {
                set(&mut self.reinit.mesh, o.mesh);
                set(&mut self.reinit.geometry, o.geometry.clone());
            }
            "evolve" => {
                set(&mut self.evolve.mesh, o.mesh);
                set(&mut self.evolve.geometry, o.geometry.clone());
                set(&mut self.evolve.snapshot_every, o.snapshot_every);
            }
            "optimize" => {
                if let Some(n) = o.mesh {
                    self.optimize.ny = n;
                    self.optimize.nx = if self.optimize.problem == "cantilever" { 2 * n } else { n };
                }
                set(&mut self.optimize.problem, o.geometry.clone());
                set(&mut self.optimize.snapshot_every, o.snapshot_every);
            }
            _ => {}
        }
        if o.fd_step.is_some() && !matches!(o.command.as_str(), "verify" | "hessian-check") {
            return Err(unsupported("--fd-step"));
        }
        if o.snapshot_every.is_some() && !matches!(o.command.as_str(), "evolve" | "optimize") {
            return Err(unsupported("--snapshot-every"));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        let v = &self.verify;
        if v.meshes.is_empty() || v.meshes.contains(&0) {
            return bad("verify.meshes must be a non-empty list of positive sizes".into());
        }
        for f in &v.functionals {
            if !["J1", "J2", "J3", "J4"].contains(&f.as_str()) {
                return bad(format!("unknown functional '{f}' (expected J1..J4)"));
            }
        }
        for (name, x) in [
            ("verify.fd_step", v.fd_step),
            ("hessian.fd_step", self.hessian.fd_step),
            ("evolve.cfl", self.evolve.cfl),
            ("evolve.c_e", self.evolve.c_e),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        for (name, n) in [
            ("hessian.mesh", self.hessian.mesh),
            ("isovol.mesh", self.isovol.mesh),
            ("reinit.mesh", self.reinit.mesh),
            ("evolve.mesh", self.evolve.mesh),
            ("optimize.nx", self.optimize.nx),
            ("optimize.ny", self.optimize.ny),
        ] {
            if n == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.isovol.partition == PartitionKind::Random && !(1..=64).contains(&self.isovol.parts) {
            return bad("isovol.parts must be in 1..=64".into());
        }
        if !["viscosity", "interior-penalty"].contains(&self.reinit.variant.as_str()) {
            return bad(format!("unknown reinit variant '{}'", self.reinit.variant));
        }
        if self.evolve.geometry != "nondesignable" {
            return bad(format!("unknown evolve geometry '{}' (only 'nondesignable')", self.evolve.geometry));
        }
        if !["cantilever", "volume"].contains(&self.optimize.problem.as_str()) {
            return bad(format!("unknown optimize problem '{}'", self.optimize.problem));
        }
        self.optimize.al_config().validate().map_err(|e| Failure::Config(e.to_string()))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<RunConfig>("[verify]\nmesh = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1\n").is_err());
        let c: RunConfig = toml::from_str("[hessian]\nmesh = 8\n").unwrap();
        assert_eq!(c.hessian.mesh, 8);
        assert_eq!(c.hessian.tol, 1e-4);
    }

    #[test]
    fn flags_then_env_take_precedence() {
        let mut c = RunConfig::default();
        let o = Overrides {
            command: "optimize".into(),
            mesh: Some(20),
            out: Some("a".into()),
            ..Default::default()
        };
        c.apply(&o, Some("b".into())).unwrap();
        assert_eq!((c.optimize.nx, c.optimize.ny), (40, 20));
        assert_eq!(c.out, PathBuf::from("b"));
    }

    #[test]
    fn misplaced_flag_is_a_config_error() {
        let mut c = RunConfig::default();
        let o = Overrides {
            command: "isovol".into(),
            fd_step: Some(1e-6),
            ..Default::default()
        };
        assert!(matches!(c.apply(&o, None), Err(Failure::Config(_))));
    }
}
