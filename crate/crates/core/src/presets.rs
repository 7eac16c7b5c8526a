//! Level sets and integrands used by the verification runs and demos.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::evolve::{evolve, EvolveConfig};
use crate::functionals::{Integrand, NormalIntegrand, VectorIntegrand};
use crate::levelset::LevelSet;
use crate::mesh::{build_skeleton, build_structured_mesh, BBox, Mesh2D, Point};

/// Built-in level-set geometries on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Disk of radius 0.23 centred at (0.5, 0.5).
    Circle,
    /// `cos(2πx) cos(2πy) − 0.11`; the interface reaches `∂D`.
    CosCos,
}

impl Geometry {
    pub fn eval(self, p: Point) -> f64 {
        match self {
            Geometry::Circle => (p[0] - 0.5).hypot(p[1] - 0.5) - 0.23,
            Geometry::CosCos => (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).cos() - 0.11,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Geometry::Circle => "circle",
            Geometry::CosCos => "coscos",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Geometry::Circle),
            "coscos" | "cos-cos" => Ok(Geometry::CosCos),
            _ => Err(Error::InvalidArgument(format!("unknown geometry '{s}'"))),
        }
    }
}

/// `f(x, y) = x + y`.
#[derive(Debug, Clone, Copy)]
pub struct SumXY;

impl SumXY {
    pub fn value(p: Point) -> f64 {
        p[0] + p[1]
    }

    pub fn gradient(_: Point) -> [f64; 2] {
        [1.0, 1.0]
    }
}

impl Integrand for SumXY {
    fn eval<S: Scalar>(&self, _: usize, x: [S; 2]) -> Result<S> {
        Ok(x[0] + x[1])
    }
}

/// `F(x, y) = (x + y) (x, y)`, with `div F = 3 (x + y)`.
#[derive(Debug, Clone, Copy)]
pub struct RadialFlux;

impl RadialFlux {
    pub fn value(p: Point) -> [f64; 2] {
        let s = p[0] + p[1];
        [s * p[0], s * p[1]]
    }

    pub fn divergence(p: Point) -> f64 {
        3.0 * (p[0] + p[1])
    }
}

impl VectorIntegrand for RadialFlux {
    fn eval<S: Scalar>(&self, _: usize, x: [S; 2]) -> Result<[S; 2]> {
        let s = x[0] + x[1];
        Ok([s * x[0], s * x[1]])
    }
}

/// `g(n) = |n − n_g|²` where `n_g` is the unit gradient of
/// `x − sin(πy/3)/10`.
#[derive(Debug, Clone, Copy)]
pub struct NormalTarget;

impl NormalTarget {
    pub fn target<S: Scalar>(x: [S; 2]) -> [S; 2] {
        let gy = (x[1] * (PI / 3.0)).cos() * (-PI / 30.0);
        let norm = (gy * gy + 1.0).sqrt();
        [S::one() / norm, gy / norm]
    }
}

impl NormalIntegrand for NormalTarget {
    fn eval<S: Scalar>(&self, _: usize, x: [S; 2], n: [S; 2]) -> Result<S> {
        let ng = Self::target(x);
        let d = [n[0] - ng[0], n[1] - ng[1]];
        Ok(d[0] * d[0] + d[1] * d[1])
    }
}

/// Thin ring with an arm running out to the right; as one volume it passes
/// through all four quadrants of the unit square.
pub fn snake(p: Point) -> f64 {
    let ring = ((p[0] - 0.5).hypot(p[1] - 0.5) - 0.3).abs() - 0.06;
    let arm = (p[1] - 0.5).abs().max((p[0] - 0.875).abs() - 0.1) - 0.03;
    ring.min(arm)
}

/// Part index in `0..4` of each cell by the quadrant of its centroid.
pub fn quadrant_partition(mesh: &Mesh2D) -> Vec<usize> {
    let b = mesh.bbox();
    let mid = [0.5 * (b.min[0] + b.max[0]), 0.5 * (b.min[1] + b.max[1])];
    (0..mesh.num_cells())
        .map(|c| {
            let q = mesh.cell_centroid(c);
            (q[0] > mid[0]) as usize + 2 * (q[1] > mid[1]) as usize
        })
        .collect()
}

/// Front advected towards a disk where the velocity vanishes.
///
/// The interface has a corner at (0.55, 0.55), inside a disk of radius 0.2
/// around that point. Outside the disk `β = (1, 0)` ramps up over 0.1.
#[derive(Debug, Clone)]
pub struct Nondesignable {
    pub mesh: Mesh2D,
    pub phi: LevelSet,
    pub beta: Vec<[f64; 2]>,
    pub centre: Point,
    pub radius: f64,
    /// Cells per side; `h = 1/n`.
    pub n: usize,
}

/// Largest nodal change of φ inside the disk and in its core (two cells in
/// from the disk boundary).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encroachment {
    pub disk: f64,
    pub core: f64,
}

impl Nondesignable {
    pub fn new(n: usize) -> Result<Self> {
        let mesh = build_structured_mesh(n, n, BBox::unit())?;
        let (centre, radius) = ([0.55, 0.55], 0.2);
        let phi = LevelSet::from_fn(&mesh, |p| (p[0] - 0.55).max(p[1] - 0.55))?;
        let beta = mesh
            .vertices()
            .iter()
            .map(|&p| [(((p[0] - centre[0]).hypot(p[1] - centre[1]) - radius) / 0.1).clamp(0.0, 1.0), 0.0])
            .collect();
        Ok(Self { mesh, phi, beta, centre, radius, n })
    }

    /// Default run: 20 steps of `dt = h/2`.
    pub fn config(&self, weighted: bool) -> EvolveConfig {
        EvolveConfig {
            dt: 0.5 / self.n as f64,
            steps: 20,
            velocity_weighted: weighted,
            ..Default::default()
        }
    }

    pub fn run(&self, cfg: EvolveConfig) -> Result<(LevelSet, Encroachment)> {
        let skel = build_skeleton(&self.mesh)?;
        let out = evolve(&self.mesh, &skel, &self.phi, &self.beta, cfg)?;
        let h = 1.0 / self.n as f64;
        let mut e = Encroachment { disk: 0.0, core: 0.0 };
        for (v, &p) in self.mesh.vertices().iter().enumerate() {
            let d = (out.values()[v] - self.phi.values()[v]).abs();
            let r = (p[0] - self.centre[0]).hypot(p[1] - self.centre[1]);
            if r <= self.radius {
                e.disk = e.disk.max(d);
            }
            if r <= self.radius - 2.0 * h {
                e.core = e.core.max(d);
            }
        }
        Ok((out, e))
    }
}
