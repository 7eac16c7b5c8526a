//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines come out in order and
//! unbuffered. Exits nonzero if any criterion fails.

mod common;

use std::time::Instant;

use common::{bijective, oracle, random_levelset, random_partition};
use cutform::adjoint::{
    fd_total_derivative, lagrangian, solve_adjoint, solve_forward, total_derivative, CutSetting, PoissonCompliance,
    StaggeredProblem, ThermoElastic,
};
use cutform::analytic::{exact_dj1, exact_dj2, exact_dj3, BoundaryTerm};
use cutform::evolve::{evolve, EvolveConfig};
use cutform::fem::Lame;
use cutform::functionals::{
    ad_gradient, ad_hessian, cut_band, evaluate_levelset, fd_gradient, max_abs, max_abs_diff, Boundary, Const, Flux,
    NormalFunctional, Volume,
};
use cutform::isovol::{build_cut_graph, colour_distributed, colour_graph, PartitionedGraph};
use cutform::levelset::perturb;
use cutform::mesh::build_skeleton;
use cutform::optimizer::{AlConfig, Cantilever, NoObjective, OptProblem, Optimizer};
use cutform::presets::{quadrant_partition, snake, Geometry, Nondesignable, NormalTarget, RadialFlux, SumXY};
use cutform::{build_cut, build_structured_mesh, classify_cells, BBox, LevelSet, Mesh2D, Phase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(n: usize) -> Mesh2D {
    build_structured_mesh(n, n, BBox::unit()).unwrap()
}

fn geometry(g: Geometry, n: usize) -> (Mesh2D, LevelSet) {
    let mesh = unit(n);
    let phi = LevelSet::from_fn(&mesh, |p| g.eval(p)).unwrap();
    (mesh, phi)
}

const GEOMETRIES: [Geometry; 2] = [Geometry::Circle, Geometry::CosCos];
const MESHES: [usize; 3] = [16, 32, 64];

/// AD against closed forms for J1–J3, at 1e-13 · max(1, ‖exact‖∞).
fn table1_exact() -> Check {
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for g in GEOMETRIES {
        let t = Instant::now();
        for n in MESHES {
            let (mesh, phi) = geometry(g, n);
            let pairs = [
                (ad_gradient(&Volume::inside(SumXY), &mesh, &phi), exact_dj1(&mesh, &phi, SumXY::value)),
                (
                    ad_gradient(&Boundary::new(SumXY), &mesh, &phi),
                    exact_dj2(&mesh, &phi, SumXY::value, SumXY::gradient, BoundaryTerm::Include),
                ),
                (
                    ad_gradient(&Flux::new(RadialFlux), &mesh, &phi),
                    exact_dj3(&mesh, &phi, RadialFlux::divergence, Some(&RadialFlux::value)).map(|d| d.gradient),
                ),
            ];
            for (ad, ex) in pairs {
                let (ad, ex) = (ad.map_err(|e| e.to_string())?, ex.map_err(|e| e.to_string())?);
                worst = worst.max(max_abs_diff(&ad, &ex) / max_abs(&ex).max(1.0));
            }
        }
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }
    ensure(
        worst <= 1e-13 && slowest <= 60.0,
        format!("max scaled AD-exact {worst:.2e} (tol 1e-13), slowest geometry {slowest:.1} s (limit 60 s)"),
    )
}

/// AD against central differences with step 1e-6 for J1–J4.
fn ad_vs_fd() -> Check {
    let mut worst = 0.0f64;
    for g in GEOMETRIES {
        for n in MESHES {
            let (mesh, phi) = geometry(g, n);
            let t = 1e-6;
            let errs = [
                diff(&Volume::inside(SumXY), &mesh, &phi, t),
                diff(&Boundary::new(SumXY), &mesh, &phi, t),
                diff(&Flux::new(RadialFlux), &mesh, &phi, t),
                diff(&NormalFunctional::new(NormalTarget), &mesh, &phi, t),
            ];
            for e in errs {
                worst = worst.max(e?);
            }
        }
    }
    ensure(worst <= 1e-7, format!("max |AD - FD| {worst:.2e} (tol 1e-7)"))
}

fn diff<F: cutform::functionals::Functional>(f: &F, mesh: &Mesh2D, phi: &LevelSet, t: f64) -> Result<f64, String> {
    let ad = ad_gradient(f, mesh, phi).map_err(|e| e.to_string())?;
    let fd = fd_gradient(f, mesh, phi, t).map_err(|e| e.to_string())?;
    Ok(max_abs_diff(&ad, &fd))
}

/// Hessian of ∫_Γ |n − n_g|² against FD of the AD gradient.
fn hessian() -> Check {
    let (mesh, phi) = geometry(Geometry::Circle, 16);
    let f = NormalFunctional::new(NormalTarget);
    let nodes = cut_band(&mesh, &classify_cells(&mesh, phi.values()).unwrap());
    let h = ad_hessian(&f, &mesh, &phi, &nodes).map_err(|e| e.to_string())?;
    let t = 1e-6;
    let mut err = 0.0f64;
    for (b, &j) in nodes.iter().enumerate() {
        let gp = ad_gradient(&f, &mesh, &perturb(&phi, j, t).unwrap()).map_err(|e| e.to_string())?;
        let gm = ad_gradient(&f, &mesh, &perturb(&phi, j, -t).unwrap()).map_err(|e| e.to_string())?;
        for (a, &i) in nodes.iter().enumerate() {
            err = err.max(((gp[i] - gm[i]) / (2.0 * t) - h.get(a, b)).abs());
        }
    }
    let asym = h.asymmetry();
    ensure(
        err <= 1e-4 && asym <= 1e-12,
        format!("{} nodes, max |H_AD - H_FD| {err:.2e} (tol 1e-4), symmetry defect {asym:.2e} (tol 1e-12)", nodes.len()),
    )
}

/// Interface ending on ∂D: the boundary-facet term is needed and correct.
fn boundary_term() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    let cases: [(&str, Box<dyn Fn([f64; 2]) -> f64>); 2] = [
        ("oblique line", Box::new(|p| p[0] - 0.3 * p[1] - 0.413)),
        ("coscos", Box::new(|p| Geometry::CosCos.eval(p))),
    ];
    for (name, f) in cases {
        let mesh = unit(32);
        let phi = LevelSet::from_fn(&mesh, f).unwrap();
        let ad = ad_gradient(&Boundary::new(SumXY), &mesh, &phi).map_err(|e| e.to_string())?;
        let with = exact_dj2(&mesh, &phi, SumXY::value, SumXY::gradient, BoundaryTerm::Include).unwrap();
        let without = exact_dj2(&mesh, &phi, SumXY::value, SumXY::gradient, BoundaryTerm::Omit).unwrap();
        let scale = max_abs(&ad).max(1.0);
        let (a, b) = (max_abs_diff(&ad, &with) / scale, max_abs_diff(&ad, &without) / scale);
        ok &= a <= 1e-13 && b > 1e-3;
        lines.push(format!("{name}: with term {a:.2e}, without {b:.2e}"));
    }
    ensure(ok, format!("{} (need <= 1e-13 and > 1e-3)", lines.join("; ")))
}

fn colouring() -> Check {
    let mesh = unit(32);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut serial_bad, mut dist_bad, mut multi) = (0, 0, 0);
    for _ in 0..100 {
        let phi = random_levelset(&mesh, &mut rng);
        let cut = build_cut(&mesh, phi.values()).unwrap();
        let g = build_cut_graph(&mesh, &cut).map_err(|e| e.to_string())?;
        let serial = colour_graph(&g);
        let reference = oracle(&g);
        let mut roots = reference.clone();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() != serial.num_colours() || !bijective(serial.colours(), &reference) {
            serial_bad += 1;
        }
        multi += (serial.num_colours() > 2) as usize;
        let (parts, np) = random_partition(&mesh, &mut rng);
        let pg = PartitionedGraph::from_cell_partition(&g, &parts, np).map_err(|e| e.to_string())?;
        let d = colour_distributed(&pg).map_err(|e| e.to_string())?;
        if d.global.num_colours() != serial.num_colours() || !bijective(d.global.colours(), serial.colours()) {
            dist_bad += 1;
        }
    }
    let smesh = unit(48);
    let phi = LevelSet::from_fn(&smesh, snake).unwrap();
    let g = build_cut_graph(&smesh, &build_cut(&smesh, phi.values()).unwrap()).unwrap();
    let pg = PartitionedGraph::from_cell_partition(&g, &quadrant_partition(&smesh), 4).unwrap();
    let snake_in = colour_distributed(&pg).map_err(|e| e.to_string())?.global.count(Phase::In);
    ensure(
        serial_bad == 0 && dist_bad == 0 && snake_in == 1,
        format!(
            "serial mismatches {serial_bad}/100, distributed mismatches {dist_bad}/100 ({multi} sets with >2 volumes), snake global IN colours {snake_in}"
        ),
    )
}

/// IN + OUT = |D| on random level sets over random rectangles.
fn conservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let (w, h) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
        let x0 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let bbox = BBox::new(x0, [x0[0] + w, x0[1] + h]);
        let mesh = build_structured_mesh(32, 32, bbox).unwrap();
        let unit_phi = random_levelset(&unit(32), &mut rng);
        // Same nodal pattern mapped to the rectangle; every tenth case gets
        // values within 1e-9 of zero to stress slivers.
        let mut values = unit_phi.into_values();
        if k % 10 == 0 {
            for v in values.iter_mut().step_by(7) {
                *v = v.signum() * 1e-9;
            }
        }
        let phi = LevelSet::new(&mesh, values).unwrap();
        let cut = build_cut(&mesh, phi.values()).unwrap();
        let total = cut.phase_area(&mesh, Phase::In) + cut.phase_area(&mesh, Phase::Out);
        worst = worst.max((total - w * h).abs() / (w * h));
    }
    ensure(worst <= 1e-13, format!("max relative |IN + OUT - |D|| {worst:.2e} over 100 sets (tol 1e-13)"))
}

fn evolution() -> Check {
    let n = 32;
    let mesh = unit(n);
    let skel = build_skeleton(&mesh).unwrap();
    let h = 1.0 / n as f64;

    let phi = LevelSet::from_fn(&mesh, |p| Geometry::CosCos.eval(p)).unwrap();
    let zero = vec![[0.0, 0.0]; mesh.num_vertices()];
    let still = evolve(&mesh, &skel, &phi, &zero, EvolveConfig { steps: 10, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let fixed = max_abs_diff(still.values(), phi.values());

    let line = LevelSet::from_fn(&mesh, |p| p[0] - 0.3).unwrap();
    let beta = vec![[1.0, 0.0]; mesh.num_vertices()];
    let moved = evolve(&mesh, &skel, &line, &beta, EvolveConfig { dt: 0.01, steps: 10, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut adv = 0.0f64;
    for (v, p) in mesh.vertices().iter().enumerate() {
        if p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0 {
            adv = adv.max((moved.values()[v] - (p[0] - 0.4)).abs());
        }
    }

    let sc = Nondesignable::new(40).unwrap();
    let (_, w) = sc.run(sc.config(true)).map_err(|e| e.to_string())?;
    let (_, u) = sc.run(sc.config(false)).map_err(|e| e.to_string())?;
    ensure(
        fixed <= 1e-14 && adv <= 4.0 * h * h && w.disk < u.disk && w.core < u.core,
        format!(
            "beta=0 change {fixed:.1e} (tol 1e-14); linear advection {adv:.2e} (4h^2 = {:.2e}); disk encroachment weighted {:.2e} < unweighted {:.2e}",
            4.0 * h * h,
            w.disk,
            u.disk
        ),
    )
}

fn adjoint_shape(mesh: &Mesh2D) -> LevelSet {
    LevelSet::from_fn(mesh, |p| {
        let body = p[0] - 0.71 - 0.08 * (5.0 * p[1]).sin();
        let hole = 0.173 - (p[0] - 0.4).hypot(p[1] - 0.52);
        body.max(hole)
    })
    .unwrap()
}

fn fd_rel<P: StaggeredProblem>(p: &P, mesh: &Mesh2D, phi: &LevelSet) -> Result<f64, String> {
    let u = solve_forward(p, phi).map_err(|e| e.to_string())?;
    let l = solve_adjoint(p, phi, &u).map_err(|e| e.to_string())?;
    let d = total_derivative(p, phi, &u, &l).map_err(|e| e.to_string())?;
    let nodes = cut_band(mesh, &classify_cells(mesh, phi.values()).unwrap());
    let fd = fd_total_derivative(p, phi, &nodes, 1e-6).map_err(|e| e.to_string())?;
    let num = nodes.iter().zip(&fd).fold(0.0f64, |m, (&i, f)| m.max((d[i] - f).abs()));
    Ok(num / max_abs(&fd))
}

fn adjoint() -> Check {
    let setting = || CutSetting::new(unit(16), "left").unwrap();
    let poisson = PoissonCompliance { setting: setting(), f: 1.0 };
    let phi = adjoint_shape(&poisson.setting.mesh);
    let e1 = fd_rel(&poisson, &poisson.setting.mesh, &phi)?;
    let thermo = ThermoElastic {
        setting: setting(),
        q: 1.0,
        expansion: 0.7,
        lame: Lame::default(),
    };
    let e2 = fd_rel(&thermo, &thermo.setting.mesh, &phi)?;

    let u = solve_forward(&thermo, &phi).map_err(|e| e.to_string())?;
    let lam = solve_adjoint(&thermo, &phi, &u).map_err(|e| e.to_string())?;
    let j = thermo.objective(&phi, &u).map_err(|e| e.to_string())?;
    let l0 = lagrangian(&thermo, &phi, &u, &lam).map_err(|e| e.to_string())?;
    let recovery = (l0 - j).abs() / j.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stationarity = 0.0f64;
    for _ in 0..5 {
        let shifted: Vec<Vec<f64>> = lam.iter().map(|l| l.iter().map(|x| x + rng.gen_range(-1.0..1.0)).collect()).collect();
        let l1 = lagrangian(&thermo, &phi, &u, &shifted).map_err(|e| e.to_string())?;
        stationarity = stationarity.max((l1 - l0).abs() / j.abs());
    }
    ensure(
        e1 <= 1e-6 && e2 <= 1e-6 && recovery <= 1e-10 && stationarity <= 1e-8,
        format!(
            "relative FD error: Poisson {e1:.2e}, thermo-elastic {e2:.2e} (tol 1e-6); L - J {recovery:.1e}, dL/dλ shift {stationarity:.1e}"
        ),
    )
}

fn optimisation() -> Check {
    let start = Instant::now();
    let cant = Cantilever::new(100, 50).map_err(|e| e.to_string())?;
    let problem = OptProblem {
        mesh: &cant.compliance.setting.mesh,
        skeleton: &cant.compliance.setting.skeleton,
        objective: &cant.compliance,
        frozen: cant.frozen.clone(),
    };
    let opt = Optimizer::new(problem, AlConfig::default(), &cant.phi0).map_err(|e| e.to_string())?;
    let out = opt.run(&cant.phi0, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let h = &out.state.history;
    let (j0, last) = (h[0].j, h[h.len() - 1]);
    let cant_ok = out.converged && h.len() <= 300 && last.c.abs() <= 1e-3 && last.j < j0;

    let mesh = unit(40);
    let skel = build_skeleton(&mesh).unwrap();
    let phi = LevelSet::from_fn(&mesh, |p| (p[0] - 0.5).hypot(p[1] - 0.5) - 0.3).unwrap();
    let vproblem = OptProblem {
        mesh: &mesh,
        skeleton: &skel,
        objective: &NoObjective,
        frozen: vec![false; mesh.num_vertices()],
    };
    let cfg = AlConfig {
        volume_fraction: 0.5,
        max_iters: 100,
        ..Default::default()
    };
    let vout = Optimizer::new(vproblem, cfg, &phi)
        .and_then(|o| o.run(&phi, |_, _| Ok(())))
        .map_err(|e| e.to_string())?;
    let vol = evaluate_levelset(&Volume::inside(Const(1.0)), &mesh, &vout.phi).unwrap();
    let vol_ok = vout.converged && (vol - 0.5).abs() <= 1e-3;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        cant_ok && vol_ok && secs <= 900.0,
        format!(
            "cantilever: {} iterations, converged {}, |C| {:.1e}, J {:.4} -> {:.4}; volume: {} iterations, |C| {:.1e}; {secs:.0} s (limit 900 s)",
            h.len(),
            out.converged,
            last.c.abs(),
            j0,
            last.j,
            vout.state.history.len(),
            (vol - 0.5).abs()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and name filters come through here too.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, fn() -> Check); 9] = [
        ("1 closed-form shape derivatives", table1_exact),
        ("2 AD vs finite differences", ad_vs_fd),
        ("3 shape Hessian", hessian),
        ("4 boundary-facet term", boundary_term),
        ("5 isolated-volume colouring", colouring),
        ("6 cut conservation", conservation),
        ("7 evolution invariants", evolution),
        ("8 staggered adjoint", adjoint),
        ("9 optimisation demo", optimisation),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS [{name}] {d} ({secs:.1} s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL [{name}] {d} ({secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
}
