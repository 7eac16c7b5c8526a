use std::path::Path;
use std::time::Instant;

use cutform::adjoint::CutSetting;
use cutform::analytic::{exact_dj1, exact_dj2, exact_dj3, BoundaryTerm};
use cutform::evolve::{evolve, reinitialize, EvolveConfig, ReinitConfig, ReinitVariant};
use cutform::fem::nodal_gradient;
use cutform::functionals::{
    ad_gradient, ad_hessian, cut_band, evaluate_levelset, fd_gradient, max_abs, max_abs_diff, Boundary, Const, Flux,
    NormalFunctional, Volume,
};
use cutform::isovol::{build_cut_graph, colour_distributed, colour_graph, mark_isolated, PartitionedGraph};
use cutform::levelset::perturb;
use cutform::mesh::build_skeleton;
use cutform::optimizer::{write_history_file, Cantilever, HistoryRow, NoObjective, Objective, OptProblem, Optimizer};
use cutform::presets::{quadrant_partition, snake, Geometry, Nondesignable, NormalTarget, RadialFlux, SumXY};
use cutform::vtk::{write_mesh, CutMesh, Field};
use cutform::{build_cut, build_structured_mesh, classify_cells, BBox, CellState, LevelSet, Mesh2D, Phase, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{PartitionKind, RunConfig};
use crate::report::{num, Table};
use crate::Failure;

type Outcome = Result<(), Failure>;

fn unit_mesh(n: usize) -> Result<Mesh2D, Failure> {
    Ok(build_structured_mesh(n, n, BBox::unit())?)
}

fn builtin(name: &str) -> Result<Geometry, Failure> {
    name.parse::<Geometry>().map_err(|e| Failure::Config(e.to_string()))
}

/// Level sets on the unit square available to `isovol` and `reinit`.
fn shape(name: &str) -> Result<Box<dyn Fn(Point) -> f64>, Failure> {
    Ok(match name {
        "snake" => Box::new(snake),
        "quadratic" => Box::new(|p: Point| 2.0 * ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) - 0.23f64.powi(2))),
        other => {
            let g = builtin(other)?;
            Box::new(move |p| g.eval(p))
        }
    })
}

fn file(out: &Path, name: &str) -> std::path::PathBuf {
    out.join(name)
}

pub fn verify(cfg: &RunConfig, out: &Path) -> Outcome {
    let v = &cfg.verify;
    let geometries = v.geometries.iter().map(|g| builtin(g)).collect::<Result<Vec<_>, _>>()?;
    if v.write_gradients {
        std::fs::create_dir_all(out.join("gradients"))
            .map_err(|e| Failure::Config(format!("cannot create gradients directory: {e}")))?;
    }
    let mut table = Table::create(
        &file(out, "verify.csv"),
        &["geometry", "functional", "n", "h", "ad_exact", "ad_exact_scaled", "ad_fd", "pass"],
    )?;
    let mut breaches = Vec::new();
    for g in geometries {
        let started = Instant::now();
        for &n in &v.meshes {
            let mesh = unit_mesh(n)?;
            let phi = LevelSet::from_fn(&mesh, |p| g.eval(p))?;
            for name in &v.functionals {
                let (ad, exact, fd) = match name.as_str() {
                    "J1" => {
                        let f = Volume::inside(SumXY);
                        (ad_gradient(&f, &mesh, &phi)?, Some(exact_dj1(&mesh, &phi, SumXY::value)?), fd_gradient(&f, &mesh, &phi, v.fd_step)?)
                    }
                    "J2" => {
                        let f = Boundary::new(SumXY);
                        let e = exact_dj2(&mesh, &phi, SumXY::value, SumXY::gradient, BoundaryTerm::Include)?;
                        (ad_gradient(&f, &mesh, &phi)?, Some(e), fd_gradient(&f, &mesh, &phi, v.fd_step)?)
                    }
                    "J3" => {
                        let f = Flux::new(RadialFlux);
                        let e = exact_dj3(&mesh, &phi, RadialFlux::divergence, Some(&RadialFlux::value))?;
                        (ad_gradient(&f, &mesh, &phi)?, Some(e.gradient), fd_gradient(&f, &mesh, &phi, v.fd_step)?)
                    }
                    _ => {
                        let f = NormalFunctional::new(NormalTarget);
                        (ad_gradient(&f, &mesh, &phi)?, None, fd_gradient(&f, &mesh, &phi, v.fd_step)?)
                    }
                };
                let e_fd = max_abs_diff(&ad, &fd);
                let (e_abs, e_rel) = match &exact {
                    Some(e) => {
                        let d = max_abs_diff(&ad, e);
                        (num(d), Some(d / max_abs(e).max(1.0)))
                    }
                    None => ("N/A".to_string(), None),
                };
                let pass = e_fd <= v.fd_tol && e_rel.is_none_or(|r| r <= v.exact_tol);
                if !pass {
                    breaches.push(format!("{g} {name} n={n}"));
                }
                table.row([
                    g.name().to_string(),
                    name.clone(),
                    n.to_string(),
                    num(1.0 / n as f64),
                    e_abs,
                    e_rel.map_or("N/A".to_string(), num),
                    num(e_fd),
                    pass.to_string(),
                ])?;
                log::info!("{g} {name} n={n}: AD-exact {}, AD-FD {e_fd:.3e}", e_rel.map_or("N/A".into(), |r| format!("{r:.3e}")));
                if v.write_gradients {
                    let mut gt = Table::create(
                        &out.join("gradients").join(format!("{}_{name}_{n}.csv", g.name())),
                        &["node", "x", "y", "ad", "exact", "fd"],
                    )?;
                    for (i, p) in mesh.vertices().iter().enumerate() {
                        let ex = exact.as_ref().map_or("N/A".to_string(), |e| num(e[i]));
                        gt.row([i.to_string(), num(p[0]), num(p[1]), num(ad[i]), ex, num(fd[i])])?;
                    }
                    gt.finish()?;
                }
            }
        }
        log::info!("{g}: {:.1} s", started.elapsed().as_secs_f64());
    }
    table.finish()?;
    if breaches.is_empty() {
        Ok(())
    } else {
        Err(Failure::Tolerance(format!("tolerance breached for {}", breaches.join(", "))))
    }
}

pub fn hessian_check(cfg: &RunConfig, out: &Path) -> Outcome {
    let c = &cfg.hessian;
    let g = builtin(&c.geometry)?;
    let mesh = unit_mesh(c.mesh)?;
    let phi = LevelSet::from_fn(&mesh, |p| g.eval(p))?;
    let f = NormalFunctional::new(NormalTarget);
    let nodes = cut_band(&mesh, &classify_cells(&mesh, phi.values())?);
    let h = ad_hessian(&f, &mesh, &phi, &nodes)?;
    let t = c.fd_step;
    let mut entries = Table::create(&file(out, "hessian_entries.csv"), &["i", "j", "ad", "fd"])?;
    let mut err = 0.0f64;
    for (b, &j) in nodes.iter().enumerate() {
        let gp = ad_gradient(&f, &mesh, &perturb(&phi, j, t)?)?;
        let gm = ad_gradient(&f, &mesh, &perturb(&phi, j, -t)?)?;
        for (a, &i) in nodes.iter().enumerate() {
            let fd = (gp[i] - gm[i]) / (2.0 * t);
            err = err.max((fd - h.get(a, b)).abs());
            entries.row([i.to_string(), j.to_string(), num(h.get(a, b)), num(fd)])?;
        }
    }
    entries.finish()?;
    let asym = h.asymmetry();
    let pass = err <= c.tol && asym <= c.symmetry_tol;
    let mut t = Table::create(
        &file(out, "hessian.csv"),
        &["geometry", "n", "nodes", "fd_step", "max_error", "asymmetry", "pass"],
    )?;
    t.row([g.name().to_string(), c.mesh.to_string(), nodes.len().to_string(), num(c.fd_step), num(err), num(asym), pass.to_string()])?;
    t.finish()?;
    log::info!("Hessian on {} nodes: max error {err:.3e}, asymmetry {asym:.3e}", nodes.len());
    if pass {
        Ok(())
    } else {
        Err(Failure::Tolerance(format!("Hessian error {err:e} (tol {:e}), asymmetry {asym:e} (tol {:e})", c.tol, c.symmetry_tol)))
    }
}

fn random_partition(mesh: &Mesh2D, parts: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<Point> = (0..parts).map(|_| [rng.gen(), rng.gen()]).collect();
    (0..mesh.num_cells())
        .map(|c| {
            let q = mesh.cell_centroid(c);
            let d = |s: Point| (q[0] - s[0]).hypot(q[1] - s[1]);
            (0..parts).min_by(|&i, &j| d(seeds[i]).total_cmp(&d(seeds[j]))).unwrap_or(0)
        })
        .collect()
}

pub fn isovol(cfg: &RunConfig, out: &Path) -> Outcome {
    let c = &cfg.isovol;
    let mesh = unit_mesh(c.mesh)?;
    let phi = LevelSet::from_fn(&mesh, shape(&c.geometry)?)?;
    let cut = build_cut(&mesh, phi.values())?;
    let g = build_cut_graph(&mesh, &cut)?;
    let serial = colour_graph(&g);
    let mut dirichlet = Vec::new();
    for tag in &c.dirichlet {
        let t = mesh.tagged(tag);
        if t.is_empty() {
            return Err(Failure::Config(format!("boundary tag '{tag}' is empty or unknown")));
        }
        dirichlet.extend_from_slice(t);
    }
    let psi = mark_isolated(&serial, &g, &dirichlet, Phase::In);

    // Volumes and whether they reach a Dirichlet facet.
    let cm = CutMesh::new(&mesh, &cut)?;
    let area = |k: usize| {
        let [a, b, d] = cm.triangles[k].map(|i| cm.points[i]);
        0.5 * ((b[0] - a[0]) * (d[1] - a[1]) - (d[0] - a[0]) * (b[1] - a[1]))
    };
    let nc = serial.num_colours();
    let mut sizes = vec![(0usize, 0.0f64, false); nc + 1];
    let dset: std::collections::HashSet<usize> = dirichlet.iter().copied().collect();
    for v in 0..g.num_vertices() {
        let s = &mut sizes[serial.colour(v)];
        s.0 += 1;
        s.1 += area(v);
        s.2 |= g.boundary_facets(v).iter().any(|f| dset.contains(f));
    }
    let mut vt = Table::create(&file(out, "volumes.csv"), &["colour", "phase", "graph_vertices", "area", "anchored"])?;
    for (col, s) in sizes.iter().enumerate().skip(1) {
        let phase = if serial.state_of(col) == Phase::In { "in" } else { "out" };
        vt.row([col.to_string(), phase.to_string(), s.0.to_string(), num(s.1), s.2.to_string()])?;
    }
    vt.finish()?;

    let colour: Vec<f64> = serial.colours().iter().map(|&k| k as f64).collect();
    let psi_cells: Vec<f64> = psi.iter().map(|&b| b as u8 as f64).collect();
    let psi_sub = cm.lift(&psi_cells);
    let mut fields = vec![Field::Scalar("colour", &colour), Field::Scalar("psi", &psi_sub)];

    let parts = match c.partition {
        PartitionKind::None => None,
        PartitionKind::Quadrants => Some((quadrant_partition(&mesh), 4)),
        PartitionKind::Random => Some((random_partition(&mesh, c.parts, cfg.seed), c.parts)),
    };
    let (part_sub, local_sub);
    let mut mismatch = None;
    if let Some((cell_part, np)) = parts {
        let pg = PartitionedGraph::from_cell_partition(&g, &cell_part, np)?;
        let d = colour_distributed(&pg)?;
        let mut local = vec![0.0; g.num_vertices()];
        for (p, lg) in pg.parts.iter().enumerate() {
            for (i, &gv) in lg.global.iter().enumerate() {
                if lg.owned[i] {
                    local[gv] = d.local[p].colour(i) as f64;
                }
            }
        }
        let mut pt = Table::create(
            &file(out, "parts.csv"),
            &["part", "owned", "ghosts", "local_in", "local_out", "messages_sent"],
        )?;
        for (p, lg) in pg.parts.iter().enumerate() {
            let owned = lg.owned.iter().filter(|&&o| o).count();
            let sent = d.messages.iter().filter(|m| m.from == p).map(|m| m.entries.len()).sum::<usize>();
            pt.row([
                p.to_string(),
                owned.to_string(),
                (lg.owned.len() - owned).to_string(),
                d.local[p].count(Phase::In).to_string(),
                d.local[p].count(Phase::Out).to_string(),
                sent.to_string(),
            ])?;
        }
        pt.finish()?;
        let local_in: usize = d.local.iter().map(|l| l.count(Phase::In)).sum();
        log::info!(
            "{np} parts: {local_in} local IN colours, {} global IN colours, {} messages",
            d.global.count(Phase::In),
            d.messages.len()
        );
        if d.global != serial {
            mismatch = Some("distributed colouring differs from the serial one".to_string());
        } else if c.geometry == "snake" && d.global.count(Phase::In) != 1 {
            mismatch = Some(format!("snake has {} global IN colours, expected 1", d.global.count(Phase::In)));
        }
        part_sub = cm.lift(&cell_part.iter().map(|&p| p as f64).collect::<Vec<_>>());
        local_sub = local;
        fields.push(Field::Scalar("part", &part_sub));
        fields.push(Field::Scalar("local_colour", &local_sub));
    }
    cm.write(&file(out, "isovol.vtk"), &fields)?;

    // Per background cell: the colour of its IN part if any, else of its OUT part.
    let cell_colour: Vec<f64> = (0..mesh.num_cells())
        .map(|k| {
            let vs = g.vertices_of_cell(k);
            let v = vs.iter().copied().find(|&v| g.state(v) == Phase::In).unwrap_or(vs[0]);
            serial.colour(v) as f64
        })
        .collect();
    write_mesh(
        &file(out, "isovol_cells.vtk"),
        &mesh,
        &[Field::Scalar("phi", phi.values())],
        &[Field::Scalar("colour", &cell_colour), Field::Scalar("psi", &psi_cells)],
    )?;

    let mut st = Table::create(
        &file(out, "isovol.csv"),
        &["geometry", "n", "graph_vertices", "graph_edges", "in_colours", "out_colours", "isolated_cells"],
    )?;
    st.row([
        c.geometry.clone(),
        c.mesh.to_string(),
        g.num_vertices().to_string(),
        g.num_edges().to_string(),
        serial.count(Phase::In).to_string(),
        serial.count(Phase::Out).to_string(),
        psi.iter().filter(|&&b| b).count().to_string(),
    ])?;
    st.finish()?;
    match mismatch {
        Some(m) => Err(Failure::Tolerance(m)),
        None => Ok(()),
    }
}

/// |∇φ| on each cut cell.
fn cut_gradient_norms(mesh: &Mesh2D, phi: &LevelSet) -> Result<Vec<f64>, Failure> {
    let states = classify_cells(mesh, phi.values())?;
    Ok(mesh
        .triangles()
        .iter()
        .enumerate()
        .filter(|(c, _)| states[*c] == CellState::Cut)
        .map(|(c, t)| {
            let g = mesh.cell_basis_gradients(c);
            let grad = [0, 1].map(|k| (0..3).map(|j| phi.values()[t[j]] * g[j][k]).sum::<f64>());
            grad[0].hypot(grad[1])
        })
        .collect())
}

pub fn reinit(cfg: &RunConfig, out: &Path) -> Outcome {
    let c = &cfg.reinit;
    let mesh = unit_mesh(c.mesh)?;
    let skel = build_skeleton(&mesh)?;
    let phi = LevelSet::from_fn(&mesh, shape(&c.geometry)?)?;
    let rc = ReinitConfig {
        c_r1: c.c_r1,
        gamma_d: c.gamma_d,
        variant: if c.variant == "viscosity" {
            ReinitVariant::Viscosity
        } else {
            ReinitVariant::InteriorPenalty { c_r2: c.c_r2 }
        },
        picard_tol: c.picard_tol,
        picard_maxit: c.picard_maxit,
        relaxation: c.relaxation,
    };
    let r = reinitialize(&mesh, &skel, &phi, rc)?;
    let mut ht = Table::create(&file(out, "reinit_history.csv"), &["iteration", "relative_change"])?;
    for (k, x) in r.history.iter().enumerate() {
        ht.row([(k + 1).to_string(), num(*x)])?;
    }
    ht.finish()?;
    let mut norms = cut_gradient_norms(&mesh, &r.phi)?;
    norms.sort_by(f64::total_cmp);
    let within = norms.iter().filter(|g| (0.85..=1.15).contains(*g)).count() as f64 / norms.len().max(1) as f64;
    let vol = |p: &LevelSet| evaluate_levelset(&Volume::inside(Const(1.0)), &mesh, p);
    let dv = vol(&r.phi)? - vol(&phi)?;
    let mut st = Table::create(
        &file(out, "reinit.csv"),
        &["geometry", "n", "iterations", "converged", "sign_changes", "median_grad", "fraction_within_15pct", "volume_change"],
    )?;
    st.row([
        c.geometry.clone(),
        c.mesh.to_string(),
        r.iterations.to_string(),
        r.converged.to_string(),
        r.sign_changes.to_string(),
        num(norms.get(norms.len() / 2).copied().unwrap_or(f64::NAN)),
        num(within),
        num(dv),
    ])?;
    st.finish()?;
    let grad: Vec<f64> = nodal_gradient(&mesh, r.phi.values()).iter().map(|g| g[0].hypot(g[1])).collect();
    write_mesh(
        &file(out, "reinit.vtk"),
        &mesh,
        &[
            Field::Scalar("phi0", phi.values()),
            Field::Scalar("phi", r.phi.values()),
            Field::Scalar("grad_norm", &grad),
        ],
        &[],
    )?;
    log::info!("reinit: {} iterations, converged {}, {:.0}% of cut cells within 15% of |∇φ| = 1", r.iterations, r.converged, 100.0 * within);
    if r.sign_changes > 0 {
        return Err(Failure::Numerical(format!("reinitialisation changed the sign of {} nodes off the interface", r.sign_changes)));
    }
    Ok(())
}

pub fn evolve_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    let c = &cfg.evolve;
    let sc = Nondesignable::new(c.mesh)?;
    let skel = build_skeleton(&sc.mesh)?;
    let mut table = Table::create(&file(out, "evolve.csv"), &["variant", "disk_change", "core_change"])?;
    let mut results = Vec::new();
    for (weighted, name) in [(true, "weighted"), (false, "unweighted")] {
        let ecfg = EvolveConfig {
            c_e: c.c_e,
            dt: c.cfl / c.mesh as f64,
            steps: c.steps,
            velocity_weighted: weighted,
        };
        let (phi, e) = sc.run(ecfg)?;
        if c.snapshot_every > 0 {
            let mut cur = sc.phi.clone();
            let mut done = 0;
            while done < c.steps {
                let k = c.snapshot_every.min(c.steps - done);
                cur = evolve(&sc.mesh, &skel, &cur, &sc.beta, EvolveConfig { steps: k, ..ecfg })?;
                done += k;
                write_mesh(
                    &file(out, &format!("evolve_{name}_{done:04}.vtk")),
                    &sc.mesh,
                    &[Field::Scalar("phi", cur.values()), Field::Vector("beta", &sc.beta)],
                    &[],
                )?;
            }
        }
        write_mesh(
            &file(out, &format!("evolve_{name}.vtk")),
            &sc.mesh,
            &[
                Field::Scalar("phi0", sc.phi.values()),
                Field::Scalar("phi", phi.values()),
                Field::Vector("beta", &sc.beta),
            ],
            &[],
        )?;
        table.row([name.to_string(), num(e.disk), num(e.core)])?;
        log::info!("{name}: max change in disk {:.3e}, in core {:.3e}", e.disk, e.core);
        results.push(e);
    }
    table.finish()?;
    let (w, u) = (results[0], results[1]);
    if w.disk < u.disk && w.core < u.core {
        Ok(())
    } else {
        Err(Failure::Tolerance(format!("weighted penalty did not reduce encroachment: {w:?} vs {u:?}")))
    }
}

pub fn optimize(cfg: &RunConfig, out: &Path) -> Outcome {
    let c = &cfg.optimize;
    let al = c.al_config();
    // Both problems own their setting; keep whichever is built alive here.
    let cant;
    let vol_mesh;
    let vol_skel;
    let (mesh, skel, objective, phi0, frozen): (&Mesh2D, _, &dyn Objective, LevelSet, Vec<bool>) = match c.problem.as_str() {
        "cantilever" => {
            cant = Cantilever::new(c.nx, c.ny)?;
            let s: &CutSetting = &cant.compliance.setting;
            (&s.mesh, &s.skeleton, &cant.compliance, cant.phi0.clone(), cant.frozen.clone())
        }
        _ => {
            vol_mesh = build_structured_mesh(c.nx, c.ny, BBox::unit())?;
            vol_skel = build_skeleton(&vol_mesh)?;
            let phi = LevelSet::from_fn(&vol_mesh, |p| (p[0] - 0.5).hypot(p[1] - 0.5) - 0.3)?;
            let n = vol_mesh.num_vertices();
            (&vol_mesh, &vol_skel, &NoObjective, phi, vec![false; n])
        }
    };
    let problem = OptProblem {
        mesh,
        skeleton: skel,
        objective,
        frozen,
    };
    let opt = Optimizer::new(problem, al, &phi0)?;
    let started = Instant::now();
    let every = c.snapshot_every;
    let result = opt.run(&phi0, |phi, r: &HistoryRow| {
        log::info!(
            "iter {:3}  J {:.6e}  C {:+.3e}  λ {:+.3e}  ρ {:.3e}  ({:.0} s)",
            r.iter,
            r.j,
            r.c,
            r.lambda,
            r.rho,
            started.elapsed().as_secs_f64()
        );
        if every > 0 && r.iter % every == 0 {
            write_mesh(&out.join(format!("phi_{:04}.vtk", r.iter)), mesh, &[Field::Scalar("phi", phi.values())], &[])?;
        }
        Ok(())
    })?;
    let h = &result.state.history;
    write_history_file(&file(out, "history.csv"), h)?;
    write_mesh(&file(out, "final.vtk"), mesh, &[Field::Scalar("phi", result.phi.values())], &[])?;
    CutMesh::new(mesh, &build_cut(mesh, result.phi.values())?)?.write(&file(out, "final_cut.vtk"), &[])?;
    let (j0, last) = match (h.first(), h.last()) {
        (Some(a), Some(b)) => (a.j, *b),
        _ => return Ok(()),
    };
    let mut st = Table::create(&file(out, "summary.csv"), &["problem", "iterations", "converged", "J0", "J", "C"])?;
    st.row([c.problem.clone(), h.len().to_string(), result.converged.to_string(), num(j0), num(last.j), num(last.c)])?;
    st.finish()?;
    log::info!("{} iterations, converged {}, J {:.6e} -> {:.6e}, C {:+.3e}", h.len(), result.converged, j0, last.j, last.c);
    if result.converged && last.c.abs() <= c.c_tol {
        Ok(())
    } else {
        Err(Failure::Tolerance(format!(
            "not converged after {} iterations (|C| = {:.3e}, tolerance {:e})",
            h.len(),
            last.c.abs(),
            c.c_tol
        )))
    }
}
