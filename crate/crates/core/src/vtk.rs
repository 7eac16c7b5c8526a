//! Legacy ASCII VTK (3.0) export of triangle meshes with nodal and cell data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::levelset::{CutTopology, Phase};
use crate::mesh::{Mesh2D, Point};

const VTK_TRIANGLE: u8 = 5;

/// Named data array attached to points or cells.
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector(&'a str, &'a [[f64; 2]]),
}

impl Field<'_> {
    fn name(&self) -> &str {
        match self {
            Field::Scalar(n, _) | Field::Vector(n, _) => n,
        }
    }

    fn len(&self) -> usize {
        match self {
            Field::Scalar(_, v) => v.len(),
            Field::Vector(_, v) => v.len(),
        }
    }
}

fn check(fields: &[Field], n: usize, what: &str) -> Result<()> {
    for f in fields {
        if f.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{what} field '{}' has {} entries, expected {n}",
                f.name(),
                f.len()
            )));
        }
        if f.name().is_empty() || f.name().contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad VTK field name '{}'", f.name())));
        }
    }
    Ok(())
}

fn write_fields<W: Write>(w: &mut W, fields: &[Field]) -> std::io::Result<()> {
    for f in fields {
        match f {
            Field::Scalar(name, v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for x in v.iter() {
                    writeln!(w, "{x:.16e}")?;
                }
            }
            Field::Vector(name, v) => {
                writeln!(w, "VECTORS {name} double")?;
                for x in v.iter() {
                    writeln!(w, "{:.16e} {:.16e} 0", x[0], x[1])?;
                }
            }
        }
    }
    Ok(())
}

/// Write an unstructured triangle grid.
pub fn write_triangles<W: Write>(
    mut w: W,
    title: &str,
    points: &[Point],
    triangles: &[[usize; 3]],
    point_data: &[Field],
    cell_data: &[Field],
) -> Result<()> {
    check(point_data, points.len(), "point")?;
    check(cell_data, triangles.len(), "cell")?;
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&v| v >= points.len())) {
        return Err(Error::InvalidArgument(format!("triangle {t:?} references a missing point")));
    }
    let title = title.lines().next().unwrap_or("");
    (|| -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "{title}")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", points.len())?;
        for p in points {
            writeln!(w, "{:.16e} {:.16e} 0", p[0], p[1])?;
        }
        writeln!(w, "CELLS {} {}", triangles.len(), 4 * triangles.len())?;
        for t in triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "CELL_TYPES {}", triangles.len())?;
        for _ in triangles {
            writeln!(w, "{VTK_TRIANGLE}")?;
        }
        if !point_data.is_empty() {
            writeln!(w, "POINT_DATA {}", points.len())?;
            write_fields(&mut w, point_data)?;
        }
        if !cell_data.is_empty() {
            writeln!(w, "CELL_DATA {}", triangles.len())?;
            write_fields(&mut w, cell_data)?;
        }
        w.flush()
    })()
    .map_err(Error::from)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", path.display())))
}

/// Background mesh with nodal and per-cell fields.
pub fn write_mesh(path: &Path, mesh: &Mesh2D, point_data: &[Field], cell_data: &[Field]) -> Result<()> {
    write_triangles(create(path)?, "cutform mesh", mesh.vertices(), mesh.triangles(), point_data, cell_data)
}

/// Sub-triangulation of the cut mesh: whole uncut cells plus the three
/// sub-triangles of every cut cell.
#[derive(Debug, Clone, Default)]
pub struct CutMesh {
    pub points: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    /// -1 inside, +1 outside.
    pub phase: Vec<f64>,
    pub parent: Vec<usize>,
}

impl CutMesh {
    pub fn new(mesh: &Mesh2D, cut: &CutTopology<f64>) -> Result<Self> {
        if cut.num_cells() != mesh.num_cells() {
            return Err(Error::InvalidArgument("cut topology does not match the mesh".into()));
        }
        let mut out = CutMesh {
            points: mesh.vertices().to_vec(),
            ..Default::default()
        };
        let sign = |p: Phase| if p == Phase::In { -1.0 } else { 1.0 };
        for c in 0..mesh.num_cells() {
            match (&cut.cells[c], cut.uncut_phase(c)) {
                (Some(cc), _) => {
                    for t in &cc.sub {
                        let base = out.points.len();
                        out.points.extend_from_slice(&t.points);
                        out.triangles.push([base, base + 1, base + 2]);
                        out.phase.push(sign(t.phase));
                        out.parent.push(c);
                    }
                }
                (None, Some(p)) => {
                    out.triangles.push(mesh.triangles()[c]);
                    out.phase.push(sign(p));
                    out.parent.push(c);
                }
                (None, None) => return Err(Error::Internal(format!("cell {c} is cut but has no sub-triangulation"))),
            }
        }
        Ok(out)
    }

    /// Per-sub-triangle copy of a per-background-cell field.
    pub fn lift(&self, cell_values: &[f64]) -> Vec<f64> {
        self.parent.iter().map(|&c| cell_values[c]).collect()
    }

    pub fn write(&self, path: &Path, cell_data: &[Field]) -> Result<()> {
        let parent: Vec<f64> = self.parent.iter().map(|&c| c as f64).collect();
        let mut fields = vec![Field::Scalar("phase", &self.phase), Field::Scalar("parent_cell", &parent)];
        fields.extend_from_slice(cell_data);
        write_triangles(create(path)?, "cutform cut mesh", &self.points, &self.triangles, &[], &fields)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::build_cut;
    use crate::mesh::{build_structured_mesh, BBox};

    fn render(mesh: &Mesh2D, point: &[Field], cell: &[Field]) -> String {
        let mut buf = Vec::new();
        write_triangles(&mut buf, "t", mesh.vertices(), mesh.triangles(), point, cell).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn header_and_counts() {
        let mesh = build_structured_mesh(2, 1, BBox::unit()).unwrap();
        let phi: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
        let ids: Vec<f64> = (0..mesh.num_cells()).map(|c| c as f64).collect();
        let s = render(&mesh, &[Field::Scalar("phi", &phi)], &[Field::Scalar("id", &ids)]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[2], "ASCII");
        assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
        assert!(s.contains(&format!("POINTS {} double", mesh.num_vertices())));
        assert!(s.contains(&format!("CELLS {} {}", mesh.num_cells(), 4 * mesh.num_cells())));
        assert!(s.contains(&format!("POINT_DATA {}", mesh.num_vertices())));
        assert!(s.contains(&format!("CELL_DATA {}", mesh.num_cells())));
        assert_eq!(lines.iter().filter(|l| **l == "5").count(), mesh.num_cells());
    }

    #[test]
    fn wrong_length_rejected() {
        let mesh = build_structured_mesh(2, 2, BBox::unit()).unwrap();
        let mut buf = Vec::new();
        let short = [0.0; 2];
        let r = write_triangles(&mut buf, "t", mesh.vertices(), mesh.triangles(), &[Field::Scalar("x", &short)], &[]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let r = write_triangles(&mut buf, "t", mesh.vertices(), mesh.triangles(), &[], &[Field::Scalar("a b", &[0.0; 8])]);
        assert!(r.is_err());
    }

    #[test]
    fn cut_mesh_preserves_area() {
        let mesh = build_structured_mesh(8, 8, BBox::unit()).unwrap();
        let values: Vec<f64> = mesh.vertices().iter().map(|p| (p[0] - 0.5).hypot(p[1] - 0.5) - 0.31).collect();
        let cut = build_cut(&mesh, &values).unwrap();
        let cm = CutMesh::new(&mesh, &cut).unwrap();
        assert_eq!(cm.triangles.len(), mesh.num_cells() + 2 * cut.num_cut());
        let area = |t: &[usize; 3]| {
            let [a, b, c] = t.map(|i| cm.points[i]);
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        };
        let inside: f64 = cm.triangles.iter().zip(&cm.phase).filter(|(_, &p)| p < 0.0).map(|(t, _)| area(t)).sum();
        assert!((inside - cut.phase_area(&mesh, Phase::In)).abs() < 1e-15);
        assert!(cm.triangles.iter().all(|t| area(t) >= 0.0));
    }
}
