//! Plain-text mesh exchange and legacy VTK snapshots.
//!
//! ASCII layout:
//!
//! ```text
//! evolfem-mesh v1 <simplex_dim> <nvert> <nsimp>
//! x y z                      (nvert lines)
//! i0 i1 i2 [i3]              (nsimp lines, 0-based)
//! boundary                   (optional)
//! j                          (one flagged vertex index per line)
//! ```

use std::io::{BufRead, Write};

use super::SimplicialMesh;
use crate::{Error, Result, Vec3};

pub const ASCII_MAGIC: &str = "evolfem-mesh v1";

pub fn write_ascii<W: Write>(mesh: &SimplicialMesh, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{ASCII_MAGIC} {} {} {}",
        mesh.simplex_dim(),
        mesh.vertex_count(),
        mesh.simplex_count()
    )?;
    for v in mesh.vertices() {
        writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
    }
    for s in mesh.simplices() {
        let line: Vec<String> = s.iter().map(usize::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    if mesh.boundary_flags().iter().any(|&b| b) {
        writeln!(w, "boundary")?;
        for (i, _) in mesh.boundary_flags().iter().enumerate().filter(|(_, &b)| b) {
            writeln!(w, "{i}")?;
        }
    }
    Ok(())
}

pub fn read_ascii<R: BufRead>(r: R) -> Result<SimplicialMesh> {
    let mut lines = r
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse("unexpected end of mesh file".into()))?
            .map_err(Error::from)
    };
    let header = next()?;
    let rest = header
        .strip_prefix(ASCII_MAGIC)
        .ok_or_else(|| Error::Parse(format!("bad header {header:?}")))?;
    let nums: Vec<usize> = rest
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("bad header field {t:?}")))
        })
        .collect::<Result<_>>()?;
    let [dim, nv, ns] = nums[..] else {
        return Err(Error::Parse(format!("bad header {header:?}")));
    };

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = next()?;
        let c: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad coordinate {t:?}")))
            })
            .collect::<Result<_>>()?;
        if c.len() != 3 {
            return Err(Error::Parse(format!(
                "vertex line {line:?} needs 3 coordinates"
            )));
        }
        vertices.push(Vec3::new(c[0], c[1], c[2]));
    }
    let mut simplices = Vec::with_capacity(ns);
    for _ in 0..ns {
        let line = next()?;
        let s: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad index {t:?}")))
            })
            .collect::<Result<_>>()?;
        simplices.push(s);
    }
    let mut boundary = vec![false; nv];
    if let Ok(tag) = next() {
        if tag.trim() != "boundary" {
            return Err(Error::Parse(format!("unexpected trailing line {tag:?}")));
        }
        while let Ok(line) = next() {
            let i: usize = line
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad boundary index {line:?}")))?;
            *boundary
                .get_mut(i)
                .ok_or_else(|| Error::Parse(format!("boundary index {i} out of range")))? = true;
        }
    }
    SimplicialMesh::new(dim, vertices, simplices, Some(boundary))
}

/// Writes a legacy ASCII VTK unstructured grid of flat simplices with an
/// optional scalar point field.
pub fn write_vtk<'a, W, I>(
    mut w: W,
    title: &str,
    points: &[Vec3],
    simplex_dim: usize,
    cells: I,
    point_data: Option<(&str, &[f64])>,
) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a [usize]>,
{
    let cells: Vec<&[usize]> = cells.into_iter().collect();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", points.len())?;
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    writeln!(w, "CELLS {} {size}", cells.len())?;
    for c in &cells {
        let idx: Vec<String> = c.iter().map(usize::to_string).collect();
        writeln!(w, "{} {}", c.len(), idx.join(" "))?;
    }
    let cell_type = if simplex_dim == 2 { 5 } else { 10 };
    writeln!(w, "CELL_TYPES {}", cells.len())?;
    for _ in &cells {
        writeln!(w, "{cell_type}")?;
    }
    if let Some((name, values)) = point_data {
        if values.len() != points.len() {
            return Err(Error::Dimension {
                expected: points.len(),
                got: values.len(),
            });
        }
        writeln!(w, "POINT_DATA {}", points.len())?;
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values {
            writeln!(w, "{v}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{macro_ball_bulk, refine_uniform};

    #[test]
    fn ascii_round_trip_keeps_boundary() {
        let m = refine_uniform(&macro_ball_bulk());
        let mut buf = Vec::new();
        write_ascii(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("evolfem-mesh v1 3 "));
        let back = read_ascii(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_header() {
        let err = read_ascii("mesh 2 0 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn vtk_has_sections() {
        let m = macro_ball_bulk();
        let mut buf = Vec::new();
        write_vtk(&mut buf, "ball", m.vertices(), 3, m.simplices(), None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("POINTS 7 double"));
        assert!(text.contains("CELLS 8 40"));
        assert!(text.contains("CELL_TYPES 8"));
    }
}
