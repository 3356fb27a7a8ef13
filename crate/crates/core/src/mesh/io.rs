//! CSV mesh files: vertices as `x,y` and triangles as 0-based `i,j,k`, each
//! with a header row.

use std::fs;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .skip(1)
}

fn parse_fields<T: std::str::FromStr>(line: &str, lineno: usize, file: &str) -> Result<[T; 3]>
where
    T::Err: std::fmt::Display,
{
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(Error::Parse(format!("{file}:{lineno}: expected 3 fields, found {}", fields.len())));
    }
    let mut out = Vec::with_capacity(3);
    for f in fields {
        out.push(
            f.parse::<T>()
                .map_err(|e| Error::Parse(format!("{file}:{lineno}: {f:?}: {e}")))?,
        );
    }
    Ok(out.try_into().ok().expect("three fields"))
}

pub fn parse_mesh(vertex_csv: &str, triangle_csv: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    for (lineno, line) in data_lines(vertex_csv) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Parse(format!("vertices:{lineno}: expected 2 fields")));
        }
        let x: f64 = fields[0]
            .parse()
            .map_err(|e| Error::Parse(format!("vertices:{lineno}: {e}")))?;
        let y: f64 = fields[1]
            .parse()
            .map_err(|e| Error::Parse(format!("vertices:{lineno}: {e}")))?;
        vertices.push([x, y]);
    }
    let mut triangles = Vec::new();
    for (lineno, line) in data_lines(triangle_csv) {
        triangles.push(parse_fields::<usize>(line, lineno, "triangles")?);
    }
    TriMesh::new(vertices, triangles)
}

pub fn load_mesh(vertex_file: &Path, triangle_file: &Path) -> Result<TriMesh> {
    let v = fs::read_to_string(vertex_file)
        .map_err(|e| Error::Io(format!("{}: {e}", vertex_file.display())))?;
    let t = fs::read_to_string(triangle_file)
        .map_err(|e| Error::Io(format!("{}: {e}", triangle_file.display())))?;
    parse_mesh(&v, &t)
}

pub fn format_vertices(mesh: &TriMesh) -> String {
    let mut s = String::from("x,y\n");
    for v in mesh.vertices() {
        s.push_str(&format!("{:?},{:?}\n", v[0], v[1]));
    }
    s
}

pub fn format_triangles(mesh: &TriMesh) -> String {
    let mut s = String::from("i,j,k\n");
    for t in mesh.triangles() {
        s.push_str(&format!("{},{},{}\n", t[0], t[1], t[2]));
    }
    s
}

pub fn save_mesh(mesh: &TriMesh, vertex_file: &Path, triangle_file: &Path) -> Result<()> {
    fs::write(vertex_file, format_vertices(mesh))?;
    fs::write(triangle_file, format_triangles(mesh))?;
    Ok(())
}
