//! Triangle meshes and icosphere construction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Shared-topology triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Minimal OBJ subset: `v` and `f` lines, 1-based indices.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v[0], v[1], v[2]).unwrap();
        }
        for f in &self.faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        out
    }

    pub fn from_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let mut v = [0.0; 3];
                    for slot in &mut v {
                        *slot = fields
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| {
                                Error::InvalidScene(format!("obj line {}: bad vertex", lineno + 1))
                            })?;
                    }
                    vertices.push(v);
                }
                Some("f") => {
                    let mut f = [0usize; 3];
                    for slot in &mut f {
                        let idx: usize = fields
                            .next()
                            .and_then(|t| t.split('/').next())
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| {
                                Error::InvalidScene(format!("obj line {}: bad face", lineno + 1))
                            })?;
                        if idx == 0 {
                            return Err(Error::InvalidScene(format!(
                                "obj line {}: zero face index",
                                lineno + 1
                            )));
                        }
                        *slot = idx - 1;
                    }
                    faces.push(f);
                }
                _ => {} // comments and anything else ignored
            }
        }
        for f in &faces {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidScene(format!(
                    "obj face {f:?} references missing vertex"
                )));
            }
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_obj(&text)
    }

    /// Flat vertex buffer, row per vertex.
    pub fn flat_vertices(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.vertices.len() * 3);
        for v in &self.vertices {
            out.extend_from_slice(v);
        }
        out
    }
}

/// Unit icosphere used as the deformation template.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSphere {
    pub mesh: Mesh,
    pub subdivisions: usize,
}

impl TemplateSphere {
    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }
}

/// Icosahedron subdivided `subdivisions` times, midpoints projected onto the
/// unit sphere. Level 2 (162 vertices / 320 faces) is the default template.
pub fn make_icosphere(subdivisions: usize) -> Result<TemplateSphere> {
    if subdivisions > 4 {
        return Err(Error::InvalidArgument(format!(
            "icosphere subdivisions {subdivisions} exceeds the mesh budget (max 4)"
        )));
    }
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in &mut vertices {
        normalize(v);
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = edge_midpoint(&mut vertices, &mut midpoint, a, b);
            let bc = edge_midpoint(&mut vertices, &mut midpoint, b, c);
            let ca = edge_midpoint(&mut vertices, &mut midpoint, c, a);
            next_faces.push([a, ab, ca]);
            next_faces.push([b, bc, ab]);
            next_faces.push([c, ca, bc]);
            next_faces.push([ab, bc, ca]);
        }
        faces = next_faces;
    }

    Ok(TemplateSphere {
        mesh: Mesh { vertices, faces },
        subdivisions,
    })
}

fn edge_midpoint(
    vertices: &mut Vec<[f64; 3]>,
    cache: &mut HashMap<(usize, usize), usize>,
    a: usize,
    b: usize,
) -> usize {
    let key = (a.min(b), a.max(b));
    if let Some(&idx) = cache.get(&key) {
        return idx;
    }
    let va = vertices[a];
    let vb = vertices[b];
    let mut mid = [
        (va[0] + vb[0]) / 2.0,
        (va[1] + vb[1]) / 2.0,
        (va[2] + vb[2]) / 2.0,
    ];
    normalize(&mut mid);
    let idx = vertices.len();
    vertices.push(mid);
    cache.insert(key, idx);
    idx
}

fn normalize(v: &mut [f64; 3]) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v[0] /= n;
    v[1] /= n;
    v[2] /= n;
}
