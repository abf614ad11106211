//! Procedural canonical shape families.
//!
//! Every family produces a closed triangle mesh spanning [-1, 1]^3 with
//! outward-facing winding; world placement scales by half the box extents.

use crate::scene::{make_icosphere, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ShapeFamily {
    Box,
    TaperedBox,
    Ellipsoid,
    LShape,
    Prism,
    Wedge,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 6] = [
        ShapeFamily::Box,
        ShapeFamily::TaperedBox,
        ShapeFamily::Ellipsoid,
        ShapeFamily::LShape,
        ShapeFamily::Prism,
        ShapeFamily::Wedge,
    ];

    pub fn mesh(self) -> Mesh {
        match self {
            ShapeFamily::Box => oriented(box_mesh(), [0.0, 0.0, 0.0]),
            ShapeFamily::TaperedBox => oriented(tapered_box_mesh(0.55), [0.0, 0.0, 0.0]),
            ShapeFamily::Ellipsoid => make_icosphere(1).expect("level 1 in budget").mesh,
            ShapeFamily::LShape => oriented(l_shape_mesh(), [-0.5, 0.0, -0.5]),
            ShapeFamily::Prism => oriented(prism_mesh(8), [0.0, 0.0, 0.0]),
            ShapeFamily::Wedge => oriented(wedge_mesh(), [-0.4, -0.4, 0.0]),
        }
    }
}

/// Flip faces so normals point away from an interior star point.
fn oriented(mut mesh: Mesh, star: [f64; 3]) -> Mesh {
    for face in &mut mesh.faces {
        let [a, b, c] = [
            mesh.vertices[face[0]],
            mesh.vertices[face[1]],
            mesh.vertices[face[2]],
        ];
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        let centroid = [
            (a[0] + b[0] + c[0]) / 3.0 - star[0],
            (a[1] + b[1] + c[1]) / 3.0 - star[1],
            (a[2] + b[2] + c[2]) / 3.0 - star[2],
        ];
        if n[0] * centroid[0] + n[1] * centroid[1] + n[2] * centroid[2] < 0.0 {
            face.swap(1, 2);
        }
    }
    mesh
}

fn box_mesh() -> Mesh {
    let mut vertices = Vec::with_capacity(8);
    for &y in &[-1.0, 1.0] {
        for &z in &[-1.0, 1.0] {
            for &x in &[-1.0, 1.0] {
                vertices.push([x, y, z]);
            }
        }
    }
    // index: x + 2z + 4y
    let quads = [
        [0, 1, 3, 2], // bottom
        [4, 5, 7, 6], // top
        [0, 1, 5, 4], // z = -1
        [2, 3, 7, 6], // z = +1
        [0, 2, 6, 4], // x = -1
        [1, 3, 7, 5], // x = +1
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh { vertices, faces }
}

fn tapered_box_mesh(top_scale: f64) -> Mesh {
    let mut mesh = box_mesh();
    for v in &mut mesh.vertices {
        if v[1] > 0.0 {
            v[0] *= top_scale;
            v[2] *= top_scale;
        }
    }
    mesh
}

/// L cross-section in xz extruded along y.
fn l_shape_mesh() -> Mesh {
    let ring = [
        [-1.0, -1.0],
        [1.0, -1.0],
        [1.0, 0.0],
        [0.0, 0.0],
        [0.0, 1.0],
        [-1.0, 1.0],
    ];
    extrude_ring(&ring, &[[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]])
}

fn prism_mesh(sides: usize) -> Mesh {
    let ring: Vec<[f64; 2]> = (0..sides)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / sides as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    let cap: Vec<[usize; 3]> = (1..sides - 1).map(|i| [0, i, i + 1]).collect();
    extrude_ring(&ring, &cap)
}

/// Right triangle in xy extruded along z.
fn wedge_mesh() -> Mesh {
    let vertices = vec![
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ];
    let faces = vec![
        [0, 1, 2],
        [3, 4, 5],
        [0, 1, 4],
        [0, 4, 3],
        [1, 2, 5],
        [1, 5, 4],
        [2, 0, 3],
        [2, 3, 5],
    ];
    Mesh { vertices, faces }
}

/// Prism from a simple xz polygon: caps at y = -1 and y = +1 plus side quads.
fn extrude_ring(ring: &[[f64; 2]], cap_triangulation: &[[usize; 3]]) -> Mesh {
    let n = ring.len();
    let mut vertices = Vec::with_capacity(2 * n);
    for &[x, z] in ring {
        vertices.push([x, -1.0, z]);
    }
    for &[x, z] in ring {
        vertices.push([x, 1.0, z]);
    }
    let mut faces = Vec::new();
    for tri in cap_triangulation {
        faces.push([tri[0], tri[1], tri[2]]);
        faces.push([tri[0] + n, tri[1] + n, tri[2] + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, j + n]);
        faces.push([i, j + n, i + n]);
    }
    Mesh { vertices, faces }
}
