//! Scene, object, and mesh types plus the template sphere.
//!
//! World convention: y is up, the floor center sits at the origin, boxes are
//! axis-aligned. Canonical meshes live near the unit cube; an object's world
//! mesh scales canonical vertices by half the box extents so the surface
//! fills its bounding box.

mod io;
mod mesh;

pub use io::{read_scene, write_scene};
pub use mesh::{make_icosphere, Mesh, TemplateSphere};

use crate::error::{Error, Result};

pub const CANONICAL_BOUND: f64 = 1.5;
const FLOOR_SLACK: f64 = 1e-9;

/// Ordered category names; index 0 is always "void".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    names: Vec<String>,
}

impl CategoryTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidScene(format!(
                "category table needs at least 2 entries, got {}",
                names.len()
            )));
        }
        if names[0] != "void" {
            return Err(Error::InvalidScene(format!(
                "category 0 must be \"void\", got {:?}",
                names[0]
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[i + 1..].contains(a) {
                return Err(Error::InvalidScene(format!("duplicate category {a:?}")));
            }
        }
        Ok(CategoryTable { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One decoded or ground-truth object: class, axis-aligned box, canonical mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub label: usize,
    /// Box center in world meters (vertical component already lifted).
    pub center: [f64; 3],
    /// Full box extents in meters, strictly positive.
    pub size: [f64; 3],
    pub mesh: Mesh,
}

impl ObjectInstance {
    pub fn new(label: usize, center: [f64; 3], size: [f64; 3], mesh: Mesh) -> Result<Self> {
        let obj = ObjectInstance {
            label,
            center,
            size,
            mesh,
        };
        obj.validate()?;
        Ok(obj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidScene(format!(
                "nonpositive size {:?}",
                self.size
            )));
        }
        if self.center[1] - self.size[1] / 2.0 < -FLOOR_SLACK {
            return Err(Error::InvalidScene(format!(
                "object below floor: center_y {} size_y {}",
                self.center[1], self.size[1]
            )));
        }
        Ok(())
    }

    /// Largest canonical coordinate magnitude; decoded meshes are expected
    /// near the unit cube, and excursions past [`CANONICAL_BOUND`] are
    /// surfaced as diagnostics rather than clamped or rejected.
    pub fn mesh_excursion(&self) -> f64 {
        self.mesh
            .vertices
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |acc: f64, c| acc.max(c.abs()))
    }

    pub fn exceeds_canonical_bound(&self) -> bool {
        self.mesh_excursion() > CANONICAL_BOUND
    }

    /// World-space mesh: canonical vertices scaled by half extents, then
    /// translated to the box center.
    pub fn world_mesh(&self) -> Mesh {
        let half = [self.size[0] / 2.0, self.size[1] / 2.0, self.size[2] / 2.0];
        to_world(&self.mesh, half, self.center).expect("size validated positive")
    }

    /// Axis-aligned box corners (min, max).
    pub fn box_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.center[a] - self.size[a] / 2.0;
            hi[a] = self.center[a] + self.size[a] / 2.0;
        }
        (lo, hi)
    }
}

/// An ordered set of objects over a shared category table.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub categories: CategoryTable,
    pub objects: Vec<ObjectInstance>,
}

impl Scene {
    pub fn new(categories: CategoryTable, objects: Vec<ObjectInstance>) -> Result<Self> {
        for o in &objects {
            o.validate()?;
            if o.label >= categories.len() {
                return Err(Error::InvalidScene(format!(
                    "label {} outside category table of {}",
                    o.label,
                    categories.len()
                )));
            }
        }
        Ok(Scene { categories, objects })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// Elementwise scale then translate: v -> s * v + c. Faces are unchanged.
pub fn to_world(mesh: &Mesh, scale: [f64; 3], translate: [f64; 3]) -> Result<Mesh> {
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidScene(format!("nonpositive scale {scale:?}")));
    }
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            [
                scale[0] * v[0] + translate[0],
                scale[1] * v[1] + translate[1],
                scale[2] * v[2] + translate[2],
            ]
        })
        .collect();
    Ok(Mesh {
        vertices,
        faces: mesh.faces.clone(),
    })
}
