//! Scene JSON serialization.
//!
//! Schema:
//! ```json
//! {
//!   "categories": ["void", ...],
//!   "objects": [
//!     {"label": 1, "center": [x, y, z], "size": [sx, sy, sz],
//!      "mesh": {"vertices": [[..], ..], "faces": [[..], ..]} | "path.obj" | null}
//!   ]
//! }
//! ```
//! All numbers round-trip at full 64-bit precision. A missing mesh means the
//! unit template; a string is a path to an OBJ file resolved next to the
//! scene file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mesh::{make_icosphere, Mesh};
use super::{CategoryTable, ObjectInstance, Scene};
use crate::error::{Error, Result};

pub(crate) const DEFAULT_TEMPLATE_SUBDIVISIONS: usize = 2;

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    categories: Vec<String>,
    objects: Vec<ObjectDoc>,
}

#[derive(Serialize, Deserialize)]
struct ObjectDoc {
    label: usize,
    center: [f64; 3],
    size: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    mesh: Option<MeshRef>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MeshRef {
    Path(String),
    Inline { vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]> },
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    let doc = SceneDoc {
        categories: scene.categories.names().to_vec(),
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectDoc {
                label: o.label,
                center: o.center,
                size: o.size,
                mesh: Some(MeshRef::Inline {
                    vertices: o.mesh.vertices.clone(),
                    faces: o.mesh.faces.clone(),
                }),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: SceneDoc =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let categories = CategoryTable::new(doc.categories)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut objects = Vec::with_capacity(doc.objects.len());
    for (i, o) in doc.objects.into_iter().enumerate() {
        if o.label >= categories.len() {
            return Err(Error::InvalidScene(format!(
                "object {i}: unknown category index {} of {}",
                o.label,
                categories.len()
            )));
        }
        let mesh = match o.mesh {
            None => make_icosphere(DEFAULT_TEMPLATE_SUBDIVISIONS)?.mesh,
            Some(MeshRef::Path(rel)) => Mesh::read_obj(&base.join(rel))?,
            Some(MeshRef::Inline { vertices, faces }) => Mesh { vertices, faces },
        };
        objects.push(
            ObjectInstance::new(o.label, o.center, o.size, mesh)
                .map_err(|e| Error::InvalidScene(format!("object {i}: {e}")))?,
        );
    }
    Scene::new(categories, objects)
}
