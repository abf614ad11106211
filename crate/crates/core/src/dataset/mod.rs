//! Procedural toy-scene dataset: sampling, ground-truth view rendering,
//! manifest I/O, and rotation augmentation.
//!
//! Scenes are overlap-free arrangements of category-shaped boxes on a square
//! floor; cameras sit on a ring looking at the scene centroid. Ground-truth
//! masks come from the hard instance-ID rasterizer and 2D boxes from
//! projected mesh vertices, so supervision is exactly what the renderer and
//! projector produce. Everything is deterministic in the master seed.

pub mod shapes;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::camera::{box_from_projection, read_camera, write_camera, Box2D, Camera};
use crate::error::{Error, Result};
use crate::render::{
    rasterize_instance_ids, read_mask_pgm, write_mask_pgm, BinaryMask, RasterConfig,
};
use crate::rng::derive;
use crate::scene::{read_scene, write_scene, CategoryTable, ObjectInstance, Scene};
use shapes::ShapeFamily;

const SCENE_TRY_BUDGET: usize = 1000;
const PLACEMENT_TRIES: usize = 40;
/// Objects must be observable in at least this many views.
const MIN_VISIBLE_VIEWS: usize = 2;

/// Per-category box-extent prior and shape family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPrior {
    pub name: String,
    pub family: ShapeFamily,
    pub size_mean: [f64; 3],
    pub size_std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scene_count: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub views_per_scene: usize,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
    pub floor_half_extent: f64,
    pub master_seed: u64,
    pub categories: Vec<CategoryPrior>,
}

impl DatasetSpec {
    /// Eight scenes, 2-5 objects, 16 ring views at 64x64.
    pub fn desk(master_seed: u64) -> Self {
        DatasetSpec {
            scene_count: 8,
            objects_min: 2,
            objects_max: 5,
            views_per_scene: 16,
            ring_radius: 4.4,
            ring_height: 2.4,
            image_width: 64,
            image_height: 64,
            focal: 64.0,
            floor_half_extent: 2.0,
            master_seed,
            categories: default_categories(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene_count == 0 {
            return Err(Error::InvalidArgument("scene_count must be >= 1".into()));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(Error::InvalidArgument(format!(
                "bad object range {}..={}",
                self.objects_min, self.objects_max
            )));
        }
        if self.views_per_scene < 4 {
            return Err(Error::InvalidArgument("need at least 4 views".into()));
        }
        if self.categories.is_empty() {
            return Err(Error::InvalidArgument("no categories".into()));
        }
        Ok(())
    }

    /// Category table with void at index 0.
    pub fn category_table(&self) -> Result<CategoryTable> {
        let mut names = vec!["void".to_string()];
        names.extend(self.categories.iter().map(|c| c.name.clone()));
        CategoryTable::new(names)
    }

    pub fn raster_config(&self) -> RasterConfig {
        RasterConfig::desk(self.image_width, self.image_height)
    }
}

pub fn default_categories() -> Vec<CategoryPrior> {
    let mk = |name: &str, family, mean: [f64; 3], std: [f64; 3]| CategoryPrior {
        name: name.into(),
        family,
        size_mean: mean,
        size_std: std,
    };
    vec![
        mk("cabinet", ShapeFamily::Box, [0.9, 1.7, 0.45], [0.12, 0.18, 0.06]),
        mk("lamp", ShapeFamily::Ellipsoid, [0.35, 1.2, 0.35], [0.05, 0.15, 0.05]),
        mk("sofa", ShapeFamily::LShape, [1.7, 0.85, 0.95], [0.2, 0.08, 0.1]),
        mk("table", ShapeFamily::TaperedBox, [1.25, 0.72, 0.8], [0.15, 0.05, 0.1]),
        mk("stool", ShapeFamily::Prism, [0.45, 0.5, 0.45], [0.06, 0.05, 0.06]),
        mk("bed", ShapeFamily::Wedge, [1.5, 0.6, 1.9], [0.15, 0.06, 0.2]),
    ]
}

/// One posed view with per-object ground truth, indexed by track id
/// (the object's index in its scene).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub camera: Camera,
    /// `observations[track]` is present where the object is observable.
    pub observations: Vec<Option<(Box2D, BinaryMask)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: usize,
    pub scene: Scene,
    pub views: Vec<ViewRecord>,
}

impl SceneRecord {
    /// Views in which a given object is observable.
    pub fn visible_views(&self, track: usize) -> usize {
        self.views
            .iter()
            .filter(|v| v.observations.get(track).map(Option::is_some).unwrap_or(false))
            .count()
    }
}

fn boxes_overlap(a: &ObjectInstance, b: &ObjectInstance) -> bool {
    let (alo, ahi) = a.box_bounds();
    let (blo, bhi) = b.box_bounds();
    (0..3).all(|i| ahi[i].min(bhi[i]) - alo[i].max(blo[i]) > 0.0)
}

/// Sample every scene and render its ground-truth views.
pub fn generate_scenes(spec: &DatasetSpec) -> Result<Vec<SceneRecord>> {
    spec.validate()?;
    let categories = spec.category_table()?;
    let raster = spec.raster_config();
    let mut records = Vec::with_capacity(spec.scene_count);
    for scene_idx in 0..spec.scene_count {
        let mut rng = derive(spec.master_seed, "dataset/scene", &[scene_idx as u64]);
        let mut built: Option<SceneRecord> = None;
        for _try in 0..SCENE_TRY_BUDGET {
            let Some(objects) = sample_objects(spec, &mut rng) else {
                continue;
            };
            let scene = Scene::new(categories.clone(), objects)?;
            let record = render_record(spec, &raster, scene_idx, scene, &mut rng)?;
            let all_visible = (0..record.scene.len())
                .all(|track| record.visible_views(track) >= MIN_VISIBLE_VIEWS);
            if all_visible {
                built = Some(record);
                break;
            }
        }
        records.push(built.ok_or(Error::RejectionBudget {
            tries: SCENE_TRY_BUDGET,
        })?);
    }
    Ok(records)
}

fn sample_objects(
    spec: &DatasetSpec,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Option<Vec<ObjectInstance>> {
    let count = rng.random_range(spec.objects_min..=spec.objects_max);
    let mut objects: Vec<ObjectInstance> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let cat = rng.random_range(0..spec.categories.len());
            let prior = &spec.categories[cat];
            let mut size = [0.0; 3];
            for axis in 0..3 {
                let normal = Normal::new(prior.size_mean[axis], prior.size_std[axis])
                    .expect("positive std");
                let draw: f64 = rng.sample(normal);
                size[axis] = draw.clamp(0.35 * prior.size_mean[axis], 2.2 * prior.size_mean[axis]);
            }
            let max_x = spec.floor_half_extent - size[0] / 2.0;
            let max_z = spec.floor_half_extent - size[2] / 2.0;
            if max_x <= 0.0 || max_z <= 0.0 {
                continue;
            }
            let center = [
                rng.random_range(-max_x..max_x),
                size[1] / 2.0,
                rng.random_range(-max_z..max_z),
            ];
            let candidate = ObjectInstance::new(
                cat + 1, // 0 is void
                center,
                size,
                prior.family.mesh(),
            )
            .expect("sampled object satisfies invariants");
            if objects.iter().any(|o| boxes_overlap(o, &candidate)) {
                continue;
            }
            objects.push(candidate);
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(objects)
}

fn render_record(
    spec: &DatasetSpec,
    raster: &RasterConfig,
    scene_idx: usize,
    scene: Scene,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<SceneRecord> {
    let centroid = if scene.is_empty() {
        [0.0, 0.0, 0.0]
    } else {
        let mut c = [0.0; 3];
        for o in &scene.objects {
            for a in 0..3 {
                c[a] += o.center[a] / scene.len() as f64;
            }
        }
        c
    };
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let world_meshes: Vec<_> = scene.objects.iter().map(|o| o.world_mesh()).collect();
    let mut views = Vec::with_capacity(spec.views_per_scene);
    for v in 0..spec.views_per_scene {
        let angle = std::f64::consts::TAU * v as f64 / spec.views_per_scene as f64 + phase;
        let eye = [
            spec.ring_radius * angle.cos(),
            spec.ring_height,
            spec.ring_radius * angle.sin(),
        ];
        let camera = Camera::look_at(
            spec.focal,
            spec.focal,
            spec.image_width,
            spec.image_height,
            eye,
            centroid,
            [0.0, 1.0, 0.0],
        )?;
        let id_map = rasterize_instance_ids(&world_meshes, &camera, raster)?;
        let mut observations = Vec::with_capacity(scene.len());
        for (track, mesh) in world_meshes.iter().enumerate() {
            let mask = id_map.mask_of(track as u32);
            if mask.count() == 0 {
                observations.push(None);
                continue;
            }
            let projected: Vec<Option<[f64; 2]>> = mesh
                .vertices
                .iter()
                .map(|&p| camera.project_point(p).map(|(uv, _)| uv))
                .collect();
            match box_from_projection(&projected) {
                Ok(b) => observations.push(Some((b, mask))),
                Err(_) => observations.push(None),
            }
        }
        views.push(ViewRecord {
            camera,
            observations,
        });
    }
    Ok(SceneRecord {
        id: scene_idx,
        scene,
        views,
    })
}

// ---- rotation augmentation ---------------------------------------------------

fn rotate_y_quarter(p: [f64; 3]) -> [f64; 3] {
    [p[2], p[1], -p[0]]
}

fn rotate_y_quarter_inv(p: [f64; 3]) -> [f64; 3] {
    [-p[2], p[1], p[0]]
}

/// Rotate the whole world (objects and cameras together) by k quarter turns
/// about the vertical axis. Masks and boxes are untouched: the cameras turn
/// with the scene, so every view sees the identical picture of a different
/// world-space layout.
pub fn rotated_record(record: &SceneRecord, quarter_turns: usize) -> SceneRecord {
    let turns = quarter_turns % 4;
    if turns == 0 {
        return record.clone();
    }
    let mut out = record.clone();
    for obj in &mut out.scene.objects {
        for _ in 0..turns {
            obj.center = rotate_y_quarter(obj.center);
            obj.size = [obj.size[2], obj.size[1], obj.size[0]];
            for v in &mut obj.mesh.vertices {
                *v = rotate_y_quarter(*v);
            }
        }
    }
    for view in &mut out.views {
        for _ in 0..turns {
            // world' = R world, so cam = R_cam R^-1 world'
            let r = view.camera.rotation;
            let mut next = [[0.0; 3]; 3];
            for (row, next_row) in next.iter_mut().enumerate() {
                // columns of the new rotation are R_cam applied to R^-1 axes
                let col_x = rotate_y_quarter_inv([1.0, 0.0, 0.0]);
                let col_y = rotate_y_quarter_inv([0.0, 1.0, 0.0]);
                let col_z = rotate_y_quarter_inv([0.0, 0.0, 1.0]);
                next_row[0] = r[row][0] * col_x[0] + r[row][1] * col_x[1] + r[row][2] * col_x[2];
                next_row[1] = r[row][0] * col_y[0] + r[row][1] * col_y[1] + r[row][2] * col_y[2];
                next_row[2] = r[row][0] * col_z[0] + r[row][1] * col_z[1] + r[row][2] * col_z[2];
            }
            view.camera.rotation = next;
        }
    }
    out
}

// ---- disk format ----------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    spec: DatasetSpec,
    categories: Vec<String>,
    scenes: Vec<SceneEntry>,
}

#[derive(Serialize, Deserialize)]
struct SceneEntry {
    id: usize,
    scene: String,
    views: Vec<ViewEntry>,
}

/// Per-view ground truth keyed by track id; paths are relative to the file
/// that contains the entry.
#[derive(Serialize, Deserialize, Clone)]
pub struct ViewEntry {
    pub camera: String,
    pub masks: BTreeMap<String, String>,
    pub boxes: BTreeMap<String, [f64; 4]>,
    pub labels: BTreeMap<String, usize>,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// Write scenes, cameras, masks, per-view files, and the manifest index.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, records: &[SceneRecord]) -> Result<()> {
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e))
    };
    mkdir(dir)?;
    mkdir(&dir.join("scenes"))?;
    let mut scene_entries = Vec::with_capacity(records.len());
    for record in records {
        let scene_rel = format!("scenes/scene_{:03}.json", record.id);
        write_scene(&dir.join(&scene_rel), &record.scene)?;
        let mut view_entries = Vec::with_capacity(record.views.len());
        for (v, view) in record.views.iter().enumerate() {
            let view_dir_rel = format!("views/scene_{:03}/view_{:02}", record.id, v);
            let view_dir = dir.join(&view_dir_rel);
            mkdir(&view_dir)?;
            write_camera(&view_dir.join("camera.json"), &view.camera)?;
            let mut masks = BTreeMap::new();
            let mut boxes = BTreeMap::new();
            let mut labels = BTreeMap::new();
            for (track, obs) in view.observations.iter().enumerate() {
                let Some((b, mask)) = obs else { continue };
                let mask_name = format!("mask_{track:03}.pgm");
                write_mask_pgm(&view_dir.join(&mask_name), mask)?;
                masks.insert(track.to_string(), mask_name);
                boxes.insert(track.to_string(), b.coords());
                labels.insert(track.to_string(), record.scene.objects[track].label);
            }
            // self-contained per-view file for single-view tasks
            let local = ViewEntry {
                camera: "camera.json".into(),
                masks: masks.clone(),
                boxes: boxes.clone(),
                labels: labels.clone(),
            };
            let text = serde_json::to_string_pretty(&local)
                .map_err(|e| Error::json(view_dir.display().to_string(), e))?;
            std::fs::write(view_dir.join("view.json"), text)
                .map_err(|e| Error::io(view_dir.display().to_string(), e))?;
            // manifest entry uses root-relative paths
            view_entries.push(ViewEntry {
                camera: format!("{view_dir_rel}/camera.json"),
                masks: masks
                    .iter()
                    .map(|(k, v)| (k.clone(), format!("{view_dir_rel}/{v}")))
                    .collect(),
                boxes,
                labels,
            });
        }
        scene_entries.push(SceneEntry {
            id: record.id,
            scene: scene_rel,
            views: view_entries,
        });
    }
    let doc = ManifestDoc {
        spec: spec.clone(),
        categories: spec.category_table()?.names().to_vec(),
        scenes: scene_entries,
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::json(manifest_path(dir).display().to_string(), e))?;
    std::fs::write(manifest_path(dir), text)
        .map_err(|e| Error::io(manifest_path(dir).display().to_string(), e))
}

/// Read a dataset back; every referenced file must exist.
pub fn load_dataset(dir: &Path) -> Result<(DatasetSpec, Vec<SceneRecord>)> {
    let mpath = manifest_path(dir);
    let text =
        std::fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|e| Error::json(mpath.display().to_string(), e))?;
    let mut records = Vec::with_capacity(doc.scenes.len());
    for entry in &doc.scenes {
        let scene = read_scene(&dir.join(&entry.scene))?;
        let mut views = Vec::with_capacity(entry.views.len());
        for view in &entry.views {
            views.push(resolve_view_entry(view, dir, scene.len())?);
        }
        records.push(SceneRecord {
            id: entry.id,
            scene,
            views,
        });
    }
    Ok((doc.spec, records))
}

/// Resolve a view entry against its base directory.
pub fn resolve_view_entry(entry: &ViewEntry, base: &Path, tracks: usize) -> Result<ViewRecord> {
    let camera = read_camera(&base.join(&entry.camera))?;
    let mut observations = vec![None; tracks];
    for (track_str, mask_rel) in &entry.masks {
        let track: usize = track_str
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad track id {track_str:?}")))?;
        if track >= tracks {
            return Err(Error::InvalidArgument(format!(
                "track {track} outside scene of {tracks} objects"
            )));
        }
        let mask = read_mask_pgm(&base.join(mask_rel))?;
        let b = entry
            .boxes
            .get(track_str)
            .ok_or_else(|| Error::InvalidArgument(format!("missing box for track {track}")))?;
        let box2d = Box2D::new(b[0], b[1], b[2], b[3])?;
        observations[track] = Some((box2d, mask));
    }
    Ok(ViewRecord {
        camera,
        observations,
    })
}

/// Load one standalone view file (camera + masks + boxes + labels).
pub fn load_view(path: &Path) -> Result<(ViewRecord, BTreeMap<usize, usize>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let entry: ViewEntry =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let tracks = entry
        .masks
        .keys()
        .filter_map(|k| k.parse::<usize>().ok())
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    let record = resolve_view_entry(&entry, base, tracks)?;
    let mut labels = BTreeMap::new();
    for (k, v) in &entry.labels {
        labels.insert(
            k.parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad track id {k:?}")))?,
            *v,
        );
    }
    Ok((record, labels))
}
