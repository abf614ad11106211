//! Two-stage end-to-end optimization of network parameters and per-scene
//! latent logits.
//!
//! Stage one learns layout (classes, boxes, completeness, frustum) with the
//! shape head disabled and no rasterization; stage two switches the shape
//! head on and adds the silhouette loss. One adaptive-moment optimizer owns
//! the network, the start token, and every scene embedding. All per-epoch
//! randomness derives from (master seed, epoch, scene), so interrupted runs
//! resume bit-exactly.

pub mod forward;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, Adam, CheckpointTensor, ParamId, ParamStore, ParamTensor,
    Tape,
};
use crate::dataset::{rotated_record, SceneRecord};
use crate::decoders::{DecoderConfig, ObjectDecoder};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::latent::AnchorSet;
use crate::losses::{total_loss, GtObjectData, LossTerms, LossWeights, Stage};
use crate::render::{soft_mask_iou, RasterConfig};
use crate::rng::derive;
use crate::scene::{make_icosphere, CategoryTable, TemplateSphere};

use forward::{attach_silhouettes, build_predictions, match_predictions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub decoder_trunk_hidden: usize,
    pub decoder_trunk_out: usize,
    pub shape_hidden1: usize,
    pub shape_hidden2: usize,
    pub latent_anchors: usize,
    pub template_subdivisions: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    /// In-stage epoch after which the rate drops to a tenth.
    pub stage1_decay_epoch: usize,
    pub stage2_decay_epoch: usize,
    pub views_per_step: usize,
    pub rotation_augmentation: bool,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults sized for a CPU overfit run.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            generator: GeneratorConfig::desk(),
            decoder_trunk_hidden: 128,
            decoder_trunk_out: 64,
            shape_hidden1: 128,
            shape_hidden2: 64,
            latent_anchors: 256,
            template_subdivisions: 2,
            stage1_epochs: 400,
            stage2_epochs: 200,
            learning_rate: 1e-4,
            stage1_decay_epoch: 150,
            stage2_decay_epoch: 75,
            views_per_step: 8,
            rotation_augmentation: false,
            loss_weights: LossWeights::default(),
            seed,
        }
    }

    /// Full-scale preset: 800 + 500 epochs, decay after 300, 20 views.
    pub fn full_scale(seed: u64, max_objects: usize) -> Self {
        TrainConfig {
            generator: GeneratorConfig::full_scale(max_objects),
            decoder_trunk_hidden: 1024,
            decoder_trunk_out: 512,
            shape_hidden1: 1024,
            shape_hidden2: 512,
            latent_anchors: 256,
            template_subdivisions: 2,
            stage1_epochs: 800,
            stage2_epochs: 500,
            learning_rate: 1e-4,
            stage1_decay_epoch: 300,
            stage2_decay_epoch: 300,
            views_per_step: 20,
            rotation_augmentation: true,
            loss_weights: LossWeights::default(),
            seed,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs
    }

    /// Stage for a zero-based global epoch index.
    pub fn stage_of(&self, epoch: usize) -> Stage {
        if epoch < self.stage1_epochs {
            Stage::Layout
        } else {
            Stage::Joint
        }
    }

    /// Learning rate for a zero-based global epoch index; within each stage
    /// the rate is the base for 1-based epochs up to the decay epoch and a
    /// tenth of it beyond.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let (in_stage, decay) = if epoch < self.stage1_epochs {
            (epoch + 1, self.stage1_decay_epoch)
        } else {
            (epoch - self.stage1_epochs + 1, self.stage2_decay_epoch)
        };
        if in_stage > decay {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }

    pub fn decoder_config(&self, num_classes: usize) -> DecoderConfig {
        DecoderConfig {
            feature_dim: self.generator.d_model,
            trunk_hidden: self.decoder_trunk_hidden,
            trunk_out: self.decoder_trunk_out,
            num_classes,
            shape_hidden1: self.shape_hidden1,
            shape_hidden2: self.shape_hidden2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.stage1_epochs == 0 || self.views_per_step == 0 {
            return Err(Error::InvalidArgument(
                "need at least one epoch and one view per step".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a trained model needs at inference time.
pub struct ModelState {
    pub store: ParamStore,
    pub generator: Generator,
    pub decoder: ObjectDecoder,
    pub anchors: AnchorSet,
    pub template: TemplateSphere,
    pub categories: CategoryTable,
    pub raster: RasterConfig,
    pub config: TrainConfig,
    /// Latent logits per effective training scene, in scene order.
    pub embeddings: Vec<ParamId>,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl ModelState {
    pub fn stage(&self) -> Stage {
        self.config.stage_of(self.epoch.saturating_sub(1).min(
            self.config.total_epochs().saturating_sub(1),
        ))
    }
}

/// One epoch's log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub terms: LossTerms,
}

pub fn metrics_csv_header() -> &'static str {
    "epoch,stage,lr,class,box,completeness,frustum,silhouette,total"
}

impl EpochLog {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.lr,
            self.terms.class_term,
            self.terms.box_term,
            self.terms.completeness_term,
            self.terms.frustum_term,
            self.terms.silhouette_term,
            self.terms.total
        )
    }
}

/// Held-out-style evaluation record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub mean_layout_loss: f64,
    pub mean_box_l1: f64,
    pub mean_silhouette_iou: f64,
    pub completeness_accuracy: f64,
}

pub struct Trainer {
    pub model: ModelState,
    pub records: Vec<SceneRecord>,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    /// Fresh model over a dataset; rotation augmentation quadruples the
    /// effective scene list (each copy owns its own embedding).
    pub fn new(records: &[SceneRecord], categories: CategoryTable, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for r in records {
            if r.views.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "scene {} has no views",
                    r.id
                )));
            }
            if r.scene.len() > config.generator.max_objects {
                return Err(Error::InvalidArgument(format!(
                    "scene {} has {} objects, over the {}-object rollout",
                    r.id,
                    r.scene.len(),
                    config.generator.max_objects
                )));
            }
        }
        let effective: Vec<SceneRecord> = if config.rotation_augmentation {
            records
                .iter()
                .flat_map(|r| (0..4).map(|t| rotated_record(r, t)))
                .collect()
        } else {
            records.to_vec()
        };

        let mut store = ParamStore::new();
        let generator = Generator::init(&mut store, config.generator, config.seed)?;
        let num_classes = categories.len();
        let decoder = ObjectDecoder::init(&mut store, config.decoder_config(num_classes), config.seed)?;
        let anchors = AnchorSet::init(config.latent_anchors, config.generator.d_model, config.seed)?;
        let template = make_icosphere(config.template_subdivisions)?;
        let mut embeddings = Vec::with_capacity(effective.len());
        for idx in 0..effective.len() {
            // zero logits: the uniform simplex
            let id = store.add(ParamTensor::new(
                format!("embedding/{idx:04}"),
                vec![1, config.latent_anchors],
                vec![0.0; config.latent_anchors],
                true,
            )?)?;
            embeddings.push(id);
        }
        let raster = RasterConfig {
            width: effective[0]
                .views
                .first()
                .map(|v| v.camera.width)
                .unwrap_or(64),
            height: effective[0]
                .views
                .first()
                .map(|v| v.camera.height)
                .unwrap_or(64),
            ..RasterConfig::desk(64, 64)
        };
        let optimizer = Adam::new(&store, store.ids().collect());
        Ok(Trainer {
            model: ModelState {
                store,
                generator,
                decoder,
                anchors,
                template,
                categories,
                raster,
                config,
                embeddings,
                optimizer,
                epoch: 0,
            },
            records: effective,
            log: Vec::new(),
        })
    }

    /// Resume from a loaded model; the dataset must match the embedding
    /// table.
    pub fn resume(model: ModelState, records: &[SceneRecord]) -> Result<Self> {
        let effective: Vec<SceneRecord> = if model.config.rotation_augmentation {
            records
                .iter()
                .flat_map(|r| (0..4).map(|t| rotated_record(r, t)))
                .collect()
        } else {
            records.to_vec()
        };
        if effective.len() != model.embeddings.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint carries {} embeddings but the dataset has {} effective scenes",
                model.embeddings.len(),
                effective.len()
            )));
        }
        Ok(Trainer {
            model,
            records: effective,
            log: Vec::new(),
        })
    }

    /// Deterministic view subset for (epoch, scene).
    fn sample_views(&self, epoch: usize, scene_idx: usize) -> Vec<usize> {
        let total = self.records[scene_idx].views.len();
        let want = self.model.config.views_per_step.min(total);
        let mut rng = derive(
            self.model.config.seed,
            "train/views",
            &[epoch as u64, scene_idx as u64],
        );
        let mut indices: Vec<usize> = (0..total).collect();
        for i in 0..want {
            let j = rand::Rng::random_range(&mut rng, i..total);
            indices.swap(i, j);
        }
        indices.truncate(want);
        indices.sort_unstable();
        indices
    }

    /// Loss of one scene on a view subset, recorded on the given tape.
    fn scene_loss(
        &self,
        tape: &mut Tape,
        scene_idx: usize,
        view_indices: &[usize],
        stage: Stage,
    ) -> Result<crate::losses::LossOutput> {
        let record = &self.records[scene_idx];
        let model = &self.model;
        let cameras: Vec<_> = view_indices
            .iter()
            .map(|&v| record.views[v].camera.clone())
            .collect();
        let gts: Vec<GtObjectData<'_>> = (0..record.scene.len())
            .map(|track| GtObjectData {
                label: record.scene.objects[track].label,
                views: view_indices
                    .iter()
                    .map(|&v| {
                        record.views[v].observations[track]
                            .as_ref()
                            .map(|(b, m)| (*b, m))
                    })
                    .collect(),
            })
            .collect();
        let latent_logits = tape.param(&model.store, model.embeddings[scene_idx]);
        let mut preds = build_predictions(
            tape,
            &model.store,
            &model.generator,
            &model.decoder,
            &model.anchors,
            &model.template,
            latent_logits,
            model.config.generator.max_objects,
            &cameras,
            stage,
        )?;
        let assignment =
            match_predictions(tape, &preds, &gts, model.config.loss_weights.matching_box_w)?;
        if stage == Stage::Joint {
            attach_silhouettes(tape, &mut preds, &gts, &assignment, &model.template, &model.raster)?;
        }
        let taped: Vec<_> = preds.into_iter().map(|p| p.taped).collect();
        total_loss(
            tape,
            &taped,
            &gts,
            &assignment,
            &cameras,
            &model.config.loss_weights,
            stage,
        )
    }

    /// One full-batch epoch: forward/backward every scene, mean the
    /// gradients, step the optimizer.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.model.epoch;
        if epoch >= self.model.config.total_epochs() {
            return Err(Error::InvalidArgument("training already complete".into()));
        }
        let stage = self.model.config.stage_of(epoch);
        let lr = self.model.config.learning_rate_at(epoch);
        let scale = 1.0 / self.records.len() as f64;
        self.model.store.zero_grad();
        let mut mean_terms = LossTerms::default();
        for scene_idx in 0..self.records.len() {
            let views = self.sample_views(epoch, scene_idx);
            let mut tape = Tape::new();
            let out = self.scene_loss(&mut tape, scene_idx, &views, stage)?;
            let scaled = tape.scale(out.total, scale);
            tape.backward(scaled, &mut self.model.store)?;
            mean_terms.class_term += out.terms.class_term * scale;
            mean_terms.box_term += out.terms.box_term * scale;
            mean_terms.completeness_term += out.terms.completeness_term * scale;
            mean_terms.frustum_term += out.terms.frustum_term * scale;
            mean_terms.silhouette_term += out.terms.silhouette_term * scale;
            mean_terms.gated_views += out.terms.gated_views;
            mean_terms.total += out.terms.total * scale;
        }
        self.model.optimizer.step(&mut self.model.store, lr);
        self.model.epoch += 1;
        let entry = EpochLog {
            epoch: self.model.epoch,
            stage: match stage {
                Stage::Layout => 1,
                Stage::Joint => 2,
            },
            lr,
            terms: mean_terms,
        };
        self.log.push(entry);
        Ok(entry)
    }

    pub fn train_to_completion(&mut self) -> Result<()> {
        while self.model.epoch < self.model.config.total_epochs() {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Metrics on a fixed deterministic view subset (every fourth view),
    /// standing in for a held-out split at desk scale.
    pub fn evaluate(&self) -> Result<MetricsRecord> {
        let stage = if self.model.epoch > self.model.config.stage1_epochs {
            Stage::Joint
        } else {
            Stage::Layout
        };
        let mut layout_losses = Vec::new();
        let mut box_l1 = Vec::new();
        let mut sil_iou = Vec::new();
        let mut comp_hits = 0usize;
        let mut comp_total = 0usize;
        for scene_idx in 0..self.records.len() {
            let record = &self.records[scene_idx];
            let views: Vec<usize> = (0..record.views.len()).filter(|v| v % 4 == 3).collect();
            if views.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let out = self.scene_loss(&mut tape, scene_idx, &views, stage)?;
            layout_losses.push(out.terms.total);
            box_l1.push(out.terms.box_term);
            // completeness accuracy and silhouette IoU need the raw pieces
            let (hits, total, ious) = self.eval_details(scene_idx, &views)?;
            comp_hits += hits;
            comp_total += total;
            sil_iou.extend(ious);
        }
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(MetricsRecord {
            epoch: self.model.epoch,
            mean_layout_loss: mean(&layout_losses),
            mean_box_l1: mean(&box_l1),
            mean_silhouette_iou: mean(&sil_iou),
            completeness_accuracy: if comp_total == 0 {
                0.0
            } else {
                comp_hits as f64 / comp_total as f64
            },
        })
    }

    fn eval_details(
        &self,
        scene_idx: usize,
        view_indices: &[usize],
    ) -> Result<(usize, usize, Vec<f64>)> {
        let record = &self.records[scene_idx];
        let model = &self.model;
        let cameras: Vec<_> = view_indices
            .iter()
            .map(|&v| record.views[v].camera.clone())
            .collect();
        let gts: Vec<GtObjectData<'_>> = (0..record.scene.len())
            .map(|track| GtObjectData {
                label: record.scene.objects[track].label,
                views: view_indices
                    .iter()
                    .map(|&v| {
                        record.views[v].observations[track]
                            .as_ref()
                            .map(|(b, m)| (*b, m))
                    })
                    .collect(),
            })
            .collect();
        let mut tape = Tape::new();
        let latent_logits = tape.param(&model.store, model.embeddings[scene_idx]);
        let stage = if model.epoch > model.config.stage1_epochs {
            Stage::Joint
        } else {
            Stage::Layout
        };
        let mut preds = build_predictions(
            &mut tape,
            &model.store,
            &model.generator,
            &model.decoder,
            &model.anchors,
            &model.template,
            latent_logits,
            model.config.generator.max_objects,
            &cameras,
            stage,
        )?;
        let assignment =
            match_predictions(&tape, &preds, &gts, model.config.loss_weights.matching_box_w)?;
        attach_silhouettes(
            &mut tape,
            &mut preds,
            &gts,
            &assignment,
            &model.template,
            &model.raster,
        )?;
        // completeness: matched predictions should say "continue", surplus
        // predictions should say "stop"
        let mut hits = 0usize;
        let mut total = 0usize;
        for (k, p) in preds.iter().enumerate() {
            let predicted_present = tape.values(p.layout.completeness)[0] > 0.5;
            let actually_present = assignment.pred_to_gt.get(k).copied().flatten().is_some();
            if predicted_present == actually_present {
                hits += 1;
            }
            total += 1;
        }
        // per matched object: mean thresholded silhouette IoU over views
        let mut ious = Vec::new();
        for (k, j) in assignment.matched() {
            let mut vals = Vec::new();
            for (p, gt_view) in gts[j].views.iter().enumerate() {
                let Some((_b, mask)) = gt_view else { continue };
                let Some(sil) = preds[k].taped.views[p].silhouette else {
                    continue;
                };
                vals.push(soft_mask_iou(tape.values(sil), mask)?);
            }
            if !vals.is_empty() {
                ious.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        Ok((hits, total, ious))
    }
}

// ---- checkpointing -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    categories: Vec<String>,
    raster: RasterConfig,
    embedding_count: usize,
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

/// Serialize parameters, anchors, optimizer state, and counters; the config
/// goes to a JSON sidecar next to the binary file.
pub fn save_model(path: &Path, model: &ModelState) -> Result<()> {
    let mut tensors = Vec::new();
    for (_, p) in model.store.iter() {
        tensors.push(CheckpointTensor::new(
            p.name.clone(),
            p.shape.clone(),
            p.values.clone(),
        ));
    }
    tensors.push(CheckpointTensor::new(
        "latent/anchors",
        vec![model.anchors.count(), model.anchors.dim()],
        model.anchors.raw().to_vec(),
    ));
    for (slot, &pid) in model.optimizer.ids().iter().enumerate() {
        let name = &model.store.get(pid).name;
        let shape = model.store.get(pid).shape.clone();
        tensors.push(CheckpointTensor::new(
            format!("opt/adam/m/{name}"),
            shape.clone(),
            model.optimizer.m[slot].clone(),
        ));
        tensors.push(CheckpointTensor::new(
            format!("opt/adam/v/{name}"),
            shape,
            model.optimizer.v[slot].clone(),
        ));
    }
    tensors.push(CheckpointTensor::scalar("meta/epoch", model.epoch as f64));
    tensors.push(CheckpointTensor::scalar(
        "meta/adam_t",
        model.optimizer.t as f64,
    ));
    tensors.push(CheckpointTensor::scalar(
        "meta/master_seed",
        f64::from_bits(model.config.seed),
    ));
    save_checkpoint(path, &tensors)?;

    let meta = CheckpointMeta {
        config: model.config.clone(),
        categories: model.categories.names().to_vec(),
        raster: model.raster,
        embedding_count: model.embeddings.len(),
    };
    let mp = meta_path(path);
    let text =
        serde_json::to_string_pretty(&meta).map_err(|e| Error::json(mp.display().to_string(), e))?;
    std::fs::write(&mp, text).map_err(|e| Error::io(mp.display().to_string(), e))
}

/// Rebuild a full model state from a checkpoint plus its sidecar.
pub fn load_model(path: &Path) -> Result<ModelState> {
    let mp = meta_path(path);
    let text =
        std::fs::read_to_string(&mp).map_err(|e| Error::io(mp.display().to_string(), e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::json(mp.display().to_string(), e))?;
    let tensors = load_checkpoint(path)?;

    let mut store = ParamStore::new();
    let mut anchors_raw: Option<(Vec<f64>, usize, usize)> = None;
    let mut epoch = 0usize;
    let mut adam_t = 0u64;
    let mut seed_bits: Option<u64> = None;
    let mut opt_m: Vec<(String, Vec<f64>)> = Vec::new();
    let mut opt_v: Vec<(String, Vec<f64>)> = Vec::new();
    for t in tensors {
        if t.name == "latent/anchors" {
            anchors_raw = Some((t.values, t.shape[0], t.shape[1]));
        } else if t.name == "meta/epoch" {
            epoch = t.values[0] as usize;
        } else if t.name == "meta/adam_t" {
            adam_t = t.values[0] as u64;
        } else if t.name == "meta/master_seed" {
            seed_bits = Some(t.values[0].to_bits());
        } else if let Some(rest) = t.name.strip_prefix("opt/adam/m/") {
            opt_m.push((rest.to_string(), t.values));
        } else if let Some(rest) = t.name.strip_prefix("opt/adam/v/") {
            opt_v.push((rest.to_string(), t.values));
        } else {
            store.add(ParamTensor::new(t.name, t.shape, t.values, true)?)?;
        }
    }
    let mut config = meta.config;
    if let Some(bits) = seed_bits {
        config.seed = bits;
    }
    let categories = CategoryTable::new(meta.categories)?;
    let generator = Generator::from_store(&store, config.generator)?;
    let decoder = ObjectDecoder::from_store(&store, config.decoder_config(categories.len()))?;
    let (raw, m, d) = anchors_raw
        .ok_or_else(|| Error::Checkpoint("checkpoint is missing latent/anchors".into()))?;
    let anchors = AnchorSet::from_raw(raw, m, d)?;
    let template = make_icosphere(config.template_subdivisions)?;
    let mut embeddings = Vec::with_capacity(meta.embedding_count);
    for idx in 0..meta.embedding_count {
        embeddings.push(store.lookup(&format!("embedding/{idx:04}")).ok_or_else(
            || Error::Checkpoint(format!("checkpoint is missing embedding/{idx:04}")),
        )?);
    }
    let mut optimizer = Adam::new(&store, store.ids().collect());
    optimizer.t = adam_t;
    for (name, values) in opt_m {
        let pid = store
            .lookup(&name)
            .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown {name}")))?;
        let slot = optimizer.ids().iter().position(|&i| i == pid).unwrap();
        optimizer.m[slot] = values;
    }
    for (name, values) in opt_v {
        let pid = store
            .lookup(&name)
            .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown {name}")))?;
        let slot = optimizer.ids().iter().position(|&i| i == pid).unwrap();
        optimizer.v[slot] = values;
    }
    Ok(ModelState {
        store,
        generator,
        decoder,
        anchors,
        template,
        categories,
        raster: meta.raster,
        config,
        embeddings,
        optimizer,
        epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_scenes, DatasetSpec};

    fn tiny_dataset(seed: u64) -> (Vec<SceneRecord>, CategoryTable) {
        let spec = DatasetSpec {
            scene_count: 2,
            objects_min: 1,
            objects_max: 2,
            views_per_scene: 6,
            image_width: 32,
            image_height: 32,
            ..DatasetSpec::desk(seed)
        };
        let records = generate_scenes(&spec).unwrap();
        (records, spec.category_table().unwrap())
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            generator: GeneratorConfig {
                d_model: 32,
                heads: 4,
                ff_hidden: 48,
                max_objects: 4,
                layer_norm: true,
            },
            decoder_trunk_hidden: 48,
            decoder_trunk_out: 32,
            shape_hidden1: 40,
            shape_hidden2: 24,
            latent_anchors: 32,
            template_subdivisions: 1,
            stage1_epochs: 6,
            stage2_epochs: 3,
            learning_rate: 1e-3,
            stage1_decay_epoch: 5,
            stage2_decay_epoch: 2,
            views_per_step: 4,
            rotation_augmentation: false,
            loss_weights: LossWeights::default(),
            seed,
        }
    }

    #[test]
    fn paper_schedule_decays_after_epoch_300() {
        let config = TrainConfig::full_scale(0, 13);
        assert_eq!(config.learning_rate_at(298), 1e-4); // 1-based epoch 299
        assert_eq!(config.learning_rate_at(300), 1e-5); // 1-based epoch 301
        assert_eq!(config.learning_rate_at(299), 1e-4); // boundary epoch 300
        // stage 2 restarts the schedule
        assert_eq!(config.learning_rate_at(800), 1e-4);
        assert_eq!(config.learning_rate_at(800 + 300), 1e-5);
    }

    #[test]
    fn rotation_augmentation_quadruples_scenes() {
        let (records, categories) = tiny_dataset(3);
        let config = TrainConfig {
            rotation_augmentation: true,
            ..tiny_config(3)
        };
        let trainer = Trainer::new(&records, categories, config).unwrap();
        assert_eq!(trainer.records.len(), records.len() * 4);
        assert_eq!(trainer.model.embeddings.len(), records.len() * 4);
        // object counts preserved per rotation
        for (i, rec) in trainer.records.iter().enumerate() {
            assert_eq!(rec.scene.len(), records[i / 4].scene.len());
        }
    }

    #[test]
    fn stage_one_leaves_shape_head_untouched() {
        let (records, categories) = tiny_dataset(5);
        let mut trainer = Trainer::new(&records, categories, tiny_config(5)).unwrap();
        let shape_ids = trainer.model.decoder.shape_param_ids();
        let before: Vec<Vec<f64>> = shape_ids
            .iter()
            .map(|&id| trainer.model.store.get(id).values.clone())
            .collect();
        for _ in 0..3 {
            trainer.run_epoch().unwrap();
        }
        for (slot, &id) in shape_ids.iter().enumerate() {
            assert!(trainer
                .model
                .store
                .get(id)
                .grad
                .iter()
                .all(|&g| g == 0.0));
            assert_eq!(before[slot], trainer.model.store.get(id).values);
        }
    }

    #[test]
    fn single_scene_backward_touches_only_its_embedding() {
        let (records, categories) = tiny_dataset(7);
        let mut trainer = Trainer::new(&records, categories, tiny_config(7)).unwrap();
        trainer.model.store.zero_grad();
        let views = trainer.sample_views(0, 0);
        let mut tape = Tape::new();
        let out = trainer.scene_loss(&mut tape, 0, &views, Stage::Layout).unwrap();
        tape.backward(out.total, &mut trainer.model.store).unwrap();
        let own = trainer.model.embeddings[0];
        let other = trainer.model.embeddings[1];
        assert!(trainer.model.store.get(own).grad.iter().any(|&g| g != 0.0));
        assert!(trainer.model.store.get(other).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_decreases_during_overfit_smoke() {
        let (records, categories) = tiny_dataset(11);
        let config = TrainConfig {
            stage1_epochs: 30,
            stage2_epochs: 0,
            stage1_decay_epoch: 30,
            learning_rate: 3e-3,
            ..tiny_config(11)
        };
        let mut trainer = Trainer::new(&records, categories, config).unwrap();
        trainer.train_to_completion().unwrap();
        let first: f64 = trainer.log[..5].iter().map(|l| l.terms.total).sum::<f64>() / 5.0;
        let last: f64 = trainer.log[25..].iter().map(|l| l.terms.total).sum::<f64>() / 5.0;
        assert!(
            last < first * 0.9,
            "no learning progress: first {first}, last {last}"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (records, categories) = tiny_dataset(13);
        let mut trainer = Trainer::new(&records, categories, tiny_config(13)).unwrap();
        for _ in 0..2 {
            trainer.run_epoch().unwrap();
        }
        let dir = std::env::temp_dir().join("scenegen-train-ckpt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.spf");
        save_model(&path, &trainer.model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.epoch, trainer.model.epoch);
        assert_eq!(loaded.optimizer.t, trainer.model.optimizer.t);
        assert_eq!(loaded.config, trainer.model.config);
        for (a, b) in trainer.model.store.iter().map(|x| x.1).zip(loaded.store.iter().map(|x| x.1)) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (ma, mb) in trainer.model.optimizer.m.iter().zip(&loaded.optimizer.m) {
            for (x, y) in ma.iter().zip(mb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (records, categories) = tiny_dataset(17);
        // uninterrupted: 4 epochs
        let mut full = Trainer::new(&records, categories.clone(), tiny_config(17)).unwrap();
        for _ in 0..4 {
            full.run_epoch().unwrap();
        }
        // interrupted: 2 epochs, save, load, 2 more
        let mut half = Trainer::new(&records, categories, tiny_config(17)).unwrap();
        for _ in 0..2 {
            half.run_epoch().unwrap();
        }
        let dir = std::env::temp_dir().join("scenegen-train-resume");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.spf");
        save_model(&path, &half.model).unwrap();
        let loaded = load_model(&path).unwrap();
        let mut resumed = Trainer::resume(loaded, &records).unwrap();
        for _ in 0..2 {
            resumed.run_epoch().unwrap();
        }
        for ((_, a), (_, b)) in full.model.store.iter().zip(resumed.model.store.iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits(), "tensor {}", a.name);
            }
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let (records, categories) = tiny_dataset(19);
        let run = || {
            let mut t =
                Trainer::new(&records, categories.clone(), tiny_config(19)).unwrap();
            t.train_to_completion().unwrap();
            let mut values = Vec::new();
            for (_, p) in t.model.store.iter() {
                values.extend(p.values.iter().map(|v| v.to_bits()));
            }
            values
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_dataset_rejected() {
        let (_, categories) = tiny_dataset(21);
        assert!(matches!(
            Trainer::new(&[], categories, tiny_config(21)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn joint_stage_runs_and_logs_silhouettes() {
        let (records, categories) = tiny_dataset(23);
        let config = TrainConfig {
            stage1_epochs: 2,
            stage2_epochs: 2,
            ..tiny_config(23)
        };
        let mut trainer = Trainer::new(&records, categories, config).unwrap();
        trainer.train_to_completion().unwrap();
        let last = trainer.log.last().unwrap();
        assert_eq!(last.stage, 2);
        // the evaluation path exercises silhouette IoU
        let metrics = trainer.evaluate().unwrap();
        assert!(metrics.mean_silhouette_iou >= 0.0);
        assert!(metrics.completeness_accuracy >= 0.0);
    }
}
