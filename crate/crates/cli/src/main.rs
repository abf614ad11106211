//! Command-line surface over the scene-prior pipeline.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use scenegen_core::dataset::{generate_scenes, load_dataset, load_view, write_dataset, DatasetSpec};
use scenegen_core::gradsuite;
use scenegen_core::latent::WeightSimplex;
use scenegen_core::metrics::{category_kl, label_histogram, paired_scene_metrics};
use scenegen_core::render::{
    rasterize_instance_ids, write_mask_pgm, write_soft_pgm_text, BinaryMask, RasterConfig,
};
use scenegen_core::scene::{read_scene, write_scene};
use scenegen_core::tasks::{
    interpolate, read_latent, reconstruct_single_view, synthesize, write_latent,
    ReconstructOptions,
};
use scenegen_core::train::{
    load_model, metrics_csv_header, save_model, ModelState, TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(
    name = "scenegen",
    about = "Latent scene priors from 2D masks: data generation, training, synthesis, reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural multi-view dataset.
    GenData {
        /// Dataset spec JSON; defaults to the desk-scale spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Master seed when no spec file is given.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Two-stage training on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON; defaults to the desk-scale config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Epoch interval for progress lines (0 silences them).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Decode a random latent vector into a scene.
    Synthesize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the sampled latent as a JSON array.
        #[arg(long)]
        latent_out: Option<PathBuf>,
    },
    /// Decode scenes along the geodesic between two latents.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        to: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a fresh latent against one annotated view.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        view: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
    /// Evaluate a checkpoint against its dataset and write a JSON report.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Scenes synthesized for the category-distribution check.
        #[arg(long, default_value_t = 300)]
        synth_count: usize,
    },
    /// Render a scene through a camera into a PGM image.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write a text-format soft composite instead of the hard ID map.
        #[arg(long)]
        soft: bool,
    },
    /// Run the full gradient-check suite.
    Gradcheck {
        /// Random points per primitive.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData { spec, out, seed } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<DatasetSpec>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => DatasetSpec::desk(seed),
            };
            let records = generate_scenes(&spec)?;
            write_dataset(&out, &spec, &records)?;
            println!(
                "wrote {} scenes x {} views to {}",
                records.len(),
                spec.views_per_scene,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            config,
            out,
            log_every,
        } => {
            let (spec, records) = load_dataset(&data)?;
            let config = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<TrainConfig>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => TrainConfig::desk(spec.master_seed),
            };
            let mut trainer = Trainer::new(&records, spec.category_table()?, config)?;
            let total = trainer.model.config.total_epochs();
            while trainer.model.epoch < total {
                let entry = trainer.run_epoch()?;
                if log_every > 0 && entry.epoch % log_every == 0 {
                    println!(
                        "epoch {}/{} stage {} loss {:.4}",
                        entry.epoch, total, entry.stage, entry.terms.total
                    );
                }
            }
            save_model(&out, &trainer.model)?;
            let csv_path = metrics_csv_path(&out);
            let mut csv = String::from(metrics_csv_header());
            csv.push('\n');
            for line in &trainer.log {
                csv.push_str(&line.csv_line());
                csv.push('\n');
            }
            std::fs::write(&csv_path, csv)
                .with_context(|| format!("writing {}", csv_path.display()))?;
            println!("checkpoint: {}", out.display());
            Ok(())
        }
        Command::Synthesize {
            ckpt,
            seed,
            out,
            latent_out,
        } => {
            let model = load_model(&ckpt)?;
            let (scene, z) = synthesize(&model, seed)?;
            write_scene(&out, &scene)?;
            if let Some(path) = latent_out {
                write_latent(&path, &z)?;
            }
            println!("{} objects -> {}", scene.len(), out.display());
            Ok(())
        }
        Command::Interpolate {
            ckpt,
            from,
            to,
            steps,
            out,
        } => {
            let model = load_model(&ckpt)?;
            let z_a = read_latent(&from)?;
            let z_b = read_latent(&to)?;
            let scenes = interpolate(&model, &z_a, &z_b, steps)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, scene) in scenes.iter().enumerate() {
                write_scene(&out.join(format!("step_{i:03}.json")), scene)?;
            }
            println!("{} interpolated scenes -> {}", scenes.len(), out.display());
            Ok(())
        }
        Command::Reconstruct {
            ckpt,
            view,
            out,
            iterations,
        } => {
            let model = load_model(&ckpt)?;
            let (record, labels) = load_view(&view)?;
            let options = ReconstructOptions {
                iterations,
                ..ReconstructOptions::default()
            };
            let (scene, _z) = reconstruct_single_view(&model, &record, &labels, &options)?;
            write_scene(&out, &scene)?;
            println!("{} objects -> {}", scene.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            ckpt,
            data,
            report,
            synth_count,
        } => {
            let model = load_model(&ckpt)?;
            let (_spec, records) = load_dataset(&data)?;
            let doc = evaluate_report(model, &records, synth_count)?;
            let text = serde_json::to_string_pretty(&doc)?;
            std::fs::write(&report, text)
                .with_context(|| format!("writing {}", report.display()))?;
            println!("report -> {}", report.display());
            Ok(())
        }
        Command::Render {
            scene,
            camera,
            out,
            soft,
        } => {
            let scene = read_scene(&scene)?;
            let camera = scenegen_core::camera::read_camera(&camera)?;
            let raster = RasterConfig::desk(camera.width, camera.height);
            let meshes: Vec<_> = scene.objects.iter().map(|o| o.world_mesh()).collect();
            if soft {
                let mut composite = vec![0.0; camera.width * camera.height];
                for mesh in &meshes {
                    let projected: Vec<_> =
                        mesh.vertices.iter().map(|&p| camera.project_point(p)).collect();
                    let pts: Vec<[f64; 2]> = projected
                        .iter()
                        .map(|p| p.map(|(uv, _)| uv).unwrap_or([-10.0; 2]))
                        .collect();
                    let valid: Vec<bool> = projected.iter().map(Option::is_some).collect();
                    let faces = std::rc::Rc::new(mesh.faces.clone());
                    let sil = scenegen_core::render::rasterize_silhouette_values(
                        &pts, &valid, &faces, &raster,
                    )?;
                    for (c, s) in composite.iter_mut().zip(&sil) {
                        *c = 1.0 - (1.0 - *c) * (1.0 - s);
                    }
                }
                write_soft_pgm_text(&out, &composite, camera.width, camera.height)?;
            } else {
                let ids = rasterize_instance_ids(&meshes, &camera, &raster)?;
                let mask = BinaryMask {
                    width: camera.width,
                    height: camera.height,
                    data: ids.ids.iter().map(Option::is_some).collect(),
                };
                write_mask_pgm(&out, &mask)?;
            }
            println!("image -> {}", out.display());
            Ok(())
        }
        Command::Gradcheck { points, seed } => {
            let entries = gradsuite::full_gradient_suite(points, seed)?;
            let mut failed = 0;
            for e in &entries {
                println!(
                    "{:<40} max rel err {:>12.3e}  tol {:>8.0e}  {}",
                    e.name,
                    e.max_rel_err,
                    e.tolerance,
                    if e.passed() { "ok" } else { "FAIL" }
                );
                if !e.passed() {
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
            println!("all {} gradient checks passed", entries.len());
            Ok(())
        }
    }
}

fn metrics_csv_path(ckpt: &std::path::Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".metrics.csv");
    PathBuf::from(s)
}

#[derive(serde::Serialize)]
struct EvaluationReport {
    epoch: usize,
    mean_layout_loss: f64,
    mean_box_l1: f64,
    mean_silhouette_iou: f64,
    completeness_accuracy: f64,
    category_kl: f64,
    mean_box3d_iou: f64,
    mean_chamfer: f64,
}

fn evaluate_report(
    model: ModelState,
    records: &[scenegen_core::dataset::SceneRecord],
    synth_count: usize,
) -> anyhow::Result<EvaluationReport> {
    let num_classes = model.categories.len();
    let gt_scenes: Vec<_> = records.iter().map(|r| r.scene.clone()).collect();
    let gt_hist = label_histogram(&gt_scenes, num_classes);

    let mut synth_scenes = Vec::with_capacity(synth_count);
    for seed in 0..synth_count as u64 {
        synth_scenes.push(synthesize(&model, seed)?.0);
    }
    let synth_hist = label_histogram(&synth_scenes, num_classes);
    let kl = category_kl(&synth_hist, &gt_hist);

    // per-scene embedding decodes against their ground truth
    let with_shape = model.epoch > model.config.stage1_epochs;
    let mut ious = Vec::new();
    let mut chamfers = Vec::new();
    for (idx, record) in records.iter().enumerate() {
        if idx >= model.embeddings.len() {
            break;
        }
        let logits = model.store.get(model.embeddings[idx]).values.clone();
        let z = scenegen_core::latent::compose_from_simplex(
            &model.anchors,
            &WeightSimplex::from_logits(logits),
        )?;
        let decoded = scenegen_core::tasks::decode_scene(&model, &z, with_shape)?;
        let (i, c) = paired_scene_metrics(&decoded, &record.scene, 512, 11)?;
        ious.extend(i);
        chamfers.extend(c);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };

    let trainer = Trainer::resume(model, records)?;
    let m = trainer.evaluate()?;
    Ok(EvaluationReport {
        epoch: m.epoch,
        mean_layout_loss: m.mean_layout_loss,
        mean_box_l1: m.mean_box_l1,
        mean_silhouette_iou: m.mean_silhouette_iou,
        completeness_accuracy: m.completeness_accuracy,
        category_kl: kl,
        mean_box3d_iou: mean(&ious),
        mean_chamfer: mean(&chamfers),
    })
}
