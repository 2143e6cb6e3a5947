use std::fs;
use std::path::{Path, PathBuf};

use diffaudit_core::attacks::{
    extraction_attack, iia_attack, mia_attack, query_seed, ExtractionConfig, IiaQuery, MiaResult,
};
use diffaudit_core::diffusion::{checkpoint, train as train_model, Denoiser, NoiseSchedule, SamplerConfig};
use diffaudit_core::evaluation::{
    mia_score, run_extraction_experiment, run_iia_experiment, run_mia_experiment, sweep_csv, sweep_timesteps,
    MetricsReport,
};
use diffaudit_core::faces::{generate_dataset, FaceDataset, FaceRecord, LandmarkMap, Split};
use diffaudit_core::occlusion::{build_occluding_suite, build_preserving_suite};
use diffaudit_core::{Error, Image, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Overrides applied by `evaluate --profile fast`.
pub const FAST_PROFILE: &str = "\
n_queries = 20
n_runs = 7
iia_query_counts = 1,5
iia_runs = 3
extraction_queries = 4
";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<dir>/<name>` with the config embedded, plus `<dir>/config.txt`.
fn write_report(cfg: &RunConfig, dir: &Path, name: &str, command: &str, body: Value) -> Result<PathBuf> {
    let mut doc = json!({ "command": command, "config": cfg.to_json() });
    if let (Value::Object(doc), Value::Object(body)) = (&mut doc, body) {
        doc.extend(body);
    }
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(&doc).expect("serializable report");
    write(&path, text.as_bytes())?;
    write(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    Ok(path)
}

fn load_model(cfg: &RunConfig) -> Result<(Denoiser, NoiseSchedule)> {
    let (model, sched) = checkpoint::load(&cfg.checkpoint)?;
    if sched != cfg.schedule()? {
        return Err(Error::Config {
            key: "timesteps".into(),
            msg: format!(
                "schedule in {} differs from the configured one (T = {}, beta {}..{})",
                cfg.checkpoint.display(),
                cfg.timesteps,
                cfg.beta_start,
                cfg.beta_end
            ),
        });
    }
    Ok((model, sched))
}

fn load_dataset(cfg: &RunConfig) -> Result<FaceDataset> {
    FaceDataset::load(&cfg.dataset_dir)
}

pub fn generate(cfg: &RunConfig) -> Result<String> {
    let ds = generate_dataset(&cfg.generation())?;
    ds.save(&cfg.dataset_dir)?;
    write(&cfg.dataset_dir.join("config.txt"), cfg.to_text().as_bytes())?;
    Ok(format!(
        "generated {} images of {} identities in {}",
        ds.len(),
        ds.identity_ids().len(),
        cfg.dataset_dir.display()
    ))
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(cfg)?;
    let sched = cfg.schedule()?;
    let out = train_model(&ds.train_images(), &sched, &cfg.training())?;
    if let Some(dir) = cfg.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    checkpoint::save(&cfg.checkpoint, &out.model, &sched)?;
    let report = write_report(
        cfg,
        &cfg.report_dir,
        "train_report.json",
        "train",
        json!({
            "initial_loss": out.initial_loss,
            "final_loss": out.final_loss(),
            "loss_curve": out.loss_curve,
        }),
    )?;
    write(&cfg.report_dir.join("loss_curve.csv"), out.loss_curve_csv().as_bytes())?;
    Ok(format!(
        "trained {} epochs: loss {:.4} -> {:.4}; checkpoint {}, report {}",
        cfg.epochs,
        out.initial_loss,
        out.final_loss(),
        cfg.checkpoint.display(),
        report.display()
    ))
}

/// One attack target: the image, its landmarks and what is known about it.
struct Target {
    name: String,
    image: Image,
    landmarks: LandmarkMap,
    identity: Option<usize>,
    split: Option<Split>,
}

impl Target {
    fn from_record(r: &FaceRecord) -> Target {
        Target {
            name: r.file_name.clone(),
            image: r.image.clone(),
            landmarks: r.landmarks.clone(),
            identity: Some(r.identity),
            split: Some(r.split),
        }
    }

    fn info(&self) -> Value {
        json!({
            "query": self.name,
            "identity": self.identity,
            "split": self.split.map(|s| s.as_str()),
        })
    }
}

/// Query files must belong to the dataset so their landmarks are known.
fn targets_from_paths(ds: &FaceDataset, paths: &[PathBuf]) -> Result<Vec<Target>> {
    paths
        .iter()
        .map(|path| {
            let image = Image::load_pnm(path)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let record = ds
                .records
                .iter()
                .find(|r| r.file_name == name)
                .ok_or_else(|| Error::MissingLandmarks(format!("{} (not in the dataset's landmarks.json)", path.display())))?;
            Ok(Target {
                image,
                ..Target::from_record(record)
            })
        })
        .collect()
}

fn known_identity(ds: &FaceDataset, id: usize) -> Result<()> {
    if ds.identity_ids().contains(&id) || ds.identity(id).is_some() {
        Ok(())
    } else {
        Err(Error::InsufficientData(format!(
            "identity {id} is not in {}",
            ds.identity_ids().iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        )))
    }
}

/// `k` photos of an identity: fresh renders for synthetic corpora, its
/// records otherwise.
fn identity_photos(ds: &FaceDataset, id: usize, k: usize) -> Result<Vec<Target>> {
    known_identity(ds, id)?;
    if let (Some(_), Some(identity)) = (&ds.generation, ds.identity(id)) {
        return (0..k)
            .map(|q| {
                let (image, landmarks) = ds.render_query(identity, q)?;
                Ok(Target {
                    name: format!("identity {id} query {q}"),
                    image,
                    landmarks,
                    identity: Some(id),
                    split: None,
                })
            })
            .collect();
    }
    let photos: Vec<Target> = ds.records_of(id).take(k).map(Target::from_record).collect();
    if photos.is_empty() {
        return Err(Error::InsufficientData(format!("identity {id} has no images")));
    }
    Ok(photos)
}

fn mia_result(cfg: &RunConfig, sched: &NoiseSchedule, model: &Denoiser, t: &Target) -> Result<MiaResult> {
    let suite = build_occluding_suite(
        &t.landmarks,
        t.image.shape(),
        cfg.random_patches,
        cfg.patch_size,
        cfg.suite_seed,
    )?;
    let sampler = SamplerConfig {
        rng_seed: query_seed(cfg.attack_seed, &t.image),
        ..cfg.sampler_config()
    };
    mia_attack(&t.image, &suite, model, sched, &sampler, cfg.mia_threshold)
}

pub fn attack_mia(cfg: &RunConfig) -> Result<String> {
    let (queries, identity) = (&cfg.queries, cfg.identity);
    use rayon::prelude::*;
    let ds = load_dataset(cfg)?;
    let (model, sched) = load_model(cfg)?;
    let targets = if !queries.is_empty() {
        targets_from_paths(&ds, queries)?
    } else if let Some(id) = identity {
        known_identity(&ds, id)?;
        ds.records_of(id).map(Target::from_record).collect()
    } else {
        ds.records.iter().map(Target::from_record).collect()
    };
    if targets.is_empty() {
        return Err(Error::InsufficientData("no query images".into()));
    }
    let results = targets
        .par_iter()
        .map(|t| mia_result(cfg, &sched, &model, t))
        .collect::<Result<Vec<_>>>()?;
    let members = results.iter().filter(|r| r.decision).count();
    let entries: Vec<Value> = targets
        .iter()
        .zip(&results)
        .map(|(t, r)| {
            let mut v = t.info();
            v["result"] = serde_json::to_value(r).expect("serializable");
            v
        })
        .collect();
    let path = write_report(cfg, &cfg.report_dir, "mia_report.json", "attack-mia", json!({ "queries": entries }))?;
    let first = results[0].confidence;
    Ok(format!(
        "membership: {members} of {} queries at or above {} (first confidence {first:.4}); report {}",
        results.len(),
        cfg.mia_threshold,
        path.display()
    ))
}

pub fn attack_iia(cfg: &RunConfig) -> Result<String> {
    let (queries, identity) = (&cfg.queries, cfg.identity);
    let ds = load_dataset(cfg)?;
    let (model, sched) = load_model(cfg)?;
    let targets = if !queries.is_empty() {
        targets_from_paths(&ds, queries)?
    } else if let Some(id) = identity {
        identity_photos(&ds, id, cfg.iia_queries)?
    } else {
        return Err(Error::Config {
            key: "identity".into(),
            msg: "attack-iia needs --identity or --query".into(),
        });
    };
    let list: Vec<IiaQuery> = targets
        .iter()
        .map(|t| IiaQuery {
            image: t.image.clone(),
            landmarks: t.landmarks.clone(),
        })
        .collect();
    let res = iia_attack(&list, &model, &sched, &cfg.suite_params(), &cfg.sampler_config(), cfg.iia_threshold)?;
    let path = write_report(
        cfg,
        &cfg.report_dir,
        "iia_report.json",
        "attack-iia",
        json!({
            "identity": identity,
            "queries": targets.iter().map(Target::info).collect::<Vec<_>>(),
            "result": res,
        }),
    )?;
    Ok(format!(
        "identity score {:.4} over {} queries ({}); report {}",
        res.score,
        res.k,
        if res.decision { "member" } else { "non-member" },
        path.display()
    ))
}

pub fn attack_dea(cfg: &RunConfig) -> Result<String> {
    let (queries, identity) = (&cfg.queries, cfg.identity);
    let ds = load_dataset(cfg)?;
    let (model, sched) = load_model(cfg)?;
    let target = if let Some(path) = queries.first() {
        if queries.len() > 1 {
            return Err(Error::Config {
                key: "--query".into(),
                msg: "attack-dea takes a single query".into(),
            });
        }
        targets_from_paths(&ds, std::slice::from_ref(path))?.remove(0)
    } else if let Some(id) = identity {
        identity_photos(&ds, id, 1)?.remove(0)
    } else {
        return Err(Error::Config {
            key: "identity".into(),
            msg: "attack-dea needs --identity or --query".into(),
        });
    };
    let settings = cfg.attack_settings();
    let ex = &settings.extraction;
    let suite = build_preserving_suite(&target.landmarks, target.image.shape(), ex.preserving_masks, cfg.suite_seed)?;
    let sampler = SamplerConfig {
        kind: ex.kind,
        t_start: ex.t_start,
        record_every: ex.t_start,
        rng_seed: cfg.attack_seed,
    };
    let config = ExtractionConfig {
        n_samples: ex.n_samples,
        clusters: ex.clusters,
        max_iters: ex.max_iters,
    };
    let res = extraction_attack(&target.image, &target.landmarks, &model, &sched, &suite, &config, &sampler)?;

    let rep_dir = cfg.report_dir.join("representatives");
    fs::create_dir_all(&rep_dir).map_err(|e| io_error(&rep_dir, e))?;
    let train: Vec<&FaceRecord> = target
        .identity
        .map(|id| ds.records_of(id).filter(|r| r.split == Split::Train).collect())
        .unwrap_or_default();
    let mut clusters = Vec::new();
    for (c, rep) in res.representatives.iter().enumerate() {
        let rep = rep.clamped();
        let file = format!("cluster_{c:02}.{}", if rep.shape().channels == 1 { "pgm" } else { "ppm" });
        rep.save_pnm(&rep_dir.join(&file))?;
        let confidence = mia_score(&rep, &target.landmarks, &model, &sched, &settings)?;
        let nearest = train
            .iter()
            .map(|r| Ok((r.file_name.clone(), rep.rmse(&r.image)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1));
        clusters.push(json!({
            "cluster": c,
            "file": file,
            "size": res.kmeans.assignments.iter().filter(|&&a| a == c).count(),
            "sample_index": res.representative_indices[c],
            "mia_confidence": confidence,
            "mia_member": confidence >= cfg.mia_threshold,
            "nearest_training_image": nearest.as_ref().map(|n| &n.0),
            "nearest_training_rmse": nearest.as_ref().map(|n| n.1),
        }));
    }
    let best = clusters
        .iter()
        .filter_map(|c| c["nearest_training_rmse"].as_f64())
        .fold(f64::INFINITY, f64::min);
    let manifest = json!({ "inertia": res.kmeans.inertia, "clusters": clusters });
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    write(&rep_dir.join("manifest.json"), text.as_bytes())?;
    let path = write_report(
        cfg,
        &cfg.report_dir,
        "dea_report.json",
        "attack-dea",
        json!({ "target": target.info(), "manifest": manifest, "clustering": res }),
    )?;
    let best = if best.is_finite() {
        format!("closest training image RMSE {best:.4}")
    } else {
        "no training images to compare".to_string()
    };
    Ok(format!(
        "extracted {} representatives from {} samples, {best}; report {}",
        res.representatives.len(),
        config.n_samples,
        path.display()
    ))
}

fn write_metrics(dir: &Path, name: &str, report: &MetricsReport) -> Result<()> {
    write(&dir.join(name), report.to_csv().as_bytes())
}

pub fn evaluate(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(cfg)?;
    let (model, sched) = load_model(cfg)?;
    let settings = cfg.attack_settings();
    let seed = cfg.attack_seed;
    let mia = run_mia_experiment(&ds, &model, &sched, &settings, cfg.n_queries, cfg.n_runs, seed)?;
    write_metrics(&cfg.report_dir, "mia_metrics.csv", &mia)?;
    let iia = run_iia_experiment(&ds, &model, &sched, &settings, &cfg.iia_query_counts, cfg.iia_runs, seed)?;
    for (k, r) in &iia {
        write_metrics(&cfg.report_dir, &format!("iia_metrics_k{k}.csv"), r)?;
    }
    let dea = run_extraction_experiment(&ds, &model, &sched, &settings, cfg.extraction_queries, seed)?;
    let iia_json: Vec<Value> = iia.iter().map(|(k, r)| json!({ "queries": k, "report": r })).collect();
    let path = write_report(
        cfg,
        &cfg.report_dir,
        "evaluation.json",
        "evaluate",
        json!({ "mia": mia, "iia": iia_json, "extraction": dea }),
    )?;
    let iia_auc: Vec<String> = iia.iter().map(|(k, r)| format!("K={k} {:.3}", r.mean.auc_roc)).collect();
    Ok(format!(
        "MIA AUC {:.3}; IIA AUC {}; ASR-one {:.2}, ASR-MIA {:.2}; report {}",
        mia.mean.auc_roc,
        iia_auc.join(", "),
        dea.asr_one,
        dea.asr_mia,
        path.display()
    ))
}

pub fn sweep(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(cfg)?;
    let (model, sched) = load_model(cfg)?;
    let values = cfg.sweep_values.clone().expect("resolved");
    let settings = cfg.attack_settings();
    let rows = sweep_timesteps(&values, &sched, |t| {
        run_mia_experiment(&ds, &model, &sched, &settings.clone().with_t_start(t), cfg.n_queries, cfg.n_runs, cfg.attack_seed)
    })?;
    write(&cfg.report_dir.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    let path = write_report(cfg, &cfg.report_dir, "sweep.json", "sweep", json!({ "rows": rows }))?;
    let best = rows
        .iter()
        .max_by(|a, b| a.report.mean.auc_roc.total_cmp(&b.report.mean.auc_roc))
        .expect("non-empty sweep");
    Ok(format!(
        "swept {} timesteps; best AUC {:.3} at t_start {}; report {}",
        rows.len(),
        best.report.mean.auc_roc,
        best.t_start,
        path.display()
    ))
}
