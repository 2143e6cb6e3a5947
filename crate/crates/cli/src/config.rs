//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Keys left as `auto` are filled in
//! from the schedule by [`RunConfig::resolve`], and every artifact stores the
//! resolved form so it can be fed back through `--config`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use diffaudit_core::attacks::{OccludingSuiteParams, DEFAULT_IIA_THRESHOLD, DEFAULT_MIA_THRESHOLD};
use diffaudit_core::diffusion::{default_record_every, NoiseSchedule, SamplerConfig, SamplerKind, TrainConfig};
use diffaudit_core::evaluation::{default_extraction_t_start, AttackSettings, ExtractionSettings};
use diffaudit_core::faces::{GenerationParams, SplitMode};
use diffaudit_core::{Error, Result, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,

    pub dataset_seed: u64,
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub image_size: usize,
    pub channels: usize,
    pub split_fraction: f64,
    pub split_mode: SplitMode,
    pub jitter: f64,

    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,

    pub train_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub embed_dim: usize,

    pub attack_seed: u64,
    pub sampler: SamplerKind,
    pub t_start: Option<usize>,
    pub record_every: Option<usize>,
    pub mia_threshold: f64,
    pub iia_threshold: f64,
    pub random_patches: usize,
    pub patch_size: usize,
    pub suite_seed: u64,
    pub iia_queries: usize,
    /// Attack target: an identity, or query image paths.
    pub identity: Option<usize>,
    pub queries: Vec<PathBuf>,

    pub n_samples: usize,
    pub clusters: usize,
    pub kmeans_max_iters: usize,
    pub preserving_masks: usize,
    pub extraction_sampler: SamplerKind,
    pub extraction_t_start: Option<usize>,
    pub rmse_match_threshold: f64,

    pub n_queries: usize,
    pub n_runs: usize,
    pub iia_query_counts: Vec<usize>,
    pub iia_runs: usize,
    pub extraction_queries: usize,
    pub sweep_values: Option<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GenerationParams::default();
        let train = TrainConfig::default();
        Self {
            dataset_dir: "data".into(),
            checkpoint: "model.ckpt".into(),
            report_dir: "reports".into(),
            dataset_seed: 1,
            n_identities: gen.n_identities,
            images_per_identity: gen.images_per_identity,
            image_size: gen.shape.height,
            channels: gen.shape.channels,
            split_fraction: gen.split_fraction,
            split_mode: gen.split_mode,
            jitter: gen.jitter,
            timesteps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            train_seed: 0,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            hidden: train.hidden,
            embed_dim: train.embed_dim,
            attack_seed: 0,
            sampler: SamplerKind::Deterministic,
            t_start: None,
            record_every: None,
            mia_threshold: DEFAULT_MIA_THRESHOLD,
            iia_threshold: DEFAULT_IIA_THRESHOLD,
            random_patches: OccludingSuiteParams::default().n_random_patches,
            patch_size: OccludingSuiteParams::default().patch_size,
            suite_seed: 0,
            iia_queries: 5,
            identity: None,
            queries: Vec::new(),
            n_samples: 100,
            clusters: 10,
            kmeans_max_iters: 100,
            preserving_masks: 8,
            extraction_sampler: SamplerKind::Ancestral,
            extraction_t_start: None,
            rmse_match_threshold: 0.15,
            n_queries: 100,
            n_runs: 7,
            iia_query_counts: vec![1, 3, 5, 8, 10],
            iia_runs: 7,
            extraction_queries: 10,
            sweep_values: None,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, format!("cannot parse `{value}`: {e}")))
}

fn auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn show_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn show_auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".to_string(), |x| x.to_string())
}

fn split_mode_name(m: SplitMode) -> &'static str {
    match m {
        SplitMode::ImageLevel => "image",
        SplitMode::IdentityDisjoint => "identity",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset_dir" => self.dataset_dir = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "report_dir" => self.report_dir = v.into(),
            "dataset_seed" => self.dataset_seed = num(key, v)?,
            "n_identities" => self.n_identities = num(key, v)?,
            "images_per_identity" => self.images_per_identity = num(key, v)?,
            "image_size" => self.image_size = num(key, v)?,
            "channels" => self.channels = num(key, v)?,
            "split_fraction" => self.split_fraction = num(key, v)?,
            "split_mode" => self.split_mode = num(key, v)?,
            "jitter" => self.jitter = num(key, v)?,
            "timesteps" => self.timesteps = num(key, v)?,
            "beta_start" => self.beta_start = num(key, v)?,
            "beta_end" => self.beta_end = num(key, v)?,
            "train_seed" => self.train_seed = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "attack_seed" => self.attack_seed = num(key, v)?,
            "sampler" => self.sampler = num(key, v)?,
            "t_start" => self.t_start = auto(key, v)?,
            "record_every" => self.record_every = auto(key, v)?,
            "mia_threshold" => self.mia_threshold = num(key, v)?,
            "iia_threshold" => self.iia_threshold = num(key, v)?,
            "random_patches" => self.random_patches = num(key, v)?,
            "patch_size" => self.patch_size = num(key, v)?,
            "suite_seed" => self.suite_seed = num(key, v)?,
            "iia_queries" => self.iia_queries = num(key, v)?,
            "identity" => self.identity = if v == "none" { None } else { Some(num(key, v)?) },
            "queries" => {
                self.queries = v.split(',').map(str::trim).filter(|q| !q.is_empty()).map(PathBuf::from).collect()
            }
            "n_samples" => self.n_samples = num(key, v)?,
            "clusters" => self.clusters = num(key, v)?,
            "kmeans_max_iters" => self.kmeans_max_iters = num(key, v)?,
            "preserving_masks" => self.preserving_masks = num(key, v)?,
            "extraction_sampler" => self.extraction_sampler = num(key, v)?,
            "extraction_t_start" => self.extraction_t_start = auto(key, v)?,
            "rmse_match_threshold" => self.rmse_match_threshold = num(key, v)?,
            "n_queries" => self.n_queries = num(key, v)?,
            "n_runs" => self.n_runs = num(key, v)?,
            "iia_query_counts" => self.iia_query_counts = list(key, v)?,
            "iia_runs" => self.iia_runs = num(key, v)?,
            "extraction_queries" => self.extraction_queries = num(key, v)?,
            "sweep_values" => {
                self.sweep_values = if v == "auto" { None } else { Some(list(key, v)?) }
            }
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", n + 1), format!("expected `key = value`, found `{line}`")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Reads a config file, or the `config` object embedded in a JSON report.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| bad("--config", format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let doc: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| bad("--config", format!("{}: {e}", path.display())))?;
            let obj = doc
                .get("config")
                .and_then(|c| c.as_object())
                .ok_or_else(|| bad("--config", format!("{} has no `config` object", path.display())))?;
            for (k, v) in obj {
                let v = v
                    .as_str()
                    .ok_or_else(|| bad(k, format!("{}: value is not a string", path.display())))?;
                self.set(k, v)?;
            }
            Ok(())
        } else {
            self.apply_text(&text)
        }
    }

    /// `(key, value)` pairs in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset_dir", self.dataset_dir.display().to_string()),
            ("checkpoint", self.checkpoint.display().to_string()),
            ("report_dir", self.report_dir.display().to_string()),
            ("dataset_seed", self.dataset_seed.to_string()),
            ("n_identities", self.n_identities.to_string()),
            ("images_per_identity", self.images_per_identity.to_string()),
            ("image_size", self.image_size.to_string()),
            ("channels", self.channels.to_string()),
            ("split_fraction", self.split_fraction.to_string()),
            ("split_mode", split_mode_name(self.split_mode).to_string()),
            ("jitter", self.jitter.to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("hidden", self.hidden.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("attack_seed", self.attack_seed.to_string()),
            ("sampler", self.sampler.to_string()),
            ("t_start", show_auto(&self.t_start)),
            ("record_every", show_auto(&self.record_every)),
            ("mia_threshold", self.mia_threshold.to_string()),
            ("iia_threshold", self.iia_threshold.to_string()),
            ("random_patches", self.random_patches.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("suite_seed", self.suite_seed.to_string()),
            ("iia_queries", self.iia_queries.to_string()),
            ("identity", self.identity.map_or("none".into(), |i| i.to_string())),
            (
                "queries",
                self.queries.iter().map(|q| q.display().to_string()).collect::<Vec<_>>().join(","),
            ),
            ("n_samples", self.n_samples.to_string()),
            ("clusters", self.clusters.to_string()),
            ("kmeans_max_iters", self.kmeans_max_iters.to_string()),
            ("preserving_masks", self.preserving_masks.to_string()),
            ("extraction_sampler", self.extraction_sampler.to_string()),
            ("extraction_t_start", show_auto(&self.extraction_t_start)),
            ("rmse_match_threshold", self.rmse_match_threshold.to_string()),
            ("n_queries", self.n_queries.to_string()),
            ("n_runs", self.n_runs.to_string()),
            ("iia_query_counts", show_list(&self.iia_query_counts)),
            ("iia_runs", self.iia_runs.to_string()),
            ("extraction_queries", self.extraction_queries.to_string()),
            ("sweep_values", self.sweep_values.as_deref().map_or("auto".into(), show_list)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# diffaudit run configuration\n");
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect();
        serde_json::Value::Object(map)
    }

    /// Replaces every `auto` with its schedule-derived value.
    pub fn resolve(&mut self) {
        let t = self.timesteps;
        let t_start = *self.t_start.get_or_insert((t / 2).max(1));
        self.record_every.get_or_insert(default_record_every(t_start));
        self.extraction_t_start.get_or_insert(default_extraction_t_start(t));
        self.sweep_values
            .get_or_insert_with(|| [t / 20, t / 4, t / 2, 3 * t / 4, 19 * t / 20].map(|v| v.clamp(2.min(t), t)).to_vec());
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(bad(key, format!("{v} outside (0, 1)")))
            }
        };
        unit("mia_threshold", self.mia_threshold)?;
        unit("iia_threshold", self.iia_threshold)?;
        unit("split_fraction", self.split_fraction)?;
        let positive = [
            ("n_identities", self.n_identities),
            ("images_per_identity", self.images_per_identity),
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("timesteps", self.timesteps),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("iia_queries", self.iia_queries),
            ("n_samples", self.n_samples),
            ("clusters", self.clusters),
            ("kmeans_max_iters", self.kmeans_max_iters),
            ("preserving_masks", self.preserving_masks),
            ("n_queries", self.n_queries),
            ("n_runs", self.n_runs),
            ("iia_runs", self.iia_runs),
            ("extraction_queries", self.extraction_queries),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(bad(key, "must be at least 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", format!("{} is not a positive learning rate", self.lr)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(bad("jitter", format!("{} is negative or non-finite", self.jitter)));
        }
        if !(self.rmse_match_threshold >= 0.0) {
            return Err(bad("rmse_match_threshold", "must be non-negative"));
        }
        if self.embed_dim % 2 != 0 {
            return Err(bad("embed_dim", "must be even"));
        }
        if self.n_samples < self.clusters {
            return Err(bad("clusters", format!("{} exceeds n_samples {}", self.clusters, self.n_samples)));
        }
        if self.identity.is_some() && !self.queries.is_empty() {
            return Err(bad("identity", "set either identity or queries, not both"));
        }
        if let Some(q) = self.queries.iter().find(|q| q.to_string_lossy().contains(',')) {
            return Err(bad("queries", format!("{} contains a comma", q.display())));
        }
        if self.iia_query_counts.is_empty() || self.iia_query_counts.contains(&0) {
            return Err(bad("iia_query_counts", "need one or more counts, each at least 1"));
        }
        self.schedule()?;
        let in_range = |key: &str, t: Option<usize>| match t {
            Some(t) if t == 0 || t > self.timesteps => {
                Err(bad(key, format!("{t} outside 1..={}", self.timesteps)))
            }
            _ => Ok(()),
        };
        in_range("t_start", self.t_start)?;
        in_range("extraction_t_start", self.extraction_t_start)?;
        if self.record_every == Some(0) {
            return Err(bad("record_every", "must be at least 1"));
        }
        for &v in self.sweep_values.iter().flatten() {
            in_range("sweep_values", Some(v))?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end).map_err(|e| bad("timesteps", e.to_string()))
    }

    pub fn generation(&self) -> GenerationParams {
        GenerationParams {
            n_identities: self.n_identities,
            images_per_identity: self.images_per_identity,
            shape: Shape::new(self.image_size, self.image_size, self.channels),
            split_fraction: self.split_fraction,
            split_mode: self.split_mode,
            jitter: self.jitter,
            seed: self.dataset_seed,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            seed: self.train_seed,
            ..TrainConfig::default()
        }
    }

    /// Requires a resolved config.
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            kind: self.sampler,
            t_start: self.t_start.expect("resolved"),
            record_every: self.record_every.expect("resolved"),
            rng_seed: self.attack_seed,
        }
    }

    pub fn suite_params(&self) -> OccludingSuiteParams {
        OccludingSuiteParams {
            n_random_patches: self.random_patches,
            patch_size: self.patch_size,
            seed: self.suite_seed,
        }
    }

    /// Requires a resolved config.
    pub fn attack_settings(&self) -> AttackSettings {
        AttackSettings {
            sampler: self.sampler_config(),
            suite: self.suite_params(),
            mia_threshold: self.mia_threshold,
            iia_threshold: self.iia_threshold,
            extraction: ExtractionSettings {
                n_samples: self.n_samples,
                clusters: self.clusters,
                max_iters: self.kmeans_max_iters,
                preserving_masks: self.preserving_masks,
                kind: self.extraction_sampler,
                t_start: self.extraction_t_start.expect("resolved"),
                rmse_match_threshold: self.rmse_match_threshold,
            },
        }
    }
}
