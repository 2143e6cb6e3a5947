use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{LabeledScore, MetricsReport};
use crate::attacks::{
    extraction_attack, iia_query, mia_attack, query_seed, ExtractionConfig, IiaQuery, IiaResult,
    OccludingSuiteParams, QueryOutcome, DEFAULT_IIA_THRESHOLD, DEFAULT_MIA_THRESHOLD,
};
use crate::diffusion::{NoisePredictor, NoiseSchedule, SamplerConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::faces::{FaceDataset, FaceIdentity, FaceRecord, LandmarkMap, Split};
use crate::image::Image;
use crate::occlusion::{build_occluding_suite, build_preserving_suite};
use crate::seed;

/// Everything an attack needs besides the model and the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSettings {
    /// Sampler for the membership and identity attacks. Its seed is mixed
    /// with each query's pixels.
    pub sampler: SamplerConfig,
    pub suite: OccludingSuiteParams,
    pub mia_threshold: f64,
    pub iia_threshold: f64,
    pub extraction: ExtractionSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSettings {
    pub n_samples: usize,
    pub clusters: usize,
    pub max_iters: usize,
    pub preserving_masks: usize,
    pub kind: SamplerKind,
    pub t_start: usize,
    pub rmse_match_threshold: f64,
}

/// Extraction starts deeper than the membership attacks so that the
/// blacked-out regions of a preserving mask can be regenerated.
pub fn default_extraction_t_start(timesteps: usize) -> usize {
    (3 * timesteps / 4).max(1)
}

impl AttackSettings {
    pub fn for_schedule(sched: &NoiseSchedule, seed: u64) -> Self {
        let sampler = SamplerConfig::for_schedule(sched, SamplerKind::Deterministic, seed);
        Self {
            extraction: ExtractionSettings {
                n_samples: 100,
                clusters: 10,
                max_iters: 100,
                preserving_masks: 8,
                kind: SamplerKind::Ancestral,
                t_start: default_extraction_t_start(sched.timesteps()),
                rmse_match_threshold: 0.15,
            },
            sampler,
            suite: OccludingSuiteParams::default(),
            mia_threshold: DEFAULT_MIA_THRESHOLD,
            iia_threshold: DEFAULT_IIA_THRESHOLD,
        }
    }

    pub fn with_t_start(mut self, t_start: usize) -> Self {
        self.sampler = self.sampler.with_t_start(t_start);
        self
    }
}

const NONMEMBER_STREAM: u64 = 0x6e6f_6e6d;

/// Membership confidence of one image.
pub fn mia_score<P: NoisePredictor + ?Sized>(
    image: &Image,
    landmarks: &LandmarkMap,
    model: &P,
    sched: &NoiseSchedule,
    settings: &AttackSettings,
) -> Result<f64> {
    let suite = build_occluding_suite(
        landmarks,
        image.shape(),
        settings.suite.n_random_patches,
        settings.suite.patch_size,
        settings.suite.seed,
    )?;
    let sampler = SamplerConfig {
        rng_seed: query_seed(settings.sampler.rng_seed, image),
        ..settings.sampler.clone()
    };
    Ok(mia_attack(image, &suite, model, sched, &sampler, settings.mia_threshold)?.confidence)
}

/// Each run scores `n_queries / 2` random training and holdout images.
///
/// A query's score depends only on its pixels and the settings, so every
/// distinct image is attacked once and reused across runs.
pub fn run_mia_experiment<P: NoisePredictor + ?Sized>(
    dataset: &FaceDataset,
    model: &P,
    sched: &NoiseSchedule,
    settings: &AttackSettings,
    n_queries: usize,
    n_runs: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let half = n_queries / 2;
    let train: Vec<usize> = split_indices(dataset, Split::Train);
    let hold: Vec<usize> = split_indices(dataset, Split::Hold);
    if half == 0 || n_runs == 0 || train.len() < half || hold.len() < half {
        return Err(Error::InsufficientData(format!(
            "{n_runs} runs of {n_queries} queries need {half} images per split \
             (train {}, hold {})",
            train.len(),
            hold.len()
        )));
    }
    let picks: Vec<Vec<usize>> = (0..n_runs)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, r as u64));
            let mut chosen: Vec<usize> = sample(&mut rng, train.len(), half).into_iter().map(|i| train[i]).collect();
            chosen.extend(sample(&mut rng, hold.len(), half).into_iter().map(|i| hold[i]));
            chosen
        })
        .collect();
    let needed: Vec<usize> = picks.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let scored: Vec<f64> = needed
        .par_iter()
        .map(|&i| {
            let r = &dataset.records[i];
            mia_score(&r.image, &r.landmarks, model, sched, settings)
        })
        .collect::<Result<_>>()?;
    let score_of: BTreeMap<usize, f64> = needed.into_iter().zip(scored).collect();
    let runs = picks
        .into_iter()
        .map(|run| {
            run.into_iter()
                .map(|i| {
                    let r = &dataset.records[i];
                    LabeledScore::new(score_of[&i], r.split == Split::Train, r.file_name.clone())
                })
                .collect()
        })
        .collect();
    MetricsReport::from_runs(settings.mia_threshold, runs)
}

fn split_indices(dataset: &FaceDataset, split: Split) -> Vec<usize> {
    (0..dataset.len()).filter(|&i| dataset.records[i].split == split).collect()
}

/// Query photos available for one identity in the identity experiment.
struct IdentityPool {
    name: String,
    member: bool,
    photos: Vec<(Image, LandmarkMap)>,
}

fn identity_pools(dataset: &FaceDataset, per_identity: usize, seed: u64) -> Result<Vec<IdentityPool>> {
    let members = dataset.member_identities();
    let mut pools = Vec::new();
    if dataset.generation.is_some() {
        // Members are queried with fresh photos; non-members are brand-new
        // identities, so neither class has images in the corpus.
        for &id in &members {
            let identity = dataset.identity(id).ok_or_else(|| {
                Error::InsufficientData(format!("identity {id} has no parameter vector"))
            })?;
            pools.push(render_pool(dataset, identity, per_identity, true)?);
        }
        let next_id = dataset
            .identity_ids()
            .into_iter()
            .chain(dataset.identities.iter().map(|i| i.id))
            .max()
            .map_or(0, |m| m + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, NONMEMBER_STREAM));
        for k in 0..members.len() {
            let fresh = FaceIdentity::random(next_id + k, &mut rng);
            pools.push(render_pool(dataset, &fresh, per_identity, false)?);
        }
    } else {
        for id in dataset.identity_ids() {
            let photos: Vec<(Image, LandmarkMap)> = dataset
                .records_of(id)
                .map(|r| (r.image.clone(), r.landmarks.clone()))
                .collect();
            pools.push(IdentityPool {
                name: format!("identity {id}"),
                member: members.contains(&id),
                photos,
            });
        }
    }
    if pools.iter().all(|p| p.member) || pools.iter().all(|p| !p.member) {
        return Err(Error::InsufficientData(
            "identity experiment needs member and non-member identities".into(),
        ));
    }
    Ok(pools)
}

fn render_pool(dataset: &FaceDataset, identity: &FaceIdentity, n: usize, member: bool) -> Result<IdentityPool> {
    let photos = (0..n)
        .map(|k| dataset.render_query(identity, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(IdentityPool {
        name: format!("{}identity {}", if member { "" } else { "fresh " }, identity.id),
        member,
        photos,
    })
}

/// One report per requested query count. Each run draws that many photos
/// of every member and non-member identity and scores the lists.
pub fn run_iia_experiment<P: NoisePredictor + ?Sized>(
    dataset: &FaceDataset,
    model: &P,
    sched: &NoiseSchedule,
    settings: &AttackSettings,
    query_counts: &[usize],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<(usize, MetricsReport)>> {
    let max_k = query_counts.iter().copied().max().unwrap_or(0);
    if query_counts.contains(&0) || max_k == 0 || n_runs == 0 {
        return Err(Error::InvalidRange("query counts and n_runs must be positive".into()));
    }
    let pools = identity_pools(dataset, 2 * max_k, seed)?;
    if let Some(p) = pools.iter().find(|p| p.photos.len() < max_k) {
        return Err(Error::InsufficientData(format!(
            "{} has {} images, fewer than {max_k} queries",
            p.name,
            p.photos.len()
        )));
    }
    // picks[k][run][pool] = photo indices.
    let picks: Vec<Vec<Vec<Vec<usize>>>> = query_counts
        .iter()
        .map(|&k| {
            (0..n_runs)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed::derive(seed, r as u64), k as u64));
                    pools.iter().map(|p| sample(&mut rng, p.photos.len(), k).into_vec()).collect()
                })
                .collect()
        })
        .collect();
    let needed: Vec<(usize, usize)> = picks
        .iter()
        .flatten()
        .flat_map(|run| run.iter().enumerate().flat_map(|(p, idx)| idx.iter().map(move |&i| (p, i))))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let outcomes: Vec<QueryOutcome> = needed
        .par_iter()
        .map(|&(p, i)| {
            let (image, landmarks) = &pools[p].photos[i];
            let q = IiaQuery {
                image: image.clone(),
                landmarks: landmarks.clone(),
            };
            iia_query(&q, model, sched, &settings.suite, &settings.sampler)
        })
        .collect::<Result<_>>()?;
    let outcome_of: BTreeMap<(usize, usize), QueryOutcome> = needed.into_iter().zip(outcomes).collect();

    query_counts
        .iter()
        .zip(picks)
        .map(|(&k, runs)| {
            let scored = runs
                .into_iter()
                .map(|run| {
                    run.into_iter()
                        .enumerate()
                        .map(|(p, idx)| {
                            let outs = idx.iter().map(|&i| outcome_of[&(p, i)].clone()).collect();
                            let res = IiaResult::aggregate(outs, settings.iia_threshold, &settings.sampler);
                            LabeledScore::new(res.score, pools[p].member, pools[p].name.clone())
                        })
                        .collect()
                })
                .collect();
            Ok((k, MetricsReport::from_runs(settings.iia_threshold, scored)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionQueryReport {
    pub identity: usize,
    pub best_rmse: f64,
    pub best_confidence: f64,
    pub hit_one: bool,
    pub hit_mia: bool,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub asr_one: f64,
    pub asr_mia: f64,
    pub rmse_match_threshold: f64,
    pub mia_threshold: f64,
    pub queries: Vec<ExtractionQueryReport>,
}

/// The query photo used for extraction query `q`: members are visited in
/// turn, each with a fresh photo (synthetic corpora) or one of its
/// training images.
fn extraction_query(dataset: &FaceDataset, members: &[usize], q: usize) -> Result<(usize, Image, LandmarkMap)> {
    let id = members[q % members.len()];
    let round = q / members.len();
    if dataset.generation.is_some() {
        if let Some(identity) = dataset.identity(id) {
            let (img, lm) = dataset.render_query(identity, round)?;
            return Ok((id, img, lm));
        }
    }
    let train: Vec<&FaceRecord> = dataset.records_of(id).filter(|r| r.split == Split::Train).collect();
    let r = train[round % train.len()];
    Ok((id, r.image.clone(), r.landmarks.clone()))
}

/// Success rates of the extraction attack over `n_queries` member queries.
pub fn run_extraction_experiment<P: NoisePredictor + ?Sized>(
    dataset: &FaceDataset,
    model: &P,
    sched: &NoiseSchedule,
    settings: &AttackSettings,
    n_queries: usize,
    seed: u64,
) -> Result<ExtractionReport> {
    let members: Vec<usize> = dataset.member_identities().into_iter().collect();
    if members.is_empty() || n_queries == 0 {
        return Err(Error::InsufficientData("extraction needs member identities and queries".into()));
    }
    let ex = &settings.extraction;
    let queries = (0..n_queries)
        .into_par_iter()
        .map(|q| -> Result<ExtractionQueryReport> {
            let (id, xq, landmarks) = extraction_query(dataset, &members, q)?;
            let qseed = seed::derive(seed, q as u64);
            let suite = build_preserving_suite(&landmarks, xq.shape(), ex.preserving_masks, qseed)?;
            let sampler = SamplerConfig {
                kind: ex.kind,
                t_start: ex.t_start,
                record_every: ex.t_start,
                rng_seed: seed::derive(settings.sampler.rng_seed, qseed),
            };
            let config = ExtractionConfig {
                n_samples: ex.n_samples,
                clusters: ex.clusters,
                max_iters: ex.max_iters,
            };
            let clusters = extraction_attack(&xq, &landmarks, model, sched, &suite, &config, &sampler)?;
            let targets: Vec<&Image> = dataset
                .records_of(id)
                .filter(|r| r.split == Split::Train)
                .map(|r| &r.image)
                .collect();
            let mut best_rmse = f64::INFINITY;
            let mut best_confidence: f64 = 0.0;
            for rep in &clusters.representatives {
                let rep = rep.clamped();
                for t in &targets {
                    best_rmse = best_rmse.min(rep.rmse(t)?);
                }
                best_confidence = best_confidence.max(mia_score(&rep, &landmarks, model, sched, settings)?);
            }
            Ok(ExtractionQueryReport {
                identity: id,
                best_rmse,
                best_confidence,
                hit_one: best_rmse <= ex.rmse_match_threshold,
                hit_mia: best_confidence >= settings.mia_threshold,
                inertia: clusters.kmeans.inertia,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = queries.len() as f64;
    Ok(ExtractionReport {
        asr_one: queries.iter().filter(|q| q.hit_one).count() as f64 / n,
        asr_mia: queries.iter().filter(|q| q.hit_mia).count() as f64 / n,
        rmse_match_threshold: ex.rmse_match_threshold,
        mia_threshold: settings.mia_threshold,
        queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_start: usize,
    pub report: MetricsReport,
}

/// Reruns `experiment` once per `t_start`, in the given order.
pub fn sweep_timesteps<F>(values: &[usize], sched: &NoiseSchedule, mut experiment: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(usize) -> Result<MetricsReport>,
{
    if let Some(&bad) = values.iter().find(|&&t| sched.check_timestep(t).is_err()) {
        return Err(Error::InvalidRange(format!(
            "sweep value {bad} outside [1, {}]",
            sched.timesteps()
        )));
    }
    values
        .iter()
        .map(|&t_start| {
            Ok(SweepRow {
                t_start,
                report: experiment(t_start)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("t_start,accuracy,precision,recall,auc_roc\n");
    for r in rows {
        let m = r.report.mean;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t_start, m.accuracy, m.precision, m.recall, m.auc_roc
        ));
    }
    out
}
