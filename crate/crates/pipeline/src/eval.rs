//! End-to-end evaluation runs producing metric reports.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::Serialize;
use tp3_core::metrics::{
    evaluate_detection, registration_error, segmentation_scores, ConfusionMatrix, DetectionRecord,
};
use tp3_core::protocol::{
    aggregate_sphere_predictions, inference_regions, project_full_resolution, vote_average, PredictionSet,
    SphereRegion,
};
use tp3_core::registration::{match_features, ransac_rigid, RansacParams};
use tp3_core::seed::derive_seed;
use tp3_core::spatial::{grid_subsample, LabelMode};
use tp3_core::{Cloud, Error as CoreError, Transform};

use crate::config::{RunConfig, Task};
use crate::error::{PipelineError, Result};
use crate::io::RegionPrediction;
use crate::synthetic::registration_pair;

/// Task name plus named scalar metrics; contains nothing run-specific, so
/// identical inputs give identical reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub task: Task,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    fn new(task: Task) -> Self {
        Self {
            task,
            metrics: BTreeMap::new(),
        }
    }

    fn set(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

/// Runs `f` on a thread pool of `config.workers` threads.
pub fn with_workers<T: Send>(config: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// The subsampled scene and the inference spheres tiling it.
pub fn inference_setup(config: &RunConfig, cloud: &Cloud) -> Result<(Cloud, Vec<SphereRegion<f64>>)> {
    let p = &config.protocol;
    let (sub, _) = grid_subsample(cloud, p.subsample, LabelMode::Majority)?;
    let regions = inference_regions(sub.positions(), p.sphere_radius, p.grid_spacing)?;
    Ok((sub, regions))
}

fn check_run(run: &[RegionPrediction], regions: &[SphereRegion<f64>], r: usize) -> Result<usize> {
    let missing: Vec<usize> = (run.len()..regions.len()).collect();
    if !missing.is_empty() {
        return Err(PipelineError::Validation(format!(
            "run {r}: predictions missing for regions {missing:?} ({} of {} present)",
            run.len(),
            regions.len()
        )));
    }
    if run.len() > regions.len() {
        return Err(PipelineError::Validation(format!(
            "run {r}: {} prediction blocks for {} regions",
            run.len(),
            regions.len()
        )));
    }
    let mismatched: Vec<usize> = run
        .iter()
        .zip(regions)
        .enumerate()
        .filter(|(_, (p, g))| p.members.len() != g.members.len() || p.members.iter().zip(&g.members).any(|(&a, &b)| a != b as i64))
        .map(|(k, _)| k)
        .collect();
    if !mismatched.is_empty() {
        return Err(PipelineError::Validation(format!(
            "run {r}: member lists differ from the inference regions {mismatched:?}"
        )));
    }
    let c = run.first().map_or(0, |p| p.prob.ncols());
    if let Some(k) = run.iter().position(|p| p.prob.ncols() != c) {
        return Err(PipelineError::Validation(format!("run {r}: region {k} has {} classes, region 0 has {c}", run[k].prob.ncols())));
    }
    Ok(c)
}

/// Aggregates each run over the inference spheres, averages the runs,
/// projects the result onto every point of `cloud` and scores it against
/// the cloud's labels.
pub fn run_evaluate_segmentation(config: &RunConfig, cloud: &Cloud, runs: &[Vec<RegionPrediction>]) -> Result<MetricReport> {
    let gt = cloud
        .labels()
        .ok_or_else(|| PipelineError::Validation("evaluation cloud has no labels".into()))?;
    if runs.len() != config.protocol.voting_runs {
        return Err(PipelineError::Validation(format!(
            "{} prediction runs given, protocol.voting_runs is {}",
            runs.len(),
            config.protocol.voting_runs
        )));
    }
    with_workers(config, || {
        let (sub, regions) = inference_setup(config, cloud)?;
        let mut num_classes = None;
        let mut per_run = Vec::with_capacity(runs.len());
        let mut uncovered = 0;
        for (r, run) in runs.iter().enumerate() {
            let c = check_run(run, &regions, r)?;
            if *num_classes.get_or_insert(c) != c {
                return Err(PipelineError::Validation(format!("run {r} has {c} classes, run 0 has {num_classes:?}")));
            }
            let set = PredictionSet {
                rows: run.iter().map(|p| p.prob.clone()).collect(),
                num_points: sub.len(),
                num_classes: c,
            };
            let agg = aggregate_sphere_predictions(&regions, &set)?;
            uncovered = agg.uncovered_count();
            per_run.push(agg.prob);
        }
        let c = num_classes.unwrap_or(0);
        let prob: Array2<f64> = vote_average(&per_run)?;
        let sub = sub.with_prob(prob)?;
        let pred = project_full_resolution(&sub, cloud.positions())?;
        let mut cm = ConfusionMatrix::new(c);
        cm.update(&pred, gt)?;
        let s = segmentation_scores(&cm)?;
        let mut report = MetricReport::new(Task::Segmentation);
        report.set("overall_accuracy", s.overall_accuracy);
        report.set("mean_iou", s.mean_iou);
        for (k, iou) in s.per_class_iou.iter().enumerate() {
            if let Some(v) = iou {
                report.set(format!("iou/class_{k}"), *v);
            }
        }
        report.set("regions", regions.len() as f64);
        report.set("uncovered_points", uncovered as f64);
        report.set("voting_runs", runs.len() as f64);
        Ok(report)
    })?
}

pub fn run_evaluate_detection(config: &RunConfig, records: &[DetectionRecord<f64>]) -> Result<MetricReport> {
    let scores = evaluate_detection(records, &config.detection.iou_thresholds)?;
    let mut report = MetricReport::new(Task::Detection);
    for s in scores {
        let t = s.iou_threshold;
        report.set(format!("map@{t}"), s.mean_ap);
        for (class, ap) in s.per_class_ap {
            report.set(format!("ap@{t}/class_{class}"), ap);
        }
    }
    Ok(report)
}

/// Matches features, estimates the transform with RANSAC and scores it.
/// Without features the positions serve as descriptors. A RANSAC failure is
/// an unsuccessful result, not an error.
pub fn run_register(
    config: &RunConfig,
    source: &Cloud,
    target: &Cloud,
    features: Option<(&Array2<f64>, &Array2<f64>)>,
    truth: &Transform,
) -> Result<MetricReport> {
    let reg = &config.registration;
    let criterion = reg.success_criterion()?;
    let as_features = |c: &Cloud| Array2::from_shape_fn((c.len(), 3), |(i, d)| c.positions()[i][d]);
    let (fa, fb) = match features {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (as_features(source), as_features(target)),
    };
    if fa.nrows() != source.len() || fb.nrows() != target.len() {
        return Err(PipelineError::Validation(format!(
            "feature rows ({}, {}) do not match cloud sizes ({}, {})",
            fa.nrows(),
            fb.nrows(),
            source.len(),
            target.len()
        )));
    }
    with_workers(config, || {
        let corrs = match_features(&fa, &fb, reg.mutual)?;
        let mut report = MetricReport::new(Task::Registration);
        report.set("correspondences", corrs.len() as f64);
        let params = RansacParams::new(reg.iterations, reg.inlier_dist(), config.seed);
        let estimate = if corrs.len() < 3 {
            None
        } else {
            match ransac_rigid(source.positions(), target.positions(), &corrs, &params) {
                Ok(r) => Some(r),
                Err(CoreError::Estimation(msg)) => {
                    log::warn!("registration failed: {msg}");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        };
        match estimate {
            Some(r) => {
                let e = registration_error(&r.transform, truth);
                report.set("rotation_error_deg", e.rotation_deg);
                report.set("translation_error", e.translation);
                report.set("inliers", r.inliers.len() as f64);
                report.set("success", criterion.is_success(&e) as u8 as f64);
                report.set("failed", 0.0);
            }
            None => {
                report.set("success", 0.0);
                report.set("failed", 1.0);
            }
        }
        Ok(report)
    })?
}

/// Registers `pairs` synthetic pairs (see [`registration_pair`]) and
/// reports the success rate and error statistics. Pair `k` is generated
/// from `derive_seed([config.seed, k])`.
pub fn run_registration_benchmark(
    config: &RunConfig,
    pairs: usize,
    points: usize,
    outlier_fraction: f64,
    sigma: f64,
) -> Result<MetricReport> {
    let mut successes = 0usize;
    let mut failures = 0usize;
    let mut rot = Vec::with_capacity(pairs);
    let mut trans = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let p = registration_pair(points, outlier_fraction, sigma, derive_seed(&[config.seed, k as u64]));
        let r = run_register(
            config,
            &p.source,
            &p.target,
            Some((&p.source_features, &p.target_features)),
            &p.truth,
        )?;
        successes += (r.get("success") == Some(1.0)) as usize;
        failures += (r.get("failed") == Some(1.0)) as usize;
        if let (Some(a), Some(t)) = (r.get("rotation_error_deg"), r.get("translation_error")) {
            rot.push(a);
            trans.push(t);
        }
    }
    let mut report = MetricReport::new(Task::Registration);
    report.set("pairs", pairs as f64);
    report.set("success_rate", if pairs == 0 { 0.0 } else { successes as f64 / pairs as f64 });
    report.set("failed", failures as f64);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    report.set("max_rotation_error_deg", max(&rot));
    report.set("max_translation_error", max(&trans));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::synthetic_room;

    fn seg_config(runs: usize) -> RunConfig {
        RunConfig::from_yaml(&format!(
            "protocol: {{sphere_radius: 0.8, grid_spacing: 0.8, subsample: 0.1, voting_runs: {runs}}}"
        ))
        .unwrap()
    }

    /// Region predictions that put all mass on `label_of(member)`.
    fn oracle_run(
        config: &RunConfig,
        cloud: &Cloud,
        c: usize,
        label_of: impl Fn(&Cloud, usize) -> i32,
    ) -> Vec<RegionPrediction> {
        let (sub, regions) = inference_setup(config, cloud).unwrap();
        regions
            .iter()
            .map(|g| RegionPrediction {
                members: g.members.iter().map(|&m| m as i64).collect(),
                prob: Array2::from_shape_fn((g.members.len(), c), |(i, k)| {
                    (label_of(&sub, g.members[i]) == k as i32) as u8 as f64
                }),
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let cloud = synthetic_room(3000, 4, 1);
        let cfg = seg_config(1);
        // labels on exact voxel-center clouds survive subsampling unchanged
        let (sub, _) = inference_setup(&cfg, &cloud).unwrap();
        let run = oracle_run(&cfg, &sub, 4, |s, m| s.labels().unwrap()[m]);
        let report = run_evaluate_segmentation(&cfg, &sub, &[run]).unwrap();
        assert_eq!(report.get("overall_accuracy"), Some(1.0));
        assert_eq!(report.get("mean_iou"), Some(1.0));
        assert_eq!(report.get("uncovered_points"), Some(0.0));
    }

    #[test]
    fn voting_identical_runs_changes_nothing() {
        let cloud = synthetic_room(3000, 4, 2);
        let one = seg_config(1);
        let three = seg_config(3);
        let run = oracle_run(&one, &cloud, 4, |s, m| (s.labels().unwrap()[m] + (m % 3 == 0) as i32) % 4);
        let a = run_evaluate_segmentation(&one, &cloud, std::slice::from_ref(&run)).unwrap();
        let b = run_evaluate_segmentation(&three, &cloud, &[run.clone(), run.clone(), run]).unwrap();
        let strip = |r: &MetricReport| {
            let mut m = r.metrics.clone();
            m.remove("voting_runs");
            m
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn corruption_matches_confusion_oracle() {
        // two classes; every point of class 1 in the x < 1 half is predicted 0
        let cloud = synthetic_room(3000, 2, 3);
        let cfg = seg_config(1);
        let (sub, _) = inference_setup(&cfg, &cloud).unwrap();
        let corrupt = |c: &Cloud, m: usize| {
            let l = c.labels().unwrap()[m];
            if l == 1 && c.positions()[m][0] < 1.0 {
                0
            } else {
                l
            }
        };
        let run = oracle_run(&cfg, &sub, 2, corrupt);
        let report = run_evaluate_segmentation(&cfg, &sub, &[run]).unwrap();
        let mut cm = [[0u64; 2]; 2];
        for m in 0..sub.len() {
            cm[sub.labels().unwrap()[m] as usize][corrupt(&sub, m) as usize] += 1;
        }
        let iou = |k: usize| cm[k][k] as f64 / (cm[k][0] + cm[k][1] + cm[0][k] + cm[1][k] - cm[k][k]) as f64;
        assert!((report.get("mean_iou").unwrap() - (iou(0) + iou(1)) / 2.0).abs() < 1e-12);
        assert!(report.get("mean_iou").unwrap() < 1.0);
    }

    #[test]
    fn missing_regions_are_listed() {
        let cloud = synthetic_room(2000, 3, 4);
        let cfg = seg_config(1);
        let mut run = oracle_run(&cfg, &cloud, 3, |s, m| s.labels().unwrap()[m]);
        let n = run.len();
        run.truncate(n - 2);
        let err = run_evaluate_segmentation(&cfg, &cloud, &[run.clone()]).unwrap_err().to_string();
        assert!(err.contains(&format!("[{}, {}]", n - 2, n - 1)), "{err}");
        run.push(RegionPrediction {
            members: vec![0],
            prob: Array2::from_elem((1, 3), 1.0 / 3.0),
        });
        assert!(run_evaluate_segmentation(&cfg, &cloud, &[run]).is_err());
    }

    #[test]
    fn report_independent_of_workers() {
        let cloud = synthetic_room(3000, 4, 5);
        let mut cfg = seg_config(1);
        let run = oracle_run(&cfg, &cloud, 4, |s, m| (s.labels().unwrap()[m] + (m % 5 == 0) as i32) % 4);
        let a = run_evaluate_segmentation(&cfg, &cloud, std::slice::from_ref(&run)).unwrap();
        cfg.workers = 4;
        let b = run_evaluate_segmentation(&cfg, &cloud, &[run]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_clouds_register_under_any_preset() {
        let cloud = synthetic_room(500, 3, 6);
        for preset in ["3dmatch", "kitti"] {
            let cfg = RunConfig::from_yaml(&format!("registration: {{criterion: {preset}, iterations: 50}}")).unwrap();
            let r = run_register(&cfg, &cloud, &cloud, None, &Transform::identity()).unwrap();
            assert_eq!(r.get("success"), Some(1.0));
        }
    }

    #[test]
    fn ransac_failure_is_unsuccessful_not_error() {
        let a = Cloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]]).unwrap();
        let b = Cloud::new(vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [0.0, -50.0, 0.0], [9.0, 200.0, 1.0]]).unwrap();
        let f = Array2::from_shape_fn((4, 2), |(i, _)| i as f64);
        let cfg = RunConfig::from_yaml("registration: {iterations: 100, inlier_dist: 0.01}").unwrap();
        let r = run_register(&cfg, &a, &b, Some((&f, &f)), &Transform::identity()).unwrap();
        assert_eq!(r.get("failed"), Some(1.0));
        assert_eq!(r.get("success"), Some(0.0));
    }
}
