use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::AxisAlignedBox;
use crate::scalar::Real;

/// Intersection over union of two axis-aligned boxes; 0 when the union has
/// no volume.
pub fn box_iou_3d<T: Real>(a: &AxisAlignedBox<T>, b: &AxisAlignedBox<T>) -> T {
    let mut inter = T::one();
    for d in 0..3 {
        let lo = a.min_corner[d].max(b.min_corner[d]);
        let hi = a.max_corner[d].min(b.max_corner[d]);
        if hi <= lo {
            inter = T::zero();
            break;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    if union > T::zero() {
        (inter / union).min(T::one())
    } else {
        T::zero()
    }
}

/// Predictions and ground truth for one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionRecord<T: Real> {
    /// Every prediction must carry a score.
    pub predictions: Vec<AxisAlignedBox<T>>,
    pub ground_truth: Vec<AxisAlignedBox<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionScores {
    pub iou_threshold: f64,
    /// Average precision of every class with at least one ground-truth box.
    pub per_class_ap: BTreeMap<i32, f64>,
    pub mean_ap: f64,
}

/// All-point interpolated area under the precision/recall curve of a ranked
/// list of hits.
pub(crate) fn average_precision(hits: &[bool], num_positives: usize) -> f64 {
    let npos = num_positives as f64;
    let mut recall = Vec::with_capacity(hits.len() + 2);
    let mut precision = Vec::with_capacity(hits.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let (mut tp, mut fp) = (0.0, 0.0);
    for &h in hits {
        if h {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recall.push(tp / npos);
        precision.push(tp / (tp + fp));
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = f64::max(precision[i], precision[i + 1]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// Mean average precision at each IoU threshold.
///
/// A prediction is a true positive only when its class matches the ground
/// truth box it is matched to. Predictions of each class are ranked by
/// descending score (ties keep input order, scenes in record order) and
/// greedily matched to the unmatched same-class box of highest IoU in their
/// scene, provided that IoU reaches the threshold. The mean runs over classes
/// with at least one ground-truth box.
pub fn evaluate_detection<T: Real>(records: &[DetectionRecord<T>], iou_thresholds: &[f64]) -> Result<Vec<DetectionScores>> {
    let mut gt_per_class: BTreeMap<i32, usize> = BTreeMap::new();
    for r in records {
        for g in &r.ground_truth {
            *gt_per_class.entry(g.class_id).or_default() += 1;
        }
    }
    if gt_per_class.is_empty() {
        return Err(Error::param("detection evaluation needs at least one ground-truth box"));
    }
    // (class, score, scene, prediction index) in input order
    let mut ranked: Vec<(i32, T, usize, usize)> = Vec::new();
    for (s, r) in records.iter().enumerate() {
        for (i, p) in r.predictions.iter().enumerate() {
            let score = p
                .score
                .ok_or_else(|| Error::param(format!("scene {s}: prediction {i} has no score")))?;
            ranked.push((p.class_id, score, s, i));
        }
    }
    // stable sort keeps input order among equal scores
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));

    iou_thresholds
        .iter()
        .map(|&thr| {
            if !(0.0..=1.0).contains(&thr) {
                return Err(Error::param(format!("IoU threshold {thr} outside [0, 1]")));
            }
            let mut per_class_ap = BTreeMap::new();
            for (&class, &npos) in &gt_per_class {
                let mut matched: Vec<Vec<bool>> =
                    records.iter().map(|r| vec![false; r.ground_truth.len()]).collect();
                let hits: Vec<bool> = ranked
                    .iter()
                    .filter(|p| p.0 == class)
                    .map(|&(_, _, s, i)| {
                        let pred = &records[s].predictions[i];
                        let mut best: Option<(f64, usize)> = None;
                        for (g, gt) in records[s].ground_truth.iter().enumerate() {
                            if gt.class_id != class || matched[s][g] {
                                continue;
                            }
                            let iou = box_iou_3d(pred, gt).as_f64();
                            if iou >= thr && best.is_none_or(|(b, _)| iou > b) {
                                best = Some((iou, g));
                            }
                        }
                        match best {
                            Some((_, g)) => {
                                matched[s][g] = true;
                                true
                            }
                            None => false,
                        }
                    })
                    .collect();
                per_class_ap.insert(class, average_precision(&hits, npos));
            }
            let mean_ap = per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64;
            Ok(DetectionScores {
                iou_threshold: thr,
                per_class_ap,
                mean_ap,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(offset: [f64; 3], class: i32) -> AxisAlignedBox<f64> {
        AxisAlignedBox::new(offset, [offset[0] + 1.0, offset[1] + 1.0, offset[2] + 1.0], class).unwrap()
    }

    fn scored(b: AxisAlignedBox<f64>, s: f64) -> AxisAlignedBox<f64> {
        b.with_score(s).unwrap()
    }

    /// Interpolated precision `max{p(k) : r(k) ≥ r}` integrated over recall by
    /// enumerating every cut-off of the ranking.
    fn exhaustive_ap(hits: &[bool], npos: usize) -> f64 {
        let cuts: Vec<(f64, f64)> = (1..=hits.len())
            .map(|k| {
                let tp = hits[..k].iter().filter(|h| **h).count() as f64;
                (tp / npos as f64, tp / k as f64)
            })
            .collect();
        let mut levels: Vec<f64> = cuts.iter().map(|c| c.0).collect();
        levels.insert(0, 0.0);
        levels.dedup();
        levels
            .windows(2)
            .map(|w| {
                let p = cuts.iter().filter(|c| c.0 >= w[1]).map(|c| c.1).fold(0.0, f64::max);
                (w[1] - w[0]) * p
            })
            .sum()
    }

    #[test]
    fn iou_analytic() {
        let a = unit([0.0; 3], 0);
        assert_eq!(box_iou_3d(&a, &a), 1.0);
        let b = unit([0.5, 0.0, 0.0], 0);
        assert!((box_iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(box_iou_3d(&a, &unit([2.0, 0.0, 0.0], 0)), 0.0);
        let flat = AxisAlignedBox::new([0.0; 3], [1.0, 1.0, 0.0], 0).unwrap();
        assert_eq!(box_iou_3d(&flat, &flat), 0.0);
    }

    #[test]
    fn iou_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let mk = |rng: &mut ChaCha8Rng| {
                let lo: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
                let hi: [f64; 3] = std::array::from_fn(|d| lo[d] + rng.random::<f64>());
                AxisAlignedBox::new(lo, hi, 0).unwrap()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let iou = box_iou_3d(&a, &b);
            assert_eq!(iou, box_iou_3d(&b, &a));
            let bound = a.volume().min(b.volume()) / a.volume().max(b.volume());
            assert!((0.0..=bound + 1e-12).contains(&iou));
        }
    }

    #[test]
    fn iou_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let lo_a: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * 0.5);
            let hi_a: [f64; 3] = std::array::from_fn(|d| lo_a[d] + 0.3 + rng.random::<f64>() * 0.5);
            let lo_b: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * 0.5);
            let hi_b: [f64; 3] = std::array::from_fn(|d| lo_b[d] + 0.3 + rng.random::<f64>() * 0.5);
            let a = AxisAlignedBox::new(lo_a, hi_a, 0).unwrap();
            let b = AxisAlignedBox::new(lo_b, hi_b, 0).unwrap();
            let inside = |bx: &AxisAlignedBox<f64>, p: &[f64; 3]| (0..3).all(|d| p[d] >= bx.min_corner[d] && p[d] <= bx.max_corner[d]);
            let (mut inter, mut union) = (0u64, 0u64);
            for _ in 0..1_000_000 {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * 1.3);
                let (ia, ib) = (inside(&a, &p), inside(&b, &p));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
            let mc = inter as f64 / union as f64;
            assert!((box_iou_3d(&a, &b) - mc).abs() < 0.01);
        }
    }

    #[test]
    fn single_perfect_detection() {
        let rec = DetectionRecord {
            predictions: vec![scored(unit([0.0; 3], 3), 0.9)],
            ground_truth: vec![unit([0.0; 3], 3)],
        };
        let out = evaluate_detection(&[rec], &[0.25, 0.5]).unwrap();
        assert_eq!(out[0].mean_ap, 1.0);
        assert_eq!(out[1].mean_ap, 1.0);
    }

    #[test]
    fn wrong_class_earns_nothing() {
        let rec = DetectionRecord {
            predictions: vec![scored(unit([0.0; 3], 1), 0.9)],
            ground_truth: vec![unit([0.0; 3], 3)],
        };
        let out = evaluate_detection(&[rec], &[0.25]).unwrap();
        assert_eq!(out[0].per_class_ap[&3], 0.0);
        assert_eq!(out[0].mean_ap, 0.0);
        assert!(!out[0].per_class_ap.contains_key(&1));
    }

    #[test]
    fn false_positive_ranked_first() {
        let rec = DetectionRecord {
            predictions: vec![scored(unit([0.0; 3], 0), 0.8), scored(unit([5.0, 5.0, 5.0], 0), 0.9)],
            ground_truth: vec![unit([0.0; 3], 0)],
        };
        let out = evaluate_detection(&[rec], &[0.5]).unwrap();
        let want = exhaustive_ap(&[false, true], 1);
        assert!((want - 0.5).abs() < 1e-15);
        assert!((out[0].mean_ap - want).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detections_count_once() {
        let rec = DetectionRecord {
            predictions: vec![scored(unit([0.0; 3], 0), 0.9), scored(unit([0.05, 0.0, 0.0], 0), 0.8)],
            ground_truth: vec![unit([0.0; 3], 0)],
        };
        let out = evaluate_detection(&[rec], &[0.5]).unwrap();
        assert!((out[0].mean_ap - exhaustive_ap(&[true, false], 1)).abs() < 1e-12);
        assert_eq!(out[0].mean_ap, 1.0);
    }

    #[test]
    fn ap_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let len = rng.random_range(1..25);
            let hits: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < 0.5).collect();
            let tp = hits.iter().filter(|h| **h).count();
            let npos = tp + rng.random_range(0..4);
            if npos == 0 {
                continue;
            }
            assert!((average_precision(&hits, npos) - exhaustive_ap(&hits, npos)).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_only_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scenes: Vec<DetectionRecord<f64>> = (0..5)
            .map(|_| {
                let gt: Vec<_> = (0..4)
                    .map(|_| unit([rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0, 0.0], rng.random_range(0..3)))
                    .collect();
                let preds = gt
                    .iter()
                    .map(|g| {
                        let o = [g.min_corner[0] + rng.random::<f64>() * 0.6, g.min_corner[1], 0.0];
                        scored(unit(o, if rng.random::<f64>() < 0.8 { g.class_id } else { 0 }), rng.random::<f64>())
                    })
                    .collect();
                DetectionRecord {
                    predictions: preds,
                    ground_truth: gt,
                }
            })
            .collect();
        let rescaled: Vec<_> = scenes
            .iter()
            .map(|r| DetectionRecord {
                predictions: r
                    .predictions
                    .iter()
                    .map(|p| scored(*p, p.score.unwrap().powi(3) * 0.5))
                    .collect(),
                ground_truth: r.ground_truth.clone(),
            })
            .collect();
        let a = evaluate_detection(&scenes, &[0.25, 0.5]).unwrap();
        let b = evaluate_detection(&rescaled, &[0.25, 0.5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let empty: Vec<DetectionRecord<f64>> = vec![DetectionRecord::default()];
        assert!(evaluate_detection(&empty, &[0.5]).is_err());
        let unscored = DetectionRecord {
            predictions: vec![unit([0.0; 3], 0)],
            ground_truth: vec![unit([0.0; 3], 0)],
        };
        assert!(evaluate_detection(&[unscored], &[0.5]).is_err());
    }
}
