mod common;

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use vesselscreen_core::evalkit::{
    confusion_at, connected_components, dice, dilate, metrics_from, pixel_overlap, region_overlap, roc_auc,
    threshold_grid, threshold_sweep, ConfusionCounts, Prediction,
};
use vesselscreen_core::{Dims3, Error};

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[test]
fn pixel_level_reference_values() {
    let c = ConfusionCounts::new(19629, 22416, 5778, 28477);
    let m = metrics_from(c, 0.5).unwrap();
    assert_eq!(round2(m.accuracy.unwrap()), 0.63);
    assert_eq!(round2(m.sensitivity.unwrap()), 0.77);
    assert_eq!(round2(dice(c).unwrap()), 0.58);
}

#[test]
fn region_level_reference_values() {
    let c = ConfusionCounts::new(191, 105, 62, 105);
    let m = metrics_from(c, 0.5).unwrap();
    assert_eq!(m.sensitivity.unwrap(), 191.0 / 253.0);
    // 191/253 = 0.7549; the reference 0.76 comes from rounding the 3-decimal 0.755 again.
    let thousandths = (m.sensitivity.unwrap() * 1000.0).round() as u64;
    assert_eq!(thousandths, 755);
    assert_eq!((thousandths + 5) / 10, 76);
    assert_eq!(round2(dice(c).unwrap()), 0.70);
}

#[test]
fn formulas_are_exact() {
    let mut r = common::rng(1);
    for _ in 0..200 {
        let c = ConfusionCounts::new(r.random_range(1..500), r.random_range(1..500), r.random_range(1..500), r.random_range(1..500));
        let m = metrics_from(c, 0.3).unwrap();
        let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
        assert_eq!(m.accuracy.unwrap(), (tp + tn) / (tp + fp + fn_ + tn));
        assert_eq!(m.ppv.unwrap(), tp / (tp + fp));
        assert_eq!(m.sensitivity.unwrap(), tp / (tp + fn_));
        assert_eq!(m.specificity.unwrap(), tn / (tn + fp));
        assert_eq!(m.npv.unwrap(), tn / (tn + fn_));
        assert_eq!(dice(c).unwrap(), 2.0 * tp / (2.0 * tp + fp + fn_));
    }
}

#[test]
fn perfect_counts_score_one() {
    let m = metrics_from(ConfusionCounts::new(10, 0, 0, 10), 0.5).unwrap();
    for v in [m.accuracy, m.ppv, m.sensitivity, m.specificity, m.npv] {
        assert_eq!(v, Some(1.0));
    }
    assert_eq!(dice(ConfusionCounts::new(4, 0, 0, 0)), Some(1.0));
}

#[test]
fn zero_denominators_are_undefined() {
    let m = metrics_from(ConfusionCounts::new(0, 0, 3, 5), 0.5).unwrap();
    assert_eq!(m.ppv, None);
    assert_eq!(m.sensitivity, Some(0.0));
    assert_eq!(dice(ConfusionCounts::new(0, 0, 0, 9)), None);
    assert!(matches!(metrics_from(ConfusionCounts::default(), 0.5), Err(Error::Data(_))));
}

#[test]
fn confusion_boundaries() {
    let preds = [Prediction::new(0.9, true), Prediction::new(0.1, false), Prediction::new(0.5, true)];
    let c = confusion_at(&preds, 0.5).unwrap();
    assert_eq!((c.fp, c.fn_), (0, 0));
    let all = confusion_at(&preds, 0.0).unwrap();
    assert_eq!((all.fn_, all.tn), (0, 0));
    assert!(matches!(confusion_at(&[], 0.5), Err(Error::Data(_))));
}

fn random_predictions(r: &mut impl Rng, n: usize, coarse: bool) -> Vec<Prediction> {
    (0..n)
        .map(|_| {
            let p = if coarse { f64::from(r.random_range(0..=10u32)) / 10.0 } else { r.random::<f64>() };
            Prediction::new(p, r.random())
        })
        .collect()
}

#[test]
fn confusion_matches_recount_oracle() {
    let mut r = common::rng(2);
    for _ in 0..150 {
        let n = r.random_range(1..80);
        let preds = random_predictions(&mut r, n, true);
        for t in threshold_grid() {
            let c = confusion_at(&preds, t).unwrap();
            let mut o = [0u64; 4];
            for p in &preds {
                let pos = p.p_abnormal >= t;
                o[usize::from(!pos) * 2 + usize::from(!p.abnormal)] += 1;
            }
            assert_eq!([c.tp, c.fp, c.fn_, c.tn], o);
        }
    }
}

fn mann_whitney(preds: &[Prediction]) -> f64 {
    let (mut num, mut pos, mut neg) = (0.0, 0.0, 0.0);
    for a in preds.iter().filter(|p| p.abnormal) {
        pos += 1.0;
        for b in preds.iter().filter(|p| !p.abnormal) {
            num += if a.p_abnormal > b.p_abnormal {
                1.0
            } else if a.p_abnormal == b.p_abnormal {
                0.5
            } else {
                0.0
            };
        }
    }
    for _ in preds.iter().filter(|p| !p.abnormal) {
        neg += 1.0;
    }
    num / (pos * neg)
}

#[test]
fn auc_matches_pair_counting() {
    let mut r = common::rng(3);
    let mut checked = 0;
    while checked < 150 {
        let coarse = checked % 2 == 0;
        let preds = random_predictions(&mut r, 50, coarse);
        if preds.iter().all(|p| p.abnormal) || preds.iter().all(|p| !p.abnormal) {
            continue;
        }
        let auc = roc_auc(&preds).unwrap().auc;
        assert!((auc - mann_whitney(&preds)).abs() <= 1e-12);
        checked += 1;
    }
}

#[test]
fn auc_extremes_and_antisymmetry() {
    let sep = [Prediction::new(0.9, true), Prediction::new(0.8, true), Prediction::new(0.2, false)];
    assert_eq!(roc_auc(&sep).unwrap().auc, 1.0);
    let inv: Vec<_> = sep.iter().map(|p| Prediction::new(p.p_abnormal, !p.abnormal)).collect();
    assert_eq!(roc_auc(&inv).unwrap().auc, 0.0);
    assert!(matches!(roc_auc(&sep[..2]), Err(Error::Data(_))));
}

#[test]
fn auc_ignores_monotone_transforms() {
    let mut r = common::rng(4);
    let preds = random_predictions(&mut r, 60, false);
    let squashed: Vec<_> = preds.iter().map(|p| Prediction::new(p.p_abnormal.powi(3), p.abnormal)).collect();
    assert_eq!(roc_auc(&preds).unwrap().auc, roc_auc(&squashed).unwrap().auc);
}

#[test]
fn roc_curve_runs_from_origin_to_corner() {
    let mut r = common::rng(5);
    let preds = random_predictions(&mut r, 40, true);
    let roc = roc_auc(&preds).unwrap();
    let first = roc.points.first().unwrap();
    let last = roc.points.last().unwrap();
    assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    for w in roc.points.windows(2) {
        assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        assert!(w[1].threshold < w[0].threshold);
    }
}

#[test]
fn sweep_trends_are_monotone() {
    let mut r = common::rng(6);
    let preds = random_predictions(&mut r, 100, false);
    let rows = threshold_sweep(&preds, &threshold_grid()).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].sensitivity <= w[0].sensitivity);
        assert!(w[1].specificity >= w[0].specificity);
    }
}

fn random_mask(r: &mut impl Rng, n: usize, density: f64) -> Vec<bool> {
    (0..n).map(|_| r.random_bool(density)).collect()
}

#[test]
fn pixel_overlap_matches_set_oracle() {
    let d = Dims3::new(7, 6, 5);
    let mut r = common::rng(7);
    for _ in 0..120 {
        let s = random_mask(&mut r, d.len(), 0.3);
        let a = random_mask(&mut r, d.len(), 0.2);
        let c = pixel_overlap(d, &s, &a).unwrap();
        let sal: BTreeSet<usize> = (0..d.len()).filter(|&i| s[i]).collect();
        let ann: BTreeSet<usize> = (0..d.len()).filter(|&i| a[i]).collect();
        let tp = sal.intersection(&ann).count() as u64;
        let fp = sal.difference(&ann).count() as u64;
        let fn_ = ann.difference(&sal).count() as u64;
        assert_eq!(c, ConfusionCounts::new(tp, fp, fn_, d.len() as u64 - tp - fp - fn_));
        assert_eq!(c.total(), d.len() as u64);
    }
}

#[test]
fn pixel_overlap_identical_and_disjoint() {
    let d = Dims3::new(4, 4, 4);
    let a: Vec<bool> = (0..d.len()).map(|i| i % 3 == 0).collect();
    let c = pixel_overlap(d, &a, &a).unwrap();
    assert_eq!((c.fp, c.fn_, dice(c)), (0, 0, Some(1.0)));
    let b: Vec<bool> = a.iter().map(|v| !v).collect();
    let c = pixel_overlap(d, &b, &a).unwrap();
    assert_eq!((c.tp, dice(c)), (0, Some(0.0)));
    assert!(matches!(pixel_overlap(d, &a[1..], &a), Err(Error::Shape(_))));
}

fn boxed(d: Dims3, lo: (usize, usize, usize), hi: (usize, usize, usize)) -> Vec<bool> {
    (0..d.len())
        .map(|i| {
            let (x, y, z) = d.coords(i);
            (lo.0..=hi.0).contains(&x) && (lo.1..=hi.1).contains(&y) && (lo.2..=hi.2).contains(&z)
        })
        .collect()
}

#[test]
fn region_overlap_cases() {
    let d = Dims3::new(12, 12, 12);
    let ann = boxed(d, (1, 1, 1), (5, 5, 5));
    let inside = boxed(d, (2, 2, 2), (3, 3, 3));
    assert_eq!(region_overlap(d, &inside, &ann).unwrap(), ConfusionCounts::new(1, 0, 0, 0));
    let far = boxed(d, (9, 9, 9), (10, 10, 10));
    assert_eq!(region_overlap(d, &far, &ann).unwrap(), ConfusionCounts::new(0, 1, 1, 0));
    let both: Vec<bool> = inside.iter().zip(&far).map(|(a, b)| *a || *b).collect();
    assert_eq!(region_overlap(d, &both, &ann).unwrap(), ConfusionCounts::new(1, 1, 0, 0));
}

#[test]
fn region_counts_reproduce_the_accuracy_formula() {
    let c = ConfusionCounts::new(191, 105, 62, 105);
    assert_eq!(round2(dice(c).unwrap()), 0.70);
    assert_eq!(metrics_from(c, 0.5).unwrap().accuracy.unwrap(), (191.0 + 105.0) / (191.0 + 105.0 + 62.0 + 105.0));
}

#[test]
fn corner_contact_is_one_component() {
    let d = Dims3::new(3, 3, 3);
    let mut m = vec![false; d.len()];
    assert_eq!(connected_components(d, &m).unwrap().count, 0);
    m[d.index(0, 0, 0)] = true;
    m[d.index(1, 1, 1)] = true;
    assert_eq!(connected_components(d, &m).unwrap().count, 1);
}

fn bfs_partition(d: Dims3, m: &[bool]) -> Vec<Option<u32>> {
    let mut labels = vec![None; m.len()];
    let mut next = 0;
    for start in 0..m.len() {
        if !m[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut q = VecDeque::from([start]);
        while let Some(i) = q.pop_front() {
            let (x, y, z) = d.coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if nx < 0 || ny < 0 || nz < 0 || nx >= d.w as i64 || ny >= d.h as i64 || nz >= d.l as i64 {
                            continue;
                        }
                        let j = d.index(nx as usize, ny as usize, nz as usize);
                        if m[j] && labels[j].is_none() {
                            labels[j] = Some(next);
                            q.push_back(j);
                        }
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

#[test]
fn components_match_flood_fill() {
    let d = Dims3::new(9, 8, 7);
    let mut r = common::rng(8);
    for k in 0..120 {
        let m = random_mask(&mut r, d.len(), 0.05 + 0.002 * k as f64);
        let c = connected_components(d, &m).unwrap();
        let oracle = bfs_partition(d, &m);
        assert_eq!(c.labels, oracle);
        assert_eq!(c.count, oracle.iter().flatten().max().map_or(0, |v| *v as usize + 1));
    }
}

#[test]
fn dilation_matches_brute_force() {
    let d = Dims3::new(8, 7, 9);
    let mut r = common::rng(9);
    for k in 0..120 {
        let m = random_mask(&mut r, d.len(), 0.02);
        let radius = k % 4;
        let out = dilate(d, &m, radius).unwrap();
        for (i, &o) in out.iter().enumerate() {
            let (x, y, z) = d.coords(i);
            let expect = (0..d.len()).any(|j| {
                let (a, b, c) = d.coords(j);
                m[j] && a.abs_diff(x) <= radius && b.abs_diff(y) <= radius && c.abs_diff(z) <= radius
            });
            assert_eq!(o, expect);
        }
    }
}
