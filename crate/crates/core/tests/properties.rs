use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use hiercloud::cloud::{CloudLabels, PointCloud};
use hiercloud::ensemble::{hierarchical_ensemble, mc_decision, LevelDistributions};
use hiercloud::hierarchy::{ClassRef, HierLabel, LabelHierarchy};
use hiercloud::io::{decode_cloud, encode_cloud, read_csv, write_csv};
use hiercloud::loss::{total_loss, total_loss_grad, LevelScores, LossWeights};
use hiercloud::metrics::{consistency_proportion, consistency_rate, wcov, InstanceSet, LevelConfusion};
use hiercloud::sampling::{stream_rng, voxel_downsample, voxel_key};
use hiercloud::synth::random_hierarchy;

fn tree(seed: u64) -> LabelHierarchy {
    let mut rng = stream_rng(seed, 0);
    let with_ignore = rng.gen_bool(0.3);
    random_hierarchy(&mut rng, 6, 50, with_ignore)
}

fn distributions(h: &LabelHierarchy, n: usize, rng: &mut impl Rng) -> LevelDistributions {
    let data = h
        .widths()
        .iter()
        .map(|&w| (0..n * w).map(|_| rng.gen::<f64>()).collect())
        .collect();
    LevelDistributions::from_unnormalized(n, h.widths(), data).unwrap()
}

fn random_labels(h: &LabelHierarchy, n: usize, rng: &mut impl Rng) -> Vec<HierLabel> {
    (0..n)
        .map(|_| HierLabel(h.widths().iter().map(|&w| rng.gen_range(0..w)).collect()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fc_paths_are_consistent_and_one_per_leaf(seed in any::<u64>()) {
        let h = tree(seed);
        prop_assert_eq!(h.fc_paths().len(), h.leaf_count());
        for (leaf, path) in h.fc_paths().iter().enumerate() {
            prop_assert!(h.is_fully_consistent(path));
            prop_assert_eq!(path.leaf(), leaf);
        }
    }

    #[test]
    fn projection_is_transitive(seed in any::<u64>(), pick in any::<u64>()) {
        let h = tree(seed);
        let mut rng = stream_rng(pick, 1);
        let level = rng.gen_range(1..=h.depth());
        let c = ClassRef::new(level, rng.gen_range(0..h.width(level)));
        let mid = rng.gen_range(1..=level);
        let target = rng.gen_range(1..=mid);
        let direct = h.project(c, target).unwrap();
        let stepwise = h.project(h.project(c, mid).unwrap(), target).unwrap();
        prop_assert_eq!(direct, stepwise);
        prop_assert_eq!(h.project(c, level).unwrap(), c);
    }

    #[test]
    fn lifting_keeps_the_leaf(seed in any::<u64>(), leaves in prop::collection::vec(any::<u16>(), 0..40)) {
        let h = tree(seed);
        let leaves: Vec<usize> = leaves.iter().map(|&l| l as usize % h.leaf_count()).collect();
        let lifted = h.lift_leaf_labels(&leaves).unwrap();
        for (l, label) in leaves.iter().zip(&lifted) {
            prop_assert_eq!(label.leaf(), *l);
            prop_assert!(h.is_fully_consistent(label));
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>()) {
        let h = tree(seed);
        prop_assert_eq!(LabelHierarchy::parse(&h.to_config_string()).unwrap(), h);
    }

    #[test]
    fn cp_is_one_exactly_on_tree_paths(seed in any::<u64>(), draw in any::<u64>()) {
        let h = tree(seed);
        let mut rng = stream_rng(draw, 2);
        for label in random_labels(&h, 50, &mut rng) {
            let cp = consistency_proportion(&h, &label);
            prop_assert_eq!(cp.is_full(), h.is_fully_consistent(&label));
            prop_assert!(cp.agree >= 1 && cp.agree <= h.depth());
        }
    }

    #[test]
    fn cr_is_monotone_in_alpha(seed in any::<u64>(), draw in any::<u64>()) {
        let h = tree(seed);
        let mut rng = stream_rng(draw, 3);
        let labels = random_labels(&h, 80, &mut rng);
        let mut alphas: Vec<f64> = (0..12).map(|_| rng.gen::<f64>()).collect();
        alphas.sort_by(f64::total_cmp);
        let rates: Vec<f64> = alphas.iter().map(|&a| consistency_rate(&h, &labels, a).unwrap()).collect();
        prop_assert!(rates.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(consistency_rate(&h, &labels, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn confusion_matches_set_oracle(
        width in 2usize..8,
        pairs in prop::collection::vec((any::<u8>(), any::<u8>()), 1..300),
        with_ignore in any::<bool>(),
    ) {
        let gt: Vec<usize> = pairs.iter().map(|p| p.0 as usize % width).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1 as usize % width).collect();
        let ignore = with_ignore.then_some(0);
        let mut conf = LevelConfusion::new(1, width, ignore);
        conf.accumulate(&gt, &pred).unwrap();

        let kept: Vec<usize> = (0..gt.len()).filter(|&i| Some(gt[i]) != ignore).collect();
        if kept.is_empty() {
            prop_assert!(conf.overall_accuracy().is_err());
            return Ok(());
        }
        let correct = kept.iter().filter(|&&i| gt[i] == pred[i]).count();
        prop_assert_eq!(conf.overall_accuracy().unwrap(), correct as f64 / kept.len() as f64);

        let ious = conf.per_class_iou();
        for c in 0..width {
            let g: HashSet<usize> = kept.iter().copied().filter(|&i| gt[i] == c).collect();
            let p: HashSet<usize> = kept.iter().copied().filter(|&i| pred[i] == c).collect();
            let union = g.union(&p).count();
            let want = if Some(c) == ignore || union == 0 {
                None
            } else {
                Some(g.intersection(&p).count() as f64 / union as f64)
            };
            prop_assert_eq!(ious[c], want);
        }
    }

    #[test]
    fn wcov_bounded_and_relabel_invariant(
        pairs in prop::collection::vec((-1i64..5, -1i64..5), 1..200),
    ) {
        let gt = InstanceSet::new(pairs.iter().map(|p| p.0).collect());
        let pred = InstanceSet::new(pairs.iter().map(|p| p.1).collect());
        match wcov(&gt, &pred) {
            Err(_) => prop_assert!(gt.ids().iter().all(|&i| i < 0)),
            Ok(v) => {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                let relabel = |s: &InstanceSet| {
                    InstanceSet::new(s.ids().iter().map(|&i| if i < 0 { i } else { 1000 - 7 * i }).collect())
                };
                let r = wcov(&relabel(&gt), &relabel(&pred)).unwrap();
                prop_assert!((r - v).abs() < 1e-12);
                prop_assert!((wcov(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_ignore_point_order(seed in any::<u64>(), draw in any::<u64>()) {
        let h = tree(seed);
        let mut rng = stream_rng(draw, 4);
        let n = 120;
        let gt = random_labels(&h, n, &mut rng);
        let pred = random_labels(&h, n, &mut rng);
        let ids: Vec<i64> = (0..n).map(|_| rng.gen_range(-1..6)).collect();
        let pids: Vec<i64> = (0..n).map(|_| rng.gen_range(-1..6)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pg: Vec<HierLabel> = perm.iter().map(|&i| gt[i].clone()).collect();
        let pp: Vec<HierLabel> = perm.iter().map(|&i| pred[i].clone()).collect();

        prop_assert_eq!(consistency_rate(&h, &pred, 0.6).unwrap(), consistency_rate(&h, &pp, 0.6).unwrap());
        for level in 1..=h.depth() {
            let col = |v: &[HierLabel]| -> Vec<usize> { v.iter().map(|l| l.0[level - 1]).collect() };
            let mut a = LevelConfusion::for_level(&h, level);
            a.accumulate(&col(&gt), &col(&pred)).unwrap();
            let mut b = LevelConfusion::for_level(&h, level);
            b.accumulate(&col(&pg), &col(&pp)).unwrap();
            prop_assert_eq!(a.overall_accuracy().ok(), b.overall_accuracy().ok());
            prop_assert_eq!(a.per_class_iou(), b.per_class_iou());
            prop_assert_eq!(a.mean_iou().ok(), b.mean_iou().ok());
        }
        let w1 = wcov(&InstanceSet::new(ids.clone()), &InstanceSet::new(pids.clone()));
        let w2 = wcov(
            &InstanceSet::new(perm.iter().map(|&i| ids[i]).collect()),
            &InstanceSet::new(perm.iter().map(|&i| pids[i]).collect()),
        );
        prop_assert_eq!(w1.ok(), w2.ok());
    }

    #[test]
    fn he_returns_tree_paths_and_recovers_one_hot(seed in any::<u64>(), draw in any::<u64>()) {
        let h = tree(seed);
        let mut rng = stream_rng(draw, 5);
        let d = distributions(&h, 20, &mut rng);
        for label in hierarchical_ensemble(&h, &d).unwrap() {
            prop_assert!(h.is_fully_consistent(&label));
        }
        let leaf = rng.gen_range(0..h.leaf_count());
        let path = h.leaf_path(leaf);
        let data = h
            .widths()
            .iter()
            .enumerate()
            .map(|(pos, &w)| (0..w).map(|c| if c == path.0[pos] { 1.0 } else { 0.0 }).collect())
            .collect();
        let one_hot = LevelDistributions::new(1, h.widths(), data).unwrap();
        prop_assert_eq!(&hierarchical_ensemble(&h, &one_hot).unwrap()[0], path);
        prop_assert_eq!(&mc_decision(&h, &one_hot).unwrap()[0], path);
    }

    #[test]
    fn single_level_he_is_argmax(width in 1usize..12, draw in any::<u64>()) {
        let names: Vec<String> = (0..width).map(|i| format!("c{i}")).collect();
        let h = LabelHierarchy::new(vec![names], vec![Vec::new()], vec![None]).unwrap();
        let mut rng = stream_rng(draw, 6);
        let d = distributions(&h, 30, &mut rng);
        prop_assert_eq!(hierarchical_ensemble(&h, &d).unwrap(), mc_decision(&h, &d).unwrap());
    }

    #[test]
    fn loss_is_nonnegative_and_batch_invariant(seed in any::<u64>(), draw in any::<u64>()) {
        let h = tree(seed);
        let mut rng = stream_rng(draw, 7);
        let n = 10;
        let d = distributions(&h, n, &mut rng);
        let targets: Vec<HierLabel> = (0..n).map(|_| h.fc_paths()[rng.gen_range(0..h.leaf_count())].clone()).collect();
        let w = LossWeights::standard(h.depth());
        let v = total_loss(&h, &d, &targets, &w).unwrap();
        prop_assert!(v.total >= 0.0 && v.prediction >= 0.0 && v.consistency >= 0.0);

        let doubled_levels: Vec<Vec<f64>> = (0..h.depth())
            .map(|pos| d.level(pos).iter().chain(d.level(pos)).copied().collect())
            .collect();
        let doubled = LevelDistributions::new(2 * n, h.widths(), doubled_levels).unwrap();
        let doubled_targets: Vec<HierLabel> = targets.iter().chain(&targets).cloned().collect();
        let v2 = total_loss(&h, &doubled, &doubled_targets, &w).unwrap();
        prop_assert!((v2.total - v.total).abs() <= 1e-12 * v.total.max(1.0));

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted_levels: Vec<Vec<f64>> = (0..h.depth())
            .map(|pos| perm.iter().flat_map(|&i| d.row(pos, i).to_vec()).collect())
            .collect();
        let permuted = LevelDistributions::new(n, h.widths(), permuted_levels).unwrap();
        let permuted_targets: Vec<HierLabel> = perm.iter().map(|&i| targets[i].clone()).collect();
        let v3 = total_loss(&h, &permuted, &permuted_targets, &w).unwrap();
        prop_assert!((v3.total - v.total).abs() <= 1e-12 * v.total.max(1.0));
    }

    #[test]
    fn score_gradient_rows_sum_to_zero(seed in any::<u64>(), draw in any::<u64>()) {
        let h = tree(seed);
        let mut rng = stream_rng(draw, 8);
        let n = 5;
        let data = h.widths().iter().map(|&w| (0..n * w).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
        let scores = LevelScores::new(n, h.widths(), data).unwrap();
        let targets: Vec<HierLabel> = (0..n).map(|_| h.fc_paths()[rng.gen_range(0..h.leaf_count())].clone()).collect();
        let (_, grad) = total_loss_grad(&h, &scores, &targets, &LossWeights::standard(h.depth())).unwrap();
        for (pos, &w) in h.widths().iter().enumerate() {
            for row in grad[pos].chunks(w) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn voxel_downsampling_is_idempotent(
        pts in prop::collection::vec((0u16..400, 0u16..400, 0u16..100), 1..400),
        size in 0.05f64..1.0,
    ) {
        let pc = PointCloud::from_xyz(
            pts.iter().map(|&(x, y, z)| [x as f64 * 0.01 - 2.0, y as f64 * 0.01, z as f64 * 0.01]).collect(),
        );
        let kept = voxel_downsample(&pc, size).unwrap();
        let keys: HashSet<[i64; 3]> = kept.iter().map(|&i| voxel_key(&pc.xyz[i], size)).collect();
        prop_assert_eq!(keys.len(), kept.len());
        let all: HashSet<[i64; 3]> = pc.xyz.iter().map(|p| voxel_key(p, size)).collect();
        prop_assert_eq!(keys, all);
        let reduced = pc.select(&kept);
        prop_assert_eq!(voxel_downsample(&reduced, size).unwrap(), (0..reduced.len()).collect::<Vec<_>>());
    }

    #[test]
    fn clouds_round_trip(
        rows in prop::collection::vec((any::<f64>(), -1e6f64..1e6, any::<u8>(), 0u16..15, -1i32..100), 0..60),
        with_color in any::<bool>(),
        with_instance in any::<bool>(),
    ) {
        let mut pc = PointCloud::from_xyz(
            rows.iter().map(|r| [if r.0.is_finite() { r.0 } else { 0.5 }, r.1, -r.1]).collect(),
        );
        if with_color {
            pc.color = Some(rows.iter().map(|r| [r.2, r.2 / 2, 255 - r.2]).collect());
        }
        pc.labels = Some(CloudLabels::Leaf(rows.iter().map(|r| r.3).collect()));
        if with_instance {
            pc.instance = Some(rows.iter().map(|r| r.4).collect());
        }
        let bytes = encode_cloud(&pc).unwrap();
        let back = decode_cloud(&bytes).unwrap();
        prop_assert_eq!(&back, &pc);
        prop_assert_eq!(encode_cloud(&back).unwrap(), bytes);

        let mut text = csv::Writer::from_writer(Vec::new());
        write_csv(&mut text, &pc).unwrap();
        let text = text.into_inner().unwrap();
        if !pc.is_empty() {
            prop_assert_eq!(read_csv(text.as_slice()).unwrap(), pc);
        }
    }
}
