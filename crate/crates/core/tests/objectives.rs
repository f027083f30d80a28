use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upet::data::{Modality, Volume};
use upet::model::{UPetConfig, UPetModel};
use upet::objectives::{
    accuracy, auc_ovr, combined_loss, confusion, cross_entropy, f1_macro, mae_volumes, masked_l1,
    EvalReport, MetricError,
};
use upet::{Tape, Tensor};

fn ce_of(logits: &[f64], n: usize, labels: &[usize]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::new(&[n, 3], logits.to_vec()).unwrap());
    let ce = cross_entropy(&mut tape, l, labels).unwrap();
    tape.value(ce).data()[0]
}

/// `−log softmax(z)[y]` evaluated directly: `log Σ exp(z_j) − z_y`.
fn ce_direct(logits: &[f64], labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = &logits[3 * i..3 * i + 3];
            row.iter().map(|z| z.exp()).sum::<f64>().ln() - row[y]
        })
        .sum::<f64>()
        / labels.len() as f64
}

#[test]
fn cross_entropy_examples() {
    for label in 0..3 {
        assert!((ce_of(&[0.7, 0.7, 0.7], 1, &[label]) - 3f64.ln()).abs() < 1e-15);
    }
    assert!(ce_of(&[30.0, -30.0, -30.0], 1, &[0]) < 1e-9);
    let mut tape = Tape::<f32>::new();
    let l = tape.constant(Tensor::zeros(&[1, 3]).unwrap());
    assert!(cross_entropy(&mut tape, l, &[3]).is_err());
}

#[test]
fn cross_entropy_matches_direct_formula_in_single_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..15).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
        let mut tape = Tape::<f32>::new();
        let l = tape
            .constant(Tensor::new(&[5, 3], logits.iter().map(|&v| v as f32).collect()).unwrap());
        let ce = cross_entropy(&mut tape, l, &labels).unwrap();
        let got = tape.value(ce).data()[0] as f64;
        let want = ce_direct(&logits, &labels);
        assert!((got - want).abs() < 1e-6 * want.max(1.0), "{got} vs {want}");
    }
}

proptest! {
    #[test]
    fn cross_entropy_is_non_negative(logits in prop::collection::vec(-60.0f64..60.0, 12), labels in prop::collection::vec(0usize..3, 4)) {
        let ce = ce_of(&logits, 4, &labels);
        prop_assert!(ce >= 0.0 && ce.is_finite());
        prop_assert!((ce - ce_direct(&logits, &labels)).abs() < 1e-9 * ce.max(1.0));
    }
}

fn l1(pred: &[f32], target: &[f32], n: usize, mask: &[bool]) -> (f64, usize) {
    let vox = pred.len() / n;
    let mut tape = Tape::<f32>::new();
    let p = tape.constant(Tensor::new(&[n, 1, 1, 1, vox], pred.to_vec()).unwrap());
    let t = tape.constant(Tensor::new(&[n, 1, 1, 1, vox], target.to_vec()).unwrap());
    let (v, count) = masked_l1(&mut tape, p, t, mask).unwrap();
    (tape.value(v).data()[0] as f64, count)
}

#[test]
fn masked_l1_examples() {
    let target: Vec<f32> = (0..16).map(|i| i as f32 * 0.25).collect();
    assert_eq!(l1(&target, &target, 2, &[true, true]), (0.0, 2));
    let shifted: Vec<f32> = target.iter().map(|v| v + 0.1).collect();
    let (v, _) = l1(&shifted, &target, 2, &[true, true]);
    assert!((v - 0.1).abs() < 1e-6);
    assert_eq!(l1(&shifted, &target, 2, &[false, false]), (0.0, 0));
}

#[test]
fn masked_l1_equals_paired_subset_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let n = rng.gen_range(2..7);
        let vox = 27;
        let pred: Vec<f32> = (0..n * vox).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f32> = (0..n * vox).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        mask[0] = true;
        let (mixed, count) = l1(&pred, &target, n, &mask);
        let keep: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        let pick = |v: &[f32]| {
            keep.iter()
                .flat_map(|&i| v[i * vox..(i + 1) * vox].to_vec())
                .collect::<Vec<_>>()
        };
        let (subset, _) = l1(
            &pick(&pred),
            &pick(&target),
            keep.len(),
            &vec![true; keep.len()],
        );
        assert_eq!(count, keep.len());
        assert!((mixed - subset).abs() <= 1e-6, "{mixed} vs {subset}");

        // A full mask is the plain voxel mean.
        let (full, _) = l1(&pred, &target, n, &vec![true; n]);
        let plain = pred
            .iter()
            .zip(&target)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum::<f64>()
            / (n * vox) as f64;
        assert!((full - plain).abs() <= 1e-6);
    }
}

fn avgpool(v: &[f32], e: usize, f: usize) -> Vec<f64> {
    let o = e / f;
    let mut out = vec![0.0; o * o * o];
    for z in 0..e {
        for y in 0..e {
            for x in 0..e {
                out[((z / f) * o + y / f) * o + x / f] +=
                    v[(z * e + y) * e + x] as f64 / (f * f * f) as f64;
            }
        }
    }
    out
}

#[test]
fn combined_loss_recomposes_from_independent_parts() {
    let mut cfg = UPetConfig::new(4, 4, [16; 3]);
    cfg.lambda_l1 = 0.75;
    assert_eq!(cfg.deep_supervision_weights, [0.5, 0.25, 0.125]);
    let model = UPetModel::<f32>::build(cfg.clone(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, e) = (3, 16);
    let vol = e * e * e;
    let x: Vec<f32> = (0..n * vol).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pet: Vec<f32> = (0..n * vol).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels = [2, 0, 1];
    let mask = [true, false, true];

    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(&[n, 1, e, e, e], x).unwrap());
    let tv = tape.constant(Tensor::new(&[n, 1, e, e, e], pet.clone()).unwrap());
    let out = model.forward(&mut tape, xv, false).unwrap();
    let terms = combined_loss(&mut tape, &out, &labels, Some(tv), &mask, &cfg).unwrap();
    let b = &terms.breakdown;

    let logits: Vec<f64> = tape
        .value(out.class_logits)
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect();
    let ce = ce_direct(&logits, &labels);
    let masked_mean = |pred: &[f32], target: &dyn Fn(usize) -> Vec<f64>, per: usize| {
        let mut acc = 0.0;
        let mut count = 0;
        for i in (0..n).filter(|&i| mask[i]) {
            let t = target(i);
            for j in 0..per {
                acc += (pred[i * per + j] as f64 - t[j]).abs();
            }
            count += per;
        }
        acc / count as f64
    };
    let pred = tape.value(out.pet_pred.unwrap()).data();
    let l1_main = masked_mean(
        pred,
        &|i| {
            pet[i * vol..(i + 1) * vol]
                .iter()
                .map(|&v| v as f64)
                .collect()
        },
        vol,
    );
    let mut weighted = 0.0;
    assert_eq!(b.l1_aux.len(), 3);
    for (k, &(level, aux)) in out.aux_pet_preds.iter().enumerate() {
        let f = 1 << level;
        let per = vol / (f * f * f);
        let want = masked_mean(
            tape.value(aux).data(),
            &|i| avgpool(&pet[i * vol..(i + 1) * vol], e, f),
            per,
        );
        assert_eq!(b.l1_aux[k].0, level);
        assert!((b.l1_aux[k].1 - want).abs() < 1e-6 * want, "aux {level}");
        weighted += cfg.deep_supervision_weights[level - 1] * want;
    }
    let total = ce + cfg.lambda_l1 * (l1_main + weighted);
    assert!((b.ce - ce).abs() < 1e-6 * ce);
    assert!((b.l1_main - l1_main).abs() < 1e-6 * l1_main);
    assert!(
        (b.total - total).abs() < 1e-6 * total,
        "{} vs {total}",
        b.total
    );
    assert!((b.weighted_aux(&cfg) - weighted).abs() < 1e-6 * weighted);
    assert_eq!(b.paired_count, 2);
}

#[test]
fn total_is_cross_entropy_without_l1_signal() {
    let cfg = UPetConfig::new(3, 2, [8; 3]);
    let model = UPetModel::<f32>::build(cfg.clone(), 1).unwrap();
    let x = Tensor::from_fn(&[2, 1, 8, 8, 8], |i| (i % 7) as f32 / 7.0).unwrap();
    let pet = Tensor::from_fn(&[2, 1, 8, 8, 8], |i| (i % 5) as f32 / 5.0).unwrap();
    let run = |cfg: &UPetConfig, mask: [bool; 2], with_target: bool| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tv = tape.constant(pet.clone());
        let out = model.forward(&mut tape, xv, false).unwrap();
        combined_loss(
            &mut tape,
            &out,
            &[0, 1],
            with_target.then_some(tv),
            &mask,
            cfg,
        )
        .map(|t| t.breakdown)
    };
    let no_pairs = run(&cfg, [false, false], true).unwrap();
    assert_eq!(no_pairs.total.to_bits(), no_pairs.ce.to_bits());
    assert_eq!((no_pairs.l1_main, no_pairs.paired_count), (0.0, 0));
    let mut zero_lambda = cfg.clone();
    zero_lambda.lambda_l1 = 0.0;
    let b = run(&zero_lambda, [true, true], true).unwrap();
    assert_eq!(b.total.to_bits(), b.ce.to_bits());
    assert!(b.l1_main > 0.0);
    assert!(run(&cfg, [true, false], false).is_err());
}

// Brute-force references.

fn brute_f1_macro(preds: &[usize], labels: &[usize]) -> f64 {
    let mut sum = 0.0;
    for c in 0..3 {
        let tp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == c && **l == c)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == c && **l != c)
            .count() as f64;
        let fneg = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p != c && **l == c)
            .count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 {
            tp / (tp + fneg)
        } else {
            0.0
        };
        sum += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    sum / 3.0
}

fn brute_auc(scores: &[Vec<f64>], labels: &[usize], c: usize) -> Option<f64> {
    let (mut credit, mut pairs) = (0.0, 0usize);
    let (pos, neg): (Vec<_>, Vec<_>) = scores.iter().zip(labels).partition(|(_, &l)| l == c);
    for (si, _) in &pos {
        for (sj, _) in &neg {
            pairs += 1;
            credit += if si[c] > sj[c] {
                1.0
            } else if si[c] == sj[c] {
                0.5
            } else {
                0.0
            };
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

#[test]
fn worked_examples() {
    let (cn, mci, ad) = (0, 1, 2);
    let labels = [cn, cn, ad, mci];
    let preds = [cn, ad, ad, mci];
    assert_eq!(accuracy(&preds, &labels).unwrap(), 0.75);
    assert!((f1_macro(&preds, &labels).unwrap() - 7.0 / 9.0).abs() < 1e-15);
    let balanced = [0, 0, 0, 1, 1, 1, 2, 2, 2];
    assert!((accuracy(&[0; 9], &balanced).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!((f1_macro(&[0; 9], &balanced).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(accuracy(&[], &[]), Err(MetricError::Empty));
    assert_eq!(f1_macro(&[], &[]), Err(MetricError::Empty));
}

#[test]
fn metrics_match_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.gen_range(1..=30);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        // Coarse scores so ties occur.
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect())
            .collect();
        let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n as f64;
        assert!((accuracy(&preds, &labels).unwrap() - hits).abs() <= 1e-9);
        assert!(
            (f1_macro(&preds, &labels).unwrap() - brute_f1_macro(&preds, &labels)).abs() <= 1e-9
        );
        let auc = auc_ovr(&scores, &labels).unwrap();
        for c in 0..3 {
            match (auc[c], brute_auc(&scores, &labels, c)) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9),
                (None, None) => {}
                other => panic!("class {c}: {other:?}"),
            }
        }
        let m = confusion(&preds, &labels).unwrap();
        assert_eq!(m.iter().flatten().sum::<usize>(), n);
    }
}

#[test]
fn auc_edge_cases() {
    let labels = [0, 1, 2, 0];
    let separated = vec![
        vec![0.9, 0.05, 0.05],
        vec![0.1, 0.8, 0.1],
        vec![0.2, 0.1, 0.7],
        vec![0.8, 0.1, 0.1],
    ];
    assert_eq!(auc_ovr(&separated, &labels).unwrap(), [Some(1.0); 3]);
    let flat = vec![vec![1.0 / 3.0; 3]; 4];
    assert_eq!(auc_ovr(&flat, &labels).unwrap(), [Some(0.5); 3]);
    assert_eq!(auc_ovr(&flat, &[1, 1, 1, 1]).unwrap(), [None; 3]);
}

proptest! {
    #[test]
    fn accuracy_and_f1_survive_relabeling(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..30),
        perm in Just([0usize, 1, 2]).prop_shuffle(),
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let rp: Vec<usize> = preds.iter().map(|&c| perm[c]).collect();
        let rl: Vec<usize> = labels.iter().map(|&c| perm[c]).collect();
        prop_assert_eq!(accuracy(&preds, &labels).unwrap(), accuracy(&rp, &rl).unwrap());
        prop_assert!((f1_macro(&preds, &labels).unwrap() - f1_macro(&rp, &rl).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps(
        rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 3), 0usize..3), 2..25),
    ) {
        let (scores, labels): (Vec<Vec<f64>>, Vec<usize>) = rows.into_iter().unzip();
        let mapped: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|s| (3.0 * s).exp() - 7.0).collect()).collect();
        prop_assert_eq!(auc_ovr(&scores, &labels).unwrap(), auc_ovr(&mapped, &labels).unwrap());
    }
}

#[test]
fn mae_examples_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = |rng: &mut ChaCha8Rng| {
        (0..512)
            .map(|_| rng.gen_range(-2.0f32..2.0))
            .collect::<Vec<_>>()
    };
    let a = Volume::new([8; 3], Modality::Pet, data(&mut rng)).unwrap();
    let b = Volume::new([8; 3], Modality::Pet, data(&mut rng)).unwrap();
    assert_eq!(mae_volumes(&a, &a).unwrap(), 0.0);
    let shifted = Volume::new(
        [8; 3],
        Modality::Pet,
        a.data().iter().map(|v| v - 0.25).collect(),
    )
    .unwrap();
    assert!((mae_volumes(&shifted, &a).unwrap() - 0.25).abs() < 1e-6);
    let mut acc = 0.0f64;
    for i in 0..512 {
        acc += (a.data()[i] as f64 - b.data()[i] as f64).abs();
    }
    assert!((mae_volumes(&a, &b).unwrap() - acc / 512.0).abs() < 1e-12);
    let small = Volume::zeros([4; 3], Modality::Pet);
    assert!(matches!(
        mae_volumes(&a, &small),
        Err(MetricError::ShapeMismatch { .. })
    ));
}

#[test]
fn report_invariants_and_round_trip() {
    let probs = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.6, 0.3],
        vec![0.2, 0.2, 0.6],
        vec![0.5, 0.3, 0.2],
        vec![0.3, 0.4, 0.3],
    ];
    let labels = [0, 1, 2, 1, 1];
    let r = EvalReport::compute(&probs, &labels, &[0.05, 0.07]).unwrap();
    assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 5);
    assert!((0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.f1_macro));
    assert!(r.auc.iter().flatten().all(|a| (0.0..=1.0).contains(a)));
    assert!((r.mae.unwrap() - 0.06).abs() < 1e-15);
    let entries = r.entries();
    let back =
        EvalReport::from_entries(entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
    assert_eq!(back, r);
    assert!(r.to_key_value().contains("f1_macro = "));
    assert!(r.to_table().starts_with("metric,value\n"));
}
