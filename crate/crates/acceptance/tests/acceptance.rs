//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `UPET_ACCEPTANCE=2,3,9` runs a subset.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upet::data::{phantom_samples, stack_batch, subject_level_split, PhantomConfig, Sample};
use upet::model::{attention_gate, GateVars, UPetConfig, UPetModel};
use upet::objectives::{accuracy, auc_ovr, f1_macro, masked_l1};
use upet::training::{
    evaluate, load_checkpoint, save_checkpoint, train_samples, train_samples_with, TrainConfig,
};
use upet::{Tape, Tensor};
use upet_cli::commands;
use upet_cli::config::RunConfig;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

// 1. Gradient suite as run by `upet grad-check`.
fn gradients() -> Outcome {
    let t0 = Instant::now();
    let (table, passed) = commands::grad_check(64, None).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    check(passed, || table.clone())?;
    check(elapsed < Duration::from_secs(300), || {
        format!("took {elapsed:?}")
    })?;
    let summary = table.lines().last().unwrap_or_default().to_string();
    Ok(format!("{summary} in {:.1}s", elapsed.as_secs_f64()))
}

// 2. Attention gate against a scalar loop.
struct Gate {
    x: Tensor<f32>,
    g: Tensor<f32>,
    w_x: Tensor<f32>,
    w_g: Tensor<f32>,
    b_g: Tensor<f32>,
    psi: Tensor<f32>,
    b_psi: Tensor<f32>,
}

const FX: usize = 3;
const FG: usize = 5;
const FI: usize = 2;
const E: usize = 4;

impl Gate {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            x: rand_tensor(rng, &[1, FX, E, E, E], -2.0, 2.0),
            g: rand_tensor(rng, &[1, FG, E / 2, E / 2, E / 2], -2.0, 2.0),
            w_x: rand_tensor(rng, &[FI, FX, 1, 1, 1], -1.0, 1.0),
            w_g: rand_tensor(rng, &[FI, FG, 1, 1, 1], -1.0, 1.0),
            b_g: rand_tensor(rng, &[FI], -0.5, 0.5),
            psi: rand_tensor(rng, &[1, FI, 1, 1, 1], -1.5, 1.5),
            b_psi: rand_tensor(rng, &[1], -0.5, 0.5),
        }
    }

    fn run(&self) -> (Vec<f32>, Vec<f32>) {
        let mut tape = Tape::new();
        let x = tape.constant(self.x.clone());
        let g = tape.constant(self.g.clone());
        let p = GateVars {
            w_x: tape.constant(self.w_x.clone()),
            w_g: tape.constant(self.w_g.clone()),
            b_g: tape.constant(self.b_g.clone()),
            psi: tape.constant(self.psi.clone()),
            b_psi: tape.constant(self.b_psi.clone()),
        };
        let (gated, alpha) = attention_gate(&mut tape, x, g, &p).unwrap();
        (
            tape.value(gated).data().to_vec(),
            tape.value(alpha).data().to_vec(),
        )
    }

    /// α on the coarse grid (x sampled with stride 2), doubled trilinearly
    /// with half-pixel centres clamped at the border.
    fn oracle(&self) -> (Vec<f64>, Vec<f64>) {
        let c = E / 2;
        let x_at = |ch: usize, z: usize, y: usize, x: usize| {
            self.x.data()[((ch * E + z) * E + y) * E + x] as f64
        };
        let g_at = |ch: usize, z: usize, y: usize, x: usize| {
            self.g.data()[((ch * c + z) * c + y) * c + x] as f64
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut coarse = vec![0.0f64; c * c * c];
        for z in 0..c {
            for y in 0..c {
                for x in 0..c {
                    let mut q = self.b_psi.data()[0] as f64;
                    for k in 0..FI {
                        let mut s = self.b_g.data()[k] as f64;
                        for ch in 0..FX {
                            s +=
                                self.w_x.data()[k * FX + ch] as f64 * x_at(ch, 2 * z, 2 * y, 2 * x);
                        }
                        for ch in 0..FG {
                            s += self.w_g.data()[k * FG + ch] as f64 * g_at(ch, z, y, x);
                        }
                        q += self.psi.data()[k] as f64 * s.max(0.0);
                    }
                    coarse[(z * c + y) * c + x] = sigmoid(q);
                }
            }
        }
        let taps = |o: usize| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(c - 1);
            let hi = (lo + 1).min(c - 1);
            (lo, hi, if hi == lo { 0.0 } else { src - lo as f64 })
        };
        let mut alpha = vec![0.0; E * E * E];
        for z in 0..E {
            let (z0, z1, fz) = taps(z);
            for y in 0..E {
                let (y0, y1, fy) = taps(y);
                for x in 0..E {
                    let (x0, x1, fx) = taps(x);
                    let mut v = 0.0;
                    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                                v += wz * wy * wx * coarse[(zi * c + yi) * c + xi];
                            }
                        }
                    }
                    alpha[(z * E + y) * E + x] = v;
                }
            }
        }
        let vox = E * E * E;
        let gated = (0..FX * vox)
            .map(|i| self.x.data()[i] as f64 * alpha[i % vox])
            .collect();
        (gated, alpha)
    }
}

fn gate_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let gate = Gate::random(&mut rng);
        let (gated, alpha) = gate.run();
        let (want_gated, want_alpha) = gate.oracle();
        for (got, want) in alpha
            .iter()
            .chain(&gated)
            .zip(want_alpha.iter().chain(&want_gated))
        {
            let err = (*got as f64 - want).abs();
            worst = worst.max(err);
            check(err <= 1e-5, || format!("instance {case}: {got} vs {want}"))?;
        }
    }
    let mut gate = Gate::random(&mut rng);
    gate.psi.data_mut().fill(0.0);
    gate.b_psi.data_mut().fill(0.0);
    let (gated, alpha) = gate.run();
    check(alpha.iter().all(|&a| a == 0.5), || {
        "ψ = 0 does not give α = 0.5".into()
    })?;
    check(
        gated.iter().zip(gate.x.data()).all(|(g, x)| *g == 0.5 * x),
        || "ψ = 0 does not halve the input".into(),
    )?;
    Ok(format!(
        "50 instances, max error {worst:.2e}; ψ = 0 gives 0.5 exactly"
    ))
}

// 3. Metrics against brute force.
fn brute_f1(preds: &[usize], labels: &[usize]) -> f64 {
    let count = |f: &dyn Fn(usize, usize) -> bool| {
        preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| f(**p, **l))
            .count() as f64
    };
    (0..3)
        .map(|c| {
            let tp = count(&|p, l| p == c && l == c);
            let fp = count(&|p, l| p == c && l != c);
            let fneg = count(&|p, l| p != c && l == c);
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fneg > 0.0 {
                tp / (tp + fneg)
            } else {
                0.0
            };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / 3.0
}

fn brute_auc(scores: &[Vec<f64>], labels: &[usize], c: usize) -> Option<f64> {
    let (mut credit, mut pairs) = (0.0, 0usize);
    for (si, li) in scores.iter().zip(labels) {
        for (sj, lj) in scores.iter().zip(labels) {
            if *li == c && *lj != c {
                pairs += 1;
                credit += match si[c].partial_cmp(&sj[c]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

fn metric_oracles() -> Outcome {
    let (cn, mci, ad) = (0, 1, 2);
    let f1 = f1_macro(&[cn, ad, ad, mci], &[cn, cn, ad, mci]).map_err(|e| e.to_string())?;
    check((f1 - 7.0 / 9.0).abs() <= 1e-12, || {
        format!("worked example gives {f1}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..200 {
        let n = rng.gen_range(1..=30);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect())
            .collect();
        let acc = accuracy(&preds, &labels).unwrap();
        let want = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n as f64;
        check((acc - want).abs() <= 1e-9, || {
            format!("set {case}: accuracy {acc} vs {want}")
        })?;
        let f1 = f1_macro(&preds, &labels).unwrap();
        let want = brute_f1(&preds, &labels);
        check((f1 - want).abs() <= 1e-9, || {
            format!("set {case}: f1 {f1} vs {want}")
        })?;
        let auc = auc_ovr(&scores, &labels).unwrap();
        for c in 0..3 {
            let want = brute_auc(&scores, &labels, c);
            let same = match (auc[c], want) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                (None, None) => true,
                _ => false,
            };
            check(same, || {
                format!("set {case}: auc[{c}] {:?} vs {want:?}", auc[c])
            })?;
        }
    }
    Ok("200 random sets agree to 1e-9; worked example f1_macro = 7/9".into())
}

// 4. Overfitting eight paired samples.
fn overfit() -> Outcome {
    let t0 = Instant::now();
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let pc = PhantomConfig {
            dims: [32; 3],
            subjects: 8,
            paired_fraction: 1.0,
            seed,
            ..PhantomConfig::default()
        };
        let samples = phantom_samples(&pc, [32; 3]).map_err(|e| e.to_string())?;
        let mut model = UPetModel::<f32>::build(UPetConfig::new(3, 4, [32; 3]), seed)
            .map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 4,
            lr: 1e-3,
            seed,
            eval_every: 100,
        };
        let out = train_samples(&mut model, &samples, &samples, &cfg).map_err(|e| e.to_string())?;
        let steps = out.step_losses.len();
        let first = out.step_losses[0];
        let last = out.log.last().expect("epochs ran").total;
        let drop = 1.0 - last / first;
        let acc = evaluate(&model, &samples, 4)
            .map_err(|e| e.to_string())?
            .report
            .accuracy;
        let ok = drop >= 0.9 && acc == 1.0;
        passed += ok as usize;
        lines.push(format!(
            "seed {seed}: {steps} steps, drop {drop:.3}, accuracy {acc:.3}"
        ));
    }
    let elapsed = t0.elapsed();
    let detail = format!(
        "{passed}/5 seeds in {:.0}s [{}]",
        elapsed.as_secs_f64(),
        lines.join("; ")
    );
    if passed >= 4 && elapsed < Duration::from_secs(600) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 5. Generalization on a 200-subject phantom.
fn generalization() -> Outcome {
    let t0 = Instant::now();
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let pc = PhantomConfig {
            dims: [32; 3],
            subjects: 200,
            noise_sigma: 0.03,
            seed,
            ..PhantomConfig::default()
        };
        let samples = phantom_samples(&pc, [32; 3]).map_err(|e| e.to_string())?;
        let ids: Vec<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
        let split = subject_level_split(&ids, [0.6, 0.2, 0.2], seed).map_err(|e| e.to_string())?;
        let pick = |set: &[String]| -> Vec<Sample> {
            samples
                .iter()
                .filter(|s| set.contains(&s.subject_id))
                .cloned()
                .collect()
        };
        let (train, val) = (pick(&split.train), pick(&split.val));
        let mut model = UPetModel::<f32>::build(UPetConfig::new(4, 8, [32; 3]), seed)
            .map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            seed,
            eval_every: 1,
        };
        let out = train_samples_with(&mut model, &train, &val, &cfg, |_| {})
            .map_err(|e| e.to_string())?;
        let best = &out.best.report;
        let f1 = best.f1_macro;
        let mae = best.mae.unwrap_or(f64::INFINITY);
        let ok = f1 > 0.6 && mae < 0.10;
        passed += ok as usize;
        lines.push(format!(
            "seed {seed}: {}/{} subjects, best epoch {}, F1 {f1:.3}, MAE {mae:.4}",
            split.train.len(),
            split.val.len(),
            out.best.epoch
        ));
    }
    let elapsed = t0.elapsed();
    let detail = format!(
        "{passed}/5 seeds in {:.0}s [{}]",
        elapsed.as_secs_f64(),
        lines.join("; ")
    );
    if passed >= 4 && elapsed < Duration::from_secs(3600) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 6. Ablations through the command layer.
fn ablations() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut cfg = RunConfig::default();
    for a in [
        "phantom_dims=16x16x16",
        "subjects=10",
        "input_shape=16x16x16",
        "levels=3",
        "base_channels=2",
        "epochs=3",
        "batch_size=3",
        "split_ratios=0.6,0.2,0.2",
    ] {
        cfg.set_assignment(a).map_err(|e| e.to_string())?;
    }
    cfg.data_dir = d.join("data");
    commands::synth_data(&cfg).map_err(|e| e.to_string())?;

    let mut no_pet = cfg.clone();
    no_pet.model.use_pet_head = false;
    no_pet.out_dir = d.join("nopet");
    commands::train(&no_pet, |_| {}).map_err(|e| e.to_string())?;
    let log = fs::read_to_string(d.join("nopet/epoch_log.csv")).map_err(|e| e.to_string())?;
    for row in log.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        check(f[1] == f[4], || format!("ce {} but total {}", f[1], f[4]))?;
    }

    let mut no_att = cfg.clone();
    no_att.model.use_attention = false;
    no_att.out_dir = d.join("noatt");
    commands::train(&no_att, |_| {}).map_err(|e| e.to_string())?;
    let description = fs::read_to_string(d.join("noatt/model.txt")).map_err(|e| e.to_string())?;
    check(
        description.lines().any(|l| l == "attention parameters 0"),
        || description.clone(),
    )?;
    let err = commands::export_attention(
        &d.join("noatt/best.ckpt"),
        &d.join("data/mri/sub-0000_ses-00.raw"),
        &d.join("maps"),
        "all",
    )
    .err()
    .ok_or("export succeeded without attention gates")?;
    check(err.kind.code() == 8, || {
        format!("export failed with exit code {}: {err}", err.kind.code())
    })?;
    Ok(format!(
        "{} epochs with total == ce bitwise; 0 attention parameters; export exits 8",
        log.lines().count() - 1
    ))
}

// 7. Masked L1 on a mixed batch equals the paired subset.
fn l1_of(pred: &Tensor<f32>, target: &Tensor<f32>, mask: &[bool]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let t = tape.constant(target.clone());
    let (v, _) = masked_l1(&mut tape, p, t, mask).unwrap();
    tape.value(v).data()[0] as f64
}

fn masked_l1_contract() -> Outcome {
    let dims = [16; 3];
    let pc = PhantomConfig {
        dims,
        subjects: 12,
        paired_fraction: 0.5,
        seed: 3,
        ..PhantomConfig::default()
    };
    let samples = phantom_samples(&pc, dims).map_err(|e| e.to_string())?;
    let model =
        UPetModel::<f32>::build(UPetConfig::new(3, 2, dims), 3).map_err(|e| e.to_string())?;
    let pet_of = |idx: &[usize]| {
        let batch = stack_batch(&samples, idx, dims);
        let mut tape = Tape::new();
        let x = tape.constant(batch.mri.clone());
        let out = model.forward(&mut tape, x, false).unwrap();
        (tape.value(out.pet_pred.unwrap()).clone(), batch)
    };
    let all: Vec<usize> = (0..samples.len()).collect();
    let paired: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&i| samples[i].pet.is_some())
        .collect();
    check(paired.len() > 0 && paired.len() < all.len(), || {
        "batch is not mixed".into()
    })?;
    let (pred, batch) = pet_of(&all);
    let mixed = l1_of(&pred, &batch.pet, &batch.pet_mask);
    let (pred_p, batch_p) = pet_of(&paired);
    let subset = l1_of(&pred_p, &batch_p.pet, &batch_p.pet_mask);
    check((mixed - subset).abs() <= 1e-6, || {
        format!("mixed {mixed} vs subset {subset}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = (mixed - subset).abs();
    for _ in 0..100 {
        let n = rng.gen_range(2..9);
        let vox = 64;
        let pred = rand_tensor(&mut rng, &[n, 1, 4, 4, 4], -1.0, 2.0);
        let target = rand_tensor(&mut rng, &[n, 1, 4, 4, 4], 0.0, 1.0);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        mask[rng.gen_range(0..n)] = true;
        let keep: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        let pick = |t: &Tensor<f32>| {
            let data = keep
                .iter()
                .flat_map(|&i| t.data()[i * vox..(i + 1) * vox].to_vec())
                .collect();
            Tensor::new(&[keep.len(), 1, 4, 4, 4], data).unwrap()
        };
        let a = l1_of(&pred, &target, &mask);
        let b = l1_of(&pick(&pred), &pick(&target), &vec![true; keep.len()]);
        worst = worst.max((a - b).abs());
        check((a - b).abs() <= 1e-6, || format!("mixed {a} vs subset {b}"))?;
    }
    Ok(format!(
        "model batch of {} with {} paired and 100 random batches; max difference {worst:.1e}",
        all.len(),
        paired.len()
    ))
}

// 8. Determinism and checkpoint round trip.
fn determinism() -> Outcome {
    let dims = [16; 3];
    let pc = PhantomConfig {
        dims,
        subjects: 12,
        seed: 8,
        ..PhantomConfig::default()
    };
    let samples = phantom_samples(&pc, dims).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        lr: 1e-3,
        seed: 8,
        eval_every: 1,
    };
    let train_once = || {
        let mut model = UPetModel::<f32>::build(UPetConfig::new(3, 4, dims), 8).unwrap();
        let out = train_samples(&mut model, &samples, &samples, &cfg).unwrap();
        (model, out)
    };
    let (model, a) = train_once();
    let (_, b) = train_once();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let log_bits = |o: &upet::training::TrainOutcome| {
        let e = &o.log[0];
        bits(&[e.ce, e.l1_main, e.l1_aux_sum, e.total])
    };
    check(log_bits(&a) == log_bits(&b), || {
        "epoch-1 losses differ".into()
    })?;
    check(bits(&a.step_losses) == bits(&b.step_losses), || {
        "step losses differ".into()
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("last.ckpt");
    save_checkpoint(&a.last, &path).map_err(|e| e.to_string())?;
    let restored = load_checkpoint(&path)
        .and_then(|c| c.to_model())
        .map_err(|e| e.to_string())?;
    let forward = |m: &UPetModel<f32>| {
        let batch = stack_batch(&samples, &[0, 1, 2], dims);
        let mut tape = Tape::new();
        let x = tape.constant(batch.mri.clone());
        let out = m.forward(&mut tape, x, false).unwrap();
        let mut v: Vec<u32> = tape
            .value(out.class_logits)
            .data()
            .iter()
            .map(|x| x.to_bits())
            .collect();
        v.extend(
            tape.value(out.pet_pred.unwrap())
                .data()
                .iter()
                .map(|x| x.to_bits()),
        );
        v
    };
    check(forward(&model) == forward(&restored), || {
        "restored forward differs".into()
    })?;
    Ok(format!(
        "epoch-1 total {} reproduced bitwise; checkpoint forward bitwise",
        a.log[0].total
    ))
}

// 9. Subject-level split hygiene.
fn split_hygiene() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for case in 0..1000 {
        let subjects = rng.gen_range(3..80);
        let ids: Vec<String> = (0..subjects)
            .flat_map(|s| vec![format!("sub-{s:03}"); rng.gen_range(1..4)])
            .collect();
        let w: [f64; 3] = [
            rng.gen_range(0.05..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        let sum: f64 = w.iter().sum();
        let ratios = [w[0] / sum, w[1] / sum, 1.0 - w[0] / sum - w[1] / sum];
        let seed = rng.gen();
        let split =
            subject_level_split(&ids, ratios, seed).map_err(|e| format!("instance {case}: {e}"))?;
        let unique: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for part in split.sets() {
            for id in part {
                check(seen.insert(id.as_str()), || {
                    format!("instance {case}: {id} assigned twice")
                })?;
            }
        }
        check(seen == unique, || {
            format!("instance {case}: split does not cover every subject")
        })?;
        let again = subject_level_split(&ids, ratios, seed).unwrap();
        check(again == split, || {
            format!("instance {case}: split not deterministic")
        })?;
    }
    Ok("1000 instances disjoint, covering and deterministic".into())
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradients),
        (2, "attention gate oracle", gate_oracle),
        (3, "metric oracles", metric_oracles),
        (4, "overfitting", overfit),
        (5, "generalization", generalization),
        (6, "ablation contract", ablations),
        (7, "masked multi-task loss", masked_l1_contract),
        (8, "determinism and persistence", determinism),
        (9, "data hygiene", split_hygiene),
    ];
    let only: Option<Vec<usize>> = std::env::var("UPET_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
