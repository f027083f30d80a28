use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use upet::data::{
    generate_phantom_dataset, read_manifest, read_volume, stack_batch, subject_level_split,
    write_volume, Diagnosis, Manifest, Modality, Sample, SplitSpec, Volume,
};
use upet::model::{MapSelector, UPetModel};
use upet::training::{
    evaluate, load_checkpoint, load_split_samples, save_checkpoint, train_samples_with,
    write_epoch_log, EpochLog,
};
use upet::verify::{format_suite, run_gradient_suite, Fault};
use upet::{Tape, Tensor};

use crate::config::RunConfig;
use crate::error::{CliError, Kind, Result};
use crate::pgm::{write_mid_slices, Window};

pub const MANIFEST: &str = "manifest.csv";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn manifest_in(dir: &Path) -> Result<Manifest> {
    Ok(read_manifest(&dir.join(MANIFEST))?)
}

fn split_of(cfg: &RunConfig, manifest: &Manifest) -> Result<SplitSpec> {
    subject_level_split(&manifest.subject_ids(), cfg.split_ratios, cfg.split_seed).map_err(|e| {
        match e {
            upet::data::DataError::Invalid(m) => CliError::config(m),
            other => other.into(),
        }
    })
}

pub fn synth_data(cfg: &RunConfig) -> Result<String> {
    cfg.phantom
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    let m = generate_phantom_dataset(&cfg.phantom, &cfg.data_dir)?;
    let paired = m.records.iter().filter(|r| r.is_paired()).count();
    Ok(format!(
        "wrote {} studies ({} with PET) to {}\n",
        m.records.len(),
        paired,
        cfg.data_dir.join(MANIFEST).display()
    ))
}

fn epoch_line(e: &EpochLog, epochs: usize) -> String {
    let mut s = format!(
        "epoch {}/{epochs} total {:.6} ce {:.6} l1_main {:.6} l1_aux_sum {:.6}",
        e.epoch, e.total, e.ce, e.l1_main, e.l1_aux_sum
    );
    if let Some(r) = &e.val {
        let _ = write!(
            s,
            " val_accuracy {:.4} val_f1_macro {:.4}",
            r.accuracy, r.f1_macro
        );
        if let Some(mae) = r.mae {
            let _ = write!(s, " val_mae {mae:.5}");
        }
    }
    s
}

fn splits_csv(split: &SplitSpec) -> String {
    let mut s = String::from("subject_id,split\n");
    for (name, ids) in ["train", "val", "test"].into_iter().zip(split.sets()) {
        for id in ids {
            let _ = writeln!(s, "{id},{name}");
        }
    }
    s
}

/// Trains and writes `best.ckpt`, `last.ckpt`, `epoch_log.csv`, `model.txt`,
/// `splits.csv` and the resolved `config.txt` below `out_dir`.
pub fn train(cfg: &RunConfig, mut progress: impl FnMut(&str)) -> Result<String> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let manifest = manifest_in(&cfg.data_dir)?;
    manifest.validate()?;
    let split = split_of(cfg, &manifest)?;
    let mut model = UPetModel::<f32>::build(cfg.model.clone(), cfg.init_seed)?;
    let description = model.describe();
    progress(description.trim_end());
    let (train, val) = load_split_samples(&manifest, &split, &cfg.model)?;
    progress(&format!(
        "train {} samples, validation {} samples",
        train.len(),
        val.len()
    ));

    let epochs = cfg.train.epochs;
    let out = train_samples_with(&mut model, &train, &val, &cfg.train, |e| {
        progress(&epoch_line(e, epochs))
    })?;

    let dir = &cfg.out_dir;
    create_dir(dir)?;
    save_checkpoint(&out.best, &dir.join("best.ckpt"))?;
    save_checkpoint(&out.last, &dir.join("last.ckpt"))?;
    write_epoch_log(&out.log, &dir.join("epoch_log.csv"))?;
    write_text(&dir.join("model.txt"), &description)?;
    write_text(&dir.join("splits.csv"), &splits_csv(&split))?;
    write_text(&dir.join("config.txt"), &cfg.render())?;
    Ok(format!(
        "best epoch {} val_f1_macro {:.4}; outputs in {}\n",
        out.best.epoch,
        out.best.report.f1_macro,
        dir.display()
    ))
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, split_name: &str) -> Result<String> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.to_model()?;
    let manifest = manifest_in(&cfg.data_dir)?;
    let records = if split_name == "all" {
        manifest.records.clone()
    } else {
        let split = split_of(cfg, &manifest)?;
        let ids = split.by_name(split_name).ok_or_else(|| {
            CliError::config(format!(
                "unknown split {split_name:?} (train, val, test or all)"
            ))
        })?;
        manifest.select(ids)
    };
    if records.is_empty() {
        return Err(CliError::new(
            Kind::Data,
            format!("the {split_name} split contains no samples"),
        ));
    }
    let samples = upet::data::load_samples(&manifest, &records, model.config().input_shape)?;
    let eval = evaluate(&model, &samples, cfg.train.batch_size)?;
    let mut s = format!("split = {split_name}\n");
    for (k, v) in eval.report.entries() {
        let _ = writeln!(s, "{k} = {v}");
    }
    Ok(s)
}

fn load_input(model: &UPetModel<f32>, mri: &Path) -> Result<(Sample, Volume)> {
    let volume = read_volume(mri)?;
    if volume.modality() != Modality::Mri {
        return Err(CliError::new(
            Kind::Input,
            format!(
                "{}: expected an MRI volume, got {:?}",
                mri.display(),
                volume.modality()
            ),
        ));
    }
    let dims = model.config().input_shape;
    let sample = Sample::from_volumes("input", "input", Diagnosis::Cn, &volume, None, dims);
    let preprocessed = Volume::new(dims, Modality::Mri, sample.mri.clone())?;
    Ok((sample, preprocessed))
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let e: Vec<f64> = logits.iter().map(|&v| (v as f64 - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn volume_of(t: &Tensor<f32>, dims: [usize; 3], modality: Modality) -> Result<Volume> {
    Ok(Volume::new(dims, modality, t.data().to_vec())?)
}

pub fn predict(checkpoint: &Path, mri: &Path, out: Option<&Path>) -> Result<String> {
    let model = load_checkpoint(checkpoint)?.to_model()?;
    let (sample, _) = load_input(&model, mri)?;
    let dims = model.config().input_shape;
    let batch = stack_batch(std::slice::from_ref(&sample), &[0], dims);
    let mut tape = Tape::new();
    let x = tape.constant(batch.mri.clone());
    let outputs = model.forward(&mut tape, x, false)?;
    let probs = softmax(tape.value(outputs.class_logits).data());
    let best = (0..probs.len())
        .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
        .expect("three classes");
    let label = Diagnosis::from_index(best).expect("class index");

    let mut s = format!("prediction = {label}\n");
    for d in Diagnosis::ALL {
        let _ = writeln!(s, "p_{} = {}", d.as_str().to_lowercase(), probs[d.index()]);
    }
    match (outputs.pet_pred, out) {
        (Some(pet), Some(path)) => {
            let vol = volume_of(tape.value(pet), dims, Modality::Pet)?.with_tag("synthetic-pet");
            write_volume(&vol, path)?;
            let _ = writeln!(s, "pet = {}", path.display());
        }
        (None, Some(_)) => {
            return Err(CliError::config(
                "this checkpoint has no PET head; drop --out",
            ));
        }
        _ => {}
    }
    Ok(s)
}

/// Writes each selected attention map as a volume plus three mid-slice
/// images, together with the preprocessed input and, when present, the
/// synthetic PET.
pub fn export_attention(
    checkpoint: &Path,
    mri: &Path,
    out_dir: &Path,
    gates: &str,
) -> Result<String> {
    let model = load_checkpoint(checkpoint)?.to_model()?;
    if !model.config().use_attention {
        return Err(upet::model::ModelError::NoAttention.into());
    }
    let selector: MapSelector = gates.parse()?;
    let (sample, input) = load_input(&model, mri)?;
    let dims = model.config().input_shape;
    let batch = stack_batch(std::slice::from_ref(&sample), &[0], dims);
    let mut tape = Tape::new();
    let x = tape.constant(batch.mri.clone());
    let outputs = model.forward(&mut tape, x, false)?;
    let maps = model.export_attention_maps(&tape, &outputs, &selector)?;

    create_dir(out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    write_volume(&input, &out_dir.join("input_mri.raw"))?;
    written.extend(write_mid_slices(
        &input,
        out_dir,
        "input_mri",
        Window::MinMax,
    )?);
    if let Some(pet) = outputs.pet_pred {
        let vol = volume_of(tape.value(pet), dims, Modality::Pet)?.with_tag("synthetic-pet");
        write_volume(&vol, &out_dir.join("synthetic_pet.raw"))?;
        written.extend(write_mid_slices(
            &vol,
            out_dir,
            "synthetic_pet",
            Window::MinMax,
        )?);
    }
    for map in &maps {
        let tag = map.tag().unwrap_or("attention");
        let stem = format!("attention_{tag}");
        write_volume(map, &out_dir.join(format!("{stem}.raw")))?;
        written.extend(write_mid_slices(
            map,
            out_dir,
            &stem,
            Window::Fixed(0.0, 1.0),
        )?);
    }
    let tags: Vec<&str> = maps.iter().filter_map(|m| m.tag()).collect();
    Ok(format!(
        "exported {} attention maps ({}) and {} images to {}\n",
        maps.len(),
        tags.join(", "),
        written.len(),
        out_dir.display()
    ))
}

/// Returns the table and whether every entry passed.
pub fn grad_check(bits: u32, fault: Option<Fault>) -> Result<(String, bool)> {
    let rows = if bits == 64 {
        run_gradient_suite::<f64>(fault)?
    } else {
        run_gradient_suite::<f32>(fault)?
    };
    let failed = rows.iter().filter(|r| !r.passed).count();
    let mut table = format_suite(&rows);
    if failed == 0 {
        let _ = writeln!(table, "all {} entries passed", rows.len());
    } else {
        let _ = writeln!(table, "{failed} of {} entries failed", rows.len());
    }
    Ok((table, failed == 0))
}
