use crate::model::{ModelError, ModelOutputs, UPetConfig};
use crate::tensor::{Scalar, Tape, TensorError, Var};

/// Batch mean of `−log softmax(logits)[label]` on the tape.
pub fn cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
) -> Result<Var, TensorError> {
    tape.cross_entropy(logits, labels)
}

/// Voxel-averaged L1 over masked-in samples, plus the number of such samples.
pub fn masked_l1<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
    mask: &[bool],
) -> Result<(Var, usize), TensorError> {
    let v = tape.masked_l1(pred, target, mask)?;
    Ok((v, mask.iter().filter(|&&m| m).count()))
}

/// Loss component values, read back from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub l1_main: f64,
    /// `(decoder level, unweighted L1)` per auxiliary output.
    pub l1_aux: Vec<(usize, f64)>,
    pub total: f64,
    pub paired_count: usize,
}

impl LossBreakdown {
    /// `Σ_ℓ w_ℓ · l1_aux[ℓ]` with the configured weights.
    pub fn weighted_aux(&self, config: &UPetConfig) -> f64 {
        self.l1_aux
            .iter()
            .map(|(l, v)| config.deep_supervision_weights[l - 1] * v)
            .sum()
    }
}

/// Tape handles of the loss graph.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub l1_main: Option<Var>,
    pub l1_aux: Vec<(usize, Var)>,
    pub breakdown: LossBreakdown,
}

/// `total = ce + λ · (l1_main + Σ_ℓ w_ℓ · l1_aux[ℓ])`.
///
/// Cross-entropy uses the aggregated logits. Auxiliary targets are the PET
/// targets average-pooled to each auxiliary resolution. When the model has no
/// PET head, `λ = 0`, or no sample in the batch is paired, the returned total
/// *is* the cross-entropy node.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    outputs: &ModelOutputs,
    labels: &[usize],
    pet_targets: Option<Var>,
    pet_mask: &[bool],
    config: &UPetConfig,
) -> Result<LossTerms, ModelError> {
    let ce = tape.cross_entropy(outputs.class_logits, labels)?;
    let ce_value = tape.value(ce).item()?.to_f64_lossy();
    let paired = pet_mask.iter().filter(|&&m| m).count();
    let mut terms = LossTerms {
        total: ce,
        ce,
        l1_main: None,
        l1_aux: Vec::new(),
        breakdown: LossBreakdown {
            ce: ce_value,
            l1_main: 0.0,
            l1_aux: Vec::new(),
            total: ce_value,
            paired_count: 0,
        },
    };
    let Some(pred) = outputs.pet_pred else {
        return Ok(terms);
    };
    if pet_mask.len() != labels.len() {
        return Err(ModelError::Config(format!(
            "PET mask has {} entries for a batch of {}",
            pet_mask.len(),
            labels.len()
        )));
    }
    let target = match pet_targets {
        Some(t) => t,
        None if paired > 0 => {
            return Err(ModelError::Config(
                "PET mask marks paired samples but no PET targets were supplied".into(),
            ))
        }
        None => return Ok(terms),
    };
    terms.breakdown.paired_count = paired;
    if paired == 0 {
        return Ok(terms);
    }

    let l1 = tape.masked_l1(pred, target, pet_mask)?;
    terms.l1_main = Some(l1);
    terms.breakdown.l1_main = tape.value(l1).item()?.to_f64_lossy();
    let mut l1_sum = l1;
    for &(level, aux_pred) in &outputs.aux_pet_preds {
        let aux_target = tape.avgpool3d(target, 1 << level)?;
        let aux = tape.masked_l1(aux_pred, aux_target, pet_mask)?;
        terms.l1_aux.push((level, aux));
        terms
            .breakdown
            .l1_aux
            .push((level, tape.value(aux).item()?.to_f64_lossy()));
        let weighted = tape.scale(
            aux,
            T::from_f64_lossy(config.deep_supervision_weights[level - 1]),
        )?;
        l1_sum = tape.add(l1_sum, weighted)?;
    }
    if config.lambda_l1 == 0.0 {
        return Ok(terms);
    }
    let scaled = tape.scale(l1_sum, T::from_f64_lossy(config.lambda_l1))?;
    let total = tape.add(ce, scaled)?;
    terms.total = total;
    terms.breakdown.total = tape.value(total).item()?.to_f64_lossy();
    Ok(terms)
}
