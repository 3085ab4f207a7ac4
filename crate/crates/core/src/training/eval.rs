use super::StegoSet;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::image::{from_unit_tensor, mae, QualityReport, RgbImage};
use crate::models::{ModelParams, NetKind};

const EVAL_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean: QualityReport,
    pub per_image: Vec<QualityReport>,
    pub predictions: Vec<RgbImage>,
}

/// Runs a generator or autoencoder over `inputs` and converts to images.
pub fn predict(model: &ModelParams, inputs: &[Tensor]) -> Result<Vec<RgbImage>> {
    if !matches!(model.kind(), NetKind::Generator | NetKind::Autoencoder) {
        return Err(Error::validation(format!("{} cannot translate images", model.name())));
    }
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let b = model.bind_frozen(&tape)?;
        let y = b.translate(tape.constant(&Tensor::stack(chunk)?)?)?.value();
        for t in y.unstack() {
            out.push(from_unit_tensor(&t)?);
        }
    }
    Ok(out)
}

/// Scores predictions on encoded inputs against the decoded targets.
pub fn evaluate(model: &ModelParams, set: &StegoSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty split"));
    }
    let predictions = predict(model, set.inputs())?;
    let per_image = predictions
        .iter()
        .zip(set.decoded())
        .map(|(p, t)| QualityReport::compare(p, t))
        .collect::<Result<Vec<_>>>()?;
    let mean = QualityReport::average(&per_image).expect("non-empty");
    Ok(Evaluation {
        mean,
        per_image,
        predictions,
    })
}

/// Mean pairwise MAE among a model's own predictions; 0 for a constant
/// output or fewer than two images.
pub fn diversity(predictions: &[RgbImage]) -> Result<f64> {
    let n = predictions.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += mae(&predictions[i], &predictions[j])?;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}
