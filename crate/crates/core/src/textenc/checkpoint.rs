use serde::{Deserialize, Serialize};

use super::model::{ClassifierModel, EncoderConfig};
use super::vocab::Vocabulary;
use crate::artifact::{Provenance, FORMAT_VERSION};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One named parameter array, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk model document. Field order is the serialized order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub provenance: Provenance,
    pub encoder_config: EncoderConfig,
    pub vocabulary: Vocabulary,
    pub parameters: Vec<ParamBlock>,
}

impl ModelCheckpoint {
    pub fn new(model: &ClassifierModel, vocabulary: &Vocabulary, provenance: Provenance) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            provenance,
            encoder_config: model.config().clone(),
            vocabulary: vocabulary.clone(),
            parameters: model
                .params()
                .iter()
                .map(|p| ParamBlock {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    values: p.tensor.values().to_vec(),
                })
                .collect(),
        }
    }

    /// Validates version, vocabulary size and every block shape.
    pub fn into_model(self) -> Result<(ClassifierModel, Vocabulary)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.vocabulary.len() != self.encoder_config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, config says {}",
                self.vocabulary.len(),
                self.encoder_config.vocab_size
            )));
        }
        let tensors = self
            .parameters
            .into_iter()
            .map(|b| {
                let t = Tensor::new(b.shape, b.values)
                    .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", b.name)))?;
                Ok((b.name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = ClassifierModel::from_params(self.encoder_config, tensors)?;
        Ok((model, self.vocabulary))
    }
}
