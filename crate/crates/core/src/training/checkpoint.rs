use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::corpus::Schema;
use crate::error::{Error, Result};
use crate::model::MiscaModel;
use crate::numerics::Matrix;

pub const FORMAT: &str = "misca-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix,
}

/// A self-describing JSON container: config, label/vocab schema, selection
/// metadata and every parameter by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    /// 1-based epoch the parameters were taken from.
    pub epoch: usize,
    pub val_overall_accuracy: f64,
    pub schema: Schema,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(model: &MiscaModel, config: &TrainConfig, epoch: usize, val_overall_accuracy: f64) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            config: config.clone(),
            epoch,
            val_overall_accuracy,
            schema: model.schema.clone(),
            tensors: model
                .store
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.clone(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint format `{}`",
                path.display(),
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    /// Copies the tensors into `model`. Names, order and shapes must agree;
    /// the first disagreement is reported.
    pub fn restore_into(&self, model: &mut MiscaModel) -> Result<()> {
        let params: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape())).collect();
        for (i, (id, name, shape)) in params.iter().enumerate() {
            let Some(t) = self.tensors.get(i) else {
                return Err(Error::CheckpointMismatch {
                    name: name.clone(),
                    message: "missing from checkpoint".into(),
                });
            };
            if &t.name != name {
                return Err(Error::CheckpointMismatch {
                    name: name.clone(),
                    message: format!("checkpoint has `{}` in this position", t.name),
                });
            }
            if t.value.shape() != *shape {
                return Err(Error::CheckpointMismatch {
                    name: name.clone(),
                    message: format!("shape {:?} in checkpoint, {:?} in model", t.value.shape(), shape),
                });
            }
            *model.store.value_mut(*id) = t.value.clone();
        }
        if let Some(extra) = self.tensors.get(params.len()) {
            return Err(Error::CheckpointMismatch {
                name: extra.name.clone(),
                message: "not present in model".into(),
            });
        }
        Ok(())
    }

    /// Rebuilds the model described by the stored config and schema.
    pub fn to_model(&self) -> Result<MiscaModel> {
        let mut model = MiscaModel::new(
            self.schema.clone(),
            self.config.model_dims()?,
            self.config.ablation,
            self.config.seed,
        )?;
        self.restore_into(&mut model)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, Dims};
    use crate::synthetic::toy_schema;

    fn model(ablation: Ablation, seed: u64) -> MiscaModel {
        MiscaModel::new(toy_schema(2), Dims::tiny(), ablation, seed).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            dims: "tiny".into(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let m = model(Ablation::Full, 3);
        let ckpt = Checkpoint::capture(&m, &config(), 4, 0.75);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let mut other = model(Ablation::Full, 9);
        back.restore_into(&mut other).unwrap();
        for ((_, a), (_, b)) in m.store.iter().zip(other.store.iter()) {
            let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{}", a.name);
        }
    }

    #[test]
    fn architecture_mismatch_names_the_tensor() {
        let ckpt = Checkpoint::capture(&model(Ablation::Full, 1), &config(), 1, 0.0);
        let mut other = model(Ablation::NoCoattention, 1);
        match ckpt.restore_into(&mut other) {
            Err(Error::CheckpointMismatch { name, .. }) => assert!(!name.is_empty()),
            other => panic!("expected a mismatch, got {:?}", other.err()),
        }
        let mut wider = MiscaModel::new(
            toy_schema(2),
            Dims {
                word_dim: 9,
                ..Dims::tiny()
            },
            Ablation::Full,
            1,
        )
        .unwrap();
        match ckpt.restore_into(&mut wider) {
            Err(Error::CheckpointMismatch { name, message }) => {
                assert!(name.contains("word"), "{name}");
                assert!(message.contains("shape"), "{message}");
            }
            other => panic!("expected a mismatch, got {:?}", other.err()),
        }
    }

    #[test]
    fn foreign_format_is_rejected() {
        let mut ckpt = Checkpoint::capture(&model(Ablation::Full, 1), &config(), 1, 0.0);
        ckpt.format = "something-else".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Config(_))));
    }
}
