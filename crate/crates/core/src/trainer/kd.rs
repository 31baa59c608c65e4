use crate::data::{TeacherRepSet, Utterance};
use crate::distill::{concat_representations, ComponentKey, LayerRef, ObjectiveConfig};
use crate::error::{Error, Result};
use crate::strategies::{
    mean_pool_layers, sample_context_variant, select_layers, ContextVariantPolicy, StrategyKind, StrategySpec,
};
use crate::tensor::Matrix;

/// One teacher and the layer strategy applied to it.
#[derive(Debug, Clone)]
pub struct TeacherBinding {
    pub reps: TeacherRepSet,
    pub strategy: StrategySpec,
}

/// Everything iteration 2 needs besides the corpus and the frozen posteriors.
#[derive(Debug, Clone)]
pub struct KdSetup {
    pub objective: ObjectiveConfig,
    pub teachers: Vec<TeacherBinding>,
    /// `variants` is capped by every teacher's exported variant count.
    pub context: ContextVariantPolicy,
}

impl KdSetup {
    pub fn validate(&self, train: &[Utterance]) -> Result<()> {
        if self.teachers.is_empty() {
            return Err(Error::config("distillation needs at least one teacher"));
        }
        self.context.validate()?;
        for t in &self.teachers {
            t.strategy.validate()?;
            if t.strategy.total_layers != t.reps.layers {
                return Err(Error::Consistency(format!(
                    "strategy expects {} layers, teacher {} has {}",
                    t.strategy.total_layers, t.reps.teacher, t.reps.layers
                )));
            }
            t.reps.check_tokens(train.iter().map(|u| (u.id.as_str(), u.tokens.len())))?;
        }
        Ok(())
    }

    /// Variant count actually sampled from.
    pub fn variants(&self) -> u32 {
        self.teachers
            .iter()
            .map(|t| t.reps.variants)
            .fold(self.context.variants, u32::min)
    }

    fn layer_refs(&self, t: &TeacherBinding, epoch: u64) -> Result<Vec<LayerRef>> {
        Ok(match t.strategy.kind {
            StrategyKind::MeanPool => vec![LayerRef::MeanPool],
            _ => select_layers(&t.strategy, epoch)?
                .into_iter()
                .map(LayerRef::Index)
                .collect(),
        })
    }

    /// Width of the concatenated target.
    pub fn target_dim(&self) -> Result<usize> {
        let mut dim = 0;
        for t in &self.teachers {
            dim += self.layer_refs(t, 0)?.len() * t.reps.dim as usize;
        }
        Ok(dim)
    }

    /// Layers scheduled for `epoch`, per teacher.
    pub fn schedule(&self, epoch: u64) -> Result<Vec<Vec<LayerRef>>> {
        self.teachers.iter().map(|t| self.layer_refs(t, epoch)).collect()
    }

    /// Concatenated teacher target for one utterance.
    pub fn target(&self, utt: &str, epoch: u64, schedule: &[Vec<LayerRef>]) -> Result<Matrix<f32>> {
        let policy = ContextVariantPolicy {
            variants: self.variants(),
            ..self.context
        };
        let variant = sample_context_variant(&policy, utt, epoch);
        let mut parts = Vec::new();
        for (t, layers) in self.teachers.iter().zip(schedule) {
            for &layer in layers {
                let m = match layer {
                    LayerRef::Index(l) => t.reps.matrix(utt, variant, l)?,
                    LayerRef::MeanPool => {
                        let all = (1..=t.reps.layers)
                            .map(|l| t.reps.matrix(utt, variant, l))
                            .collect::<Result<Vec<_>>>()?;
                        mean_pool_layers(&all.iter().collect::<Vec<_>>())?
                    }
                };
                parts.push((
                    ComponentKey {
                        model: t.reps.teacher.clone(),
                        variant,
                        layer,
                    },
                    m,
                ));
            }
        }
        Ok(concat_representations(parts)?.values)
    }
}
