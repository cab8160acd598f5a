use serde::{Deserialize, Serialize};

use super::classifier::ClassifierModel;
use super::train::LabeledEmbedding;
use super::AudioError;
use crate::model::SceneClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: SceneClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: [[u64; 3]; 3],
    /// Classes without any true example; they contribute 0 to the macro averages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_support: Vec<SceneClass>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..3).map(|i| confusion[i][i]).sum();
        let mut per_class = Vec::with_capacity(3);
        let mut zero_support = Vec::new();
        for class in SceneClass::ALL {
            let c = class.index();
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = (0..3).map(|r| confusion[r][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            if support == 0 {
                zero_support.push(class);
            }
            let (precision, recall, f1) = if support == 0 { (0.0, 0.0, 0.0) } else { (precision, recall, f1) };
            per_class.push(ClassMetrics { class, precision, recall, f1, support });
        }
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
        Self {
            accuracy: ratio(trace, total),
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
            zero_support,
        }
    }

    /// `pairs` are (true, predicted).
    pub fn from_predictions(pairs: &[(SceneClass, SceneClass)]) -> Self {
        let mut confusion = [[0u64; 3]; 3];
        for (t, p) in pairs {
            confusion[t.index()][p.index()] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

pub fn evaluate(model: &ClassifierModel, data: &[LabeledEmbedding]) -> Result<EvalReport, AudioError> {
    if data.is_empty() {
        return Err(AudioError::InvalidConfig("evaluation set is empty".into()));
    }
    let pairs = data
        .iter()
        .map(|x| Ok((x.label, model.predict(&x.embedding)?.class)))
        .collect::<Result<Vec<_>, AudioError>>()?;
    Ok(EvalReport::from_predictions(&pairs))
}
