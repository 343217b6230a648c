//! Confusion matrices over externally predicted emotion labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SER_CLASSES: [&str; 4] = ["anger", "happiness", "neutral", "sadness"];

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
}

pub fn ser_confusion<S: AsRef<str>>(true_labels: &[S], predicted: &[S], classes: &[&str]) -> Result<SerReport> {
    if true_labels.len() != predicted.len() {
        return Err(Error::Dimension {
            what: "predicted labels".into(),
            expected: true_labels.len(),
            actual: predicted.len(),
        });
    }
    if true_labels.is_empty() {
        return Err(Error::EmptyInput("no labels to score".into()));
    }
    let index = |l: &str| {
        classes.iter().position(|c| *c == l).ok_or_else(|| Error::UnknownLabel {
            label: l.to_string(),
            known: classes.iter().map(|c| c.to_string()).collect(),
        })
    };
    let k = classes.len();
    let mut counts = vec![vec![0; k]; k];
    for (t, p) in true_labels.iter().zip(predicted) {
        counts[index(t.as_ref())?][index(p.as_ref())?] += 1;
    }
    let confusion = ConfusionMatrix {
        labels: classes.iter().map(|c| c.to_string()).collect(),
        counts,
    };
    Ok(SerReport {
        accuracy: confusion.accuracy(),
        confusion,
    })
}
