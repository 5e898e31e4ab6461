use super::metrics::{memorization_rate, selection_metrics};
use super::record::{EpochMetrics, GmmSummary};
use crate::data::DatasetSplit;
use crate::error::Result;
use crate::model::Model;

/// Evaluation side of a run. It sees clean labels and corruption flags;
/// trainers hand it a model and get metrics back, nothing flows the other
/// way.
pub struct Monitor<'a> {
    train: &'a DatasetSplit,
    test: &'a DatasetSplit,
    batch_size: usize,
}

impl<'a> Monitor<'a> {
    pub fn new(train: &'a DatasetSplit, test: &'a DatasetSplit) -> Self {
        Monitor {
            train,
            test,
            batch_size: 256,
        }
    }

    pub fn test_accuracy(&self, model: &mut Model) -> f64 {
        let pred = model.predict(&self.test.pixels(), self.batch_size);
        accuracy(&pred, &self.test.clean_labels())
    }

    pub fn evaluate(
        &self,
        model: &mut Model,
        epoch: usize,
        selection: Option<&[bool]>,
        gmm: Option<GmmSummary>,
    ) -> Result<EpochMetrics> {
        let pred = model.predict(&self.train.pixels(), self.batch_size);
        let mem = memorization_rate(&pred, self.train.records())?;
        let sel = selection
            .map(|m| selection_metrics(m, self.train.records(), self.train.num_classes()))
            .transpose()?;
        Ok(EpochMetrics {
            epoch,
            train_acc_observed: accuracy(&pred, &self.train.observed_labels()),
            test_acc: self.test_accuracy(model),
            memorization_rate: mem.rate,
            selected_count: sel.as_ref().map(|s| s.selected_count),
            selection_precision: sel.as_ref().and_then(|s| s.precision),
            selection_recall: sel.as_ref().and_then(|s| s.recall),
            per_class_selected: sel.map(|s| s.per_class_selected),
            gmm,
            corrupted_clean_acc: mem.clean_rate,
            peer_test_acc: None,
            ensemble_test_acc: None,
        })
    }

    /// Metrics of network A plus the peer's and the ensemble's test
    /// accuracy.
    pub fn evaluate_pair(
        &self,
        model_a: &mut Model,
        model_b: &mut Model,
        epoch: usize,
        selection: Option<&[bool]>,
        gmm: Option<GmmSummary>,
    ) -> Result<EpochMetrics> {
        let mut m = self.evaluate(model_a, epoch, selection, gmm)?;
        let test = self.test.pixels();
        let labels = self.test.clean_labels();
        let prob_a = model_a.predict_proba(&test, self.batch_size);
        let prob_b = model_b.predict_proba(&test, self.batch_size);
        m.peer_test_acc = Some(accuracy(&argmax(&prob_b), &labels));
        m.ensemble_test_acc = Some(accuracy(&argmax(&(prob_a + prob_b)), &labels));
        Ok(m)
    }
}

fn argmax(prob: &ndarray::Array2<f64>) -> Vec<usize> {
    crate::nn::loss::argmax_rows(prob.view())
}

pub(crate) fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}
