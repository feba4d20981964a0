use std::path::Path;

use crate::data::{images_to_tensor, PatchRecord};
use crate::error::{Error, Result};
use crate::mask::{binarize_batch, BinaryMask};
use crate::metrics::{boundary_iou, dice_score, iou_score, Summary, DEFAULT_BOUNDARY_DISTANCE};
use crate::segresnet::Model;

const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct RecordMetrics {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub boundary_iou: f64,
}

/// Per-record scores with their mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<RecordMetrics>,
    pub dice: Summary,
    pub iou: Summary,
    pub boundary_iou: Summary,
}

impl MetricsReport {
    /// Scores `(id, prediction, truth)` triples.
    pub fn from_masks<'a>(items: impl IntoIterator<Item = (String, &'a BinaryMask, &'a BinaryMask)>) -> Result<Self> {
        let rows = items
            .into_iter()
            .map(|(id, pred, truth)| {
                Ok(RecordMetrics {
                    id,
                    dice: dice_score(pred, truth)?,
                    iou: iou_score(pred, truth)?,
                    boundary_iou: boundary_iou(pred, truth, DEFAULT_BOUNDARY_DISTANCE)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let col = |f: fn(&RecordMetrics) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
        Ok(MetricsReport {
            dice: col(|r| r.dice),
            iou: col(|r| r.iou),
            boundary_iou: col(|r| r.boundary_iou),
            rows,
        })
    }

    /// CSV `id,dice,iou,boundary_iou`: one row per record, then `mean` and
    /// `std` summary rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| Error::io(path, e.into());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["id", "dice", "iou", "boundary_iou"]).map_err(err)?;
        let fmt = |v: f64| format!("{v:.6}");
        for r in &self.rows {
            w.write_record([r.id.clone(), fmt(r.dice), fmt(r.iou), fmt(r.boundary_iou)])
                .map_err(err)?;
        }
        w.write_record([
            "mean".into(),
            fmt(self.dice.mean),
            fmt(self.iou.mean),
            fmt(self.boundary_iou.mean),
        ])
        .map_err(err)?;
        w.write_record([
            "std".into(),
            fmt(self.dice.std),
            fmt(self.iou.std),
            fmt(self.boundary_iou.std),
        ])
        .map_err(err)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Scores the model's binarized predictions against every record's mask.
pub fn evaluate_dataset(model: &Model, records: &[PatchRecord]) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(records.len());
    for chunk in records.chunks(EVAL_BATCH) {
        let prob = model.predict(&images_to_tensor(chunk.iter().map(|r| &r.image))?)?;
        preds.extend(binarize_batch(&prob, 0.5)?);
    }
    MetricsReport::from_masks(
        records
            .iter()
            .zip(&preds)
            .map(|(r, p)| (format!("{}_{}_{}", r.source_id, r.grid_pos.0, r.grid_pos.1), p, &r.mask)),
    )
}
