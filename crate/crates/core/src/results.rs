//! Per-image attack summaries and their on-disk form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::ftz::{save_tensor, RawTensor};
use crate::metrics::{argmax_labels, miou, pix_acc};
use crate::oracle::BlackBoxOracle;
use crate::projections::clip_image;
use crate::tensor::{ImageShape, ImageTensor, LabelMap, NormKind, Perturbation};
use crate::whitebox::IterRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: String,
    pub norm: NormKind,
    pub eps: f64,
    pub pixacc_clean: f64,
    pub pixacc_attacked: f64,
    pub miou_clean: f64,
    pub miou_attacked: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub queries: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

impl AttackSummary {
    /// Pretty JSON with keys in lexicographic order.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("summary serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::error::Error::InvalidArgument(format!("bad summary: {e}")))
    }
}

/// Clean and attacked metrics of one image.
pub fn summarize<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    attack: &str,
    x: &ImageTensor,
    y: &LabelMap,
    delta: &Perturbation,
) -> Result<AttackSummary> {
    let k = oracle.num_classes();
    let clean = argmax_labels(&oracle.predict(x)?);
    let attacked = argmax_labels(&oracle.predict(&clip_image(x, delta.data())?)?);
    let truth = std::slice::from_ref(y);
    Ok(AttackSummary {
        attack: attack.to_string(),
        norm: delta.norm_kind(),
        eps: delta.budget(),
        pixacc_clean: pix_acc(std::slice::from_ref(&clean), truth)?,
        pixacc_attacked: pix_acc(std::slice::from_ref(&attacked), truth)?,
        miou_clean: miou(std::slice::from_ref(&clean), truth, k)?,
        miou_attacked: miou(std::slice::from_ref(&attacked), truth, k)?,
        l1: delta.size(NormKind::L1),
        l2: delta.size(NormKind::L2),
        linf: delta.size(NormKind::Linf),
        queries: 0,
        wall_ms: None,
    })
}

pub fn iter_trace_csv(trace: &[IterRecord]) -> String {
    let mut out = String::from("iter,loss,queries\n");
    for r in trace {
        out.push_str(&format!("{},{},{}\n", r.iter, r.loss, r.queries));
    }
    out
}

/// `δ` as an `[H, W, C]` tensor (payload rounded to `f32`).
pub fn perturbation_raw(delta: &Perturbation, shape: ImageShape) -> Result<RawTensor> {
    if delta.len() != shape.len() {
        return Err(shape_err(shape.len(), delta.len()));
    }
    RawTensor::new(
        vec![shape.height as u32, shape.width as u32, shape.channels as u32],
        delta.data().iter().map(|&v| v as f32).collect(),
    )
}

/// Writes `<stem>_delta.ftz`, `<stem>_trace.csv` and `<stem>_summary.json`.
pub fn write_attack_result(
    dir: impl AsRef<Path>,
    stem: &str,
    delta: &Perturbation,
    shape: ImageShape,
    trace_csv: &str,
    summary: &AttackSummary,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_tensor(dir.join(format!("{stem}_delta.ftz")), &perturbation_raw(delta, shape)?)?;
    fs::write(dir.join(format!("{stem}_trace.csv")), trace_csv)?;
    fs::write(dir.join(format!("{stem}_summary.json")), summary.to_json())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}
