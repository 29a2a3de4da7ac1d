//! Four-condition evaluation, report files and denoised-image export.

use std::fs;
use std::path::{Path, PathBuf};

use nanet_tensor::Graph;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{item_path, Condition, DatasetManifest, ManifestItem, Split};
use crate::image::ImageBuffer;
use crate::metrics::{compute_metrics, psnr, round2, ConfusionMatrix, Metrics};
use crate::model::{nanet_graph, Mode};
use crate::morse::NUM_LETTERS;
use crate::train::{prepare, stack};
use crate::{rng, Error, Result};

const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub condition: Condition,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Mean PSNR of autoencoder output against the clean image; noisy
    /// conditions of a full NANet only.
    pub psnr_denoised: Option<f64>,
    /// Mean PSNR of the noisy input against the clean image; noisy conditions only.
    pub psnr_noisy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub conditions: Vec<ConditionReport>,
}

/// Serialized form of one condition. Percentages carry two decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub psnr_denoised: Option<f64>,
    pub psnr_noisy: Option<f64>,
}

/// On-disk report: one object per evaluated condition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<ConditionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<ConditionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<ConditionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saltpepper: Option<ConditionEntry>,
}

impl ReportFile {
    pub fn slot(&mut self, condition: Condition) -> &mut Option<ConditionEntry> {
        match condition {
            Condition::Clean => &mut self.clean,
            Condition::Uniform => &mut self.uniform,
            Condition::Gaussian => &mut self.gaussian,
            Condition::SaltPepper => &mut self.saltpepper,
        }
    }

    pub fn entries(&self) -> Vec<(Condition, &ConditionEntry)> {
        [
            (Condition::Clean, &self.clean),
            (Condition::Uniform, &self.uniform),
            (Condition::Gaussian, &self.gaussian),
            (Condition::SaltPepper, &self.saltpepper),
        ]
        .into_iter()
        .filter_map(|(c, e)| e.as_ref().map(|e| (c, e)))
        .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::io(path, format!("not a report: {e}")))
    }

    /// Aligned text table, one row per condition.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>10} {:>9} {:>9} {:>12} {:>13}\n",
            "condition", "accuracy", "precision", "recall", "f1", "psnr_noisy", "psnr_denoised"
        );
        let db = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        for (c, e) in self.entries() {
            out.push_str(&format!(
                "{:<12} {:>9.2} {:>10.2} {:>9.2} {:>9.2} {:>12} {:>13}\n",
                c.name(),
                e.accuracy,
                e.precision,
                e.recall,
                e.f1,
                db(e.psnr_noisy),
                db(e.psnr_denoised)
            ));
        }
        out
    }
}

impl EvalReport {
    pub fn get(&self, condition: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    pub fn to_file(&self) -> ReportFile {
        let mut file = ReportFile::default();
        for c in &self.conditions {
            *file.slot(c.condition) = Some(ConditionEntry {
                confusion: c.confusion.clone(),
                accuracy: round2(c.metrics.accuracy),
                precision: round2(c.metrics.precision),
                recall: round2(c.metrics.recall),
                f1: round2(c.metrics.f1),
                psnr_denoised: c.psnr_denoised,
                psnr_noisy: c.psnr_noisy,
            });
        }
        file
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("report serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn test_items(manifest: &DatasetManifest, condition: Condition) -> Result<Vec<&ManifestItem>> {
    let items: Vec<_> = manifest.items(Split::Test, condition).collect();
    if items.is_empty() {
        return Err(Error::MissingSplit(format!("test/{condition}")));
    }
    Ok(items)
}

fn clean_reference(manifest: &DatasetManifest, item: &ManifestItem, size: usize) -> Result<ImageBuffer> {
    let clean =
        manifest.clean_of(item).ok_or_else(|| Error::MissingSplit(format!("clean counterpart of {}", item.path)))?;
    prepare(&manifest.load_image(clean)?, size)
}

struct BatchOutput {
    predictions: Vec<usize>,
    reconstructions: Option<Vec<Vec<f32>>>,
}

fn run_batch(ckpt: &Checkpoint, images: &[ImageBuffer]) -> Result<BatchOutput> {
    let params = &ckpt.params;
    let batch = stack(images)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, |_| false);
    let x = g.constant(batch);
    // dropout is off in eval mode, so this stream is never drawn from
    let mut unused = rng::stream(0, &[]);
    let nodes = nanet_graph(&mut g, &bound, params, x, ckpt.config.mode, false, &mut unused)?;
    let logits = g.value(nodes.logits);
    let [_, k] = logits.dims2()?;
    let predictions = logits.data().chunks(k).map(argmax).collect();
    let reconstructions = nodes.reconstruction.map(|r| {
        let v = g.value(r).data();
        v.chunks(v.len() / images.len()).map(<[f32]>::to_vec).collect()
    });
    Ok(BatchOutput { predictions, reconstructions })
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode classification of each condition's test split.
pub fn evaluate(ckpt: &Checkpoint, manifest: &DatasetManifest, conditions: &[Condition]) -> Result<EvalReport> {
    let size = ckpt.config.image_size;
    let mut reports = Vec::with_capacity(conditions.len());
    for &condition in conditions {
        let items = test_items(manifest, condition)?;
        let noisy = condition != Condition::Clean;
        let mut confusion = ConfusionMatrix::new(NUM_LETTERS);
        let (mut psnr_noisy, mut psnr_denoised) = (0.0f64, 0.0f64);
        for chunk in items.chunks(EVAL_BATCH) {
            let images =
                chunk.iter().map(|item| prepare(&manifest.load_image(item)?, size)).collect::<Result<Vec<_>>>()?;
            let out = run_batch(ckpt, &images)?;
            for (item, &p) in chunk.iter().zip(&out.predictions) {
                confusion.record(item.class(), p);
            }
            if noisy {
                for (j, item) in chunk.iter().enumerate() {
                    let clean = clean_reference(manifest, item, size)?;
                    psnr_noisy += psnr(images[j].values(), clean.values());
                    if let Some(recon) = &out.reconstructions {
                        psnr_denoised += psnr(&recon[j], clean.values());
                    }
                }
            }
        }
        let n = items.len() as f64;
        reports.push(ConditionReport {
            condition,
            metrics: compute_metrics(&confusion)?,
            confusion,
            psnr_noisy: noisy.then_some(psnr_noisy / n),
            psnr_denoised: (noisy && ckpt.config.mode == Mode::Nanet).then_some(psnr_denoised / n),
        });
    }
    Ok(EvalReport { conditions: reports })
}

/// Write autoencoder outputs for each condition's test split as 8-bit PNGs
/// under `out_dir/<condition>/<letter>/<instance>.png`. Returns the paths written.
pub fn export_denoised(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    conditions: &[Condition],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let size = ckpt.config.image_size;
    let mut written = Vec::new();
    for &condition in conditions {
        let items = test_items(manifest, condition)?;
        for chunk in items.chunks(EVAL_BATCH) {
            let images =
                chunk.iter().map(|item| prepare(&manifest.load_image(item)?, size)).collect::<Result<Vec<_>>>()?;
            let denoised = ckpt.params.denoise(&stack(&images)?)?;
            for (item, values) in chunk.iter().zip(denoised.data().chunks(size * size)) {
                let path = out_dir.join(item_path(condition, item.letter, item.instance));
                ImageBuffer::from_clamped(size, size, values.to_vec())?.write_png(&path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
