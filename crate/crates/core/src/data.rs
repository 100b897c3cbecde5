//! Labeled image datasets: CSV ingestion and a synthetic quadrant-pattern generator.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    shape: [usize; 3],
    samples: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(shape: [usize; 3], samples: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let dim: usize = shape.iter().product();
        if samples.len() != labels.len() * dim {
            return Err(Error::invalid(format!(
                "{} values for {} samples of {dim}",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            shape,
            samples,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.sample_dim();
        &self.samples[i * d..(i + 1) * d]
    }

    /// Stacks the given samples into a `(batch, c, h, w)` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.sample_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let [c, h, w] = self.shape;
        let t = Tensor::new(&[indices.len(), c, h, w], data).expect("sizes agree");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let d = self.sample_dim();
        let mut samples = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            samples.extend_from_slice(self.sample(i));
        }
        LabeledDataset {
            shape: self.shape,
            samples,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelScale {
    /// `[0, 255]` if any value exceeds 1, else `[0, 1]`.
    #[default]
    Auto,
    Unit,
    Byte,
}

/// Reads `label, v_1, ..., v_{c*h*w}` rows. Values are normalized to `[0, 1]`.
pub fn load_csv(path: &Path, shape: [usize; 3], classes: Option<usize>, scale: PixelScale) -> Result<LabeledDataset> {
    let dim: usize = shape.iter().product();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut labels = Vec::new();
    let mut samples = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", dim + 1, rec.len()),
            });
        }
        let label: usize = rec[0].parse().map_err(|_| Error::Parse {
            line,
            reason: format!("label {:?} is not a class index", &rec[0]),
        })?;
        labels.push(label);
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("value {field:?} is not a number"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    line,
                    reason: format!("value {v} outside the pixel range"),
                });
            }
            samples.push(v);
        }
    }
    let byte = match scale {
        PixelScale::Auto => samples.iter().any(|&v| v > 1.0),
        PixelScale::Unit => false,
        PixelScale::Byte => true,
    };
    if byte {
        samples.iter_mut().for_each(|v| *v /= 255.0);
    }
    if let Some(v) = samples.iter().find(|&&v| v > 1.0) {
        return Err(Error::Parse {
            line: 0,
            reason: format!("value {v} exceeds the 0-255 range"),
        });
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(shape, samples, labels, classes)
}

/// Writes the dataset in the format read by [`load_csv`] with unit-scale values.
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..ds.len() {
        let mut row = Vec::with_capacity(ds.sample_dim() + 1);
        row.push(ds.labels[i].to_string());
        row.extend(ds.sample(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub shape: [usize; 3],
    pub noise: f64,
    pub seed: u64,
}

/// Quadrant pattern of a class: quadrant `q` is bright when bit `q` of
/// `class + 1` is set (quadrants numbered row-major). Distinct for up to 15 classes.
pub fn class_template(class: usize, shape: [usize; 3]) -> Vec<f64> {
    let [c, h, w] = shape;
    let code = class + 1;
    let mut t = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for y in 0..h {
            for x in 0..w {
                let q = 2 * usize::from(y >= h / 2) + usize::from(x >= w / 2);
                t.push(if code >> q & 1 == 1 { 0.8 } else { 0.2 });
            }
        }
    }
    t
}

/// Class templates plus Gaussian noise (clamped to `[0, 1]`), shuffled by seed.
pub fn synth_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    if spec.classes < 2 || spec.classes > 15 {
        return Err(Error::invalid(format!("synthetic data supports 2..=15 classes, got {}", spec.classes)));
    }
    if spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(Error::invalid("noise must be a non-negative number"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).unwrap();
    let mut order: Vec<usize> = (0..spec.classes * spec.per_class).map(|i| i / spec.per_class).collect();
    order.shuffle(&mut rng);
    let templates: Vec<Vec<f64>> = (0..spec.classes).map(|c| class_template(c, spec.shape)).collect();
    let mut samples = Vec::with_capacity(order.len() * templates[0].len());
    for &y in &order {
        for &v in &templates[y] {
            let x = if spec.noise == 0.0 { v } else { v + noise.sample(&mut rng) };
            samples.push(x.clamp(0.0, 1.0));
        }
    }
    LabeledDataset::new(spec.shape, samples, order, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn blobs(noise: f64, seed: u64) -> LabeledDataset {
        synth_blobs(&BlobSpec {
            classes: 3,
            per_class: 20,
            shape: [1, 8, 8],
            noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn single_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        std::fs::write(&p, "0, 0.5, 0.5, 0.5, 0.5\n").unwrap();
        let ds = load_csv(&p, [1, 2, 2], None, PixelScale::Auto).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sample(0), &[0.5; 4]);
    }

    #[test]
    fn byte_values_are_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, "1,255,0,51,102\n").unwrap();
        let ds = load_csv(&p, [1, 2, 2], Some(2), PixelScale::Auto).unwrap();
        assert_eq!(ds.sample(0), &[1.0, 0.0, 0.2, 0.4]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, "0,0.1,0.2,0.3,0.4").unwrap();
        writeln!(f, "1,0.1,oops,0.3,0.4").unwrap();
        drop(f);
        match load_csv(&p, [1, 2, 2], None, PixelScale::Auto) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_samples_repeat_their_template() {
        let ds = blobs(0.0, 1);
        for i in 0..ds.len() {
            assert_eq!(ds.sample(i), class_template(ds.labels()[i], [1, 8, 8]).as_slice());
        }
    }

    #[test]
    fn seeds_change_data_not_balance() {
        let a = blobs(0.1, 1);
        let b = blobs(0.1, 2);
        assert_ne!(a, b);
        assert_eq!(a.class_counts(), vec![20; 3]);
        assert_eq!(b.class_counts(), vec![20; 3]);
        assert_eq!(a, blobs(0.1, 1));
    }

    #[test]
    fn save_then_load_is_a_fixpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        let ds = synth_blobs(&BlobSpec {
            classes: 4,
            per_class: 25,
            shape: [1, 4, 4],
            noise: 0.2,
            seed: 9,
        })
        .unwrap();
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p, [1, 4, 4], Some(4), PixelScale::Unit).unwrap();
        assert_eq!(back, ds);
    }
}
