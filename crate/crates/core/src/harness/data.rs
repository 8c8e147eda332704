//! Classification datasets and their on-disk form.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Target, Tensor};
use crate::graph::TensorShape;

use super::{HarnessError, SyntheticGroupSparseProblem};

/// Labelled samples stacked along the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input tensor and cross-entropy target of the listed samples.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Target) {
        let x = self.inputs.select(indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, Target::CrossEntropy(y))
    }

    /// Shape of one sample with batch dimension 1.
    pub fn sample_shape(&self) -> TensorShape {
        self.inputs.shape().with_batch(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
}

/// Where the data of an experiment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    SyntheticClassification(BlobSpec),
    SyntheticRegression(SyntheticGroupSparseProblem),
    /// `train.csv` / `test.csv` with the label in the first column followed
    /// by pixel values in `[0, 255]` (Fashion-MNIST CSV layout).
    ImageCsv {
        dir: String,
        channels: usize,
        height: usize,
        width: usize,
        classes: usize,
    },
}

/// Gaussian blobs rendered as images: every class has its own mean per
/// channel; each sample adds a per-channel offset and per-pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub train: usize,
    pub test: usize,
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
    /// Standard deviation of the class means.
    pub separation: f64,
    /// Standard deviation of the per-sample channel offset.
    pub jitter: f64,
    /// Standard deviation of the per-pixel noise.
    pub noise: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            train: 8000,
            test: 2000,
            classes: 4,
            channels: 3,
            size: 16,
            separation: 1.0,
            jitter: 0.5,
            noise: 1.0,
        }
    }
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Stream order: class means, then per sample (train first) the label, the
/// channel offsets and the pixels in NCHW order.
pub fn gen_synthetic_classification<R: Rng + ?Sized>(
    spec: &BlobSpec,
    rng: &mut R,
) -> Result<DatasetSplit, HarnessError> {
    if spec.classes < 2 || spec.channels == 0 || spec.size == 0 {
        return Err(HarnessError::Config(
            "blob dataset needs ≥ 2 classes and a non-empty image".into(),
        ));
    }
    let means: Vec<f64> = (0..spec.classes * spec.channels)
        .map(|_| spec.separation * std_normal(&mut *rng))
        .collect();
    let mut draw = |n: usize| -> Result<Dataset, HarnessError> {
        let plane = spec.size * spec.size;
        let mut data = Vec::with_capacity(n * spec.channels * plane);
        let mut labels = Vec::with_capacity(n);
        let pixel =
            Normal::new(0.0, spec.noise).map_err(|e| HarnessError::Config(e.to_string()))?;
        for _ in 0..n {
            let y = rng.random_range(0..spec.classes);
            labels.push(y);
            let offsets: Vec<f64> = (0..spec.channels)
                .map(|_| spec.jitter * std_normal(&mut *rng))
                .collect();
            for c in 0..spec.channels {
                let mu = means[y * spec.channels + c] + offsets[c];
                for _ in 0..plane {
                    data.push(mu + pixel.sample(&mut *rng));
                }
            }
        }
        let shape = TensorShape::nchw(n, spec.channels, spec.size, spec.size);
        Ok(Dataset {
            inputs: Tensor::new(shape, data)?,
            labels,
            classes: spec.classes,
        })
    };
    let train = draw(spec.train)?;
    let test = draw(spec.test)?;
    Ok(DatasetSplit { train, test })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_image_csv(
    dir: &Path,
    channels: usize,
    height: usize,
    width: usize,
    classes: usize,
) -> Result<DatasetSplit, HarnessError> {
    let read = |name: &str| -> Result<Dataset, HarnessError> {
        let path = dir.join(name);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| HarnessError::Dataset(format!("{}: {e}", path.display())))?;
        let numel = channels * height * width;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| HarnessError::Dataset(format!("{}: {e}", path.display())))?;
            let Ok(label) = record[0].trim().parse::<usize>() else {
                if line == 0 {
                    continue; // header row
                }
                return Err(HarnessError::Dataset(format!(
                    "{}:{}: bad label `{}`",
                    path.display(),
                    line + 1,
                    &record[0]
                )));
            };
            if label >= classes || record.len() != numel + 1 {
                return Err(HarnessError::Dataset(format!(
                    "{}:{}: expected a label < {classes} and {numel} pixels",
                    path.display(),
                    line + 1
                )));
            }
            labels.push(label);
            for field in record.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    HarnessError::Dataset(format!("{}:{}: bad pixel", path.display(), line + 1))
                })?;
                data.push(v / 255.0);
            }
        }
        let shape = TensorShape::nchw(labels.len(), channels, height, width);
        Ok(Dataset {
            inputs: Tensor::new(shape, data)?,
            labels,
            classes,
        })
    };
    Ok(DatasetSplit {
        train: read("train.csv")?,
        test: read("test.csv")?,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    shape: TensorShape,
    classes: usize,
    labels: Vec<usize>,
    /// Inputs are stored as little-endian f64 in this file.
    data_file: String,
}

/// Writes `<stem>.json` (shape, labels) and `<stem>.bin` (inputs).
pub fn save_dataset(ds: &Dataset, dir: &Path, stem: &str) -> Result<(), HarnessError> {
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    let bytes: Vec<u8> = ds
        .inputs
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    fs::write(&bin, bytes).map_err(io_err(&bin))?;
    let header = Header {
        shape: ds.inputs.shape().clone(),
        classes: ds.classes,
        labels: ds.labels.clone(),
        data_file: format!("{stem}.bin"),
    };
    fs::write(&json, serde_json::to_string(&header)?).map_err(io_err(&json))
}

pub fn load_dataset(dir: &Path, stem: &str) -> Result<Dataset, HarnessError> {
    let json = dir.join(format!("{stem}.json"));
    let header: Header = serde_json::from_str(&fs::read_to_string(&json).map_err(io_err(&json))?)?;
    let bin = dir.join(&header.data_file);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    if bytes.len() != header.shape.numel() * 8 || header.labels.len() != header.shape.batch() {
        return Err(HarnessError::Dataset(format!(
            "{} does not match its header",
            bin.display()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Dataset {
        inputs: Tensor::new(header.shape, data)?,
        labels: header.labels,
        classes: header.classes,
    })
}
