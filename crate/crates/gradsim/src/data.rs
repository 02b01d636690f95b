//! Datasets: the circular sinusoid toy problem, Gaussian blob pairs, and an
//! IDX image/label reader.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::rng::{stream, STREAM_DATA};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Ordered collection of (input, label) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<Vec<f64>>, meta: DatasetMeta) -> Result<Dataset> {
        let ds = Dataset {
            inputs,
            labels,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset labels",
                expected: self.inputs.len(),
                got: self.labels.len(),
            });
        }
        if let Some(first) = self.inputs.first() {
            let dim = first.len();
            if let Some(pos) = self.inputs.iter().position(|x| x.len() != dim) {
                return Err(Error::InvalidArgument(format!(
                    "input {pos} has dimension {}, expected {dim}",
                    self.inputs[pos].len()
                )));
            }
        }
        if let Some(first) = self.labels.first() {
            let dim = first.len();
            if let Some(pos) = self.labels.iter().position(|y| y.len() != dim) {
                return Err(Error::InvalidArgument(format!(
                    "label {pos} has dimension {}, expected {dim}",
                    self.labels[pos].len()
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn label_dim(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }
}

/// Sinusoid on the unit circle: inputs `(cos 2πα, sin 2πα)`, labels
/// `sin(2πfα)`. The circular embedding removes boundary effects; integer
/// frequencies keep the target continuous around the seam.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToySpec {
    pub frequency: f64,
    pub n: usize,
    /// Uniform jitter half-width added to the equally spaced α grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ToySpec {
    pub fn new(frequency: f64, n: usize) -> ToySpec {
        ToySpec {
            frequency,
            n,
            jitter: None,
            seed: 0,
        }
    }
}

/// Map a phase α to its point on the unit circle.
pub fn circle_embedding(alpha: f64) -> [f64; 2] {
    let t = 2.0 * std::f64::consts::PI * alpha;
    [t.cos(), t.sin()]
}

pub fn toy_label(frequency: f64, alpha: f64) -> f64 {
    (2.0 * std::f64::consts::PI * frequency * alpha).sin()
}

pub fn gen_toy(spec: &ToySpec) -> Result<Dataset> {
    if !(spec.frequency > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "toy frequency must be positive, got {}",
            spec.frequency
        )));
    }
    if spec.n < 2 {
        return Err(Error::InvalidArgument(format!(
            "toy dataset needs at least 2 samples, got {}",
            spec.n
        )));
    }
    let mut rng = stream(spec.seed, &[STREAM_DATA, 1]);
    let mut inputs = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for j in 0..spec.n {
        let mut alpha = j as f64 / spec.n as f64;
        if let Some(width) = spec.jitter {
            alpha += rng.gen_range(-width..=width);
        }
        inputs.push(circle_embedding(alpha).to_vec());
        labels.push(vec![toy_label(spec.frequency, alpha)]);
    }
    Dataset::new(
        inputs,
        labels,
        DatasetMeta {
            source: format!("toy sinusoid f={} n={}", spec.frequency, spec.n),
            seed: Some(spec.seed),
        },
    )
}

/// Two isotropic Gaussian blobs in the plane with labels −1 and +1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_per_class: usize,
    pub centers: [[f64; 2]; 2],
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> BlobSpec {
        BlobSpec {
            n_per_class: 100,
            centers: [[-1.5, 0.0], [1.5, 0.0]],
            sigma: 0.5,
            seed: 0,
        }
    }
}

pub fn gen_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.n_per_class == 0 {
        return Err(Error::InvalidArgument("blob classes must be non-empty".into()));
    }
    if !(spec.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "blob sigma must be positive, got {}",
            spec.sigma
        )));
    }
    let normal = rand_distr::Normal::new(0.0, spec.sigma).expect("validated sigma");
    let mut rng = stream(spec.seed, &[STREAM_DATA, 2]);
    let mut inputs = Vec::with_capacity(2 * spec.n_per_class);
    let mut labels = Vec::with_capacity(2 * spec.n_per_class);
    for (class, center) in spec.centers.iter().enumerate() {
        let label = if class == 0 { -1.0 } else { 1.0 };
        for _ in 0..spec.n_per_class {
            let dx: f64 = rng.sample(normal);
            let dy: f64 = rng.sample(normal);
            inputs.push(vec![center[0] + dx, center[1] + dy]);
            labels.push(vec![label]);
        }
    }
    Dataset::new(
        inputs,
        labels,
        DatasetMeta {
            source: format!(
                "two gaussian blobs n={} sigma={}",
                2 * spec.n_per_class,
                spec.sigma
            ),
            seed: Some(spec.seed),
        },
    )
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

struct IdxCursor<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    offset: usize,
}

impl<'a> IdxCursor<'a> {
    fn open(path: &'a Path) -> Result<IdxCursor<'a>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Ok(IdxCursor {
            path,
            bytes,
            offset: 0,
        })
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Idx {
            path: self.path.to_path_buf(),
            offset: self.offset as u64,
            message: message.into(),
        })
    }

    fn read_u32(&mut self) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return self.fail("truncated while reading a 32-bit header field");
        }
        let raw: [u8; 4] = self.bytes[self.offset..self.offset + 4].try_into().unwrap();
        self.offset += 4;
        Ok(u32::from_be_bytes(raw))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.offset + n > self.bytes.len() {
            return self.fail(format!(
                "truncated payload: need {n} more bytes, have {}",
                self.bytes.len() - self.offset
            ));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }
}

/// Read an IDX image file (magic `0x00000803`, big-endian dims) into one flat
/// `rows·cols` vector per image with pixels scaled to `[0, 1]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut cur = IdxCursor::open(path)?;
    let magic = cur.read_u32()?;
    if magic != IDX_IMAGE_MAGIC {
        cur.offset = 0;
        return cur.fail(format!(
            "bad magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x} for images"
        ));
    }
    let count = cur.read_u32()? as usize;
    let rows = cur.read_u32()? as usize;
    let cols = cur.read_u32()? as usize;
    let pixels = rows * cols;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = cur.take(pixels)?;
        images.push(raw.iter().map(|&b| b as f64 / 255.0).collect());
    }
    if cur.offset != cur.bytes.len() {
        return cur.fail(format!(
            "{} trailing bytes after {count} images",
            cur.bytes.len() - cur.offset
        ));
    }
    Ok(images)
}

/// Read an IDX label file (magic `0x00000801`); labels must lie in `0..=9`.
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let mut cur = IdxCursor::open(path)?;
    let magic = cur.read_u32()?;
    if magic != IDX_LABEL_MAGIC {
        cur.offset = 0;
        return cur.fail(format!(
            "bad magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x} for labels"
        ));
    }
    let count = cur.read_u32()? as usize;
    let raw = cur.take(count)?.to_vec();
    if cur.offset != cur.bytes.len() {
        return cur.fail(format!(
            "{} trailing bytes after {count} labels",
            cur.bytes.len() - cur.offset
        ));
    }
    for (i, &label) in raw.iter().enumerate() {
        if label > 9 {
            cur.offset = 8 + i;
            return cur.fail(format!("label {label} at index {i} outside 0..=9"));
        }
    }
    Ok(raw)
}

/// Dataset from an IDX image file alone (empty label vectors).
pub fn read_idx(images_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let inputs = read_idx_images(images_path)?;
    let n = inputs.len();
    Dataset::new(
        inputs,
        vec![Vec::new(); n],
        DatasetMeta {
            source: format!("idx images {}", images_path.display()),
            seed: None,
        },
    )
}

/// Dataset from an IDX image/label pair with one-hot labels over 10 classes.
/// `limit` keeps only the first `limit` samples when given.
pub fn read_idx_with_labels(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let mut inputs = read_idx_images(images_path)?;
    let mut raw_labels = read_idx_labels(labels_path)?;
    if inputs.len() != raw_labels.len() {
        return Err(Error::ShapeMismatch {
            context: "idx labels for images",
            expected: inputs.len(),
            got: raw_labels.len(),
        });
    }
    if let Some(limit) = limit {
        inputs.truncate(limit);
        raw_labels.truncate(limit);
    }
    let labels = raw_labels
        .iter()
        .map(|&c| {
            let mut one_hot = vec![0.0; 10];
            one_hot[c as usize] = 1.0;
            one_hot
        })
        .collect();
    Dataset::new(
        inputs,
        labels,
        DatasetMeta {
            source: format!(
                "idx {} + {}",
                images_path.display(),
                labels_path.display()
            ),
            seed: None,
        },
    )
}
