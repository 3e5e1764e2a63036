//! Datasets: IDX (MNIST) ingestion, the half-moons generator, a Gaussian-blob
//! stand-in for MNIST 0/1, and iid per-agent splits.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    input_dim: usize,
    output_dim: usize,
}

impl LabeledDataset {
    /// Checks equal counts, consistent dimensions and finite entries.
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension {
                context: "dataset targets",
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        let input_dim = inputs.first().map_or(0, Vec::len);
        let output_dim = targets.first().map_or(0, Vec::len);
        for (x, y) in inputs.iter().zip(&targets) {
            if x.len() != input_dim || y.len() != output_dim {
                return Err(Error::InvalidArgument(
                    "ragged dataset: every sample needs the same dimensions".into(),
                ));
            }
            if !x.iter().chain(y).all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
            }
        }
        Ok(LabeledDataset {
            inputs,
            targets,
            input_dim,
            output_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
        }
    }
}

/// Local datasets, one per agent, all of the same size `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentData {
    agents: Vec<LabeledDataset>,
}

impl AgentData {
    pub fn new(agents: Vec<LabeledDataset>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one agent".into()))?;
        let (d, n, m) = (first.len(), first.input_dim(), first.output_dim());
        if d == 0 {
            return Err(Error::InvalidArgument("local datasets must be nonempty".into()));
        }
        for a in &agents {
            if a.len() != d || a.input_dim() != n || a.output_dim() != m {
                return Err(Error::InvalidArgument(
                    "all agents need the same sample count and dimensions".into(),
                ));
            }
        }
        Ok(AgentData { agents })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn samples_per_agent(&self) -> usize {
        self.agents[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.agents[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.agents[0].output_dim()
    }

    pub fn agent(&self, q: usize) -> &LabeledDataset {
        &self.agents[q]
    }

    pub fn agents(&self) -> &[LabeledDataset] {
        &self.agents
    }
}

/// Stacked labels `[y_{1,1}ᵀ … y_{1,D}ᵀ, …, y_{Q,D}ᵀ]ᵀ`, the same ordering as
/// the stacked network outputs.
pub fn stack_targets(data: &AgentData) -> Vec<f64> {
    data.agents()
        .iter()
        .flat_map(|a| a.targets.iter().flatten().copied())
        .collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.pos, "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(self.err(
                0,
                format!("bad magic: expected {expected:#010x}, found {found:#010x}"),
            ));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated payload: expected {len} bytes, found {available}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

/// Raw IDX image tensor: `count × rows × cols` unsigned bytes.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let bytes = std::fs::read(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    c.magic(IDX_IMAGES_MAGIC)?;
    let count = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let size = rows * cols;
    let data = c.payload(count * size)?;
    let images = if size == 0 {
        vec![Vec::new(); count]
    } else {
        data.chunks(size).map(<[u8]>::to_vec).collect()
    };
    Ok((rows, cols, images))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    c.magic(IDX_LABELS_MAGIC)?;
    let count = c.u32()? as usize;
    Ok(c.payload(count)?.to_vec())
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for dim in [images.len(), rows, cols] {
        w.write_all(&(dim as u32).to_be_bytes())?;
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Dimension {
                context: "idx image",
                expected: rows * cols,
                found: img.len(),
            });
        }
        w.write_all(img)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Loads an IDX image/label pair, keeps the listed digits, flattens each
/// image and scales pixels to `[0, 1]`. Targets are the digit value.
pub fn load_mnist_idx(images: &Path, labels: &Path, keep_digits: &[u8]) -> Result<LabeledDataset> {
    let (_, _, pixels) = read_idx_images(images)?;
    let digits = read_idx_labels(labels)?;
    if pixels.len() != digits.len() {
        return Err(Error::Idx {
            path: labels.to_path_buf(),
            offset: 4,
            message: format!(
                "label count {} does not match image count {}",
                digits.len(),
                pixels.len()
            ),
        });
    }
    let (inputs, targets) = pixels
        .iter()
        .zip(&digits)
        .filter(|(_, d)| keep_digits.contains(d))
        .map(|(img, &d)| {
            (
                img.iter().map(|&p| f64::from(p) / 255.0).collect(),
                vec![f64::from(d)],
            )
        })
        .unzip();
    LabeledDataset::new(inputs, targets)
}

/// Two interleaving arcs: `n/2` points `(cos t, sin t)` labeled 0 and the
/// rest `(1 - cos t, 0.5 - sin t)` labeled 1, `t ~ U[0, π]`, plus isotropic
/// Gaussian noise of standard deviation `noise_std`.
pub fn half_moons(n: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("half_moons needs n >= 2, got {n}")));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise_std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upper = n / 2;
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(0.0..=std::f64::consts::PI);
        let (x, y, label) = if i < upper {
            (t.cos(), t.sin(), 0.0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1.0)
        };
        let (ex, ey) = if noise_std > 0.0 {
            (noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        inputs.push(vec![x + ex, y + ey]);
        targets.push(vec![label]);
    }
    LabeledDataset::new(inputs, targets)
}

/// Stand-in for MNIST 0/1 when the IDX files are not available: two class
/// prototypes with entries in `[0, 1]`, and samples alternating between
/// labels 0 and 1 drawn as `prototype + noise_std · N(0, I)`.
pub fn gaussian_blobs(n: usize, dim: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument("gaussian_blobs needs n, dim > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let x = prototypes[label]
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + noise_std * z
            })
            .collect();
        inputs.push(x);
        targets.push(vec![label as f64]);
    }
    LabeledDataset::new(inputs, targets)
}

/// Draws `num_agents` local datasets of exactly `per_agent` samples. Shards
/// are disjoint when the source is large enough and drawn with replacement
/// otherwise.
pub fn split_iid(
    source: &LabeledDataset,
    num_agents: usize,
    per_agent: usize,
    seed: u64,
) -> Result<AgentData> {
    if source.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if num_agents == 0 || per_agent == 0 {
        return Err(Error::InvalidArgument("need at least one agent and one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = num_agents * per_agent;
    let picks: Vec<usize> = if total <= source.len() {
        index::sample(&mut rng, source.len(), total).into_vec()
    } else {
        (0..total).map(|_| rng.random_range(0..source.len())).collect()
    };
    AgentData::new(
        picks
            .chunks(per_agent)
            .map(|idx| source.subset(idx))
            .collect(),
    )
}
