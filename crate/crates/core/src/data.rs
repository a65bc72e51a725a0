//! Dataset ingestion (IDX image files, CSV multivariate time series),
//! recurrence-plot imaging and multi-input model construction.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{InputSpec, LayerGraph};
use crate::propagation::Payload;
use crate::tensor::{ImageBatch, Matrix};

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

/// Sample storage: an image batch or a feature-major flat matrix.
#[derive(Debug, Clone)]
pub enum Samples {
    Images(ImageBatch),
    Flat(Matrix),
}

/// A labeled classification dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Samples,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(samples: Samples, labels: Vec<usize>, class_count: usize) -> Result<Dataset> {
        let n = match &samples {
            Samples::Images(img) => img.batch(),
            Samples::Flat(m) => m.cols(),
        };
        if n != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{n} samples but {} labels",
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::InvalidDataset("class_count must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            samples,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    /// Gathers the given sample indices into a payload for one forward pass.
    pub fn gather(&self, indices: &[usize]) -> Payload {
        match &self.samples {
            Samples::Flat(m) => {
                let mut out = Matrix::zeros(m.rows(), indices.len());
                for (c, &i) in indices.iter().enumerate() {
                    for r in 0..m.rows() {
                        out.set(r, c, m.get(r, i));
                    }
                }
                Payload::Flat(out)
            }
            Samples::Images(img) => {
                let feat = img.channels() * img.height() * img.width();
                let mut out =
                    ImageBatch::zeros(indices.len(), img.channels(), img.height(), img.width());
                for (b, &i) in indices.iter().enumerate() {
                    out.data_mut()[b * feat..(b + 1) * feat]
                        .copy_from_slice(&img.data()[i * feat..(i + 1) * feat]);
                }
                Payload::Image(out)
            }
        }
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// A new dataset holding only the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples = match self.gather(indices) {
            Payload::Flat(m) => Samples::Flat(m),
            Payload::Image(i) => Samples::Images(i),
        };
        Dataset {
            samples,
            labels: self.gather_labels(indices),
            class_count: self.class_count,
        }
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let offset = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset,
            message: format!("truncated file while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_be_bytes(b))
    }
}

/// Loads an MNIST-style IDX image/label file pair. Pixels are scaled to
/// `[0, 1]`; the class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut ir = CountingReader::new(BufReader::new(File::open(images_path)?));
    let magic = ir.read_u32_be("images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("images magic {magic}, expected {IDX_IMAGES_MAGIC}"),
        });
    }
    let count = ir.read_u32_be("image count")? as usize;
    let rows = ir.read_u32_be("image rows")? as usize;
    let cols = ir.read_u32_be("image cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 8,
            message: "image dimensions must be >= 1".into(),
        });
    }
    let mut pixels = vec![0u8; count * rows * cols];
    ir.read_exact_at(&mut pixels, "pixel data")?;

    let mut lr = CountingReader::new(BufReader::new(File::open(labels_path)?));
    let magic = lr.read_u32_be("labels magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("labels magic {magic}, expected {IDX_LABELS_MAGIC}"),
        });
    }
    let label_count = lr.read_u32_be("label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("{count} images but {label_count} labels"),
        });
    }
    let mut raw_labels = vec![0u8; label_count];
    lr.read_exact_at(&mut raw_labels, "label data")?;

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(
        Samples::Images(ImageBatch::from_vec(count, 1, rows, cols, data)),
        labels,
        class_count,
    )
}

/// Writes a dataset of single-channel images as an IDX image/label file pair
/// (values scaled back to `0..=255`).
pub fn save_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let img = match ds.samples() {
        Samples::Images(i) => i,
        Samples::Flat(_) => {
            return Err(Error::InvalidDataset(
                "only image datasets can be written as IDX".into(),
            ))
        }
    };
    if img.channels() != 1 {
        return Err(Error::InvalidDataset(
            "IDX image files hold a single channel".into(),
        ));
    }
    if ds.class_count() > 256 {
        return Err(Error::InvalidDataset("IDX labels are single bytes".into()));
    }
    let mut out = Vec::with_capacity(16 + img.data().len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(img.batch() as u32).to_be_bytes());
    out.extend_from_slice(&(img.height() as u32).to_be_bytes());
    out.extend_from_slice(&(img.width() as u32).to_be_bytes());
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    File::create(images_path)?.write_all(&out)?;

    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend(ds.labels().iter().map(|&l| l as u8));
    File::create(labels_path)?.write_all(&out)?;
    Ok(())
}

/// A multivariate time-series dataset; all samples share the same dimension
/// count and length. `series[sample][dim][t]`.
#[derive(Debug, Clone)]
pub struct MtsDataset {
    pub series: Vec<Vec<Vec<f64>>>,
    pub dims: usize,
    pub length: usize,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

/// How the recurrence threshold is chosen for each series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsRule {
    /// One threshold shared by every series.
    Fixed(f64),
    /// Per-series quantile `q` of all pairwise distances.
    Quantile(f64),
}

/// Builds the binary recurrence plot of a scalar series:
/// `R[i][j] = 1` iff `|x_i - x_j| <= eps`. Symmetric with a unit diagonal.
pub fn recurrence_plot(x: &[f64], eps: f64) -> Matrix {
    assert!(!x.is_empty(), "recurrence plot needs at least one sample");
    assert!(eps >= 0.0, "eps must be >= 0");
    let n = x.len();
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if (x[i] - x[j]).abs() <= eps {
                r.set(i, j, 1.0);
            }
        }
    }
    r
}

fn normalize_series(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

fn resolve_eps(x: &[f64], rule: EpsRule) -> f64 {
    match rule {
        EpsRule::Fixed(e) => e,
        EpsRule::Quantile(q) => {
            let n = x.len();
            let mut dists = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    dists.push((x[i] - x[j]).abs());
                }
            }
            if dists.is_empty() {
                return 0.0;
            }
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = ((dists.len() - 1) as f64 * q.clamp(0.0, 1.0)).floor() as usize;
            dists[idx]
        }
    }
}

/// Mean-pools a binary plot down to `side x side` and re-binarizes at 0.5.
fn downsample_binary(plot: &Matrix, side: usize) -> Matrix {
    let n = plot.rows();
    let mut out = Matrix::zeros(side, side);
    for oy in 0..side {
        let y0 = oy * n / side;
        let y1 = ((oy + 1) * n).div_ceil(side).min(n).max(y0 + 1);
        for ox in 0..side {
            let x0 = ox * n / side;
            let x1 = ((ox + 1) * n).div_ceil(side).min(n).max(x0 + 1);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += plot.get(y, x);
                }
            }
            let mean = sum / ((y1 - y0) * (x1 - x0)) as f64;
            out.set(oy, ox, if mean >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Converts every series of every sample into a recurrence-plot image, one
/// dataset per dimension. Series are normalized to zero mean / unit variance
/// before the threshold is applied; `max_side` optionally mean-pools large
/// plots down for desk-scale training.
pub fn mts_to_images(
    ds: &MtsDataset,
    eps_rule: EpsRule,
    max_side: Option<usize>,
) -> Result<Vec<Dataset>> {
    if ds.series.len() != ds.labels.len() {
        return Err(Error::InvalidDataset(format!(
            "{} samples but {} labels",
            ds.series.len(),
            ds.labels.len()
        )));
    }
    let side = match max_side {
        Some(s) if s < ds.length => s,
        _ => ds.length,
    };
    let mut per_dim = Vec::with_capacity(ds.dims);
    for dim in 0..ds.dims {
        let mut batch = ImageBatch::zeros(ds.series.len(), 1, side, side);
        for (s, sample) in ds.series.iter().enumerate() {
            let x = normalize_series(&sample[dim]);
            let eps = resolve_eps(&x, eps_rule);
            let mut plot = recurrence_plot(&x, eps);
            if side != ds.length {
                plot = downsample_binary(&plot, side);
            }
            batch.data_mut()[s * side * side..(s + 1) * side * side]
                .copy_from_slice(plot.data());
        }
        per_dim.push(Dataset::new(
            Samples::Images(batch),
            ds.labels.clone(),
            ds.class_count,
        )?);
    }
    Ok(per_dim)
}

/// Stacks per-dimension single-channel image datasets into one dataset whose
/// images have one channel per dimension.
pub fn merge_channels(parts: &[Dataset]) -> Result<Dataset> {
    if parts.is_empty() {
        return Err(Error::InvalidDataset("no parts to merge".into()));
    }
    let first = match parts[0].samples() {
        Samples::Images(i) => i,
        _ => return Err(Error::InvalidDataset("merge_channels needs images".into())),
    };
    let (n, h, w) = (first.batch(), first.height(), first.width());
    let mut merged = ImageBatch::zeros(n, parts.len(), h, w);
    for (c, part) in parts.iter().enumerate() {
        let img = match part.samples() {
            Samples::Images(i) => i,
            _ => return Err(Error::InvalidDataset("merge_channels needs images".into())),
        };
        if img.batch() != n || img.height() != h || img.width() != w || img.channels() != 1 {
            return Err(Error::InvalidDataset(
                "merge_channels parts must be aligned single-channel images".into(),
            ));
        }
        if part.labels() != parts[0].labels() {
            return Err(Error::InvalidDataset(
                "merge_channels parts must share labels".into(),
            ));
        }
        let plane = h * w;
        for b in 0..n {
            for p in 0..plane {
                merged.data_mut()[(b * parts.len() + c) * plane + p] = img.data()[b * plane + p];
            }
        }
    }
    Dataset::new(
        Samples::Images(merged),
        parts[0].labels().to_vec(),
        parts[0].class_count(),
    )
}

/// Loads the CSV time-series format: a header line `dims,length,classes`
/// followed by one row per sample, `label,v(0,0),...,v(dims-1,length-1)`
/// with each dimension's values contiguous.
pub fn load_timeseries_csv(path: &Path) -> Result<MtsDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => {
                return Err(Error::Format {
                    offset: 0,
                    message: "empty time-series file".into(),
                })
            }
            Some((_, line)) => {
                let line = line?;
                let t = line.trim();
                if !t.is_empty() && !t.starts_with('#') {
                    break t.to_string();
                }
            }
        }
    };
    let head: Vec<&str> = header.split(',').map(str::trim).collect();
    if head.len() != 3 {
        return Err(Error::Format {
            offset: 0,
            message: format!("header must be `dims,length,classes`, got `{header}`"),
        });
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::Format {
            offset: 0,
            message: format!("invalid {what} `{s}` in header"),
        })
    };
    let dims = parse(head[0], "dims")?;
    let length = parse(head[1], "length")?;
    let class_count = parse(head[2], "classes")?;
    if dims == 0 || length == 0 || class_count == 0 {
        return Err(Error::Format {
            offset: 0,
            message: "header values must be >= 1".into(),
        });
    }

    let mut series = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() != 1 + dims * length {
            return Err(Error::Format {
                offset: lineno as u64 + 1,
                message: format!(
                    "row {} has {} values, expected {}",
                    lineno + 1,
                    fields.len() - 1,
                    dims * length
                ),
            });
        }
        let label: usize = fields[0].parse().map_err(|_| Error::Format {
            offset: lineno as u64 + 1,
            message: format!("row {}: invalid label `{}`", lineno + 1, fields[0]),
        })?;
        if label >= class_count {
            return Err(Error::Format {
                offset: lineno as u64 + 1,
                message: format!(
                    "row {}: label {label} out of range for {class_count} classes",
                    lineno + 1
                ),
            });
        }
        let mut sample = Vec::with_capacity(dims);
        for d in 0..dims {
            let mut dim_vals = Vec::with_capacity(length);
            for t_i in 0..length {
                let s = fields[1 + d * length + t_i];
                let v: f64 = s.parse().map_err(|_| Error::Format {
                    offset: lineno as u64 + 1,
                    message: format!("row {}: invalid value `{s}`", lineno + 1),
                })?;
                dim_vals.push(v);
            }
            sample.push(dim_vals);
        }
        series.push(sample);
        labels.push(label);
    }
    if series.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: "time-series file has no samples".into(),
        });
    }
    Ok(MtsDataset {
        series,
        dims,
        length,
        labels,
        class_count,
    })
}

/// Builds the starting model for multivariate series: either one conv input
/// consuming all dimensions as channels, or one conv input per dimension.
/// Both variants share a single hidden dense layer in front of the output,
/// so per-dimension branches can grow independently.
pub fn build_mts_model<R: Rng>(
    dims: usize,
    image_side: usize,
    classes: usize,
    shared_input: bool,
    def_neu: usize,
    conv_channels: usize,
    rng: &mut R,
) -> Result<LayerGraph> {
    if dims == 0 {
        return Err(Error::InvalidArgument("dims must be >= 1".into()));
    }
    let specs: Vec<InputSpec> = if shared_input {
        vec![InputSpec::Conv {
            channels: dims,
            height: image_side,
            width: image_side,
        }]
    } else {
        (0..dims)
            .map(|_| InputSpec::Conv {
                channels: 1,
                height: image_side,
                width: image_side,
            })
            .collect()
    };
    LayerGraph::new_multi_input_model(&specs, def_neu, conv_channels, classes, rng)
}
