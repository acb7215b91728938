//! Dataset ingestion: IDX and CSV loaders, synthetic stream generators,
//! and the manifest that ties a run config to its data files.

use std::fs;
use std::path::{Path, PathBuf};

use coldstream_core::error::{Error, Result};
use coldstream_core::replay::{Example, Features};
use coldstream_core::stream::TaskData;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Paired IDX files (images + labels).
    Idx,
    /// One CSV with a `label` column and numeric feature columns.
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Flatten to a vector and scale to unit L2 norm.
    UnitNorm,
    /// Flatten to a vector in [0, 1].
    Divide255,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Gaussian blobs around well-separated unit class means, projected
    /// back to the sphere; satisfies the unit-norm and min-separation
    /// assumptions exactly.
    SphereBlobs,
    /// Unit-sphere points labeled by a random hyperplane with a margin.
    TwoClassMargin,
    /// Square grayscale images built from horizontally symmetric class
    /// templates plus pixel noise, for augmentation experiments.
    BlobImages,
}

fn default_classes() -> usize {
    2
}
fn default_lambda_sep() -> f64 {
    1e-3
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub d: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    pub per_class: usize,
    /// Held-out examples per class; 0 means per_class / 5 (at least 1).
    #[serde(default)]
    pub test_per_class: usize,
    #[serde(default = "default_lambda_sep")]
    pub lambda_sep: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// If set, consecutive examples share group ids in runs of this size.
    #[serde(default)]
    pub group_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub format: DataFormat,
    pub classes: usize,
    #[serde(default)]
    pub task_id: u32,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub test_csv: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub normalization: Normalization,
    /// Name of the CSV column carrying group ids, if any.
    #[serde(default)]
    pub group_column: Option<String>,
}

// ----- IDX format -----

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated while reading {what} (need {end} bytes)"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Load paired IDX files: a 3-dimensional image file (magic 0x00000803,
/// big-endian n/rows/cols) and a 1-dimensional label file (0x00000801).
pub fn load_idx(images_path: &Path, labels_path: &Path, task_id: u32) -> Result<Vec<Example>> {
    let img = fs::read(images_path)?;
    let magic = read_be_u32(&img, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_be_u32(&img, 4, "image count")? as usize;
    let rows = read_be_u32(&img, 8, "row count")? as usize;
    let cols = read_be_u32(&img, 12, "column count")? as usize;
    let expected = 16 + n * rows * cols;
    if img.len() != expected {
        return Err(Error::Parse {
            offset: img.len().min(expected),
            message: format!("image payload is {} bytes, expected {expected}", img.len()),
        });
    }

    let lab = fs::read(labels_path)?;
    let magic = read_be_u32(&lab, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = read_be_u32(&lab, 4, "label count")? as usize;
    if lab.len() != 8 + n_labels {
        return Err(Error::Parse {
            offset: lab.len().min(8 + n_labels),
            message: format!("label payload is {} bytes, expected {}", lab.len(), 8 + n_labels),
        });
    }
    if n_labels != n {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{n} images but {n_labels} labels"),
        });
    }

    let px = rows * cols;
    let out = (0..n)
        .map(|i| Example {
            features: Features::Image {
                h: rows,
                w: cols,
                c: 1,
                data: img[16 + i * px..16 + (i + 1) * px].to_vec(),
            },
            label: lab[8 + i] as u32,
            task_id,
            group_id: None,
        })
        .collect();
    Ok(out)
}

/// Load a CSV with header row: a `label` column, an optional group
/// column, and f64 feature columns in file order.
pub fn load_csv(path: &Path, group_column: Option<&str>, task_id: u32) -> Result<Vec<Example>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(&e))?;
    let headers = reader.headers().map_err(|e| csv_err(&e))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Parse {
            offset: 0,
            message: "CSV needs a `label` column".into(),
        })?;
    let group_col = match group_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Parse {
                offset: 0,
                message: format!("CSV has no `{name}` column"),
            }
        })?),
        None => None,
    };

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(&e))?;
        let offset = record.position().map(|p| p.byte() as usize).unwrap_or(0);
        let field = |i: usize| -> Result<f64> {
            record[i].trim().parse().map_err(|_| Error::Parse {
                offset,
                message: format!("non-numeric field `{}`", &record[i]),
            })
        };
        let label = field(label_col)? as u32;
        let group_id = match group_col {
            Some(i) => Some(field(i)? as u32),
            None => None,
        };
        let mut features = Vec::with_capacity(record.len().saturating_sub(1));
        for i in 0..record.len() {
            if i == label_col || Some(i) == group_col {
                continue;
            }
            features.push(field(i)?);
        }
        out.push(Example {
            features: Features::Vector(features),
            label,
            task_id,
            group_id,
        });
    }
    Ok(out)
}

fn csv_err(e: &csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte() as usize).unwrap_or(0);
    Error::Parse {
        offset,
        message: e.to_string(),
    }
}

// ----- synthetic generators -----

const MEAN_RETRY_BUDGET: usize = 100_000;
const POINT_RETRY_BUDGET: usize = 10_000;

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Deterministic synthetic stream; returns (train, test).
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Vec<Example>, Vec<Example>)> {
    if spec.d == 0 || spec.classes < 2 || spec.per_class == 0 {
        return Err(Error::Config(format!(
            "synthetic spec needs d >= 1, classes >= 2, per_class >= 1; got d={} classes={} per_class={}",
            spec.d, spec.classes, spec.per_class
        )));
    }
    let test_per_class = if spec.test_per_class == 0 {
        (spec.per_class / 5).max(1)
    } else {
        spec.test_per_class
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        SyntheticKind::SphereBlobs => gen_sphere_blobs(spec, test_per_class, &mut rng),
        SyntheticKind::TwoClassMargin => gen_two_class_margin(spec, test_per_class, &mut rng),
        SyntheticKind::BlobImages => gen_blob_images(spec, test_per_class, &mut rng),
    }
}

fn gen_sphere_blobs(
    spec: &SyntheticSpec,
    test_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Example>, Vec<Example>)> {
    // class means on the sphere, pairwise distance >= 1
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    let mut tries = 0;
    while means.len() < spec.classes {
        let cand = random_unit(spec.d, rng);
        if means.iter().all(|m| dist(m, &cand) >= 1.0) {
            means.push(cand);
        } else {
            tries += 1;
            if tries > MEAN_RETRY_BUDGET {
                return Err(Error::Input(format!(
                    "could not place {} separated class means in d = {}",
                    spec.classes, spec.d
                )));
            }
        }
    }

    let mut accepted: Vec<Vec<f64>> = Vec::new();
    let mut sample_point = |mean: &[f64], rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        for _ in 0..POINT_RETRY_BUDGET {
            let mut x: Vec<f64> = mean
                .iter()
                .map(|&m| {
                    let g: f64 = StandardNormal.sample(rng);
                    m + spec.noise * g
                })
                .collect();
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n <= 1e-12 {
                continue;
            }
            for v in x.iter_mut() {
                *v /= n;
            }
            if accepted.iter().all(|p| dist(p, &x) >= spec.lambda_sep) {
                accepted.push(x.clone());
                return Ok(x);
            }
        }
        Err(Error::Input(format!(
            "rejection sampling exceeded {POINT_RETRY_BUDGET} retries at lambda_sep = {}",
            spec.lambda_sep
        )))
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.classes as u32 {
        for i in 0..spec.per_class + test_per_class {
            let x = sample_point(&means[c as usize], rng)?;
            let e = Example {
                features: Features::Vector(x),
                label: c,
                task_id: 0,
                group_id: None,
            };
            if i < spec.per_class {
                train.push(e);
            } else {
                test.push(e);
            }
        }
    }
    assign_groups(spec, &mut train);
    verify_assumption1(&train, &test, spec.lambda_sep)?;
    Ok((train, test))
}

fn gen_two_class_margin(
    spec: &SyntheticSpec,
    test_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if spec.classes != 2 {
        return Err(Error::Config(format!(
            "two_class_margin is binary, got {} classes",
            spec.classes
        )));
    }
    let w = random_unit(spec.d, rng);
    let margin = spec.lambda_sep.max(0.05);
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    let mut counts = [0usize; 2];
    let want = spec.per_class + test_per_class;
    let mut points: Vec<(Vec<f64>, u32)> = Vec::new();
    let mut tries = 0;
    while counts[0] < want || counts[1] < want {
        tries += 1;
        if tries > (want * 2) * POINT_RETRY_BUDGET {
            return Err(Error::Input("margin rejection sampling budget exceeded".into()));
        }
        let x = random_unit(spec.d, rng);
        let score: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        if score.abs() < margin {
            continue;
        }
        let label = if score > 0.0 { 1u32 } else { 0u32 };
        if counts[label as usize] >= want {
            continue;
        }
        if !accepted.iter().all(|p| dist(p, &x) >= spec.lambda_sep) {
            continue;
        }
        accepted.push(x.clone());
        counts[label as usize] += 1;
        points.push((x, label));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut emitted = [0usize; 2];
    for (x, label) in points {
        let e = Example {
            features: Features::Vector(x),
            label,
            task_id: 0,
            group_id: None,
        };
        if emitted[label as usize] < spec.per_class {
            train.push(e);
        } else {
            test.push(e);
        }
        emitted[label as usize] += 1;
    }
    assign_groups(spec, &mut train);
    verify_assumption1(&train, &test, spec.lambda_sep)?;
    Ok((train, test))
}

/// Horizontally symmetric per-class template; flipping an image never
/// changes its class.
fn template(side: usize, class: u32, y: usize, x: usize) -> f64 {
    let cx = (side as f64 - 1.0) / 2.0;
    let fy = (class as f64 + 1.0) * (y as f64 + 0.5) / side as f64;
    let fx = (x as f64 - cx).abs() / side as f64;
    127.5 + 110.0 * (std::f64::consts::TAU * fy).sin() * (std::f64::consts::PI * fx).cos()
}

fn gen_blob_images(
    spec: &SyntheticSpec,
    test_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Example>, Vec<Example>)> {
    let side = (spec.d as f64).sqrt().round() as usize;
    if side * side != spec.d {
        return Err(Error::Config(format!(
            "blob_images needs square d, got {}",
            spec.d
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.classes as u32 {
        for i in 0..spec.per_class + test_per_class {
            let mut data = Vec::with_capacity(spec.d);
            for y in 0..side {
                for x in 0..side {
                    let g: f64 = StandardNormal.sample(rng);
                    let v = template(side, c, y, x) + spec.noise * 255.0 * g;
                    data.push(v.clamp(0.0, 255.0) as u8);
                }
            }
            let e = Example {
                features: Features::Image {
                    h: side,
                    w: side,
                    c: 1,
                    data,
                },
                label: c,
                task_id: 0,
                group_id: None,
            };
            if i < spec.per_class {
                train.push(e);
            } else {
                test.push(e);
            }
        }
    }
    assign_groups(spec, &mut train);
    Ok((train, test))
}

fn assign_groups(spec: &SyntheticSpec, train: &mut [Example]) {
    if let Some(size) = spec.group_size {
        if size > 0 {
            for (i, e) in train.iter_mut().enumerate() {
                e.group_id = Some((i / size) as u32);
            }
        }
    }
}

/// Exact desk-scale scan: every vector example unit-norm to 1e-12, every
/// pair at distance >= lambda_sep.
pub fn verify_assumption1(train: &[Example], test: &[Example], lambda_sep: f64) -> Result<()> {
    let all: Vec<&Vec<f64>> = train
        .iter()
        .chain(test.iter())
        .filter_map(|e| match &e.features {
            Features::Vector(v) => Some(v),
            Features::Image { .. } => None,
        })
        .collect();
    for v in &all {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("norm {n} violates the unit-norm assumption")));
        }
    }
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            if dist(all[i], all[j]) < lambda_sep {
                return Err(Error::Input(format!(
                    "pair ({i}, {j}) closer than lambda_sep = {lambda_sep}"
                )));
            }
        }
    }
    Ok(())
}

// ----- manifest -> task -----

fn apply_normalization(examples: &mut Vec<Example>, norm: Normalization) {
    match norm {
        Normalization::None => {}
        Normalization::UnitNorm | Normalization::Divide255 => {
            for e in examples.iter_mut() {
                let mut flat: Vec<f64> = match &e.features {
                    Features::Vector(v) => v.clone(),
                    Features::Image { data, .. } => data.iter().map(|&b| b as f64).collect(),
                };
                match norm {
                    Normalization::UnitNorm => {
                        let n = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n > 1e-12 {
                            for v in flat.iter_mut() {
                                *v /= n;
                            }
                        }
                    }
                    Normalization::Divide255 => {
                        for v in flat.iter_mut() {
                            *v /= 255.0;
                        }
                    }
                    Normalization::None => unreachable!(),
                }
                e.features = Features::Vector(flat);
            }
        }
    }
}

fn check_labels(examples: &[Example], classes: usize, name: &str) -> Result<()> {
    for e in examples {
        if e.label as usize >= classes {
            return Err(Error::Input(format!(
                "dataset {name}: label {} out of range for {classes} classes",
                e.label
            )));
        }
    }
    Ok(())
}

/// Materialize one manifest into a streamable task. File-backed datasets
/// without explicit test files hold out every fifth example.
pub fn build_task(manifest: &DatasetManifest) -> Result<TaskData> {
    let need = |opt: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
        opt.clone()
            .ok_or_else(|| Error::Config(format!("dataset {}: missing {what}", manifest.name)))
    };
    let (mut train, mut test) = match manifest.format {
        DataFormat::Idx => {
            let train = load_idx(
                &need(&manifest.images, "images")?,
                &need(&manifest.labels, "labels")?,
                manifest.task_id,
            )?;
            match (&manifest.test_images, &manifest.test_labels) {
                (Some(ti), Some(tl)) => (train, load_idx(ti, tl, manifest.task_id)?),
                _ => split_holdout(train),
            }
        }
        DataFormat::Csv => {
            let train = load_csv(
                &need(&manifest.csv, "csv")?,
                manifest.group_column.as_deref(),
                manifest.task_id,
            )?;
            match &manifest.test_csv {
                Some(tc) => (
                    train,
                    load_csv(tc, manifest.group_column.as_deref(), manifest.task_id)?,
                ),
                None => split_holdout(train),
            }
        }
        DataFormat::Synthetic => {
            let spec = manifest.synthetic.as_ref().ok_or_else(|| {
                Error::Config(format!("dataset {}: missing [dataset.synthetic]", manifest.name))
            })?;
            if spec.classes != manifest.classes {
                return Err(Error::Config(format!(
                    "dataset {}: classes = {} but the synthetic spec generates {}",
                    manifest.name, manifest.classes, spec.classes
                )));
            }
            let (mut train, mut test) = gen_synthetic(spec)?;
            for e in train.iter_mut().chain(test.iter_mut()) {
                e.task_id = manifest.task_id;
            }
            (train, test)
        }
    };
    apply_normalization(&mut train, manifest.normalization);
    apply_normalization(&mut test, manifest.normalization);
    check_labels(&train, manifest.classes, &manifest.name)?;
    check_labels(&test, manifest.classes, &manifest.name)?;
    Ok(TaskData {
        task_id: manifest.task_id,
        num_classes: manifest.classes,
        train,
        test,
    })
}

fn split_holdout(all: Vec<Example>) -> (Vec<Example>, Vec<Example>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, e) in all.into_iter().enumerate() {
        if i % 5 == 4 {
            test.push(e);
        } else {
            train.push(e);
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx(dir: &Path, images: &[[u8; 4]], labels: &[u8]) -> (PathBuf, PathBuf) {
        let img_path = dir.join("imgs.idx");
        let lab_path = dir.join("labs.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for im in images {
            img.extend_from_slice(im);
        }
        fs::File::create(&img_path).unwrap().write_all(&img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        fs::File::create(&lab_path).unwrap().write_all(&lab).unwrap();
        (img_path, lab_path)
    }

    #[test]
    fn hand_built_idx_parses() {
        let dir = tempfile::tempdir().unwrap();
        let images = [[0u8, 1, 2, 3], [10, 11, 12, 13], [20, 21, 22, 23], [9, 9, 9, 9]];
        let (ip, lp) = write_idx(dir.path(), &images, &[0, 1, 2, 1]);
        let out = load_idx(&ip, &lp, 3).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[1].label, 1);
        assert_eq!(out[3].task_id, 3);
        match &out[2].features {
            Features::Image { h, w, c, data } => {
                assert_eq!((*h, *w, *c), (2, 2, 1));
                assert_eq!(data, &vec![20, 21, 22, 23]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn idx_errors_carry_byte_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[1, 2, 3, 4]], &[0]);

        // wrong magic
        let mut bytes = fs::read(&ip).unwrap();
        bytes[3] = 0xff;
        fs::write(&ip, &bytes).unwrap();
        match load_idx(&ip, &lp, 0) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("expected parse error at 0, got {other:?}"),
        }

        // truncated payload
        let (ip, lp) = write_idx(dir.path(), &[[1, 2, 3, 4]], &[0]);
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 2]).unwrap();
        match load_idx(&ip, &lp, 0) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,f0,f1,grp\n0,0.5,1.0,7\n1,-0.25,0.0,7\n").unwrap();
        let out = load_csv(&p, Some("grp"), 0).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].group_id, Some(7));
        match &out[1].features {
            Features::Vector(v) => assert_eq!(v, &vec![-0.25, 0.0]),
            _ => panic!(),
        }

        // empty data section
        fs::write(&p, "label,f0\n").unwrap();
        assert!(load_csv(&p, None, 0).unwrap().is_empty());

        // missing label column
        fs::write(&p, "x,y\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p, None, 0), Err(Error::Parse { .. })));

        // non-numeric field
        fs::write(&p, "label,f0\n0,abc\n").unwrap();
        assert!(matches!(load_csv(&p, None, 0), Err(Error::Parse { .. })));
    }

    fn blob_spec() -> SyntheticSpec {
        SyntheticSpec {
            kind: SyntheticKind::SphereBlobs,
            d: 16,
            classes: 4,
            per_class: 50,
            test_per_class: 10,
            lambda_sep: 1e-3,
            noise: 0.1,
            seed: 5,
            group_size: None,
        }
    }

    #[test]
    fn sphere_blobs_satisfy_assumptions_and_are_deterministic() {
        let spec = blob_spec();
        let (train, test) = gen_synthetic(&spec).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 40);
        verify_assumption1(&train, &test, spec.lambda_sep).unwrap();
        let (train2, _) = gen_synthetic(&spec).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn zero_lambda_sep_is_plain_sphere_sampling() {
        let mut spec = blob_spec();
        spec.lambda_sep = 0.0;
        let (train, test) = gen_synthetic(&spec).unwrap();
        verify_assumption1(&train, &test, 0.0).unwrap();
    }

    #[test]
    fn margin_data_is_perceptron_separable() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::TwoClassMargin,
            d: 8,
            classes: 2,
            per_class: 100,
            test_per_class: 20,
            lambda_sep: 0.05,
            noise: 0.0,
            seed: 9,
            group_size: None,
        };
        let (train, _) = gen_synthetic(&spec).unwrap();
        // perceptron oracle: must converge to zero mistakes
        let d = 8;
        let mut w = vec![0.0f64; d];
        let mut converged = false;
        for _ in 0..1000 {
            let mut mistakes = 0;
            for e in &train {
                let x = match &e.features {
                    Features::Vector(v) => v,
                    _ => unreachable!(),
                };
                let y = if e.label == 1 { 1.0 } else { -1.0 };
                let score: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                if score * y <= 0.0 {
                    for (wi, xi) in w.iter_mut().zip(x.iter()) {
                        *wi += y * xi;
                    }
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                converged = true;
                break;
            }
        }
        assert!(converged, "perceptron failed to separate margin data");
    }

    #[test]
    fn blob_images_are_flip_invariant_templates() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::BlobImages,
            d: 36,
            classes: 3,
            per_class: 5,
            test_per_class: 2,
            lambda_sep: 0.0,
            noise: 0.0,
            seed: 1,
            group_size: None,
        };
        let (train, _) = gen_synthetic(&spec).unwrap();
        for e in &train {
            match &e.features {
                Features::Image { h, w, data, .. } => {
                    for y in 0..*h {
                        for x in 0..*w {
                            assert_eq!(data[y * w + x], data[y * w + (w - 1 - x)]);
                        }
                    }
                }
                _ => panic!(),
            }
        }
    }

    #[test]
    fn group_size_assigns_runs() {
        let mut spec = blob_spec();
        spec.group_size = Some(10);
        let (train, _) = gen_synthetic(&spec).unwrap();
        assert_eq!(train[0].group_id, Some(0));
        assert_eq!(train[9].group_id, Some(0));
        assert_eq!(train[10].group_id, Some(1));
    }

    #[test]
    fn build_task_rejects_class_count_mismatch() {
        let manifest = DatasetManifest {
            name: "t".into(),
            format: DataFormat::Synthetic,
            classes: 2, // generator emits 4 classes -> error
            task_id: 0,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            csv: None,
            test_csv: None,
            synthetic: Some(blob_spec()),
            normalization: Normalization::None,
            group_column: None,
        };
        assert!(matches!(build_task(&manifest), Err(Error::Config(_))));
    }

    #[test]
    fn build_task_checks_label_range() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[1, 2, 3, 4]; 5], &[0, 0, 1, 2, 0]);
        let manifest = DatasetManifest {
            name: "t".into(),
            format: DataFormat::Idx,
            classes: 2, // label 2 out of range -> error
            task_id: 0,
            images: Some(ip),
            labels: Some(lp),
            test_images: None,
            test_labels: None,
            csv: None,
            test_csv: None,
            synthetic: None,
            normalization: Normalization::None,
            group_column: None,
        };
        assert!(matches!(build_task(&manifest), Err(Error::Input(_))));
    }

    #[test]
    fn unit_norm_normalization_flattens_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[3, 4, 0, 0]; 5], &[0, 0, 1, 1, 0]);
        let manifest = DatasetManifest {
            name: "t".into(),
            format: DataFormat::Idx,
            classes: 2,
            task_id: 0,
            images: Some(ip),
            labels: Some(lp),
            test_images: None,
            test_labels: None,
            csv: None,
            test_csv: None,
            synthetic: None,
            normalization: Normalization::UnitNorm,
            group_column: None,
        };
        let task = build_task(&manifest).unwrap();
        assert_eq!(task.train.len(), 4);
        assert_eq!(task.test.len(), 1);
        match &task.train[0].features {
            Features::Vector(v) => {
                let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }
}
