//! Synthetic fine-grained datasets: Gaussian clusters arranged in coarse
//! groups with per-group held-out classes as near OOD, plus a far auxiliary
//! OOD pool for exposure during training.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxOodKind {
    UniformBox,
    FarClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_groups: usize,
    pub classes_per_group: usize,
    pub holdout_per_group: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub group_separation: f64,
    pub class_separation: f64,
    pub noise_std: f64,
    pub aux_ood_kind: AuxOodKind,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_groups: 4,
            classes_per_group: 4,
            holdout_per_group: 1,
            samples_per_class: 200,
            input_dim: 2,
            group_separation: 10.0,
            class_separation: 2.0,
            noise_std: 0.6,
            aux_ood_kind: AuxOodKind::UniformBox,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 || self.classes_per_group == 0 || self.samples_per_class == 0 {
            return Err(Error::config("group/class/sample counts must be positive"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.holdout_per_group >= self.classes_per_group {
            return Err(Error::config(
                "holdout_per_group must leave at least one ID class per group",
            ));
        }
        if !(self.group_separation > 0.0) || !(self.class_separation > 0.0) {
            return Err(Error::config("separations must be positive"));
        }
        if self.class_separation >= self.group_separation {
            return Err(Error::config(
                "class_separation must be smaller than group_separation",
            ));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::config("noise_std must be positive"));
        }
        Ok(())
    }

    /// Number of retained ID classes.
    pub fn num_id_classes(&self) -> usize {
        self.num_groups * (self.classes_per_group - self.holdout_per_group)
    }
}

/// Labeled ID sample set; labels are dense 0..K-1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Flatten to a `[N x d]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        rows_to_tensor(&self.inputs)
    }
}

pub fn rows_to_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    Tensor::matrix(rows.len(), d, rows.iter().flatten().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub id_train: LabeledSet,
    pub id_test: LabeledSet,
    pub ood_holdout: Vec<Vec<f64>>,
    pub aux_ood: Vec<Vec<f64>>,
    pub provenance: SyntheticSpec,
}

impl DatasetBundle {
    pub fn num_classes(&self) -> usize {
        self.provenance.num_id_classes()
    }
}

fn unit_gaussian_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Group centers on a circle in the first two coordinates (adjacent centers
/// exactly group_separation apart); class centers on a smaller circle around
/// their group center. One dimensional inputs fall back to a line layout.
fn place_centers(spec: &SyntheticSpec) -> Vec<Vec<Vec<f64>>> {
    let g = spec.num_groups;
    let c = spec.classes_per_group;
    let mut centers = vec![vec![vec![0.0; spec.input_dim]; c]; g];
    for (gi, group) in centers.iter_mut().enumerate() {
        let group_center: Vec<f64> = if spec.input_dim == 1 {
            vec![gi as f64 * spec.group_separation]
        } else if g == 1 {
            vec![0.0; spec.input_dim]
        } else {
            let radius = spec.group_separation / (2.0 * (std::f64::consts::PI / g as f64).sin());
            let angle = 2.0 * std::f64::consts::PI * gi as f64 / g as f64;
            let mut v = vec![0.0; spec.input_dim];
            v[0] = radius * angle.cos();
            v[1] = radius * angle.sin();
            v
        };
        for (ci, class) in group.iter_mut().enumerate() {
            let offset: Vec<f64> = if c == 1 {
                vec![0.0; spec.input_dim]
            } else if spec.input_dim == 1 {
                vec![ci as f64 * spec.class_separation]
            } else {
                let radius =
                    spec.class_separation / (2.0 * (std::f64::consts::PI / c as f64).sin());
                // stagger per group so class layouts are not identical
                let angle = 2.0 * std::f64::consts::PI * (ci as f64 + 0.31 * gi as f64)
                    / c as f64;
                let mut v = vec![0.0; spec.input_dim];
                v[0] = radius * angle.cos();
                v[1] = radius * angle.sin();
                v
            };
            for d in 0..spec.input_dim {
                class[d] = group_center[d] + offset[d];
            }
        }
    }
    centers
}

/// Build the full bundle: clusters, hold-out split, 80/20 train/test, and
/// the auxiliary OOD pool. Deterministic given the spec seed.
pub fn generate(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = place_centers(spec);
    let noise = Normal::new(0.0, spec.noise_std).unwrap();

    let mut id_inputs: Vec<Vec<f64>> = Vec::new();
    let mut id_labels: Vec<usize> = Vec::new();
    let mut ood_holdout: Vec<Vec<f64>> = Vec::new();
    let mut next_label = 0usize;

    for group in &centers {
        // last holdout_per_group classes of each group become evaluation OOD
        let id_count = spec.classes_per_group - spec.holdout_per_group;
        for (ci, center) in group.iter().enumerate() {
            let is_holdout = ci >= id_count;
            let label = if is_holdout {
                usize::MAX
            } else {
                let l = next_label;
                next_label += 1;
                l
            };
            for _ in 0..spec.samples_per_class {
                let sample: Vec<f64> =
                    center.iter().map(|c| c + noise.sample(&mut rng)).collect();
                if is_holdout {
                    ood_holdout.push(sample);
                } else {
                    id_inputs.push(sample);
                    id_labels.push(label);
                }
            }
        }
    }

    // 80/20 split on a shuffled index permutation
    let mut order: Vec<usize> = (0..id_inputs.len()).collect();
    order.shuffle(&mut rng);
    let train_count = (id_inputs.len() * 8) / 10;
    let mut id_train = LabeledSet {
        inputs: Vec::with_capacity(train_count),
        labels: Vec::with_capacity(train_count),
    };
    let mut id_test = LabeledSet {
        inputs: Vec::new(),
        labels: Vec::new(),
    };
    for (pos, &idx) in order.iter().enumerate() {
        let dst = if pos < train_count { &mut id_train } else { &mut id_test };
        dst.inputs.push(id_inputs[idx].clone());
        dst.labels.push(id_labels[idx]);
    }

    // Bounding box over all cluster samples, inflated; aux OOD never uses
    // the held-out class centers.
    let aux_count = spec.num_id_classes() * spec.samples_per_class;
    let all_points = id_inputs.iter().chain(&ood_holdout);
    let mut lo = vec![f64::INFINITY; spec.input_dim];
    let mut hi = vec![f64::NEG_INFINITY; spec.input_dim];
    for p in all_points {
        for d in 0..spec.input_dim {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let aux_ood: Vec<Vec<f64>> = match spec.aux_ood_kind {
        AuxOodKind::UniformBox => {
            let inflate = 1.2;
            let bounds: Vec<(f64, f64)> = (0..spec.input_dim)
                .map(|d| {
                    let mid = (lo[d] + hi[d]) / 2.0;
                    let half = (hi[d] - lo[d]) / 2.0 * inflate;
                    (mid - half, mid + half)
                })
                .collect();
            (0..aux_count)
                .map(|_| {
                    bounds
                        .iter()
                        .map(|&(a, b)| rng.gen_range(a..b))
                        .collect()
                })
                .collect()
        }
        AuxOodKind::FarClusters => {
            let max_norm = id_inputs
                .iter()
                .chain(&ood_holdout)
                .map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0_f64, f64::max);
            let num_far = 2 * spec.num_groups;
            let far_centers: Vec<Vec<f64>> = (0..num_far)
                .map(|_| {
                    unit_gaussian_direction(spec.input_dim, &mut rng)
                        .into_iter()
                        .map(|x| x * max_norm * 2.5)
                        .collect()
                })
                .collect();
            (0..aux_count)
                .map(|i| {
                    let c = &far_centers[i % num_far];
                    c.iter().map(|x| x + noise.sample(&mut rng)).collect()
                })
                .collect()
        }
    };

    Ok(DatasetBundle {
        id_train,
        id_test,
        ood_holdout,
        aux_ood,
        provenance: spec.clone(),
    })
}

/// One epoch of shuffled index batches; the final short batch is retained.
pub fn batches<R: Rng>(len: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

const DATASET_VERSION: &str = "v1";

/// CSV with a header (split, label, x_0..x_{d-1}) plus a sidecar
/// `<path>.meta.json` holding the generating spec.
pub fn save(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let d = bundle.provenance.input_dim;
    let mut out = String::new();
    let coords: Vec<String> = (0..d).map(|i| format!("x_{i}")).collect();
    out.push_str(&format!("split,label,{}\n", coords.join(",")));
    let push_row = |out: &mut String, split: &str, label: Option<usize>, x: &[f64]| {
        let label = label.map(|l| l.to_string()).unwrap_or_default();
        let xs: Vec<String> = x.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        out.push_str(&format!("{split},{label},{}\n", xs.join(",")));
    };
    for (x, l) in bundle.id_train.inputs.iter().zip(&bundle.id_train.labels) {
        push_row(&mut out, "id_train", Some(*l), x);
    }
    for (x, l) in bundle.id_test.inputs.iter().zip(&bundle.id_test.labels) {
        push_row(&mut out, "id_test", Some(*l), x);
    }
    for x in &bundle.ood_holdout {
        push_row(&mut out, "ood_holdout", None, x);
    }
    for x in &bundle.aux_ood {
        push_row(&mut out, "aux_ood", None, x);
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;

    let meta = serde_json::json!({
        "version": DATASET_VERSION,
        "spec": bundle.provenance,
    });
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    std::path::PathBuf::from(p)
}

pub fn load(path: &Path) -> Result<DatasetBundle> {
    let meta_path = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::file(&meta_path, format!("cannot read sidecar: {e}")))?;
    let meta: serde_json::Value = serde_json::from_str(&meta_text)
        .map_err(|e| Error::file(&meta_path, format!("bad sidecar json: {e}")))?;
    let version = meta["version"].as_str().unwrap_or("");
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            expected: DATASET_VERSION.to_string(),
        });
    }
    let spec: SyntheticSpec = serde_json::from_value(meta["spec"].clone())
        .map_err(|e| Error::file(&meta_path, format!("bad spec in sidecar: {e}")))?;

    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::file(path, "empty dataset file"))??;
    let expected_cols = 2 + spec.input_dim;
    if header.split(',').count() != expected_cols {
        return Err(Error::file(path, format!("header has wrong column count: {header:?}")));
    }

    let mut bundle = DatasetBundle {
        id_train: LabeledSet { inputs: vec![], labels: vec![] },
        id_test: LabeledSet { inputs: vec![], labels: vec![] },
        ood_holdout: vec![],
        aux_ood: vec![],
        provenance: spec,
    };
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(Error::file(
                path,
                format!("line {}: expected {} fields, got {}", lineno + 2, expected_cols, fields.len()),
            ));
        }
        let x: Vec<f64> = fields[2..]
            .iter()
            .map(|t| {
                u64::from_str_radix(t, 16).map(f64::from_bits).map_err(|_| {
                    Error::file(path, format!("line {}: bad value {t:?}", lineno + 2))
                })
            })
            .collect::<Result<_>>()?;
        let label = if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse::<usize>().map_err(|_| {
                Error::file(path, format!("line {}: bad label {:?}", lineno + 2, fields[1]))
            })?)
        };
        match (fields[0], label) {
            ("id_train", Some(l)) => {
                bundle.id_train.inputs.push(x);
                bundle.id_train.labels.push(l);
            }
            ("id_test", Some(l)) => {
                bundle.id_test.inputs.push(x);
                bundle.id_test.labels.push(l);
            }
            ("ood_holdout", None) => bundle.ood_holdout.push(x),
            ("aux_ood", None) => bundle.aux_ood.push(x),
            (split, _) => {
                return Err(Error::file(
                    path,
                    format!("line {}: bad split/label combination {split:?}", lineno + 2),
                ))
            }
        }
    }
    Ok(bundle)
}
