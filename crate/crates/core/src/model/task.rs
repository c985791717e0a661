use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelVector};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LeastSquares,
    SoftmaxRegression,
}

/// Parameters of a synthetic task. `noise` is the target noise for least
/// squares and the blob standard deviation for softmax regression;
/// `separation` scales the class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default)]
    pub n_samples: usize,
    pub n_features: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_shards")]
    pub shards_per_worker: usize,
}

fn default_classes() -> usize {
    2
}
fn default_noise() -> f64 {
    0.1
}
fn default_separation() -> f64 {
    3.0
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_shards() -> usize {
    2
}

impl TaskSpec {
    pub fn least_squares(n_samples: usize, n_features: usize, noise: f64) -> Self {
        Self {
            kind: TaskKind::LeastSquares,
            n_samples,
            n_features,
            n_classes: 1,
            noise,
            separation: default_separation(),
            test_fraction: default_test_fraction(),
            shards_per_worker: default_shards(),
        }
    }

    pub fn softmax(n_samples: usize, n_features: usize, n_classes: usize, noise: f64) -> Self {
        Self {
            kind: TaskKind::SoftmaxRegression,
            n_samples,
            n_features,
            n_classes,
            noise,
            separation: default_separation(),
            test_fraction: default_test_fraction(),
            shards_per_worker: default_shards(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "values")]
pub enum Targets {
    Real(Vec<f64>),
    Class(Vec<usize>),
}

/// A dataset split into a held-out test set and per-worker training shards.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    /// Row-major `n_samples × n_features`.
    pub features: Vec<f64>,
    pub targets: Targets,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Training indices held by each worker; empty for data-less workers.
    pub partition: Vec<Vec<usize>>,
    /// Generating weights for least squares (bias last).
    pub ground_truth: Option<ModelVector>,
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        self.spec.kind
    }

    pub fn n_features(&self) -> usize {
        self.spec.n_features
    }

    pub fn n_classes(&self) -> usize {
        match self.spec.kind {
            TaskKind::LeastSquares => 1,
            TaskKind::SoftmaxRegression => self.spec.n_classes,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.features.len() / self.spec.n_features
    }

    /// Parameter count: one bias per output.
    pub fn param_dim(&self) -> usize {
        self.n_classes() * (self.spec.n_features + 1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.spec.n_features;
        &self.features[i * f..(i + 1) * f]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        match &self.targets {
            Targets::Class(l) => Some(l[i]),
            Targets::Real(_) => None,
        }
    }

    pub fn worker_indices(&self, worker: usize) -> Result<&[usize], ModelError> {
        self.partition
            .get(worker)
            .map(Vec::as_slice)
            .ok_or(ModelError::UnknownWorker {
                worker,
                n: self.partition.len(),
            })
    }

    /// Per-worker label counts; `None` for regression tasks.
    pub fn label_histograms(&self) -> Option<Vec<Vec<usize>>> {
        let Targets::Class(labels) = &self.targets else {
            return None;
        };
        Some(
            self.partition
                .iter()
                .map(|idx| {
                    let mut h = vec![0; self.spec.n_classes];
                    for &i in idx {
                        h[labels[i]] += 1;
                    }
                    h
                })
                .collect(),
        )
    }

    /// Writes `task.json` (metadata and splits) and `data.csv` (one row per
    /// sample, features then target) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let meta = TaskMeta {
            spec: self.spec.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
            partition: self.partition.clone(),
            ground_truth: self.ground_truth.clone(),
        };
        fs::write(dir.join("task.json"), serde_json::to_vec_pretty(&meta)?)?;
        let mut w = csv::Writer::from_path(dir.join("data.csv"))?;
        let mut header: Vec<String> = (0..self.n_features()).map(|f| format!("x{f}")).collect();
        header.push("target".into());
        w.write_record(&header)?;
        for i in 0..self.n_samples() {
            let mut rec: Vec<String> = self.row(i).iter().map(|x| format!("{x:.16e}")).collect();
            rec.push(match &self.targets {
                Targets::Real(y) => format!("{:.16e}", y[i]),
                Targets::Class(l) => l[i].to_string(),
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let meta: TaskMeta = serde_json::from_slice(&fs::read(dir.join("task.json"))?)?;
        let mut rdr = csv::Reader::from_path(dir.join("data.csv"))?;
        let f = meta.spec.n_features;
        let mut features = Vec::new();
        let mut reals = Vec::new();
        let mut classes = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != f + 1 {
                return Err(ModelError::InvalidParams(format!(
                    "data row has {} fields, expected {}",
                    rec.len(),
                    f + 1
                )));
            }
            for x in rec.iter().take(f) {
                features.push(parse_f64(x)?);
            }
            let t = &rec[f];
            match meta.spec.kind {
                TaskKind::LeastSquares => reals.push(parse_f64(t)?),
                TaskKind::SoftmaxRegression => classes.push(
                    t.parse()
                        .map_err(|_| ModelError::InvalidParams(format!("bad label {t:?}")))?,
                ),
            }
        }
        let targets = match meta.spec.kind {
            TaskKind::LeastSquares => Targets::Real(reals),
            TaskKind::SoftmaxRegression => Targets::Class(classes),
        };
        Ok(Task {
            spec: meta.spec,
            features,
            targets,
            train: meta.train,
            test: meta.test,
            partition: meta.partition,
            ground_truth: meta.ground_truth,
        })
    }
}

fn parse_f64(s: &str) -> Result<f64, ModelError> {
    s.parse()
        .map_err(|_| ModelError::InvalidParams(format!("bad number {s:?}")))
}

#[derive(Serialize, Deserialize)]
struct TaskMeta {
    spec: TaskSpec,
    train: Vec<usize>,
    test: Vec<usize>,
    partition: Vec<Vec<usize>>,
    ground_truth: Option<ModelVector>,
}

/// Generates a synthetic task deterministically from `seed`.
///
/// Least squares: Gaussian features, a Gaussian ground-truth weight vector
/// and bias, targets `x·w* + b* + noise·ε`. Softmax regression: balanced
/// Gaussian blobs around class means drawn with scale `separation`.
/// A `test_fraction` share of samples is held out; the training split is
/// initially unpartitioned.
pub fn make_task(spec: &TaskSpec, seed: u64) -> Result<Task, ModelError> {
    if spec.n_features == 0 || spec.n_samples < spec.n_features {
        return Err(ModelError::InvalidParams(format!(
            "need n_samples ({}) >= n_features ({}) > 0",
            spec.n_samples, spec.n_features
        )));
    }
    if spec.kind == TaskKind::SoftmaxRegression && spec.n_classes < 2 {
        return Err(ModelError::InvalidParams(
            "softmax regression needs at least 2 classes".into(),
        ));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(ModelError::InvalidParams(format!("noise {} must be >= 0", spec.noise)));
    }
    if !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(ModelError::InvalidParams(format!(
            "test fraction {} outside [0, 1)",
            spec.test_fraction
        )));
    }
    let mut rng = rng_for(seed, Stream::Task, &[]);
    let (n, f) = (spec.n_samples, spec.n_features);
    let mut gauss = move || -> f64 { rng.sample(StandardNormal) };

    let (features, targets, ground_truth) = match spec.kind {
        TaskKind::LeastSquares => {
            let truth: Vec<f64> = (0..=f).map(|_| gauss()).collect();
            let mut xs = Vec::with_capacity(n * f);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let row: Vec<f64> = (0..f).map(|_| gauss()).collect();
                let clean: f64 = row.iter().zip(&truth).map(|(x, w)| x * w).sum::<f64>() + truth[f];
                ys.push(clean + spec.noise * gauss());
                xs.extend(row);
            }
            (xs, Targets::Real(ys), Some(ModelVector::new(truth)))
        }
        TaskKind::SoftmaxRegression => {
            let c = spec.n_classes;
            let means: Vec<f64> = (0..c * f).map(|_| spec.separation * gauss()).collect();
            let mut xs = Vec::with_capacity(n * f);
            let mut labels = Vec::with_capacity(n);
            for s in 0..n {
                let label = s % c;
                xs.extend((0..f).map(|k| means[label * f + k] + spec.noise * gauss()));
                labels.push(label);
            }
            (xs, Targets::Class(labels), None)
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, Stream::Task, &[1]));
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    train.sort_unstable();
    Ok(Task {
        spec: spec.clone(),
        features,
        targets,
        train,
        test,
        partition: Vec::new(),
        ground_truth,
    })
}

/// Splits the training set into disjoint label-shard partitions of exactly
/// `dataset_sizes[w]` samples each. A size of 0 marks a data-less worker.
///
/// Training indices are sorted by label (by target value for regression),
/// cut into `shards_per_worker` shards per data-holding worker and dealt to
/// workers in a seeded order with a stride, so a worker's shards come from
/// different parts of the label range. Shards are then trimmed, or padded
/// from trimmed leftovers of the worker's own labels, to the exact size.
pub fn partition_noniid(
    task: &Task,
    dataset_sizes: &[usize],
    shards_per_worker: usize,
    seed: u64,
) -> Result<Task, ModelError> {
    if shards_per_worker == 0 {
        return Err(ModelError::InvalidParams("shards_per_worker must be >= 1".into()));
    }
    let total: usize = dataset_sizes.iter().sum();
    if total > task.train.len() {
        return Err(ModelError::InsufficientData(format!(
            "requested {total} samples but the training split holds {}",
            task.train.len()
        )));
    }
    let holders: Vec<usize> = (0..dataset_sizes.len())
        .filter(|&w| dataset_sizes[w] > 0)
        .collect();
    let mut out = task.clone();
    out.partition = vec![Vec::new(); dataset_sizes.len()];
    if holders.is_empty() {
        return Ok(out);
    }
    let n_shards = holders.len() * shards_per_worker;
    let mut rng = rng_for(seed, Stream::Partition, &[]);

    // Each shard is (label or None, indices).
    let mut shards: Vec<(Option<usize>, Vec<usize>)> = Vec::with_capacity(n_shards);
    match &task.targets {
        Targets::Class(labels) => {
            let c = task.spec.n_classes;
            let mut by_class = vec![Vec::new(); c];
            for &i in &task.train {
                by_class[labels[i]].push(i);
            }
            for idx in by_class.iter_mut() {
                idx.shuffle(&mut rng);
            }
            let quotas = largest_remainder(
                &by_class.iter().map(Vec::len).collect::<Vec<_>>(),
                n_shards,
            );
            for (class, idx) in by_class.into_iter().enumerate() {
                for chunk in split_even(idx, quotas[class]) {
                    shards.push((Some(class), chunk));
                }
            }
        }
        Targets::Real(ys) => {
            let mut idx = task.train.clone();
            idx.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]).then(a.cmp(&b)));
            for chunk in split_even(idx, n_shards) {
                shards.push((None, chunk));
            }
        }
    }

    let mut slots = holders.clone();
    slots.shuffle(&mut rng);
    let stride = holders.len();
    let mut spare: Vec<(Option<usize>, usize)> = Vec::new();
    let mut own_labels: Vec<Vec<usize>> = vec![Vec::new(); dataset_sizes.len()];
    let mut pool_of: Vec<Vec<usize>> = vec![Vec::new(); dataset_sizes.len()];
    for (slot, &worker) in slots.iter().enumerate() {
        let mut k = slot;
        while k < shards.len() && (k - slot) / stride < shards_per_worker {
            let (label, idx) = &shards[k];
            if let Some(l) = label {
                if !own_labels[worker].contains(l) {
                    own_labels[worker].push(*l);
                }
            }
            pool_of[worker].extend(idx.iter().copied());
            k += stride;
        }
    }

    let label_of = |i: usize| task.label(i);
    for &worker in &holders {
        let pool = &mut pool_of[worker];
        pool.shuffle(&mut rng);
        let want = dataset_sizes[worker];
        if pool.len() > want {
            spare.extend(pool.drain(want..).map(|i| (label_of(i), i)));
        }
    }
    for &worker in &holders {
        let want = dataset_sizes[worker];
        let mut pool = std::mem::take(&mut pool_of[worker]);
        let mut k = 0;
        while pool.len() < want && k < spare.len() {
            let fits = match spare[k].0 {
                Some(l) => own_labels[worker].is_empty() || own_labels[worker].contains(&l),
                None => true,
            };
            if fits {
                pool.push(spare.swap_remove(k).1);
            } else {
                k += 1;
            }
        }
        if pool.len() < want {
            return Err(ModelError::InsufficientData(format!(
                "worker {worker} needs {want} samples but only {} remain for its labels",
                pool.len()
            )));
        }
        pool.sort_unstable();
        out.partition[worker] = pool;
    }
    Ok(out)
}

/// Apportions `total` slots proportionally to `weights`.
fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| total as f64 * w as f64 / sum as f64)
        .collect();
    let mut q: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = q.iter().sum();
    for &i in order.iter().take(total - assigned) {
        q[i] += 1;
    }
    q
}

fn split_even(idx: Vec<usize>, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return Vec::new();
    }
    let n = idx.len();
    (0..parts)
        .map(|p| idx[p * n / parts..(p + 1) * n / parts].to_vec())
        .collect()
}
