//! Synthetic dataset generators exercising context-dependent routing.
//!
//! Inputs live on random orthonormal cluster directions with a magnitude
//! drawn independently of the cluster, so cluster identity is carried by
//! direction only. Targets apply a distinct low-rank map per cluster on
//! top of the shared frozen base map.

use crate::error::{Error, Result};
use crate::losses::Target;
use crate::numerics::matrix::{axpy, dot, norm, Matrix};
use crate::numerics::rng::{Rng, Stream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGenSpec {
    pub seed: u64,
    pub clusters: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub n_train_per_cluster: usize,
    pub n_eval_per_cluster: usize,
    pub noise: f64,
    /// Rank of each per-cluster target map.
    pub delta_rank: usize,
}

impl TaskGenSpec {
    pub fn desk_default(seed: u64) -> Self {
        TaskGenSpec {
            seed,
            clusters: 4,
            d_in: 64,
            d_out: 64,
            n_train_per_cluster: 128,
            n_eval_per_cluster: 32,
            noise: 0.05,
            delta_rank: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub name: String,
    pub spec: TaskGenSpec,
    pub centers: Vec<Vec<f64>>,
    pub train: Split,
    pub eval: Split,
}

impl TaskDataset {
    pub fn d_in(&self) -> usize {
        self.spec.d_in
    }
}

/// Modified Gram-Schmidt on Gaussian draws; returns `n` orthonormal
/// directions in R^d.
pub fn orthonormal_directions(n: usize, d: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if n > d {
        return Err(Error::InvalidParameter(format!(
            "cannot orthonormalize {n} directions in dimension {d}"
        )));
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while dirs.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        for u in &dirs {
            let proj = dot(&v, u);
            axpy(&mut v, -proj, u);
        }
        let len = norm(&v);
        if len < 1e-8 {
            continue; // numerically degenerate draw, resample
        }
        for x in &mut v {
            *x /= len;
        }
        dirs.push(v);
    }
    Ok(dirs)
}

fn sample_split(
    spec: &TaskGenSpec,
    centers: &[Vec<f64>],
    deltas: &[Matrix],
    w0: &Matrix,
    n_per_cluster: usize,
    rng: &mut Rng,
) -> Result<Split> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut clusters = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_cluster {
            let scale = rng.next_range(0.5, 1.5);
            let mut x: Vec<f64> = center.iter().map(|v| v * scale).collect();
            if spec.noise > 0.0 {
                for xi in &mut x {
                    *xi += spec.noise * rng.next_gaussian();
                }
            }
            let mut y = w0.matvec(&x)?;
            axpy(&mut y, 1.0, &deltas[c].matvec(&x)?);
            inputs.push(x);
            targets.push(Target::Vector(y));
            clusters.push(c);
        }
    }
    Ok(Split {
        inputs,
        targets,
        clusters,
    })
}

/// Random low-rank map sum_{l} u_l v_l^T with unit-norm factors scaled so
/// outputs are O(1) on unit inputs.
fn random_low_rank(d_out: usize, d_in: usize, rank: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(d_out, d_in);
    let scale = 1.0 / (rank as f64).sqrt();
    for _ in 0..rank {
        let mut u: Vec<f64> = (0..d_out).map(|_| rng.next_gaussian()).collect();
        let mut v: Vec<f64> = (0..d_in).map(|_| rng.next_gaussian()).collect();
        let (nu, nv) = (norm(&u), norm(&v));
        for x in &mut u {
            *x /= nu;
        }
        for x in &mut v {
            *x /= nv;
        }
        m.add_outer(&u, &v, scale);
    }
    m
}

/// Contextual regression dataset around the frozen base map `w0`.
pub fn gen_contextual_regression(spec: &TaskGenSpec, w0: &Matrix) -> Result<TaskDataset> {
    gen_with_centers(spec, w0, None, "contextual_regression".into())
}

fn gen_with_centers(
    spec: &TaskGenSpec,
    w0: &Matrix,
    fixed_centers: Option<Vec<Vec<f64>>>,
    name: String,
) -> Result<TaskDataset> {
    if spec.clusters < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 clusters, got {}",
            spec.clusters
        )));
    }
    if w0.rows() != spec.d_out || w0.cols() != spec.d_in {
        return Err(Error::dim(
            "gen_contextual_regression",
            format!("W0 of shape {}x{}", spec.d_out, spec.d_in),
            format!("{}x{}", w0.rows(), w0.cols()),
        ));
    }
    let mut rng = Rng::for_stream(spec.seed, Stream::Data);
    let centers = match fixed_centers {
        Some(c) => c,
        None => orthonormal_directions(spec.clusters, spec.d_in, &mut rng)?,
    };
    let deltas: Vec<Matrix> = (0..spec.clusters)
        .map(|_| random_low_rank(spec.d_out, spec.d_in, spec.delta_rank, &mut rng))
        .collect();
    let train = sample_split(spec, &centers, &deltas, w0, spec.n_train_per_cluster, &mut rng)?;
    let eval = sample_split(spec, &centers, &deltas, w0, spec.n_eval_per_cluster, &mut rng)?;
    Ok(TaskDataset {
        name,
        spec: spec.clone(),
        centers,
        train,
        eval,
    })
}

/// `count` tasks whose cluster-direction sets are mutually orthonormal
/// across tasks, sharing one base map.
pub fn gen_task_family(
    base_seed: u64,
    count: usize,
    spec_template: &TaskGenSpec,
    w0: &Matrix,
) -> Result<Vec<TaskDataset>> {
    if count == 0 {
        return Err(Error::InvalidParameter("task count must be >= 1".into()));
    }
    let total_dirs = count * spec_template.clusters;
    if total_dirs > spec_template.d_in {
        return Err(Error::InvalidParameter(format!(
            "{count} tasks x {} clusters = {total_dirs} directions exceed d_in = {}",
            spec_template.clusters, spec_template.d_in
        )));
    }
    let mut dir_rng = Rng::for_stream(base_seed, Stream::Data);
    let all_dirs = orthonormal_directions(total_dirs, spec_template.d_in, &mut dir_rng)?;
    let mut tasks = Vec::with_capacity(count);
    for t in 0..count {
        let mut spec = spec_template.clone();
        // distinct cluster maps and samples per task
        spec.seed = base_seed.wrapping_add(1 + t as u64);
        let centers =
            all_dirs[t * spec.clusters..(t + 1) * spec.clusters].to_vec();
        tasks.push(gen_with_centers(
            &spec,
            w0,
            Some(centers),
            format!("task_{t}"),
        )?);
    }
    Ok(tasks)
}

/// The shared frozen base map, generated from its own seed.
pub fn base_map(seed: u64, d_out: usize, d_in: usize) -> Matrix {
    let mut rng = Rng::for_stream(seed, Stream::WeightInit);
    Matrix::gaussian(d_out, d_in, 1.0 / (d_in as f64).sqrt(), &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> TaskGenSpec {
        TaskGenSpec {
            seed,
            clusters: 3,
            d_in: 16,
            d_out: 8,
            n_train_per_cluster: 10,
            n_eval_per_cluster: 4,
            noise: 0.05,
            delta_rank: 1,
        }
    }

    #[test]
    fn deterministic_regeneration() {
        let spec = small_spec(5);
        let w0 = base_map(1, 8, 16);
        let a = gen_contextual_regression(&spec, &w0).unwrap();
        let b = gen_contextual_regression(&spec, &w0).unwrap();
        assert_eq!(a.train.inputs, b.train.inputs);
        match (&a.train.targets[0], &b.train.targets[0]) {
            (Target::Vector(x), Target::Vector(y)) => assert_eq!(x, y),
            _ => panic!("expected vector targets"),
        }
    }

    #[test]
    fn noiseless_inputs_lie_on_centers() {
        let mut spec = small_spec(6);
        spec.noise = 0.0;
        spec.n_train_per_cluster = 1;
        let w0 = base_map(1, 8, 16);
        let ds = gen_contextual_regression(&spec, &w0).unwrap();
        for (x, &c) in ds.train.inputs.iter().zip(&ds.train.clusters) {
            // x must be parallel to its (unit-norm) cluster center, with the
            // radial scale confined to [0.5, 1.5).
            let cosine = dot(x, &ds.centers[c]) / norm(x);
            assert!((cosine - 1.0).abs() < 1e-10, "cosine {cosine}");
            assert!((0.5..1.5).contains(&norm(x)), "norm {}", norm(x));
        }
    }

    #[test]
    fn nearest_center_classifies_noiseless_inputs() {
        let mut spec = small_spec(16);
        spec.noise = 0.0;
        let w0 = base_map(1, 8, 16);
        let ds = gen_contextual_regression(&spec, &w0).unwrap();
        for (x, &c) in ds.train.inputs.iter().zip(&ds.train.clusters) {
            let best = (0..spec.clusters)
                .max_by(|&a, &b| {
                    dot(x, &ds.centers[a])
                        .abs()
                        .partial_cmp(&dot(x, &ds.centers[b]).abs())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(best, c);
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        let mut spec = small_spec(7);
        spec.clusters = 20; // > d_in = 16
        let w0 = base_map(1, 8, 16);
        assert!(gen_contextual_regression(&spec, &w0).is_err());
    }

    #[test]
    fn family_directions_mutually_orthonormal() {
        let spec = TaskGenSpec {
            seed: 0,
            clusters: 4,
            d_in: 96,
            d_out: 8,
            n_train_per_cluster: 2,
            n_eval_per_cluster: 1,
            noise: 0.0,
            delta_rank: 1,
        };
        let w0 = base_map(1, 8, 96);
        let family = gen_task_family(11, 3, &spec, &w0).unwrap();
        assert_eq!(family.len(), 3);
        let dirs: Vec<&Vec<f64>> = family.iter().flat_map(|t| t.centers.iter()).collect();
        assert_eq!(dirs.len(), 12);
        for i in 0..dirs.len() {
            for j in 0..dirs.len() {
                let d = dot(dirs[i], dirs[j]);
                if i == j {
                    assert!((d - 1.0).abs() < 1e-10);
                } else {
                    assert!(d.abs() < 1e-10, "dirs {i},{j} dot {d}");
                }
            }
        }
    }

    #[test]
    fn magnitude_not_informative_of_cluster() {
        // per-cluster mean of ||x|| should agree across clusters
        let mut spec = small_spec(21);
        spec.n_train_per_cluster = 2000;
        spec.noise = 0.0;
        let w0 = base_map(1, 8, 16);
        let ds = gen_contextual_regression(&spec, &w0).unwrap();
        let mut sums = vec![0.0; spec.clusters];
        let mut counts = vec![0usize; spec.clusters];
        for (x, &c) in ds.train.inputs.iter().zip(&ds.train.clusters) {
            sums[c] += norm(x);
            counts[c] += 1;
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        for m in &means {
            // E||x|| = 1.0 (uniform scale on [0.5, 1.5) times unit center)
            assert!((m - 1.0).abs() < 0.02, "cluster mean {m}");
        }
    }
}
