//! Synthetic Gaussian-mixture classification tasks and non-IID partitioning.

use crate::error::{Error, Result};
use crate::rng::{purpose, Stream};

/// Distance of each class mean from the origin.
pub const CLASS_MEAN_RADIUS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

/// One user's slice of the training pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    /// Classes present in the shard, ascending and contiguous.
    pub classes: Vec<usize>,
    pub samples: Vec<Sample>,
}

/// Builds a balanced Gaussian-mixture task.
///
/// Class `c` is an isotropic cloud with standard deviation `spread` around a
/// mean at distance [`CLASS_MEAN_RADIUS`] from the origin. When
/// `feature_dim >= num_classes` the means sit on distinct coordinate axes;
/// otherwise they are seeded random directions. Train and test sets hold
/// `samples_per_class` independent draws per class each.
pub fn make_synthetic_task(
    seed: u64,
    num_classes: usize,
    feature_dim: usize,
    samples_per_class: usize,
    spread: f64,
) -> Result<Task> {
    if num_classes < 2 {
        return Err(Error::param("num_classes must be at least 2"));
    }
    if feature_dim < 2 {
        return Err(Error::param("feature_dim must be at least 2"));
    }
    if samples_per_class < 10 {
        return Err(Error::param("samples_per_class must be at least 10"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::param("spread must be a positive finite number"));
    }

    let means = class_means(seed, num_classes, feature_dim);
    let draw = |split: u64| -> Vec<Sample> {
        let mut out = Vec::with_capacity(num_classes * samples_per_class);
        for (c, mean) in means.iter().enumerate() {
            let mut stream = Stream::new(seed, purpose::TASK, split, c as u64);
            for _ in 0..samples_per_class {
                let features = mean.iter().map(|m| m + spread * stream.normal()).collect();
                out.push(Sample { features, label: c });
            }
        }
        out
    };

    Ok(Task {
        train: draw(1),
        test: draw(2),
        num_classes,
        feature_dim,
    })
}

fn class_means(seed: u64, num_classes: usize, feature_dim: usize) -> Vec<Vec<f64>> {
    if feature_dim >= num_classes {
        return (0..num_classes)
            .map(|c| {
                let mut m = vec![0.0; feature_dim];
                m[c] = CLASS_MEAN_RADIUS;
                m
            })
            .collect();
    }
    let mut stream = Stream::new(seed, purpose::TASK, 0, u64::MAX);
    (0..num_classes)
        .map(|_| {
            let raw: Vec<f64> = (0..feature_dim).map(|_| stream.normal()).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.iter().map(|v| v * CLASS_MEAN_RADIUS / norm).collect()
        })
        .collect()
}

/// Splits the training pool among users by class, in class order.
///
/// With `num_users <= num_classes` the classes are cut into contiguous blocks;
/// the first `num_classes % num_users` users get one extra class. With more
/// users than classes, user `u` gets class `u % num_classes` and the samples of
/// a class are divided into contiguous chunks among the users sharing it.
pub fn partition_by_class(task: &Task, num_users: usize) -> Result<Vec<Shard>> {
    if num_users == 0 {
        return Err(Error::param("num_users must be positive"));
    }
    let c = task.num_classes;
    let by_class: Vec<Vec<&Sample>> = (0..c)
        .map(|k| task.train.iter().filter(|s| s.label == k).collect())
        .collect();

    if num_users <= c {
        let base = c / num_users;
        let extra = c % num_users;
        let mut next = 0;
        let shards = (0..num_users)
            .map(|u| {
                let size = base + usize::from(u < extra);
                let classes: Vec<usize> = (next..next + size).collect();
                next += size;
                let samples = classes
                    .iter()
                    .flat_map(|&k| by_class[k].iter().map(|s| (*s).clone()))
                    .collect();
                Shard { classes, samples }
            })
            .collect();
        return Ok(shards);
    }

    let mut shards = Vec::with_capacity(num_users);
    for u in 0..num_users {
        let class = u % c;
        let sharing: Vec<usize> = (0..num_users).filter(|v| v % c == class).collect();
        let rank = sharing.iter().position(|&v| v == u).unwrap_or(0);
        let pool = &by_class[class];
        let lo = pool.len() * rank / sharing.len();
        let hi = pool.len() * (rank + 1) / sharing.len();
        shards.push(Shard {
            classes: vec![class],
            samples: pool[lo..hi].iter().map(|s| (*s).clone()).collect(),
        });
    }
    Ok(shards)
}
