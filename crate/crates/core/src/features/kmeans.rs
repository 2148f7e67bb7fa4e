//! K-means over history windows and cosine-similarity features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Frozen cluster centers plus fit metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub centers: Vec<Vec<f64>>,
    /// Summed (unsquared) Euclidean distance after the last update.
    pub final_objective: f64,
    pub iterations_run: usize,
    /// Objective after every update, in order.
    pub objective_history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansOptions {
    pub n_clusters: usize,
    pub seed: u64,
    /// Absolute tolerance on successive objectives; `None` uses
    /// `1e-6 × J(1)`.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
}

impl KMeansOptions {
    pub fn new(n_clusters: usize, seed: u64) -> Self {
        KMeansOptions {
            n_clusters,
            seed,
            epsilon: None,
            max_iter: 300,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest_center(window: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(window, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn assign(&self, window: &[f64]) -> usize {
        nearest_center(window, &self.centers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::Data("cluster model has no centers".into()));
        }
        let dim = self.dim();
        for (j, c) in self.centers.iter().enumerate() {
            if c.len() != dim || !c.iter().all(|v| v.is_finite()) || norm(c) <= 0.0 {
                return Err(Error::Data(format!("cluster center {j} is malformed or zero")));
            }
        }
        Ok(())
    }
}

/// Fits `n_clusters` centers. Assignment uses nearest Euclidean distance,
/// centers move to the mean of their members, and iteration stops once the
/// summed distance changes by at most epsilon.
pub fn kmeans_fit(windows: &[Vec<f64>], opts: KMeansOptions) -> Result<ClusterModel> {
    let n = windows.len();
    let k = opts.n_clusters;
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one cluster".into()));
    }
    if n < k {
        return Err(Error::Data(format!("{n} windows cannot form {k} clusters")));
    }
    let dim = windows[0].len();
    if dim == 0 || windows.iter().any(|w| w.len() != dim) {
        return Err(Error::Data("windows must be non-empty and of equal length".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();
    let mut centers: Vec<Vec<f64>> = picks.iter().map(|&i| windows[i].clone()).collect();

    let mut history: Vec<f64> = Vec::new();
    let mut epsilon = opts.epsilon;
    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    while iterations < opts.max_iter.max(1) {
        iterations += 1;
        for (label, w) in labels.iter_mut().zip(windows) {
            *label = nearest_center(w, &centers);
        }
        repair_empty_clusters(windows, &centers, &mut labels, k);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (w, &l) in windows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(w) {
                *s += v;
            }
        }
        for ((c, s), &cnt) in centers.iter_mut().zip(sums).zip(&counts) {
            for (ci, si) in c.iter_mut().zip(s) {
                *ci = si / cnt as f64;
            }
        }

        let objective: f64 = windows
            .iter()
            .zip(&labels)
            .map(|(w, &l)| sq_dist(w, &centers[l]).sqrt())
            .sum();
        let eps = *epsilon.get_or_insert(1e-6 * objective);
        let converged = history.last().is_some_and(|&prev| (objective - prev).abs() <= eps);
        history.push(objective);
        if converged {
            break;
        }
    }

    let model = ClusterModel {
        centers,
        final_objective: *history.last().unwrap(),
        iterations_run: iterations,
        objective_history: history,
    };
    model.validate()?;
    Ok(model)
}

/// Gives every empty cluster the window farthest from its current center.
fn repair_empty_clusters(windows: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..windows.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, sq_dist(&windows[i], &centers[labels[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        match far {
            Some((i, _)) => labels[i] = empty,
            None => return,
        }
    }
}

/// Cosine similarity between a window and every center.
pub fn similarity(window: &[f64], model: &ClusterModel) -> Result<Vec<f64>> {
    let wn = norm(window);
    if wn == 0.0 {
        return Err(Error::Data("zero-norm window has no cosine similarity".into()));
    }
    model
        .centers
        .iter()
        .map(|c| {
            if c.len() != window.len() {
                return Err(Error::shape(
                    "similarity",
                    format!("window of {} vs center of {}", window.len(), c.len()),
                ));
            }
            let dot: f64 = window.iter().zip(c).map(|(a, b)| a * b).sum();
            Ok((dot / (wn * norm(c))).clamp(-1.0, 1.0))
        })
        .collect()
}
