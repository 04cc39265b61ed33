//! Offline k-means (k-means++ seeding, Lloyd iterations, best of many
//! restarts) used as the reference clustering for trained banks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

const MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances of points to their centre.
    pub inertia: f64,
}

impl KMeansResult {
    /// Mean squared distance of each cluster's members to its centre.
    pub fn spreads(&self, points: &[Vec<f64>]) -> Vec<f64> {
        let k = self.centers.len();
        let mut sum = vec![0.0; k];
        let mut n = vec![0usize; k];
        for (p, &a) in points.iter().zip(&self.assignment) {
            sum[a] += sq_dist(p, &self.centers[a]);
            n[a] += 1;
        }
        sum.iter()
            .zip(&n)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect()
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            d2.iter()
                .position(|&d| {
                    r -= d;
                    r < 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeansResult {
    let dim = points[0].len();
    let k = centers.len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (p, a) in points.iter().zip(assignment.iter_mut()) {
            let (best, _) = nearest(p, &centers);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (j, center) in centers.iter_mut().enumerate() {
            if counts[j] > 0 {
                for (c, s) in center.iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum();
    KMeansResult { centers, assignment, inertia }
}

/// Best-inertia clustering over `restarts` seeded k-means++ runs.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || restarts == 0 {
        return Err(HarnessError::InvalidArgument("k and restarts must be positive".into()));
    }
    if points.len() < k {
        return Err(HarnessError::InvalidArgument(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(HarnessError::InvalidArgument("points differ in dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(points, seed_plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Injective assignment of each item in `from` to a distinct item in `to`
/// minimising the summed distance. Exhaustive; meant for a handful of items.
/// Returns `(from_index, to_index, distance)` in `from` order.
pub fn match_min_cost(
    from: &[Vec<f64>],
    to: &[Vec<f64>],
    dist: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<Vec<(usize, usize, f64)>> {
    if from.len() > to.len() {
        return Err(HarnessError::InvalidArgument(format!(
            "cannot match {} items onto {} distinct targets",
            from.len(),
            to.len()
        )));
    }
    if to.len() > 10 {
        return Err(HarnessError::InvalidArgument("exhaustive matching limited to 10 targets".into()));
    }
    let cost: Vec<Vec<f64>> = from
        .iter()
        .map(|a| to.iter().map(|b| dist(a, b)).collect())
        .collect();

    fn search(
        i: usize,
        cost: &[Vec<f64>],
        used: &mut [bool],
        current: &mut Vec<usize>,
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if acc >= best.0 {
            return;
        }
        if i == cost.len() {
            *best = (acc, current.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                current.push(j);
                search(i + 1, cost, used, current, acc + cost[i][j], best);
                current.pop();
                used[j] = false;
            }
        }
    }

    let mut best = (f64::INFINITY, Vec::new());
    search(0, &cost, &mut vec![false; to.len()], &mut Vec::new(), 0.0, &mut best);
    Ok(best
        .1
        .iter()
        .enumerate()
        .map(|(i, &j)| (i, j, cost[i][j]))
        .collect())
}
