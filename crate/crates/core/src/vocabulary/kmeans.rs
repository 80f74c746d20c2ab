//! DTW k-means: k-means++ seeding, Lloyd iterations, DBA centroid updates.

use super::dtw::{dtw_distance, dtw_path};
use super::VocabConfig;
use crate::delineation::WaveType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-type fit statistics.
#[derive(Debug, Clone)]
pub struct TypeFitStats {
    pub wave_type: WaveType,
    /// Sum of member-to-centroid DTW after each assignment pass.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    /// Cluster index per fitting wave (post-subsampling order is the input
    /// order; subsampled fits report assignments for the sampled subset).
    pub final_assignment: Vec<usize>,
    pub fitted_on: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub per_type: Vec<TypeFitStats>,
}

pub(super) struct TypeFitOutcome {
    pub centroids: Vec<Vec<f64>>,
    pub stats: TypeFitStats,
}

/// DTW Barycenter Averaging with a monotonicity guard: each pass aligns every
/// member to the current average and replaces each coordinate by the mean of
/// the member samples aligned to it; a pass is kept only if the total DTW
/// cost does not increase, so the returned sequence never costs more than
/// `init`.
pub fn dba_mean(
    members: &[&[f64]],
    init: &[f64],
    iters: usize,
    band: Option<usize>,
) -> Vec<f64> {
    assert!(!members.is_empty(), "DBA needs at least one member");
    assert!(!init.is_empty());
    let mut avg = init.to_vec();
    let mut cost: f64 = members.iter().map(|m| dtw_distance(m, &avg, band)).sum();
    for _ in 0..iters {
        let mut sums = vec![0.0; avg.len()];
        let mut counts = vec![0usize; avg.len()];
        for m in members {
            let (_, path) = dtw_path(m, &avg, band);
            for (i, j) in path {
                sums[j] += m[i];
                counts[j] += 1;
            }
        }
        // Boundary-complete paths touch every coordinate of the average.
        let candidate: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s / c.max(1) as f64)
            .collect();
        let cand_cost: f64 = members
            .iter()
            .map(|m| dtw_distance(m, &candidate, band))
            .sum();
        if cand_cost <= cost {
            avg = candidate;
            cost = cand_cost;
        } else {
            break;
        }
    }
    avg
}

/// Linear-interpolation resize used to bring seed members to the common
/// centroid length.
fn resize(wave: &[f64], len: usize) -> Vec<f64> {
    assert!(len >= 1 && !wave.is_empty());
    if wave.len() == len {
        return wave.to_vec();
    }
    if wave.len() == 1 {
        return vec![wave[0]; len];
    }
    (0..len)
        .map(|i| {
            let pos = if len == 1 {
                0.0
            } else {
                i as f64 * (wave.len() - 1) as f64 / (len - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(wave.len() - 1);
            let frac = pos - lo as f64;
            wave[lo] * (1.0 - frac) + wave[hi] * frac
        })
        .collect()
}

fn lower_median_length(waves: &[&[f64]]) -> usize {
    let mut lengths: Vec<usize> = waves.iter().map(|w| w.len()).collect();
    lengths.sort_unstable();
    lengths[(lengths.len() - 1) / 2]
}

/// k-means++ seeding under DTW: first seed uniform, the rest drawn with
/// probability proportional to squared distance from the chosen set.
fn seed_centroids(
    waves: &[&[f64]],
    k: usize,
    centroid_len: usize,
    band: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..waves.len());
    centroids.push(resize(waves[first], centroid_len));
    let mut min_d2: Vec<f64> = waves
        .iter()
        .map(|w| dtw_distance(w, &centroids[0], band).powi(2))
        .collect();
    while centroids.len() < k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total <= 0.0 {
            // All remaining points coincide with a centroid; fall back to a
            // uniform draw.
            rng.gen_range(0..waves.len())
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut idx = 0;
            for (i, &d) in min_d2.iter().enumerate() {
                idx = i;
                if target < d {
                    break;
                }
                target -= d;
            }
            idx
        };
        let seed = resize(waves[pick], centroid_len);
        for (w, d) in waves.iter().zip(min_d2.iter_mut()) {
            let nd = dtw_distance(w, &seed, band).powi(2);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.push(seed);
    }
    centroids
}

fn assign_all(
    waves: &[&[f64]],
    centroids: &[Vec<f64>],
    band: Option<usize>,
) -> (Vec<usize>, f64) {
    let mut assignment = Vec::with_capacity(waves.len());
    let mut inertia = 0.0;
    for w in waves {
        let mut best = (0usize, f64::INFINITY);
        for (i, c) in centroids.iter().enumerate() {
            let d = dtw_distance(w, c, band);
            if d < best.1 {
                best = (i, d);
            }
        }
        assignment.push(best.0);
        inertia += best.1;
    }
    (assignment, inertia)
}

/// Fit one wave type's model on (possibly subsampled) prepared waves.
pub(super) fn fit_type(
    prepared: &[Vec<f64>],
    k: usize,
    cfg: &VocabConfig,
    wave_type: WaveType,
) -> TypeFitOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (wave_type as u64).wrapping_mul(0x9E37));
    // Subsample for fitting when the corpus is large; keep order stable.
    let fit_set: Vec<&[f64]> = if prepared.len() > cfg.fit_sample_cap.max(k) {
        let mut idx: Vec<usize> = (0..prepared.len()).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx.truncate(cfg.fit_sample_cap.max(k));
        idx.sort_unstable();
        idx.iter().map(|&i| prepared[i].as_slice()).collect()
    } else {
        prepared.iter().map(|w| w.as_slice()).collect()
    };

    let centroid_len = lower_median_length(&fit_set);
    let mut centroids = seed_centroids(&fit_set, k, centroid_len, cfg.dtw_band, &mut rng);

    let (mut assignment, mut inertia) = assign_all(&fit_set, &centroids, cfg.dtw_band);
    let mut inertia_log = vec![inertia];
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        for (ci, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64]> = fit_set
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == ci)
                .map(|(w, _)| *w)
                .collect();
            // An emptied cluster keeps its previous centroid.
            if !members.is_empty() {
                *centroid = dba_mean(&members, centroid, cfg.dba_iters, cfg.dtw_band);
            }
        }
        let (next_assignment, next_inertia) = assign_all(&fit_set, &centroids, cfg.dtw_band);
        inertia_log.push(next_inertia);
        let converged = next_assignment == assignment;
        assignment = next_assignment;
        inertia = next_inertia;
        if converged {
            break;
        }
    }
    let _ = inertia;

    TypeFitOutcome {
        centroids,
        stats: TypeFitStats {
            wave_type,
            inertia: inertia_log,
            iterations,
            final_assignment: assignment,
            fitted_on: fit_set.len(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dba_fixed_point_on_single_member() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(dba_mean(&[&x], &x, 5, None), x);
    }

    #[test]
    fn dba_of_twin_members_is_the_member() {
        let x = vec![0.5, -1.0, 2.0, 0.0];
        assert_eq!(dba_mean(&[&x, &x], &x, 3, None), x);
    }

    #[test]
    fn dba_of_two_constant_sequences_is_their_mean_after_one_pass() {
        let a = vec![0.0, 0.0, 0.0];
        let b = vec![2.0, 2.0, 2.0];
        let out = dba_mean(&[&a, &b], &a, 1, None);
        assert_eq!(out, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn dba_never_increases_total_cost() {
        let members: Vec<Vec<f64>> = vec![
            vec![0.0, 1.0, 2.0, 1.0, 0.0],
            vec![0.0, 2.0, 1.5, 0.0],
            vec![0.5, 1.5, 2.5, 1.5, 0.5, 0.0],
        ];
        let refs: Vec<&[f64]> = members.iter().map(|m| m.as_slice()).collect();
        let init = vec![0.0, 1.0, 1.0, 0.0];
        let init_cost: f64 = refs.iter().map(|m| dtw_distance(m, &init, None)).sum();
        let out = dba_mean(&refs, &init, 8, None);
        let out_cost: f64 = refs.iter().map(|m| dtw_distance(m, &out, None)).sum();
        assert!(out_cost <= init_cost);
    }

    #[test]
    fn resize_preserves_endpoints() {
        let w = vec![1.0, 5.0, 3.0];
        let r = resize(&w, 7);
        assert_eq!(r.len(), 7);
        assert_eq!(r[0], 1.0);
        assert_eq!(r[6], 3.0);
    }
}
