//! Dataset splitting at recording granularity.

use super::{rollouts_by_recording, Dataset, SceneError, SceneResult, SplitManifest};

/// Split a dataset into train/val/test at recording granularity using
/// largest-remainder rounding over recordings. Ratios must sum to 1. Every
/// split with a nonzero ratio is kept non-empty when enough recordings exist.
pub fn split(dataset: &Dataset, ratios: (f64, f64, f64)) -> SceneResult<SplitManifest> {
    let (tr, va, te) = ratios;
    if (tr + va + te - 1.0).abs() > 1e-9 || tr < 0.0 || va < 0.0 || te < 0.0 {
        return Err(SceneError::Split(format!("ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let by_rec = rollouts_by_recording(&dataset.rollouts);
    let rec_ids: Vec<u64> = by_rec.keys().copied().collect();
    let n = rec_ids.len();
    let ratios = [tr, va, te];
    let active = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < active {
        return Err(SceneError::Split(format!(
            "{n} recordings cannot fill {active} splits"
        )));
    }

    // Largest-remainder apportionment.
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }

    // Keep nonzero-ratio splits non-empty.
    loop {
        let Some(empty) = (0..3).find(|&i| ratios[i] > 0.0 && counts[i] == 0) else {
            break;
        };
        let donor = (0..3).max_by_key(|&i| counts[i]).expect("three splits");
        if counts[donor] <= 1 {
            break;
        }
        counts[donor] -= 1;
        counts[empty] += 1;
    }

    let train: Vec<u64> = rec_ids[..counts[0]].to_vec();
    let val: Vec<u64> = rec_ids[counts[0]..counts[0] + counts[1]].to_vec();
    let test: Vec<u64> = rec_ids[counts[0] + counts[1]..].to_vec();
    Ok(SplitManifest { schema_version: 1, train, val, test })
}
