//! Regional summaries, test–retest CoV and structural covariance networks.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::volume::{check_grid, LabelVolume, Volume4D};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStat {
    pub mean: f64,
    pub count: usize,
}

/// Per-label statistics; labels absent from the map are omitted.
pub type RegionStats = BTreeMap<u32, RegionStat>;

/// Mean of a scalar (first-volume) map within each non-zero label.
pub fn region_means(map: &Volume4D, labels: &LabelVolume) -> Result<RegionStats> {
    check_grid(map.spatial_dims(), labels.dims())?;
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&label, &value) in labels.values().iter().zip(map.volume(0)) {
        if label != 0 {
            let e = sums.entry(label).or_insert((0.0, 0));
            e.0 += value;
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(label, (sum, count))| (label, RegionStat { mean: sum / count as f64, count }))
        .collect())
}

/// Two-session CoV in percent: population standard deviation over the mean,
/// which reduces to `100·|x1 − x2| / (x1 + x2)`.
pub fn cov_pair(x1: f64, x2: f64) -> Option<f64> {
    let sum = x1 + x2;
    (sum != 0.0).then(|| 100.0 * (x1 - x2).abs() / sum.abs())
}

/// Per-region CoV (%) between two sessions of one subject.
pub fn cov_within_subject(s1: &RegionStats, s2: &RegionStats) -> Result<BTreeMap<u32, f64>> {
    if !s1.keys().eq(s2.keys()) {
        return Err(Error::RegionMismatch);
    }
    s1.iter()
        .zip(s2.values())
        .map(|((&label, a), b)| cov_pair(a.mean, b.mean).map(|c| (label, c)).ok_or(Error::ZeroMean(label)))
        .collect()
}

/// Unweighted average over the regions in `class` for each subject, then
/// over subjects. Regions of `class` missing from a subject are skipped.
pub fn aggregate_cov(per_subject: &[BTreeMap<u32, f64>], class: &[u32]) -> Option<f64> {
    let subject_means: Vec<f64> = per_subject
        .iter()
        .filter_map(|covs| {
            let vals: Vec<f64> = class.iter().filter_map(|r| covs.get(r).copied()).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    (!subject_means.is_empty()).then(|| subject_means.iter().sum::<f64>() / subject_means.len() as f64)
}

/// Subjects × regions table of regional means.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalTable {
    pub regions: Vec<u32>,
    /// One row per subject, one column per region.
    pub rows: Vec<Vec<f64>>,
}

impl RegionalTable {
    /// Build from per-subject stats, keeping regions present in every subject.
    pub fn from_stats(subjects: &[RegionStats]) -> Self {
        let regions: Vec<u32> = match subjects.first() {
            Some(first) => first
                .keys()
                .copied()
                .filter(|r| subjects.iter().all(|s| s.contains_key(r)))
                .collect(),
            None => Vec::new(),
        };
        let rows = subjects
            .iter()
            .map(|s| regions.iter().map(|r| s[r].mean).collect())
            .collect();
        Self { regions, rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScnMatrix {
    pub regions: Vec<u32>,
    pub subjects: usize,
    /// Row-major `R × R`.
    pub values: Vec<f64>,
}

impl ScnMatrix {
    pub fn size(&self) -> usize {
        self.regions.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.regions.len() + j]
    }
}

/// Pearson correlation across subjects for every region pair.
pub fn scn_build(table: &RegionalTable) -> Result<ScnMatrix> {
    let s = table.rows.len();
    if s < 3 {
        return Err(Error::TooFewSubjects { min: 3, actual: s });
    }
    let r = table.regions.len();
    for row in &table.rows {
        if row.len() != r {
            return Err(Error::LengthMismatch { left: r, right: row.len() });
        }
    }
    let mut centered = vec![vec![0.0; s]; r];
    let mut norms = vec![0.0; r];
    for j in 0..r {
        let mean = table.rows.iter().map(|row| row[j]).sum::<f64>() / s as f64;
        for (k, row) in table.rows.iter().enumerate() {
            centered[j][k] = row[j] - mean;
        }
        norms[j] = libm::sqrt(centered[j].iter().map(|v| v * v).sum::<f64>());
        if norms[j] == 0.0 {
            return Err(Error::ZeroVarianceRegion(table.regions[j]));
        }
    }
    let mut values = vec![0.0; r * r];
    for i in 0..r {
        values[i * r + i] = 1.0;
        for j in (i + 1)..r {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i * r + j] = c;
            values[j * r + i] = c;
        }
    }
    Ok(ScnMatrix { regions: table.regions.clone(), subjects: s, values })
}

/// Mean absolute difference over the strict upper triangle.
pub fn scn_mae(a: &ScnMatrix, b: &ScnMatrix) -> Result<f64> {
    if a.regions != b.regions {
        return Err(Error::RegionMismatch);
    }
    let r = a.size();
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..r {
        for j in (i + 1)..r {
            sum += (a.get(i, j) - b.get(i, j)).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::RegionMismatch);
    }
    Ok(sum / n as f64)
}

/// Session-to-session SCN difference; same measure as [`scn_mae`].
pub fn scn_repeatability(session1: &ScnMatrix, session2: &ScnMatrix) -> Result<f64> {
    scn_mae(session1, session2)
}
