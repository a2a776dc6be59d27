//! Median smoothing of score curves, per-video average precision and the
//! evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::datasets::FeatureSequence;
use crate::error::{ClcError, Result};
use crate::model::ClcModel;

/// Half-width used when none is configured.
pub const DEFAULT_FILTER_K: usize = 9;

/// Running median with half-width `k`. Positions with a full `2k+1` window
/// get its middle sorted element; the first and last `k` positions are
/// copied through.
pub fn median_filter(y: &[f64], k: usize) -> Vec<f64> {
    let t = y.len();
    let mut s = y.to_vec();
    if k == 0 || t <= 2 * k {
        return s;
    }
    let mut window = Vec::with_capacity(2 * k + 1);
    for i in k..t - k {
        window.clear();
        window.extend_from_slice(&y[i - k..=i + k]);
        window.sort_unstable_by(f64::total_cmp);
        s[i] = window[k];
    }
    s
}

/// Shot order by descending score, lower index first on ties.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean of precision@r over the ranks r holding a positive. `None` when
/// there is no positive.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(ClcError::shape(
            "average_precision",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ClcError::NonFinite { op: "average_precision" });
    }
    let total = labels.iter().filter(|&&g| g == 1).count();
    if total == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &i) in rank_order(scores).iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(Some(sum / total as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoResult {
    pub id: String,
    pub shots: usize,
    pub positives: usize,
    /// `None` for videos without positives (excluded from the mean).
    pub ap: Option<f64>,
    pub raw: Vec<f64>,
    pub filtered: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub fingerprint: String,
    pub filter_k: usize,
    pub checkpoint_hash: String,
    /// Sorted by video id.
    pub videos: Vec<VideoResult>,
}

impl EvalReport {
    pub fn excluded(&self) -> usize {
        self.videos.iter().filter(|v| v.ap.is_none()).count()
    }

    /// Mean AP over videos with at least one positive.
    pub fn map(&self) -> Option<f64> {
        let aps: Vec<f64> = self.videos.iter().filter_map(|v| v.ap).collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# fingerprint {}", self.fingerprint);
        let _ = writeln!(out, "# filter_k {}", self.filter_k);
        let _ = writeln!(out, "# checkpoint {}", self.checkpoint_hash);
        let _ = writeln!(out, "# video_id shots positives ap");
        for v in &self.videos {
            let ap = v.ap.map_or("excluded".to_owned(), |a| format!("{a:.12}"));
            let _ = writeln!(out, "{} {} {} {ap}", v.id, v.shots, v.positives);
        }
        let _ = writeln!(out, "excluded {}", self.excluded());
        match self.map() {
            Some(m) => {
                let _ = writeln!(out, "mAP {m:.12}");
            }
            None => out.push_str("mAP undefined\n"),
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// One `<id>.curve.txt` per video: shot index, raw score, filtered score.
    pub fn write_curves(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for v in &self.videos {
            let mut text = String::from("# shot raw filtered\n");
            for (i, (r, f)) in v.raw.iter().zip(&v.filtered).enumerate() {
                let _ = writeln!(text, "{i} {r:.12} {f:.12}");
            }
            fs::write(dir.join(format!("{}.curve.txt", v.id)), text)?;
        }
        Ok(())
    }
}

/// Scores one video from a precomputed curve.
pub fn score_video(id: &str, raw: Vec<f64>, labels: &[u8], k: usize) -> Result<VideoResult> {
    let filtered = median_filter(&raw, k);
    let ap = average_precision(&filtered, labels)?;
    Ok(VideoResult {
        id: id.to_owned(),
        shots: labels.len(),
        positives: labels.iter().filter(|&&g| g == 1).count(),
        ap,
        raw,
        filtered,
    })
}

/// Runs the multi-modal path over every video in non-overlapping windows,
/// smooths with half-width `k` and computes AP per video.
pub fn evaluate(
    model: &ClcModel,
    videos: &[FeatureSequence],
    k: usize,
    window: usize,
) -> Result<Vec<VideoResult>> {
    let mut results = videos
        .par_iter()
        .map(|v| {
            let labels = v.labels()?;
            let raw = model.predict_curve(&v.visual, &v.audio, window)?;
            score_video(&v.id, raw, labels, k)
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(results)
}
