//! Trailer-driven label construction: each trailer shot is located in the
//! movie by exact cosine search and every matched shot's scene becomes
//! positive.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{ClcError, Result};

/// Default similarity threshold for unit-normalized features.
pub const DEFAULT_THETA: f64 = 0.85;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shot {
    pub id: u64,
    /// First frame (inclusive).
    pub start: u64,
    /// One past the last frame.
    pub end: u64,
    pub scene: u64,
}

/// Shot boundaries and scene membership of one video, in shot order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotTable {
    shots: Vec<Shot>,
}

impl ShotTable {
    pub fn new(shots: Vec<Shot>) -> Result<Self> {
        let table = Self { shots };
        table.validate()?;
        Ok(table)
    }

    /// One shot per scene id run; `scene_lengths[s]` shots in scene `s`,
    /// each `frames` frames long.
    pub fn from_scene_lengths(scene_lengths: &[usize], frames: u64) -> Result<Self> {
        let mut shots = Vec::new();
        for (scene, &n) in scene_lengths.iter().enumerate() {
            for _ in 0..n {
                let i = shots.len() as u64;
                shots.push(Shot {
                    id: i,
                    start: i * frames,
                    end: (i + 1) * frames,
                    scene: scene as u64,
                });
            }
        }
        Self::new(shots)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |i: usize, what: &str| ClcError::Contract(format!("shot table row {i}: {what}"));
        for (i, s) in self.shots.iter().enumerate() {
            if s.end <= s.start {
                return Err(bad(i, "end must be after start"));
            }
            if i > 0 {
                let p = &self.shots[i - 1];
                if s.id <= p.id {
                    return Err(bad(i, "shot ids must increase"));
                }
                if s.start != p.end {
                    return Err(bad(i, "shots must be contiguous and non-overlapping"));
                }
                if s.scene < p.scene {
                    return Err(bad(i, "scene ids must be non-decreasing"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn shots(&self) -> &[Shot] {
        &self.shots
    }

    /// Half-open row range of the scene containing row `i`.
    pub fn scene_span(&self, i: usize) -> (usize, usize) {
        let scene = self.shots[i].scene;
        let mut a = i;
        while a > 0 && self.shots[a - 1].scene == scene {
            a -= 1;
        }
        let mut b = i + 1;
        while b < self.shots.len() && self.shots[b].scene == scene {
            b += 1;
        }
        (a, b)
    }

    /// Whitespace-separated rows `shot_id start end scene_id`; `#` starts a
    /// comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut shots = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let fields = data_fields(line);
            if fields.is_empty() {
                continue;
            }
            let err = |msg: String| ClcError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", fields.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad integer `{s}`")));
            shots.push(Shot {
                id: num(fields[0])?,
                start: num(fields[1])?,
                end: num(fields[2])?,
                scene: num(fields[3])?,
            });
        }
        Self::new(shots)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# shot_id start end scene_id\n");
        for s in &self.shots {
            out.push_str(&format!("{} {} {} {}\n", s.id, s.start, s.end, s.scene));
        }
        out
    }
}

fn data_fields(line: &str) -> Vec<&str> {
    let line = line.split('#').next().unwrap_or("");
    line.split_whitespace().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    TrailerMatched,
    SceneExpanded,
    Background,
    SyntheticNoise,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::TrailerMatched => "trailer-matched",
            Provenance::SceneExpanded => "scene-expanded",
            Provenance::Background => "background",
            Provenance::SyntheticNoise => "synthetic-noise",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "trailer-matched" => Provenance::TrailerMatched,
            "scene-expanded" => Provenance::SceneExpanded,
            "background" => Provenance::Background,
            "synthetic-noise" => Provenance::SyntheticNoise,
            _ => return Err(format!("unknown provenance `{s}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackEntry {
    pub shot_id: u64,
    pub label: u8,
    pub provenance: Provenance,
    /// Best similarity of a trailer shot matched to this shot.
    pub similarity: Option<f64>,
}

/// Per-shot labels with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTrack {
    pub entries: Vec<TrackEntry>,
}

impl LabelTrack {
    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.label == 1).count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rows `shot_id label provenance similarity`, with `-` for no similarity.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# shot_id label provenance similarity\n");
        for e in &self.entries {
            let sim = e.similarity.map_or("-".to_owned(), |s| format!("{s:.17e}"));
            out.push_str(&format!("{} {} {} {sim}\n", e.shot_id, e.label, e.provenance));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let fields = data_fields(line);
            if fields.is_empty() {
                continue;
            }
            let err = |msg: String| ClcError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", fields.len())));
            }
            let shot_id = fields[0].parse().map_err(|_| err("bad shot id".into()))?;
            let label = match fields[1] {
                "0" => 0,
                "1" => 1,
                other => return Err(err(format!("label `{other}` is not 0 or 1"))),
            };
            let provenance = fields[2].parse().map_err(err)?;
            let similarity = match fields[3] {
                "-" => None,
                s => Some(s.parse().map_err(|_| err(format!("bad similarity `{s}`")))?),
            };
            entries.push(TrackEntry {
                shot_id,
                label,
                provenance,
                similarity,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub trailer_shot: usize,
    pub movie_shot: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchOutcome {
    /// Sorted by trailer shot.
    pub matches: Vec<Match>,
    pub skipped_trailer_rows: usize,
    pub skipped_movie_rows: usize,
}

fn row_norms(m: &Tensor) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// Exact cosine search: for each trailer shot the movie shot with the
/// largest similarity (earliest on ties), kept when it reaches `theta`.
/// Rows with zero norm are skipped and counted.
pub fn match_trailer_shots(trailer: &Tensor, movie: &Tensor, theta: f64) -> Result<MatchOutcome> {
    if trailer.cols() != movie.cols() {
        return Err(ClcError::shape(
            "match_trailer_shots",
            format!("trailer width {} vs movie width {}", trailer.cols(), movie.cols()),
        ));
    }
    if theta.is_nan() {
        return Err(ClcError::Config("theta must be a number".into()));
    }
    let tn = row_norms(trailer);
    let mn = row_norms(movie);
    let matches: Vec<Option<Match>> = (0..trailer.rows())
        .into_par_iter()
        .map(|i| {
            if tn[i] == 0.0 {
                return None;
            }
            let q = trailer.row(i);
            let mut best: Option<(usize, f64)> = None;
            for (j, &norm) in mn.iter().enumerate() {
                if norm == 0.0 {
                    continue;
                }
                let dot: f64 = q.iter().zip(movie.row(j)).map(|(a, b)| a * b).sum();
                let sim = (dot / (tn[i] * norm)).clamp(-1.0, 1.0);
                if best.is_none_or(|(_, s)| sim > s) {
                    best = Some((j, sim));
                }
            }
            best.filter(|&(_, s)| s >= theta).map(|(j, s)| Match {
                trailer_shot: i,
                movie_shot: j,
                similarity: s,
            })
        })
        .collect();
    Ok(MatchOutcome {
        matches: matches.into_iter().flatten().collect(),
        skipped_trailer_rows: tn.iter().filter(|&&n| n == 0.0).count(),
        skipped_movie_rows: mn.iter().filter(|&&n| n == 0.0).count(),
    })
}

/// Marks every shot of every scene holding a matched shot as positive.
pub fn expand_to_scenes(matches: &[Match], shots: &ShotTable) -> Result<LabelTrack> {
    let n = shots.len();
    let mut best: Vec<Option<f64>> = vec![None; n];
    for m in matches {
        if m.movie_shot >= n {
            return Err(ClcError::Contract(format!(
                "matched movie shot {} outside a table of {n} shots",
                m.movie_shot
            )));
        }
        let slot = &mut best[m.movie_shot];
        *slot = Some(slot.map_or(m.similarity, |s| s.max(m.similarity)));
    }
    let mut positive = vec![false; n];
    for (j, b) in best.iter().enumerate() {
        if b.is_some() && !positive[j] {
            let (a, e) = shots.scene_span(j);
            positive[a..e].fill(true);
        }
    }
    let entries = shots
        .shots()
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let provenance = match (best[j], positive[j]) {
                (Some(_), _) => Provenance::TrailerMatched,
                (None, true) => Provenance::SceneExpanded,
                (None, false) => Provenance::Background,
            };
            TrackEntry {
                shot_id: s.id,
                label: u8::from(positive[j]),
                provenance,
                similarity: best[j],
            }
        })
        .collect();
    Ok(LabelTrack { entries })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelStats {
    pub matches: usize,
    pub matched_scenes: usize,
    pub positives: usize,
    pub shots: usize,
    pub positive_proportion: f64,
    pub skipped_trailer_rows: usize,
    pub skipped_movie_rows: usize,
    pub warnings: Vec<String>,
}

/// Matching followed by scene expansion, plus summary statistics.
pub fn build_training_labels(
    trailer: &Tensor,
    movie: &Tensor,
    shots: &ShotTable,
    theta: f64,
) -> Result<(LabelTrack, LabelStats)> {
    if shots.len() != movie.rows() {
        return Err(ClcError::shape(
            "build_training_labels",
            format!("{} table rows for {} movie shots", shots.len(), movie.rows()),
        ));
    }
    let outcome = match_trailer_shots(trailer, movie, theta)?;
    let track = expand_to_scenes(&outcome.matches, shots)?;
    let mut scenes: Vec<u64> = outcome
        .matches
        .iter()
        .map(|m| shots.shots()[m.movie_shot].scene)
        .collect();
    scenes.sort_unstable();
    scenes.dedup();

    let mut warnings = Vec::new();
    if outcome.matches.is_empty() {
        warnings.push(format!("no trailer shot reached similarity {theta}; track is all background"));
    }
    if outcome.skipped_trailer_rows + outcome.skipped_movie_rows > 0 {
        warnings.push(format!(
            "skipped zero-norm rows: {} trailer, {} movie",
            outcome.skipped_trailer_rows, outcome.skipped_movie_rows
        ));
    }
    let positives = track.positives();
    let stats = LabelStats {
        matches: outcome.matches.len(),
        matched_scenes: scenes.len(),
        positives,
        shots: shots.len(),
        positive_proportion: if shots.is_empty() {
            0.0
        } else {
            positives as f64 / shots.len() as f64
        },
        skipped_trailer_rows: outcome.skipped_trailer_rows,
        skipped_movie_rows: outcome.skipped_movie_rows,
        warnings,
    };
    Ok((track, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ShotTable {
        ShotTable::from_scene_lengths(&[2, 3, 1, 4], 10).unwrap()
    }

    #[test]
    fn scene_closure_for_single_match() {
        let m = [Match {
            trailer_shot: 0,
            movie_shot: 3,
            similarity: 0.9,
        }];
        let track = expand_to_scenes(&m, &table()).unwrap();
        assert_eq!(track.labels(), [0, 0, 1, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(track.entries[3].provenance, Provenance::TrailerMatched);
        assert_eq!(track.entries[2].provenance, Provenance::SceneExpanded);
        assert_eq!(track.entries[0].provenance, Provenance::Background);
    }

    #[test]
    fn second_match_in_same_scene_changes_no_label() {
        let one = [Match { trailer_shot: 0, movie_shot: 2, similarity: 0.9 }];
        let two = [one[0], Match { trailer_shot: 1, movie_shot: 4, similarity: 0.95 }];
        let a = expand_to_scenes(&one, &table()).unwrap();
        let b = expand_to_scenes(&two, &table()).unwrap();
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn zero_matches_give_background() {
        let track = expand_to_scenes(&[], &table()).unwrap();
        assert_eq!(track.positives(), 0);
    }

    #[test]
    fn identical_row_matches_itself() {
        let movie = Tensor::from_rows(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0]]).unwrap();
        let trailer = Tensor::from_rows(&[&[0.6, 0.8]]).unwrap();
        let out = match_trailer_shots(&trailer, &movie, 0.99).unwrap();
        assert_eq!(out.matches.len(), 1);
        assert_eq!(out.matches[0].movie_shot, 1);
        assert!((out.matches[0].similarity - 1.0).abs() < 1e-15);
        assert!(match_trailer_shots(&trailer, &movie, 1.0 + 1e-9).unwrap().matches.is_empty());
    }

    #[test]
    fn ties_go_to_earliest_and_zero_rows_are_skipped() {
        let movie = Tensor::from_rows(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 0.0]]).unwrap();
        let trailer = Tensor::from_rows(&[&[3.0, 0.0], &[0.0, 0.0]]).unwrap();
        let out = match_trailer_shots(&trailer, &movie, -1.0).unwrap();
        assert_eq!(out.matches.len(), 1);
        assert_eq!(out.matches[0].movie_shot, 1);
        assert_eq!((out.skipped_trailer_rows, out.skipped_movie_rows), (1, 1));
    }

    #[test]
    fn text_round_trips() {
        let t = table();
        assert_eq!(ShotTable::parse(&t.to_text(), Path::new("t")).unwrap(), t);
        let m = [Match { trailer_shot: 0, movie_shot: 6, similarity: 0.123456789 }];
        let track = expand_to_scenes(&m, &t).unwrap();
        assert_eq!(LabelTrack::parse(&track.to_text(), Path::new("l")).unwrap(), track);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let p = Path::new("t");
        assert!(ShotTable::parse("0 0 10 0\n1 12 20 0\n", p).is_err());
        assert!(ShotTable::parse("0 0 10 1\n1 10 20 0\n", p).is_err());
        assert!(matches!(
            ShotTable::parse("0 0 10\n", p),
            Err(ClcError::Parse { line: 1, .. })
        ));
    }
}
