//! Tracking quality, accuracy and robustness over per-frame results.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::EpisodeTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub iou: f64,
    pub predicted_empty: bool,
    pub gt_empty: bool,
}

impl FrameResult {
    /// Maps a tracker quality to a frame result. An empty prediction has no
    /// overlap with a visible object, and a mask on an empty frame has none
    /// either, so both score IoU 0; the empty-empty case stores IoU 0 and is
    /// credited by [`quality`].
    pub fn from_quality(q: f64, predicted_empty: bool, gt_empty: bool) -> Self {
        let iou = if predicted_empty || gt_empty { 0.0 } else { q };
        Self {
            iou,
            predicted_empty,
            gt_empty,
        }
    }

    pub fn q(&self) -> f64 {
        if self.predicted_empty && self.gt_empty {
            1.0
        } else {
            self.iou
        }
    }
}

/// Frame results for a whole video: frame 0 (the prompt, scored as a perfect
/// match) followed by every step of the episode.
pub fn frame_results(trace: &EpisodeTrace) -> Vec<FrameResult> {
    std::iter::once(FrameResult {
        iou: 1.0,
        predicted_empty: false,
        gt_empty: false,
    })
    .chain(
        trace
            .steps
            .iter()
            .map(|s| FrameResult::from_quality(s.info.q, s.info.predicted_empty, s.info.gt_empty)),
    )
    .collect()
}

pub fn quality(results: &[FrameResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::precondition("quality of an empty result list"));
    }
    Ok(results.iter().map(FrameResult::q).sum::<f64>() / results.len() as f64)
}

/// A metric value together with whether its denominator was empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub degenerate: bool,
}

/// Mean IoU over frames with nonzero IoU; 0 (degenerate) when there are none.
pub fn accuracy(results: &[FrameResult]) -> Measured {
    let (sum, count) = results
        .iter()
        .filter(|r| r.iou > 0.0)
        .fold((0.0, 0usize), |(s, n), r| (s + r.iou, n + 1));
    if count == 0 {
        Measured {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Measured {
            value: sum / count as f64,
            degenerate: false,
        }
    }
}

/// Fraction of visible-object frames with nonzero IoU; 1 (degenerate) when
/// the object is never visible.
pub fn robustness(results: &[FrameResult]) -> Measured {
    let visible = results.iter().filter(|r| !r.gt_empty);
    let (hits, total) = visible.fold((0usize, 0usize), |(h, n), r| {
        (h + usize::from(r.iou > 0.0), n + 1)
    });
    if total == 0 {
        Measured {
            value: 1.0,
            degenerate: true,
        }
    } else {
        Measured {
            value: hits as f64 / total as f64,
            degenerate: false,
        }
    }
}

/// Per-video summary record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub frames: usize,
    pub quality: f64,
    pub accuracy: f64,
    pub robustness: f64,
    pub accuracy_degenerate: bool,
    pub robustness_degenerate: bool,
}

impl VideoMetrics {
    pub fn from_results(video_id: impl Into<String>, results: &[FrameResult]) -> Result<Self> {
        let acc = accuracy(results);
        let rob = robustness(results);
        Ok(Self {
            video_id: video_id.into(),
            frames: results.len(),
            quality: quality(results)?,
            accuracy: acc.value,
            robustness: rob.value,
            accuracy_degenerate: acc.degenerate,
            robustness_degenerate: rob.degenerate,
        })
    }

    pub fn from_trace(trace: &EpisodeTrace) -> Result<Self> {
        Self::from_results(trace.video_id.clone(), &frame_results(trace))
    }
}

/// One line of a per-frame results stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: usize,
    pub iou: f64,
    pub predicted_empty: bool,
    pub gt_empty: bool,
}

pub fn frame_records(results: &[FrameResult]) -> Vec<FrameRecord> {
    results
        .iter()
        .enumerate()
        .map(|(t, r)| FrameRecord {
            t,
            iou: r.iou,
            predicted_empty: r.predicted_empty,
            gt_empty: r.gt_empty,
        })
        .collect()
}

/// One method's aggregate scores, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub name: String,
    pub quality: f64,
    pub accuracy: f64,
    pub robustness: f64,
}

impl MethodRow {
    fn values(&self) -> [f64; 3] {
        [self.quality, self.accuracy, self.robustness]
    }
}

/// A rendered cell: percentage and its signed delta against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub percent: f64,
    pub delta: f64,
}

impl Cell {
    pub fn delta_text(&self) -> String {
        let s = format!("{:+.2}", self.delta);
        if s == "-0.00" {
            "+0.00".to_string()
        } else {
            s
        }
    }

    pub fn text(&self) -> String {
        format!("{} {:.2}", self.delta_text(), self.percent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub cells: [Cell; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn comparison_table(rows: &[MethodRow], baseline: &str) -> Result<ComparisonTable> {
    let base = rows
        .iter()
        .find(|r| r.name == baseline)
        .ok_or_else(|| Error::config(format!("baseline row {baseline:?} not among the rows")))?
        .values();
    let rows = rows
        .iter()
        .map(|row| {
            let v = row.values();
            let cell = |i: usize| Cell {
                percent: v[i] * 100.0,
                delta: (v[i] - base[i]) * 100.0,
            };
            ComparisonRow {
                name: row.name.clone(),
                cells: [cell(0), cell(1), cell(2)],
            }
        })
        .collect();
    Ok(ComparisonTable {
        baseline: baseline.to_string(),
        rows,
    })
}

impl ComparisonTable {
    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let header = ["Method", "Quality [%]", "Accuracy [%]", "Robustness [%]"];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    r.cells[0].text(),
                    r.cells[1].text(),
                    r.cells[2].text(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: [&str; 4]| {
            let mut s = format!("{:<w$}", cells[0], w = widths[0]);
            for (cell, w) in cells[1..].iter().zip(&widths[1..]) {
                write!(s, "  {cell:>w$}").expect("write to string");
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        line(header);
        for row in &body {
            line([&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }
}
