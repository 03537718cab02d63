use serde::{Deserialize, Serialize};

use super::normalize::NormalizationStats;
use crate::error::{Error, Result};
use crate::simnet::{DetectorRecord, Label, N_FEATURES};

/// Window heights matching 9×23, 18×23 and 36×23 inputs.
pub const WINDOW_ROWS: [usize; 3] = [9, 18, 36];

pub fn check_window_rows(rows: usize) -> Result<()> {
    if WINDOW_ROWS.contains(&rows) {
        Ok(())
    } else {
        Err(Error::Config(format!("window rows must be one of {WINDOW_ROWS:?}, got {rows}")))
    }
}

/// Position of a window in the record stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpan {
    pub first_row: usize,
    pub rows: usize,
    pub begin: u64,
    pub end: u64,
    pub label: Label,
}

/// Consecutive non-overlapping blocks of `rows` records; a trailing partial
/// block is dropped. A window is hacked when at least half its rows are.
pub fn window_spans(records: &[DetectorRecord], rows: usize) -> Vec<WindowSpan> {
    if rows == 0 {
        return Vec::new();
    }
    records
        .chunks_exact(rows)
        .enumerate()
        .map(|(i, block)| {
            let hacked = block.iter().filter(|r| r.label == Label::Hacked).count();
            WindowSpan {
                first_row: i * rows,
                rows,
                begin: block.iter().map(|r| r.begin).min().unwrap_or(0),
                end: block.iter().map(|r| r.end).max().unwrap_or(0),
                label: if 2 * hacked >= rows { Label::Hacked } else { Label::Normal },
            }
        })
        .collect()
}

/// One normalized `rows × 23` training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    pub rows: usize,
    pub values: Vec<f64>,
    pub label: Label,
    pub window_begin: u64,
    pub window_end: u64,
    pub first_row: usize,
}

impl WindowMatrix {
    pub fn target(&self) -> u8 {
        self.label.target()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * N_FEATURES + col]
    }
}

pub fn window_from_span(records: &[DetectorRecord], span: &WindowSpan, stats: &NormalizationStats) -> WindowMatrix {
    let mut values = Vec::with_capacity(span.rows * N_FEATURES);
    for r in &records[span.first_row..span.first_row + span.rows] {
        values.extend_from_slice(&stats.apply(&r.features));
    }
    WindowMatrix {
        rows: span.rows,
        values,
        label: span.label,
        window_begin: span.begin,
        window_end: span.end,
        first_row: span.first_row,
    }
}

/// Normalize and cut `records` (ordered by begin, then detector) into windows.
pub fn window_stream(records: &[DetectorRecord], rows: usize, stats: &NormalizationStats) -> Result<Vec<WindowMatrix>> {
    check_window_rows(rows)?;
    Ok(window_spans(records, rows)
        .iter()
        .map(|s| window_from_span(records, s, stats))
        .collect())
}
