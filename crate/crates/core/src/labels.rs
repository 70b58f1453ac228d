//! Sparse, track-structured height labels.
//!
//! A label grid encodes "no measurement" as height `0.0`; only strictly
//! positive heights are stored. Indices are 0-based.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LABEL_CSV_HEADER: [&str; 4] = ["track_id", "row", "col", "height"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelPoint {
    pub track_id: u32,
    pub row: usize,
    pub col: usize,
    /// Meters, strictly positive.
    pub height: f64,
}

impl LabelPoint {
    pub fn new(track_id: u32, row: usize, col: usize, height: f64) -> Self {
        LabelPoint {
            track_id,
            row,
            col,
            height,
        }
    }
}

/// Validated set of labeled pixels on an `H x W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLabels {
    points: Vec<LabelPoint>,
    grid_height: usize,
    grid_width: usize,
}

impl SparseLabels {
    /// Builds a label set, checking heights, bounds and pixel uniqueness.
    pub fn new(points: Vec<LabelPoint>, grid_height: usize, grid_width: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if !(p.height > 0.0) || !p.height.is_finite() {
                return Err(Error::Validation(format!(
                    "label at ({}, {}) has height {}; heights must be finite and > 0 \
                     (0 encodes a missing label)",
                    p.row, p.col, p.height
                )));
            }
            if p.row >= grid_height || p.col >= grid_width {
                return Err(Error::Validation(format!(
                    "label at ({}, {}) outside {}x{} grid",
                    p.row, p.col, grid_height, grid_width
                )));
            }
            if !seen.insert((p.row, p.col)) {
                return Err(Error::Validation(format!(
                    "duplicate label at pixel ({}, {})",
                    p.row, p.col
                )));
            }
        }
        Ok(SparseLabels {
            points,
            grid_height,
            grid_width,
        })
    }

    pub fn empty(grid_height: usize, grid_width: usize) -> Self {
        SparseLabels {
            points: Vec::new(),
            grid_height,
            grid_width,
        }
    }

    pub fn points(&self) -> &[LabelPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    /// Labels inside the window, re-indexed relative to its origin.
    pub fn crop(&self, row0: usize, col0: usize, h: usize, w: usize) -> SparseLabels {
        let points = self
            .points
            .iter()
            .filter(|p| p.row >= row0 && p.row < row0 + h && p.col >= col0 && p.col < col0 + w)
            .map(|p| LabelPoint::new(p.track_id, p.row - row0, p.col - col0, p.height))
            .collect();
        SparseLabels {
            points,
            grid_height: h,
            grid_width: w,
        }
    }

    /// Dense label image with `0.0` at unlabeled pixels.
    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.grid_height * self.grid_width];
        for p in &self.points {
            out[p.row * self.grid_width + p.col] = p.height as f32;
        }
        out
    }
}

/// Points sharing one `track_id`. Geolocation error is modeled as constant
/// within a track.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u32,
    pub points: Vec<LabelPoint>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Splits labels into tracks, ordered by ascending `track_id`. Points keep
/// their input order inside a track.
pub fn partition_tracks(labels: &SparseLabels) -> Vec<Track> {
    let mut by_id: BTreeMap<u32, Vec<LabelPoint>> = BTreeMap::new();
    for p in labels.points() {
        by_id.entry(p.track_id).or_default().push(*p);
    }
    by_id
        .into_iter()
        .map(|(track_id, points)| Track { track_id, points })
        .collect()
}

pub fn load_labels(path: impl AsRef<Path>, grid_height: usize, grid_width: usize) -> Result<SparseLabels> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(file, grid_height, grid_width)
}

pub fn read_labels(reader: impl std::io::Read, grid_height: usize, grid_width: usize) -> Result<SparseLabels> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("label CSV header: {e}")))?
        .clone();
    if header.iter().take(4).map(str::trim).ne(LABEL_CSV_HEADER) {
        return Err(Error::Format(format!(
            "label CSV header must start with `track_id,row,col,height`, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("label CSV line {line}: {e}")))?;
        if rec.len() < 4 {
            return Err(Error::Format(format!("label CSV line {line}: expected 4 fields")));
        }
        let field = |k: usize| rec[k].trim();
        let bad =
            |what: &str, e: &dyn std::fmt::Display| Error::Format(format!("label CSV line {line}: bad {what}: {e}"));
        let track_id: u32 = field(0).parse().map_err(|e| bad("track_id", &e))?;
        let row: usize = field(1).parse().map_err(|e| bad("row", &e))?;
        let col: usize = field(2).parse().map_err(|e| bad("col", &e))?;
        let height: f64 = field(3).parse().map_err(|e| bad("height", &e))?;
        points.push(LabelPoint::new(track_id, row, col, height));
    }
    SparseLabels::new(points, grid_height, grid_width)
}

pub fn save_labels(labels: &SparseLabels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_labels(labels, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the label CSV. `f64` values use the shortest representation that
/// parses back to the same value.
pub fn write_labels(labels: &SparseLabels, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{}", LABEL_CSV_HEADER.join(","))?;
    for p in labels.points() {
        writeln!(w, "{},{},{},{}", p.track_id, p.row, p.col, p.height)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SparseLabels> {
        read_labels(s.as_bytes(), 32, 32)
    }

    #[test]
    fn parses_single_row() {
        let l = parse("track_id,row,col,height\n7,10,20,14.5\n").unwrap();
        assert_eq!(l.points(), &[LabelPoint::new(7, 10, 20, 14.5)]);
    }

    #[test]
    fn zero_height_rejected() {
        let e = parse("track_id,row,col,height\n1,1,1,0.0\n").unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn duplicate_pixel_rejected() {
        let e = parse("track_id,row,col,height\n1,1,1,3\n2,1,1,4\n").unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn out_of_grid_rejected() {
        let e = parse("track_id,row,col,height\n1,32,0,3\n").unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn bad_header_is_format_error() {
        assert!(matches!(parse("a,b,c,d\n1,1,1,1\n"), Err(Error::Format(_))));
    }

    #[test]
    fn partition_groups_by_track() {
        let l = SparseLabels::new(
            vec![
                LabelPoint::new(1, 0, 0, 1.0),
                LabelPoint::new(2, 0, 1, 2.0),
                LabelPoint::new(1, 0, 2, 3.0),
            ],
            4,
            4,
        )
        .unwrap();
        let tracks = partition_tracks(&l);
        assert_eq!(tracks.len(), 2);
        assert_eq!((tracks[0].track_id, tracks[0].len()), (1, 2));
        assert_eq!((tracks[1].track_id, tracks[1].len()), (2, 1));
        assert!(partition_tracks(&SparseLabels::empty(4, 4)).is_empty());
    }

    #[test]
    fn crop_reindexes() {
        let l = SparseLabels::new(vec![LabelPoint::new(1, 5, 6, 1.0), LabelPoint::new(1, 1, 1, 2.0)], 8, 8).unwrap();
        let c = l.crop(4, 4, 4, 4);
        assert_eq!(c.points(), &[LabelPoint::new(1, 1, 2, 1.0)]);
    }
}
