use crate::labels::{LabelPoint, Track};

/// A translation of label positions by `(d_row, d_col)` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shift {
    pub d_row: i32,
    pub d_col: i32,
}

impl Shift {
    pub const ZERO: Shift = Shift { d_row: 0, d_col: 0 };

    pub const fn new(d_row: i32, d_col: i32) -> Self {
        Shift { d_row, d_col }
    }

    pub fn inverse(self) -> Shift {
        Shift::new(-self.d_row, -self.d_col)
    }

    /// Shifted position, or `None` if it leaves the `height x width` grid.
    #[inline]
    pub fn apply(self, row: usize, col: usize, height: usize, width: usize) -> Option<(usize, usize)> {
        let r = row as i64 + self.d_row as i64;
        let c = col as i64 + self.d_col as i64;
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then(|| (r as usize, c as usize))
    }
}

/// The nine shifts `{-1, 0, 1}^2`.
pub struct ShiftSearchSpace;

impl ShiftSearchSpace {
    /// `(0, 0)` first, then the remaining eight in row-major order.
    pub const OFFSETS: [Shift; 9] = [
        Shift::new(0, 0),
        Shift::new(-1, -1),
        Shift::new(-1, 0),
        Shift::new(-1, 1),
        Shift::new(0, -1),
        Shift::new(0, 1),
        Shift::new(1, -1),
        Shift::new(1, 0),
        Shift::new(1, 1),
    ];

    pub fn offsets() -> impl Iterator<Item = Shift> {
        Self::OFFSETS.into_iter()
    }

    pub fn contains(shift: Shift) -> bool {
        shift.d_row.abs() <= 1 && shift.d_col.abs() <= 1
    }
}

/// Translates every point of the track; points that leave the grid are
/// dropped rather than clamped.
pub fn shift_track(track: &Track, delta: Shift, grid_height: usize, grid_width: usize) -> Track {
    let points = track
        .points
        .iter()
        .filter_map(|p| {
            delta
                .apply(p.row, p.col, grid_height, grid_width)
                .map(|(r, c)| LabelPoint::new(p.track_id, r, c, p.height))
        })
        .collect();
    Track {
        track_id: track.track_id,
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(points: &[(usize, usize, f64)]) -> Track {
        Track {
            track_id: 3,
            points: points.iter().map(|&(r, c, h)| LabelPoint::new(3, r, c, h)).collect(),
        }
    }

    #[test]
    fn search_space_shape() {
        let all: std::collections::HashSet<_> = ShiftSearchSpace::offsets().collect();
        assert_eq!(all.len(), 9);
        assert!(all.contains(&Shift::ZERO));
        assert!(all.iter().all(|s| ShiftSearchSpace::contains(*s)));
    }

    #[test]
    fn zero_shift_is_identity() {
        let t = track(&[(1, 1, 5.0), (2, 3, 7.0)]);
        assert_eq!(shift_track(&t, Shift::ZERO, 8, 8), t);
    }

    #[test]
    fn out_of_grid_points_are_dropped() {
        let t = track(&[(0, 0, 5.0), (2, 2, 7.0)]);
        let s = shift_track(&t, Shift::new(-1, 0), 8, 8);
        assert_eq!(s.points, vec![LabelPoint::new(3, 1, 2, 7.0)]);
    }

    #[test]
    fn interior_shift_translates() {
        let t = track(&[(1, 1, 5.0), (4, 2, 7.0)]);
        let s = shift_track(&t, Shift::new(1, 1), 8, 8);
        assert_eq!(
            s.points,
            vec![LabelPoint::new(3, 2, 2, 5.0), LabelPoint::new(3, 5, 3, 7.0)]
        );
    }
}
