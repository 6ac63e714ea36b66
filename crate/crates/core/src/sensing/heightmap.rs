use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

use super::render::DepthView;

/// Change threshold for the pixel-change rate (5 mm).
pub const CHANGE_THRESHOLD: f32 = 0.005;

/// Number of network input channels: RGB plus the validity mask.
pub const STATE_CHANNELS: usize = 4;

/// Top-view grid. Cell `(u, v)` covers world `x` in
/// `origin.x + [u, u+1) * cell_size` and `y` in `origin.y + [v, v+1) * cell_size`;
/// storage is row-major with `u` as the row index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightmapGeometry {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub origin: Vec2,
}

impl HeightmapGeometry {
    /// Square grid of `resolution` cells covering a square workspace.
    pub fn covering(workspace: &crate::world::Workspace, resolution: usize) -> Self {
        Self {
            rows: resolution,
            cols: resolution,
            cell_size: workspace.width() / resolution as f64,
            origin: Vec2::new(workspace.min[0], workspace.min[1]),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        u * self.cols + v
    }

    /// World coordinates of the center of cell `(u, v)`.
    pub fn cell_center(&self, u: usize, v: usize) -> Vec2 {
        self.origin + Vec2::new((u as f64 + 0.5) * self.cell_size, (v as f64 + 0.5) * self.cell_size)
    }

    /// Cell containing a world point, if it lies on the grid.
    pub fn cell_of(&self, p: &Vec2) -> Option<(usize, usize)> {
        let fu = ((p.x - self.origin.x) / self.cell_size).floor();
        let fv = ((p.y - self.origin.y) / self.cell_size).floor();
        (fu >= 0.0 && fv >= 0.0 && (fu as usize) < self.rows && (fv as usize) < self.cols)
            .then(|| (fu as usize, fv as usize))
    }

    fn same_as(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && (self.cell_size - other.cell_size).abs() < 1e-12
            && (self.origin - other.origin).norm() < 1e-12
    }
}

/// Fused top-view observation: the network's state.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightmapState {
    pub geometry: HeightmapGeometry,
    pub color: Vec<[f32; 3]>,
    pub height: Vec<f32>,
    pub valid: Vec<bool>,
}

impl HeightmapState {
    pub fn empty(geometry: HeightmapGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            color: vec![[0.0; 3]; n],
            height: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn height_at(&self, u: usize, v: usize) -> f32 {
        self.height[self.geometry.index(u, v)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Channel-major network input: R, G, B, valid.
    pub fn to_channels(&self) -> Vec<f32> {
        let n = self.geometry.len();
        let mut out = vec![0.0f32; STATE_CHANNELS * n];
        for i in 0..n {
            for c in 0..3 {
                out[c * n + i] = self.color[i][c];
            }
            out[3 * n + i] = if self.valid[i] { 1.0 } else { 0.0 };
        }
        out
    }

    /// Writes the `PFMAP` snapshot: a text header line followed by
    /// little-endian `f32` heights and then interleaved RGB colors, both
    /// row-major.
    pub fn write_pfmap<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = &self.geometry;
        writeln!(w, "PFMAP {} {} {}", g.rows, g.cols, g.cell_size)?;
        let mut buf = Vec::with_capacity(16 * g.len());
        for h in &self.height {
            buf.extend_from_slice(&h.to_le_bytes());
        }
        for c in &self.color {
            for x in c {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    /// Reads a `PFMAP` snapshot. The format carries no origin or validity
    /// mask; the grid origin is taken from the caller and cells with a
    /// positive height are marked valid.
    pub fn read_pfmap<R: BufRead>(mut r: R, origin: Vec2) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| Error::Parse(format!("PFMAP header: {e}")))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "PFMAP" {
            return Err(Error::Parse(format!("bad PFMAP header `{}`", header.trim_end())));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("PFMAP size `{s}`: {e}")));
        let rows = parse_usize(fields[1])?;
        let cols = parse_usize(fields[2])?;
        let cell_size: f64 = fields[3]
            .parse()
            .map_err(|e| Error::Parse(format!("PFMAP cell size `{}`: {e}", fields[3])))?;
        let geometry = HeightmapGeometry {
            rows,
            cols,
            cell_size,
            origin,
        };
        let n = geometry.len();
        let mut bytes = vec![0u8; 16 * n];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Parse(format!("PFMAP payload: {e}")))?;
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let height = floats[..n].to_vec();
        let color = floats[n..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let valid = height.iter().map(|&h| h > 0.0).collect();
        Ok(Self {
            geometry,
            color,
            height,
            valid,
        })
    }
}

/// Back-projects every view's surface points into the grid; a cell keeps
/// the highest point that lands in it and that point's color.
pub fn fuse_views(views: &[DepthView], geometry: HeightmapGeometry) -> HeightmapState {
    let mut state = HeightmapState::empty(geometry);
    let mut best = vec![f64::NEG_INFINITY; geometry.len()];
    for view in views {
        for r in 0..view.rows() {
            for c in 0..view.cols() {
                let Some(p) = view.surface_point(r, c) else {
                    continue;
                };
                let Some((u, v)) = geometry.cell_of(&Vec2::new(p.x, p.y)) else {
                    continue;
                };
                let i = geometry.index(u, v);
                // table hits back-project to within rounding of z = 0
                let z = if p.z < 1e-9 { 0.0 } else { p.z };
                state.valid[i] = true;
                if z > best[i] {
                    best[i] = z;
                    state.color[i] = view.color[r * view.cols() + c];
                }
            }
        }
    }
    for (h, b) in state.height.iter_mut().zip(&best) {
        *h = if b.is_finite() { *b as f32 } else { 0.0 };
    }
    state
}

/// Fraction of previously occupied cells whose height changed by more than
/// [`CHANGE_THRESHOLD`], clamped to `[0, 1]`.
pub fn pixel_change_rate(before: &HeightmapState, after: &HeightmapState) -> Result<f64> {
    if !before.geometry.same_as(&after.geometry) {
        return Err(Error::GeometryMismatch(format!(
            "{}x{} @ {} vs {}x{} @ {}",
            before.geometry.rows,
            before.geometry.cols,
            before.geometry.cell_size,
            after.geometry.rows,
            after.geometry.cols,
            after.geometry.cell_size
        )));
    }
    let changed = before
        .height
        .iter()
        .zip(&after.height)
        .filter(|(a, b)| (*b - *a).abs() > CHANGE_THRESHOLD)
        .count();
    let occupied = before.height.iter().filter(|&&h| h > CHANGE_THRESHOLD).count();
    Ok((changed as f64 / occupied.max(1) as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Workspace;

    fn grid(n: usize) -> HeightmapGeometry {
        HeightmapGeometry::covering(&Workspace::centered(0.256), n)
    }

    fn with_heights(g: HeightmapGeometry, cells: &[(usize, usize)], h: f32) -> HeightmapState {
        let mut s = HeightmapState::empty(g);
        s.valid.iter_mut().for_each(|v| *v = true);
        for &(u, v) in cells {
            s.height[g.index(u, v)] = h;
        }
        s
    }

    #[test]
    fn identical_states_have_zero_change() {
        let g = grid(16);
        let a = with_heights(g, &[(3, 3), (3, 4)], 0.03);
        assert_eq!(pixel_change_rate(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_move_clamps_to_one() {
        let g = grid(32);
        let before_cells: Vec<_> = (0..4).flat_map(|u| (0..5).map(move |v| (u, v))).collect();
        let after_cells: Vec<_> = (10..14).flat_map(|u| (20..25).map(move |v| (u, v))).collect();
        assert_eq!(before_cells.len(), 20);
        let a = with_heights(g, &before_cells, 0.03);
        let b = with_heights(g, &after_cells, 0.03);
        // 40 changed cells over 20 occupied
        assert_eq!(pixel_change_rate(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn jitter_below_threshold_is_ignored() {
        let g = grid(16);
        let a = with_heights(g, &[(1, 1)], 0.03);
        let mut b = a.clone();
        b.height.iter_mut().for_each(|h| *h += 0.002);
        assert_eq!(pixel_change_rate(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn change_rate_ignores_color() {
        let g = grid(16);
        let a = with_heights(g, &[(1, 1), (2, 2)], 0.03);
        let mut b = with_heights(g, &[(1, 1)], 0.03);
        b.color.iter_mut().for_each(|c| *c = [1.0, 0.0, 0.5]);
        assert_eq!(pixel_change_rate(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = HeightmapState::empty(grid(16));
        let b = HeightmapState::empty(grid(8));
        assert!(matches!(pixel_change_rate(&a, &b), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn pfmap_round_trip() {
        let g = grid(8);
        let mut s = with_heights(g, &[(1, 2), (7, 7)], 0.0325);
        s.color[g.index(1, 2)] = [0.25, 0.5, 0.75];
        s.valid = s.height.iter().map(|&h| h > 0.0).collect();
        let mut bytes = Vec::new();
        s.write_pfmap(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"PFMAP 8 8 0.032\n"));
        assert_eq!(bytes.len(), "PFMAP 8 8 0.032\n".len() + 64 * 16);
        let back = HeightmapState::read_pfmap(std::io::Cursor::new(bytes), g.origin).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn cell_mapping_inverts_center_convention() {
        let g = grid(64);
        for (u, v) in [(0, 0), (5, 63), (63, 17)] {
            assert_eq!(g.cell_of(&g.cell_center(u, v)), Some((u, v)));
        }
        assert_eq!(g.cell_of(&Vec2::new(0.2, 0.0)), None);
    }
}
