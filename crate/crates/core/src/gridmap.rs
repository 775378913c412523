//! Rasterized urban height maps.
//!
//! A [`HeightGrid`] samples terrain and building heights at the centers of a
//! regular lattice. Row 0 is the northernmost row, column 0 the westernmost.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lattice spacing in meters.
pub const DEFAULT_SPACING_M: f64 = 4.0;
/// Default UAV flight altitude in meters.
pub const DEFAULT_ALTITUDE_M: f64 = 10.0;

const MAX_GENERATION_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Cell displaced by `(drow, dcol)`, or `None` when that leaves the
    /// non-negative quadrant.
    pub fn offset(self, drow: isize, dcol: isize) -> Option<Cell> {
        let row = self.row.checked_add_signed(drow)?;
        let col = self.col.checked_add_signed(dcol)?;
        Some(Cell { row, col })
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    ncols: usize,
    nrows: usize,
    spacing_m: f64,
    heights: Vec<f64>,
}

impl HeightGrid {
    /// Builds a grid from row-major heights.
    pub fn new(ncols: usize, nrows: usize, spacing_m: f64, heights: Vec<f64>) -> Result<Self> {
        if ncols == 0 || nrows == 0 {
            return Err(Error::InvalidParams(format!(
                "grid dimensions must be positive, got {ncols}x{nrows}"
            )));
        }
        if !(spacing_m.is_finite() && spacing_m > 0.0) {
            return Err(Error::InvalidParams(format!(
                "spacing must be positive, got {spacing_m}"
            )));
        }
        if heights.len() != ncols * nrows {
            return Err(Error::InvalidParams(format!(
                "expected {} heights, got {}",
                ncols * nrows,
                heights.len()
            )));
        }
        if let Some(h) = heights.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
            return Err(Error::InvalidParams(format!(
                "heights must be finite and non-negative, got {h}"
            )));
        }
        Ok(HeightGrid {
            ncols,
            nrows,
            spacing_m,
            heights,
        })
    }

    /// A flat grid with every height zero.
    pub fn flat(ncols: usize, nrows: usize, spacing_m: f64) -> Result<Self> {
        Self::new(ncols, nrows, spacing_m, vec![0.0; ncols * nrows])
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn spacing_m(&self) -> f64 {
        self.spacing_m
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.nrows && cell.col < self.ncols
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.ncols + cell.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.ncols, index % self.ncols)
    }

    pub fn check_bounds(&self, cell: Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                cell,
                nrows: self.nrows,
                ncols: self.ncols,
            })
        }
    }

    pub fn height(&self, cell: Cell) -> Result<f64> {
        self.check_bounds(cell)?;
        Ok(self.heights[self.index(cell)])
    }

    /// Unchecked height lookup for callers that already validated bounds.
    pub(crate) fn height_unchecked(&self, cell: Cell) -> f64 {
        self.heights[self.index(cell)]
    }

    pub fn set_height(&mut self, cell: Cell, height: f64) -> Result<()> {
        self.check_bounds(cell)?;
        if !(height.is_finite() && height >= 0.0) {
            return Err(Error::InvalidParams(format!("invalid height {height}")));
        }
        let idx = self.index(cell);
        self.heights[idx] = height;
        Ok(())
    }

    /// Heights relative to a UAV flying at `altitude_m`, row-major.
    pub fn relative_heights(&self, altitude_m: f64) -> Vec<f64> {
        self.heights.iter().map(|h| h - altitude_m).collect()
    }

    /// A cell is blocked when its height reaches the flight altitude.
    pub fn is_blocked(&self, cell: Cell, altitude_m: f64) -> Result<bool> {
        Ok(self.height(cell)? >= altitude_m)
    }

    pub(crate) fn blocked_unchecked(&self, cell: Cell, altitude_m: f64) -> bool {
        self.height_unchecked(cell) >= altitude_m
    }

    /// In-bounds 4-neighbours in the fixed order north, south, west, east.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const STEPS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        STEPS
            .iter()
            .filter_map(move |&(dr, dc)| cell.offset(dr, dc))
            .filter(move |c| self.contains(*c))
    }

    /// Whether all cells below `altitude_m` form one 4-connected region.
    pub fn free_space_connected(&self, altitude_m: f64) -> bool {
        let free: Vec<bool> = self.heights.iter().map(|&h| h < altitude_m).collect();
        let Some(start) = free.iter().position(|&f| f) else {
            return false;
        };
        let total = free.iter().filter(|&&f| f).count();
        let mut seen = vec![false; free.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([self.cell_at(start)]);
        let mut reached = 1;
        while let Some(cell) = queue.pop_front() {
            for n in self.neighbors(cell) {
                let idx = self.index(n);
                if free[idx] && !seen[idx] {
                    seen[idx] = true;
                    reached += 1;
                    queue.push_back(n);
                }
            }
        }
        reached == total
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.heights.len() * 8 + 32);
        let _ = writeln!(
            out,
            "HGRID v1 {} {} {}",
            self.ncols,
            self.nrows,
            format_spacing(self.spacing_m)
        );
        for row in self.heights.chunks(self.ncols) {
            let line: Vec<String> = row.iter().map(|h| format!("{h:.3}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "HGRID" || fields[1] != "v1" {
            return Err(Error::parse(
                path,
                1,
                "expected header `HGRID v1 <ncols> <nrows> <spacing_m>`",
            ));
        }
        let ncols: usize = parse_token(fields[2], path, 1, "ncols")?;
        let nrows: usize = parse_token(fields[3], path, 1, "nrows")?;
        let spacing_m: f64 = parse_token(fields[4], path, 1, "spacing")?;
        if ncols == 0 || nrows == 0 || !(spacing_m.is_finite() && spacing_m > 0.0) {
            return Err(Error::parse(path, 1, "dimensions and spacing must be positive"));
        }

        let mut heights = Vec::with_capacity(ncols * nrows);
        let mut rows_read = 0;
        for (lineno, line) in lines {
            if rows_read == nrows {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::parse(path, lineno, "trailing data after last row"));
            }
            let before = heights.len();
            for token in line.split_whitespace() {
                let h: f64 = parse_token(token, path, lineno, "height")?;
                if !h.is_finite() || h < 0.0 {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("height must be finite and non-negative, got {token}"),
                    ));
                }
                heights.push(h);
            }
            let count = heights.len() - before;
            if count != ncols {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {ncols} values, found {count}"),
                ));
            }
            rows_read += 1;
        }
        if rows_read != nrows {
            return Err(Error::parse(
                path,
                rows_read + 2,
                format!("expected {nrows} rows, found {rows_read}"),
            ));
        }
        HeightGrid::new(ncols, nrows, spacing_m, heights)
    }
}

pub(crate) fn format_spacing(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') {
        s
    } else {
        format!("{s}.0")
    }
}

pub(crate) fn parse_token<T: std::str::FromStr>(token: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} `{token}`")))
}

pub fn save_grid(grid: &HeightGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, grid.to_text())?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<HeightGrid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    HeightGrid::from_text(&text, path)
}

/// Parameters of the procedural city generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityGenParams {
    pub seed: u64,
    /// (width, height) in meters.
    pub extent_m: (f64, f64),
    /// Target fraction of the area covered by buildings.
    pub building_density: f64,
    pub height_range_m: (f64, f64),
    pub street_width_m: f64,
    /// Edge length range of a city block, streets excluded.
    pub block_size_m: (f64, f64),
    pub spacing_m: f64,
}

impl Default for CityGenParams {
    fn default() -> Self {
        CityGenParams {
            seed: 0,
            extent_m: (256.0, 256.0),
            building_density: 0.35,
            height_range_m: (6.0, 40.0),
            street_width_m: 8.0,
            block_size_m: (28.0, 56.0),
            spacing_m: DEFAULT_SPACING_M,
        }
    }
}

impl CityGenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.spacing_m.is_finite() && self.spacing_m > 0.0) {
            return bad(format!("spacing must be positive, got {}", self.spacing_m));
        }
        let (w, h) = self.extent_m;
        if !(w.is_finite() && h.is_finite()) || w < self.spacing_m || h < self.spacing_m {
            return bad(format!(
                "extent {w}x{h} m is smaller than one {} m cell",
                self.spacing_m
            ));
        }
        if !(0.0..=1.0).contains(&self.building_density) {
            return bad(format!(
                "building density must lie in [0, 1], got {}",
                self.building_density
            ));
        }
        let (lo, hi) = self.height_range_m;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
            return bad(format!("invalid height range ({lo}, {hi})"));
        }
        if !(self.street_width_m.is_finite() && self.street_width_m > 0.0) {
            return bad(format!("street width must be positive, got {}", self.street_width_m));
        }
        let (bmin, bmax) = self.block_size_m;
        if !(bmin.is_finite() && bmax.is_finite()) || bmin <= 0.0 || bmin > bmax {
            return bad(format!("invalid block size range ({bmin}, {bmax})"));
        }
        Ok(())
    }

    fn cells(&self, meters: f64) -> usize {
        ((meters / self.spacing_m).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Lot {
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
}

impl Lot {
    fn area(&self) -> usize {
        self.rows * self.cols
    }
}

/// Generates a city of axis-aligned rectangular buildings on a street
/// lattice. The result is a pure function of `params`; layouts whose free
/// space at the default altitude is disconnected are rejected and redrawn.
pub fn generate_city(params: &CityGenParams) -> Result<HeightGrid> {
    params.validate()?;
    let ncols = ((params.extent_m.0 / params.spacing_m).round() as usize).max(1);
    let nrows = ((params.extent_m.1 / params.spacing_m).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let grid = draw_city(params, ncols, nrows, &mut rng)?;
        if grid.free_space_connected(DEFAULT_ALTITUDE_M) {
            return Ok(grid);
        }
    }
    Err(Error::InvalidParams(format!(
        "no connected layout found in {MAX_GENERATION_ATTEMPTS} attempts; lower the building density"
    )))
}

fn draw_city(params: &CityGenParams, ncols: usize, nrows: usize, rng: &mut ChaCha8Rng) -> Result<HeightGrid> {
    let street = params.cells(params.street_width_m);
    let block_min = params.cells(params.block_size_m.0);
    let block_max = params.cells(params.block_size_m.1).max(block_min);

    let row_blocks = block_spans(nrows, street, block_min, block_max, rng);
    let col_blocks = block_spans(ncols, street, block_min, block_max, rng);

    let mut lots = Vec::new();
    for &(r0, rlen) in &row_blocks {
        for &(c0, clen) in &col_blocks {
            split_block(r0, rlen, c0, clen, rng, &mut lots);
        }
    }
    lots.shuffle(rng);

    let target = (params.building_density * (ncols * nrows) as f64).round() as usize;
    let mut heights = vec![0.0; ncols * nrows];
    let mut covered = 0;
    let (hmin, hmax) = params.height_range_m;
    for lot in lots {
        if covered >= target {
            break;
        }
        // Decimeter resolution keeps the text format lossless.
        let h = if hmax > hmin { rng.gen_range(hmin..=hmax) } else { hmin };
        let h = (h * 10.0).round() / 10.0;
        for r in lot.row0..lot.row0 + lot.rows {
            for c in lot.col0..lot.col0 + lot.cols {
                heights[r * ncols + c] = h;
            }
        }
        covered += lot.area();
    }
    HeightGrid::new(ncols, nrows, params.spacing_m, heights)
}

/// Splits `[0, len)` into blocks separated by streets. Returns (start, len)
/// for each block; a street always runs along the leading edge.
fn block_spans(
    len: usize,
    street: usize,
    block_min: usize,
    block_max: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut pos = street.min(len);
    while pos < len {
        let size = rng.gen_range(block_min..=block_max);
        let end = (pos + size).min(len);
        // Leave no sliver narrower than a street at the far edge.
        let end = if len - end < street + block_min / 2 { len } else { end };
        spans.push((pos, end - pos));
        pos = end + street;
    }
    spans
}

/// Splits a block into 1-3 lots per axis, each separated by a one-cell
/// alley so lots never enclose each other.
fn split_block(r0: usize, rlen: usize, c0: usize, clen: usize, rng: &mut ChaCha8Rng, lots: &mut Vec<Lot>) {
    let rows = split_axis(r0, rlen, rng);
    let cols = split_axis(c0, clen, rng);
    for &(rs, rl) in &rows {
        for &(cs, cl) in &cols {
            lots.push(Lot {
                row0: rs,
                col0: cs,
                rows: rl,
                cols: cl,
            });
        }
    }
}

fn split_axis(start: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let max_parts = if len >= 11 {
        3
    } else if len >= 5 {
        2
    } else {
        1
    };
    let parts = rng.gen_range(1..=max_parts);
    if parts == 1 {
        return vec![(start, len)];
    }
    let usable = len - (parts - 1);
    let base = usable / parts;
    let mut extra = usable % parts;
    let mut out = Vec::with_capacity(parts);
    let mut pos = start;
    for _ in 0..parts {
        let mut l = base;
        if extra > 0 {
            l += 1;
            extra -= 1;
        }
        out.push((pos, l));
        pos += l + 1;
    }
    out
}
