//! Deterministic SINR fields at flight altitude.
//!
//! The channel model is free-space path loss plus a fixed penalty per
//! obstructing building and a smooth, seeded shadowing term. Fields computed
//! by external tools can be loaded through the `SINR v1` text format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmap::{format_spacing, parse_token, Cell, HeightGrid};

/// Height of the ground user's antenna in meters.
pub const USER_HEIGHT_M: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub freq_mhz: f64,
    pub noise_plus_interference_dbm: f64,
    pub blockage_loss_db_per_wall: f64,
    pub deadzone_floor_db: f64,
    pub sinr_clamp_db: (f64, f64),
    /// Peak of the shadowing term; shadowing lies in `[0, shadowing_max_db]`.
    pub shadowing_max_db: f64,
    /// Lattice period of the shadowing value noise, in cells.
    pub shadowing_period_cells: usize,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 20.0,
            freq_mhz: 800.0,
            noise_plus_interference_dbm: -104.0,
            blockage_loss_db_per_wall: 15.0,
            deadzone_floor_db: -90.0,
            sinr_clamp_db: (-140.0, 45.0),
            shadowing_max_db: 10.0,
            shadowing_period_cells: 8,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sinr_clamp_db;
        if !(lo < self.deadzone_floor_db && self.deadzone_floor_db < hi) {
            return Err(Error::InvalidParams(format!(
                "need clamp min < dead-zone floor < clamp max, got {lo} / {} / {hi}",
                self.deadzone_floor_db
            )));
        }
        if !(self.blockage_loss_db_per_wall >= 0.0) {
            return Err(Error::InvalidParams("blockage loss must be >= 0".into()));
        }
        if !(self.shadowing_max_db >= 0.0) || self.shadowing_period_cells == 0 {
            return Err(Error::InvalidParams(
                "shadowing needs a non-negative peak and a positive period".into(),
            ));
        }
        if !(self.freq_mhz > 0.0) {
            return Err(Error::InvalidParams("frequency must be positive".into()));
        }
        Ok(())
    }
}

/// Free-space path loss in dB for a distance in meters.
pub fn fspl_db(distance_m: f64, freq_mhz: f64) -> f64 {
    32.44 + 20.0 * (distance_m / 1000.0).log10() + 20.0 * freq_mhz.log10()
}

/// SINR in dB over the lattice at flight altitude for one ground user.
/// Invalid cells (blocked or dead zone) carry no usable value.
#[derive(Debug, Clone)]
pub struct SinrField {
    ncols: usize,
    nrows: usize,
    spacing_m: f64,
    user_cell: Cell,
    altitude_m: f64,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl PartialEq for SinrField {
    /// Values of invalid cells carry no meaning and are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.spacing_m == other.spacing_m
            && self.user_cell == other.user_cell
            && self.altitude_m == other.altitude_m
            && self.valid == other.valid
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.valid)
                .all(|((a, b), &v)| !v || a == b)
    }
}

impl SinrField {
    /// Builds a field from row-major values and validity.
    pub fn new(
        ncols: usize,
        nrows: usize,
        spacing_m: f64,
        user_cell: Cell,
        altitude_m: f64,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if ncols == 0 || nrows == 0 || values.len() != ncols * nrows || valid.len() != values.len() {
            return Err(Error::InvalidParams(format!(
                "field of {ncols}x{nrows} needs {} values and flags",
                ncols * nrows
            )));
        }
        if user_cell.row >= nrows || user_cell.col >= ncols {
            return Err(Error::OutOfBounds {
                cell: user_cell,
                nrows,
                ncols,
            });
        }
        if values.iter().zip(&valid).any(|(v, &ok)| ok && !v.is_finite()) {
            return Err(Error::InvalidParams("valid cells must carry finite values".into()));
        }
        Ok(SinrField {
            ncols,
            nrows,
            spacing_m,
            user_cell,
            altitude_m,
            values,
            valid,
        })
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

    pub fn user_cell(&self) -> Cell {
        self.user_cell
    }

    pub fn altitude_m(&self) -> f64 {
        self.altitude_m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.nrows && cell.col < self.ncols
    }

    fn index(&self, cell: Cell) -> usize {
        cell.row * self.ncols + cell.col
    }

    /// SINR at `cell`, or `None` when the cell is out of bounds or invalid.
    pub fn value(&self, cell: Cell) -> Option<f64> {
        if !self.contains(cell) {
            return None;
        }
        let idx = self.index(cell);
        self.valid[idx].then(|| self.values[idx])
    }

    pub fn is_valid(&self, cell: Cell) -> bool {
        self.contains(cell) && self.valid[self.index(cell)]
    }

    /// Valid cells with at least one valid 4-neighbor, in row-major order.
    pub fn permissible_starts(&self) -> Vec<Cell> {
        (0..self.values.len())
            .filter(|&i| self.valid[i])
            .map(|i| Cell::new(i / self.ncols, i % self.ncols))
            .filter(|&c| {
                [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .into_iter()
                    .any(|(dr, dc)| c.offset(dr, dc).is_some_and(|n| self.is_valid(n)))
            })
            .collect()
    }

    pub fn matches_grid(&self, grid: &HeightGrid) -> bool {
        self.ncols == grid.ncols() && self.nrows == grid.nrows() && self.spacing_m == grid.spacing_m()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 10 + 64);
        let _ = writeln!(
            out,
            "SINR v1 {} {} {} {} {} {}",
            self.ncols,
            self.nrows,
            format_spacing(self.spacing_m),
            self.user_cell.row,
            self.user_cell.col,
            format_spacing(self.altitude_m)
        );
        for r in 0..self.nrows {
            for c in 0..self.ncols {
                if c > 0 {
                    out.push(' ');
                }
                let idx = r * self.ncols + c;
                if self.valid[idx] {
                    let _ = write!(out, "{}", self.values[idx]);
                } else {
                    out.push_str("NA");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 8 || f[0] != "SINR" || f[1] != "v1" {
            return Err(Error::parse(
                path,
                1,
                "expected header `SINR v1 <ncols> <nrows> <spacing_m> <user_row> <user_col> <altitude_m>`",
            ));
        }
        let ncols: usize = parse_token(f[2], path, 1, "ncols")?;
        let nrows: usize = parse_token(f[3], path, 1, "nrows")?;
        let spacing_m: f64 = parse_token(f[4], path, 1, "spacing")?;
        let user_row: usize = parse_token(f[5], path, 1, "user row")?;
        let user_col: usize = parse_token(f[6], path, 1, "user col")?;
        let altitude_m: f64 = parse_token(f[7], path, 1, "altitude")?;
        if ncols == 0 || nrows == 0 || !(spacing_m > 0.0) || !(altitude_m > 0.0) {
            return Err(Error::parse(
                path,
                1,
                "dimensions, spacing and altitude must be positive",
            ));
        }
        if user_row >= nrows || user_col >= ncols {
            return Err(Error::parse(
                path,
                1,
                format!("user cell ({user_row}, {user_col}) outside the {nrows}x{ncols} grid"),
            ));
        }

        let mut values = Vec::with_capacity(ncols * nrows);
        let mut valid = Vec::with_capacity(ncols * nrows);
        let mut rows_read = 0;
        for (lineno, line) in lines {
            if rows_read == nrows {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::parse(path, lineno, "trailing data after last row"));
            }
            let before = values.len();
            for token in line.split_whitespace() {
                if token == "NA" {
                    values.push(f64::NAN);
                    valid.push(false);
                } else {
                    let v: f64 = parse_token(token, path, lineno, "SINR value")?;
                    if !v.is_finite() {
                        return Err(Error::parse(path, lineno, format!("non-finite value `{token}`")));
                    }
                    values.push(v);
                    valid.push(true);
                }
            }
            let count = values.len() - before;
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
        SinrField::new(
            ncols,
            nrows,
            spacing_m,
            Cell::new(user_row, user_col),
            altitude_m,
            values,
            valid,
        )
    }
}

pub fn save_field(field: &SinrField, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, field.to_text())?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<SinrField> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    SinrField::from_text(&text, path)
}

/// Number of distinct buildings obstructing the straight segment between
/// the centers of `a` and `b`, with altitude interpolated linearly along
/// the horizontal distance.
///
/// The segment is cut at every lattice line it crosses; each piece is
/// tested at its midpoint. Consecutive obstructing pieces of equal height
/// belong to the same building.
pub fn line_of_sight(grid: &HeightGrid, a: Cell, b: Cell, alt_a: f64, alt_b: f64) -> Result<usize> {
    grid.check_bounds(a)?;
    grid.check_bounds(b)?;
    // Walk in a canonical direction so the count is symmetric bit-for-bit.
    let (a, b, alt_a, alt_b) = if a <= b {
        (a, b, alt_a, alt_b)
    } else {
        (b, a, alt_b, alt_a)
    };
    Ok(count_walls(grid, a, b, alt_a, alt_b))
}

fn count_walls(grid: &HeightGrid, a: Cell, b: Cell, alt_a: f64, alt_b: f64) -> usize {
    let (x0, y0) = (a.col as f64 + 0.5, a.row as f64 + 0.5);
    let (x1, y1) = (b.col as f64 + 0.5, b.row as f64 + 0.5);
    let (dx, dy) = (x1 - x0, y1 - y0);

    let mut cuts = vec![0.0, 1.0];
    push_crossings(x0, dx, &mut cuts);
    push_crossings(y0, dy, &mut cuts);
    cuts.sort_by(f64::total_cmp);

    let mut walls = 0;
    let mut prev: Option<f64> = None;
    for w in cuts.windows(2) {
        if w[1] - w[0] <= 1e-12 {
            continue;
        }
        let t = 0.5 * (w[0] + w[1]);
        let cell = Cell::new((y0 + t * dy).floor() as usize, (x0 + t * dx).floor() as usize);
        let h = grid.height_unchecked(cell);
        let alt = alt_a + t * (alt_b - alt_a);
        if h > alt {
            if prev != Some(h) {
                walls += 1;
            }
            prev = Some(h);
        } else {
            prev = None;
        }
    }
    walls
}

fn push_crossings(start: f64, delta: f64, cuts: &mut Vec<f64>) {
    if delta == 0.0 {
        return;
    }
    let end = start + delta;
    let (lo, hi) = if delta > 0.0 { (start, end) } else { (end, start) };
    let mut line = lo.floor() + 1.0;
    while line < hi {
        cuts.push((line - start) / delta);
        line += 1.0;
    }
}

/// Smooth deterministic shadowing in `[0, 1]` from bilinear-interpolated
/// value noise on a coarse lattice.
pub fn shadowing_unit(seed: u64, cell: Cell, period: usize) -> f64 {
    let p = period as f64;
    let (y, x) = ((cell.row as f64 + 0.5) / p, (cell.col as f64 + 0.5) / p);
    let (iy, ix) = (y.floor(), x.floor());
    let (fy, fx) = (smoothstep(y - iy), smoothstep(x - ix));
    let (iy, ix) = (iy as u64, ix as u64);
    let v00 = lattice_noise(seed, iy, ix);
    let v01 = lattice_noise(seed, iy, ix + 1);
    let v10 = lattice_noise(seed, iy + 1, ix);
    let v11 = lattice_noise(seed, iy + 1, ix + 1);
    let top = v00 + (v01 - v00) * fx;
    let bottom = v10 + (v11 - v10) * fx;
    top + (bottom - top) * fy
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lattice_noise(seed: u64, row: u64, col: u64) -> f64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(row.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(col.wrapping_mul(0x94D0_49BB_1331_11EB));
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Computes the SINR field for a ground user at `user_cell`.
pub fn compute_sinr_field(
    grid: &HeightGrid,
    user_cell: Cell,
    params: &RadioParams,
    altitude_m: f64,
    seed: u64,
) -> Result<SinrField> {
    params.validate()?;
    grid.check_bounds(user_cell)?;
    if !(altitude_m > 0.0 && altitude_m.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "altitude must be positive, got {altitude_m}"
        )));
    }
    if grid.height_unchecked(user_cell) > USER_HEIGHT_M {
        return Err(Error::InvalidUser(user_cell));
    }
    let (lo, hi) = params.sinr_clamp_db;
    let spacing = grid.spacing_m();
    let n = grid.ncols() * grid.nrows();
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for idx in 0..n {
        let cell = grid.cell_at(idx);
        let sinr = raw_sinr(grid, user_cell, cell, params, altitude_m, seed, spacing);
        let v = sinr.clamp(lo, hi);
        let blocked = grid.blocked_unchecked(cell, altitude_m);
        values.push(v);
        valid.push(!blocked && v >= params.deadzone_floor_db);
    }
    SinrField::new(
        grid.ncols(),
        grid.nrows(),
        spacing,
        user_cell,
        altitude_m,
        values,
        valid,
    )
}

/// Unclamped SINR at `cell` before any validity decision.
pub fn raw_sinr(
    grid: &HeightGrid,
    user: Cell,
    cell: Cell,
    params: &RadioParams,
    altitude_m: f64,
    seed: u64,
    spacing_m: f64,
) -> f64 {
    let dr = (cell.row as f64 - user.row as f64) * spacing_m;
    let dc = (cell.col as f64 - user.col as f64) * spacing_m;
    let dz = altitude_m - USER_HEIGHT_M;
    let d = (dr * dr + dc * dc + dz * dz).sqrt().max(1.0);
    let (a, b, alt_a, alt_b) = if user <= cell {
        (user, cell, USER_HEIGHT_M, altitude_m)
    } else {
        (cell, user, altitude_m, USER_HEIGHT_M)
    };
    let walls = count_walls(grid, a, b, alt_a, alt_b) as f64;
    let shadow = params.shadowing_max_db * shadowing_unit(seed, cell, params.shadowing_period_cells);
    params.tx_power_dbm
        - fspl_db(d, params.freq_mhz)
        - walls * params.blockage_loss_db_per_wall
        - shadow
        - params.noise_plus_interference_dbm
}

/// Cells excluded as UAV positions: blocked or below the dead-zone floor.
pub fn dead_zone_mask(field: &SinrField) -> Vec<bool> {
    field.valid.iter().map(|v| !v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_shadow() -> RadioParams {
        RadioParams {
            shadowing_max_db: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn fspl_hand_value() {
        // 32.44 + 20 log10(0.1) + 20 log10(800) = 32.44 - 20 + 58.0618
        assert!((fspl_db(100.0, 800.0) - 70.5018).abs() < 1e-3);
    }

    #[test]
    fn unobstructed_high_sinr_is_clamped() {
        let p = no_shadow();
        // SINR = 20 - 70.50 + 104 = 53.5 before clamping.
        let raw = p.tx_power_dbm - fspl_db(100.0, p.freq_mhz) - p.noise_plus_interference_dbm;
        assert!((raw - 53.498).abs() < 1e-2);
        let grid = HeightGrid::flat(40, 40, 4.0).unwrap();
        let field = compute_sinr_field(&grid, Cell::new(0, 0), &p, 10.0, 1).unwrap();
        assert!(field.values().iter().all(|&v| v <= 45.0));
        // Horizontal 24 cells (96 m) puts the 3D distance near 100 m.
        assert_eq!(field.value(Cell::new(0, 24)), Some(45.0));
    }

    #[test]
    fn flat_map_has_no_walls() {
        let grid = HeightGrid::flat(10, 10, 4.0).unwrap();
        for (a, b) in [((0, 0), (9, 9)), ((3, 4), (3, 5)), ((9, 0), (0, 7))] {
            let walls = line_of_sight(&grid, Cell::new(a.0, a.1), Cell::new(b.0, b.1), USER_HEIGHT_M, 10.0).unwrap();
            assert_eq!(walls, 0);
        }
    }

    #[test]
    fn single_tall_building_is_one_wall() {
        let mut grid = HeightGrid::flat(10, 3, 4.0).unwrap();
        for r in 0..3 {
            for c in 4..6 {
                grid.set_height(Cell::new(r, c), 30.0).unwrap();
            }
        }
        let walls = line_of_sight(&grid, Cell::new(1, 0), Cell::new(1, 9), USER_HEIGHT_M, 10.0).unwrap();
        assert_eq!(walls, 1);
        let back = line_of_sight(&grid, Cell::new(1, 9), Cell::new(1, 0), 10.0, USER_HEIGHT_M).unwrap();
        assert_eq!(back, 1);
    }

    #[test]
    fn adjacent_buildings_of_different_height_count_separately() {
        let mut grid = HeightGrid::flat(10, 1, 4.0).unwrap();
        grid.set_height(Cell::new(0, 4), 30.0).unwrap();
        grid.set_height(Cell::new(0, 5), 20.0).unwrap();
        let walls = line_of_sight(&grid, Cell::new(0, 0), Cell::new(0, 9), USER_HEIGHT_M, 10.0).unwrap();
        assert_eq!(walls, 2);
    }

    #[test]
    fn los_out_of_bounds() {
        let grid = HeightGrid::flat(4, 4, 4.0).unwrap();
        assert!(matches!(
            line_of_sight(&grid, Cell::new(0, 0), Cell::new(4, 0), 1.5, 10.0),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn two_walls_cost_thirty_db() {
        let mut grid = HeightGrid::flat(20, 3, 4.0).unwrap();
        let p = no_shadow();
        let user = Cell::new(1, 0);
        let target = Cell::new(1, 19);
        let open = raw_sinr(&grid, user, target, &p, 10.0, 0, 4.0);
        grid.set_height(Cell::new(1, 6), 40.0).unwrap();
        grid.set_height(Cell::new(1, 12), 35.0).unwrap();
        assert_eq!(line_of_sight(&grid, user, target, USER_HEIGHT_M, 10.0).unwrap(), 2);
        let blocked = raw_sinr(&grid, user, target, &p, 10.0, 0, 4.0);
        assert!(((open - blocked) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn empty_map_sinr_non_increasing_with_distance() {
        let grid = HeightGrid::flat(30, 30, 4.0).unwrap();
        let p = RadioParams {
            shadowing_max_db: 0.0,
            sinr_clamp_db: (-140.0, 1000.0),
            ..Default::default()
        };
        let user = Cell::new(7, 11);
        let field = compute_sinr_field(&grid, user, &p, 10.0, 0).unwrap();
        let mut pairs: Vec<(usize, f64)> = (0..900)
            .map(|i| {
                let c = grid.cell_at(i);
                let d2 = (c.row as isize - 7).pow(2) as usize + (c.col as isize - 11).pow(2) as usize;
                (d2, field.values()[i])
            })
            .collect();
        pairs.sort_by_key(|a| a.0);
        for w in pairs.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }

    #[test]
    fn user_inside_building_rejected() {
        let mut grid = HeightGrid::flat(5, 5, 4.0).unwrap();
        grid.set_height(Cell::new(2, 2), 12.0).unwrap();
        assert!(matches!(
            compute_sinr_field(&grid, Cell::new(2, 2), &RadioParams::default(), 10.0, 0),
            Err(Error::InvalidUser(_))
        ));
    }

    #[test]
    fn shadowing_stays_in_unit_range_and_is_smooth() {
        let mut max_jump: f64 = 0.0;
        for r in 0..64 {
            for c in 0..64 {
                let v = shadowing_unit(9, Cell::new(r, c), 8);
                assert!((0.0..=1.0).contains(&v));
                let right = shadowing_unit(9, Cell::new(r, c + 1), 8);
                max_jump = max_jump.max((v - right).abs());
            }
        }
        assert!(max_jump < 0.25, "neighbouring cells jump by {max_jump}");
    }

    #[test]
    fn dead_zone_mask_matches_brute_force_recount() {
        let mut grid = HeightGrid::flat(30, 30, 4.0).unwrap();
        for r in 10..20 {
            for c in 5..7 {
                grid.set_height(Cell::new(r, c), 60.0).unwrap();
            }
        }
        let p = RadioParams {
            blockage_loss_db_per_wall: 300.0,
            ..Default::default()
        };
        let field = compute_sinr_field(&grid, Cell::new(15, 0), &p, 10.0, 3).unwrap();
        let mask = dead_zone_mask(&field);
        let brute = (0..900)
            .filter(|&i| {
                let c = grid.cell_at(i);
                field.values()[i] < p.deadzone_floor_db || grid.is_blocked(c, 10.0).unwrap()
            })
            .count();
        assert_eq!(mask.iter().filter(|&&m| m).count(), brute);
        assert!(mask.iter().any(|&m| m));
        let shadowed = field.values()[grid.index(Cell::new(15, 20))];
        assert_eq!(shadowed, -140.0);
        assert!(mask[grid.index(Cell::new(15, 20))]);
    }

    #[test]
    fn open_map_has_no_dead_zone() {
        let grid = HeightGrid::flat(10, 10, 4.0).unwrap();
        let field = compute_sinr_field(&grid, Cell::new(5, 5), &RadioParams::default(), 10.0, 0).unwrap();
        assert!(dead_zone_mask(&field).iter().all(|&m| !m));
    }

    #[test]
    fn field_text_round_trip_and_na() {
        let mut grid = HeightGrid::flat(6, 4, 4.0).unwrap();
        grid.set_height(Cell::new(1, 1), 20.0).unwrap();
        let field = compute_sinr_field(&grid, Cell::new(3, 5), &RadioParams::default(), 10.0, 7).unwrap();
        let text = field.to_text();
        assert!(text.contains("NA"));
        let back = SinrField::from_text(&text, Path::new("f.sinr")).unwrap();
        assert_eq!(back, field);
        assert_eq!(back.value(Cell::new(1, 1)), None);
    }

    #[test]
    fn field_parse_errors() {
        let p = Path::new("f.sinr");
        assert!(SinrField::from_text("SINR v1 2 1 4.0 0 2 10.0\n1 2\n", p).is_err());
        assert!(SinrField::from_text("SINR v1 2 1 4.0 0 0 10.0\n1\n", p).is_err());
        assert!(SinrField::from_text("SINR v1 2 2 4.0 0 0 10.0\n1 2\n", p).is_err());
        assert!(SinrField::from_text("SINR v1 2 1 4.0 0 0 10.0\n1 NaN\n", p).is_err());
        let ok = SinrField::from_text("SINR v1 2 1 4.0 0 1 10.0\n-3.5 NA\n", p).unwrap();
        assert_eq!(ok.value(Cell::new(0, 0)), Some(-3.5));
        assert!(!ok.is_valid(Cell::new(0, 1)));
    }
}
