//! Plain-text PPM images of height maps and SINR heatmaps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gridmap::{Cell, HeightGrid};
use crate::propagation::SinrField;

pub type Rgb = [u8; 3];

/// Cells without a usable SINR value.
pub const INVALID_COLOR: Rgb = [0, 0, 0];
pub const TRAJECTORY_COLOR: Rgb = [255, 255, 255];
pub const START_COLOR: Rgb = [255, 0, 0];
pub const USER_COLOR: Rgb = [255, 0, 255];
/// SINR range spread over the color map.
pub const SINR_COLOR_RANGE_DB: (f64, f64) = (-90.0, 45.0);

const MAP_STOPS: [Rgb; 5] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    fn from_cells(ncols: usize, nrows: usize, scale: usize, color: impl Fn(Cell) -> Rgb) -> Self {
        let (width, height) = (ncols * scale, nrows * scale);
        let pixels = (0..width * height)
            .map(|i| color(Cell::new(i / width / scale, i % width / scale)))
            .collect();
        Image { width, height, pixels }
    }

    fn paint_cell(&mut self, cell: Cell, scale: usize, rgb: Rgb) {
        for r in cell.row * scale..(cell.row + 1) * scale {
            for c in cell.col * scale..(cell.col + 1) * scale {
                self.pixels[r * self.width + c] = rgb;
            }
        }
    }

    pub fn to_ppm(&self) -> String {
        let mut out = format!("P3\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|p| format!("{} {} {}", p[0], p[1], p[2])).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Linear interpolation through the color stops, `t` in `[0, 1]`.
pub fn colormap(t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0) * (MAP_STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(MAP_STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (MAP_STOPS[i], MAP_STOPS[i + 1]);
    [0, 1, 2].map(|k| (a[k] as f64 + f * (b[k] as f64 - a[k] as f64)).round() as u8)
}

pub fn sinr_color(db: f64) -> Rgb {
    let (lo, hi) = SINR_COLOR_RANGE_DB;
    colormap((db - lo) / (hi - lo))
}

fn check_cells(grid: &HeightGrid, cells: impl IntoIterator<Item = Cell>) -> Result<()> {
    for c in cells {
        grid.check_bounds(c)?;
    }
    Ok(())
}

fn overlay(img: &mut Image, scale: usize, trajectories: &[Vec<Cell>], user: Option<Cell>) {
    for t in trajectories {
        for &c in t.iter().skip(1) {
            img.paint_cell(c, scale, TRAJECTORY_COLOR);
        }
    }
    for t in trajectories {
        if let Some(&s) = t.first() {
            img.paint_cell(s, scale, START_COLOR);
        }
    }
    if let Some(u) = user {
        img.paint_cell(u, scale, USER_COLOR);
    }
}

/// Grayscale heights relative to `altitude_m`; cells at or above altitude
/// are drawn in a dark red.
pub fn render_height_map(
    grid: &HeightGrid,
    altitude_m: f64,
    trajectories: &[Vec<Cell>],
    scale: usize,
) -> Result<Image> {
    if scale == 0 {
        return Err(Error::InvalidParams("scale must be positive".into()));
    }
    check_cells(grid, trajectories.iter().flatten().copied())?;
    let mut img = Image::from_cells(grid.ncols(), grid.nrows(), scale, |c| {
        let h = grid.height_unchecked(c);
        if h >= altitude_m {
            [128, 24, 24]
        } else {
            let v = (230.0 - 180.0 * h / altitude_m).round() as u8;
            [v, v, v]
        }
    });
    overlay(&mut img, scale, trajectories, None);
    Ok(img)
}

pub fn render_sinr_heatmap(
    grid: &HeightGrid,
    field: &SinrField,
    trajectories: &[Vec<Cell>],
    scale: usize,
) -> Result<Image> {
    if scale == 0 {
        return Err(Error::InvalidParams("scale must be positive".into()));
    }
    if !field.matches_grid(grid) {
        return Err(Error::Shape("field does not match grid".into()));
    }
    check_cells(grid, trajectories.iter().flatten().copied())?;
    let mut img = Image::from_cells(grid.ncols(), grid.nrows(), scale, |c| {
        field.value(c).map_or(INVALID_COLOR, sinr_color)
    });
    overlay(&mut img, scale, trajectories, Some(field.user_cell()));
    Ok(img)
}

/// Writes `<prefix>_height.ppm` and `<prefix>_sinr.ppm`.
pub fn render(
    grid: &HeightGrid,
    field: &SinrField,
    trajectories: &[Vec<Cell>],
    scale: usize,
    prefix: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    let prefix = prefix.as_ref().to_string_lossy().into_owned();
    let height = PathBuf::from(format!("{prefix}_height.ppm"));
    let sinr = PathBuf::from(format!("{prefix}_sinr.ppm"));
    fs::write(
        &height,
        render_height_map(grid, field.altitude_m(), trajectories, scale)?.to_ppm(),
    )?;
    fs::write(&sinr, render_sinr_heatmap(grid, field, trajectories, scale)?.to_ppm())?;
    Ok((height, sinr))
}
