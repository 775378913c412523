//! Collections of height maps and per-user SINR fields used for training
//! and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EpisodeConfig};
use crate::error::{Error, Result};
use crate::gridmap::{generate_city, load_grid, Cell, CityGenParams, HeightGrid, DEFAULT_ALTITUDE_M};
use crate::propagation::{compute_sinr_field, load_field, RadioParams, SinrField, USER_HEIGHT_M};

#[derive(Debug, Clone, PartialEq)]
pub struct UserField {
    /// Index into [`Dataset::maps`].
    pub map: usize,
    pub field: SinrField,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub maps: Vec<HeightGrid>,
    pub fields: Vec<UserField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub maps: usize,
    pub users_per_map: usize,
    /// Template for every map; its seed is replaced per map.
    pub city: CityGenParams,
    pub radio: RadioParams,
    pub altitude_m: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            maps: 8,
            users_per_map: 10,
            city: CityGenParams {
                extent_m: (256.0, 256.0),
                ..CityGenParams::default()
            },
            radio: RadioParams::default(),
            altitude_m: DEFAULT_ALTITUDE_M,
        }
    }
}

/// Mixes a stream index into a seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Dataset {
    /// Procedural cities with users on ground-level cells. Users whose field
    /// leaves no permissible start are redrawn.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        spec.radio.validate()?;
        let mut data = Dataset::default();
        for m in 0..spec.maps {
            let map_seed = derive_seed(spec.seed, m as u64);
            let grid = generate_city(&CityGenParams {
                seed: map_seed,
                ..spec.city.clone()
            })?;
            let mut ground: Vec<Cell> = (0..grid.ncols() * grid.nrows())
                .map(|i| grid.cell_at(i))
                .filter(|&c| grid.height_unchecked(c) <= USER_HEIGHT_M)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(map_seed, 1));
            ground.shuffle(&mut rng);
            let mut placed = 0;
            for (u, &cell) in ground.iter().enumerate() {
                if placed == spec.users_per_map {
                    break;
                }
                let field = compute_sinr_field(
                    &grid,
                    cell,
                    &spec.radio,
                    spec.altitude_m,
                    derive_seed(map_seed, 2 + u as u64),
                )?;
                if field.permissible_starts().is_empty() {
                    continue;
                }
                data.fields.push(UserField { map: m, field });
                placed += 1;
            }
            if placed < spec.users_per_map {
                return Err(Error::EnvironmentUnusable(format!(
                    "map {m} has room for only {placed} of {} users",
                    spec.users_per_map
                )));
            }
            data.maps.push(grid);
        }
        Ok(data)
    }

    /// Loads every `*.hgrid` in `dir` together with the `*.sinr` files whose
    /// names start with the map's stem followed by `_`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        let with_ext = |ext: &str| -> Vec<&PathBuf> {
            entries
                .iter()
                .filter(|p| p.extension().is_some_and(|e| e == ext))
                .collect()
        };
        let mut data = Dataset::default();
        let sinr_files = with_ext("sinr");
        for map_path in with_ext("hgrid") {
            let stem = map_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let grid = load_grid(map_path)?;
            let map = data.maps.len();
            for f in &sinr_files {
                let name = f.file_name().and_then(|s| s.to_str()).unwrap_or_default();
                if name.starts_with(&format!("{stem}_")) {
                    let field = load_field(f)?;
                    if !field.matches_grid(&grid) {
                        return Err(Error::Shape(format!(
                            "{} does not match map {}",
                            f.display(),
                            map_path.display()
                        )));
                    }
                    data.fields.push(UserField { map, field });
                }
            }
            data.maps.push(grid);
        }
        Ok(data)
    }

    pub fn grid_of(&self, field: usize) -> &HeightGrid {
        &self.maps[self.fields[field].map]
    }

    /// One environment per user field.
    pub fn envs(&self, config: &EpisodeConfig) -> Result<Vec<Env<'_>>> {
        self.fields
            .iter()
            .map(|f| Env::new(&self.maps[f.map], &f.field, config.clone()))
            .collect()
    }

    pub fn sinr_fields(&self) -> impl Iterator<Item = &SinrField> {
        self.fields.iter().map(|f| &f.field)
    }
}
