//! Procedural two-class datasets for tests, demos and offline runs.
//!
//! Each kind mimics the visual cue of its real counterpart: dark lesions on a
//! green blade, dark panel arrays on rooftops, and water-filled ponds in the
//! fixture map landscape.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{write_manifest, DatasetKind, DatasetManifest, DomainError, GeoTag, Label, ManifestEntry, Splits};
use crate::raster::Raster;
use crate::tools::{FixtureTileProvider, TileProvider, Viewport, ZoomBounds};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub positive_fraction: f64,
    /// Square image edge in pixels.
    pub size: usize,
    pub seed: u64,
    /// Seed of the fixture landscape aquaculture images are cut from.
    pub tile_seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: DatasetKind, n_train: usize, n_test: usize) -> Self {
        Self {
            kind,
            n_train,
            n_test,
            positive_fraction: 0.3,
            size: 48,
            seed: 0,
            tile_seed: 0,
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amount: i32) -> [u8; 3] {
    base.map(|v| (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

fn eelgrass(rng: &mut ChaCha8Rng, size: usize, positive: bool) -> Raster {
    let s = size as f64;
    let band_center = rng.random_range(0.4..0.6) * s;
    let half = s * rng.random_range(0.15..0.22);
    let tilt = rng.random_range(-0.2..0.2);
    let lesions: Vec<(f64, f64, f64)> = if positive {
        (0..rng.random_range(2..=4))
            .map(|_| {
                let x = rng.random_range(0.1..0.9) * s;
                let y = band_center + tilt * (x - s / 2.0) + rng.random_range(-0.5..0.5) * half;
                (x, y, s * rng.random_range(0.06..0.11))
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let on_blade = (fy - (band_center + tilt * (fx - s / 2.0))).abs() < half;
            let in_lesion = lesions
                .iter()
                .any(|&(lx, ly, r)| (fx - lx).powi(2) + (fy - ly).powi(2) < r * r);
            let c = if on_blade && in_lesion {
                jitter(rng, [62, 42, 24], 8)
            } else if on_blade {
                jitter(rng, [70, 150, 66], 10)
            } else {
                jitter(rng, [214, 206, 180], 10)
            };
            px.extend_from_slice(&c);
        }
    }
    Raster::new(size, size, 3, px).expect("sized buffer")
}

fn solar(rng: &mut ChaCha8Rng, size: usize, positive: bool) -> Raster {
    let ground = [[96, 120, 70], [140, 136, 120], [110, 104, 96]][rng.random_range(0..3)];
    let roof = [rng.random_range(150..200), rng.random_range(140..180), rng.random_range(120..160)];
    let rw = rng.random_range(size / 2..=size * 3 / 4);
    let rh = rng.random_range(size / 2..=size * 3 / 4);
    let rx = rng.random_range(0..=size - rw);
    let ry = rng.random_range(0..=size - rh);
    let (pw, ph) = (rw * 2 / 3, rh * 2 / 3);
    let (px0, py0) = (rx + (rw - pw) / 2, ry + (rh - ph) / 2);
    let cell = (size / 12).max(2);
    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let in_roof = x >= rx && x < rx + rw && y >= ry && y < ry + rh;
            let in_panel = positive && x >= px0 && x < px0 + pw && y >= py0 && y < py0 + ph;
            let c = if in_panel {
                let seam = (x - px0) % cell == 0 || (y - py0) % cell == 0;
                if seam {
                    jitter(rng, [150, 156, 170], 6)
                } else {
                    jitter(rng, [26, 36, 78], 6)
                }
            } else if in_roof {
                jitter(rng, roof, 8)
            } else {
                jitter(rng, ground, 12)
            };
            px.extend_from_slice(&c);
        }
    }
    Raster::new(size, size, 3, px).expect("sized buffer")
}

fn water_fraction(img: &Raster) -> f64 {
    let water = img
        .data()
        .chunks_exact(3)
        .filter(|p| p[2] as i32 > p[0] as i32 + 50)
        .count();
    water as f64 / (img.width() * img.height()) as f64
}

/// A view of the fixture landscape with (≥ 10% water) or without ponds.
fn aquaculture(rng: &mut ChaCha8Rng, tiles: &FixtureTileProvider, size: usize, positive: bool) -> (Raster, GeoTag) {
    loop {
        let geo = GeoTag {
            lat: rng.random_range(-11.5..-10.0),
            lon: rng.random_range(-62.5..-61.0),
            zoom: 16,
        };
        let view = Viewport::new(geo, size as u32, size as u32, ZoomBounds::default()).expect("valid view");
        let img = tiles.fetch(&view).expect("fixture tiles render");
        let w = water_fraction(&img);
        if (positive && w >= 0.1) || (!positive && w == 0.0) {
            return (img, geo);
        }
    }
}

/// Renders one image of `kind`.
pub fn render_item(kind: DatasetKind, positive: bool, size: usize, seed: u64, tile_seed: u64) -> (Raster, Option<GeoTag>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        DatasetKind::Eelgrass => (eelgrass(&mut rng, size, positive), None),
        DatasetKind::Solar => (solar(&mut rng, size, positive), None),
        DatasetKind::Aquaculture => {
            let (img, geo) = aquaculture(&mut rng, &FixtureTileProvider::new(tile_seed), size, positive);
            (img, Some(geo))
        }
    }
}

fn labels_for(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Label> {
    let n_pos = ((n as f64 * fraction).round() as usize).clamp(usize::from(n >= 2), n.saturating_sub(1).max(1));
    let mut v: Vec<Label> = (0..n)
        .map(|i| if i < n_pos { Label::Positive } else { Label::Negative })
        .collect();
    v.shuffle(rng);
    v
}

/// Writes PNG images under `dir/images` and `dir/manifest.json`.
///
/// Both splits get both classes when they have at least two items.
pub fn generate_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest, DomainError> {
    if spec.n_train < 2 || spec.size < 8 || !(0.0..=1.0).contains(&spec.positive_fraction) {
        return Err(DomainError::InvalidArgument(
            "need at least 2 train items, images of at least 8 px and a fraction in [0, 1]".into(),
        ));
    }
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|source| DomainError::Io {
        path: img_dir.clone(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = labels_for(spec.n_train, spec.positive_fraction, &mut rng);
    labels.extend(labels_for(spec.n_test, spec.positive_fraction, &mut rng));

    let mut entries = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("{}-{i:04}", spec.kind.as_str());
        let item_seed = spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
        let (img, geo) = render_item(spec.kind, label.is_positive(), spec.size, item_seed, spec.tile_seed);
        let rel = format!("images/{id}.png");
        let path = dir.join(&rel);
        let png = img.encode_png().map_err(|source| DomainError::Image { id: id.clone(), source })?;
        fs::write(&path, png).map_err(|source| DomainError::Io { path, source })?;
        entries.push(ManifestEntry {
            id,
            path: rel,
            label,
            lat: geo.map(|g| g.lat),
            lon: geo.map(|g| g.lon),
            zoom: geo.map(|g| g.zoom),
        });
    }
    let manifest = DatasetManifest {
        name: format!("synthetic-{}", spec.kind.as_str()),
        positive_fraction_hint: Some(spec.positive_fraction),
        entries,
        splits: Splits {
            train: (0..spec.n_train).collect(),
            test: (spec.n_train..spec.n_train + spec.n_test).collect(),
        },
        base_dir: dir.to_path_buf(),
    };
    manifest.validate()?;
    write_manifest(&manifest, dir.join("manifest.json"))?;
    Ok(manifest)
}
