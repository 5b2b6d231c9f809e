//! Training data: footprint rasterization and synthetic ger scenes.
//!
//! Footprints are rasterized with a pixel-center, even-odd rule in mercator
//! space. Synthetic scenes draw textured near-white ger discs and smoother,
//! larger circular confusers on a noisy earth-toned background; only gers are
//! marked in the mask.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::period::Period;
use crate::raster::{ensure_parent, load_tile_image, Mask, TILE_PX};
use crate::tile_pyramid::{GeoPoint, TileCoord};

/// Default ger radius in pixels: a 61 m² footprint at 0.40 m/px.
pub const CANONICAL_GER_RADIUS_PX: f64 = 11.0;
/// Confusers (domes, observatories) are drawn this much larger than gers.
pub const CONFUSER_RADIUS_SCALE: f64 = 1.6;

const PLACEMENT_ATTEMPTS: usize = 2_000;
const MIN_GAP_PX: f64 = 2.0;

/// A manually digitized ger outline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub id: String,
    /// Closed ring: first vertex equals last vertex.
    pub ring: Vec<GeoPoint>,
    pub period: Period,
}

impl Footprint {
    /// Validates the ring, closing it when the last vertex is missing.
    pub fn new(id: impl Into<String>, mut ring: Vec<GeoPoint>, period: Period) -> Result<Self> {
        if ring.first() != ring.last() {
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
        }
        let distinct = ring.len().saturating_sub(1);
        if distinct < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 vertices, got {distinct}"
            )));
        }
        let pts: Vec<(f64, f64)> = ring.iter().map(|p| (p.lon, p.lat)).collect();
        if ring_area(&pts).abs() < f64::EPSILON * 1e-6 {
            return Err(Error::Geometry("polygon has zero area".into()));
        }
        if let Some((i, j)) = find_self_intersection(&pts) {
            return Err(Error::Geometry(format!(
                "polygon edges {i} and {j} intersect"
            )));
        }
        Ok(Footprint {
            id: id.into(),
            ring,
            period,
        })
    }
}

fn ring_area(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2)
        .map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1)
        .sum::<f64>()
        / 2.0
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

pub(crate) fn segments_intersect(
    p1: (f64, f64),
    p2: (f64, f64),
    q1: (f64, f64),
    q2: (f64, f64),
) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// First pair of non-adjacent edges that touch or cross, for a closed ring.
pub(crate) fn find_self_intersection(pts: &[(f64, f64)]) -> Option<(usize, usize)> {
    let n = pts.len() - 1;
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Rasterizes footprints onto a 256 × 256 tile mask.
///
/// A pixel is set when its center lies inside any footprint under the
/// even-odd rule. Vertices are projected into tile pixel space first, which
/// is linear in mercator coordinates.
pub fn rasterize(footprints: &[Footprint], tile: TileCoord) -> Result<Mask> {
    let mut mask = Mask::tile();
    for fp in footprints {
        if fp.ring.len() < 4 {
            return Err(Error::Geometry(format!("footprint {} is degenerate", fp.id)));
        }
        let px: Vec<(f64, f64)> = fp
            .ring
            .iter()
            .map(|p| tile.geo_to_pixel(p.lat, p.lon))
            .collect();
        fill_polygon(&mut mask, &px);
    }
    Ok(mask)
}

/// Even-odd scanline fill of a closed pixel-space ring, sampling pixel centers.
pub(crate) fn fill_polygon(mask: &mut Mask, ring: &[(f64, f64)]) {
    let (w, h) = (mask.width(), mask.height());
    let (ymin, ymax) = ring
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if ymax < 0.0 || ymin > h as f64 {
        return;
    }
    let row_lo = ((ymin - 0.5).ceil().max(0.0)) as usize;
    let row_hi = ((ymax - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
    if row_hi < 0.0 {
        return;
    }
    let mut xs = Vec::new();
    for row in row_lo..=row_hi as usize {
        let cy = row as f64 + 0.5;
        xs.clear();
        for e in ring.windows(2) {
            let (a, b) = (e[0], e[1]);
            if (a.1 > cy) != (b.1 > cy) {
                xs.push(a.0 + (cy - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = (pair[0] - 0.5).ceil().max(0.0);
            let end = (pair[1] - 0.5).ceil().min(w as f64);
            if end <= start {
                continue;
            }
            for col in start as usize..end as usize {
                mask.set(col, row, true);
            }
        }
    }
}

/// A 256 × 256 RGB tile paired with its binary ger mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTile {
    pub coord: TileCoord,
    pub image: RgbImage,
    pub mask: Mask,
    pub period: Period,
}

impl LabeledTile {
    pub fn positive_pixels(&self) -> usize {
        self.mask.count_ones()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    /// Center in tile pixel coordinates (pixel `i` spans `[i, i+1)`).
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Disc {
    #[inline]
    pub fn covers_pixel(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }

    fn gap_to(&self, other: &Disc) -> f64 {
        let d = ((self.cx - other.cx).powi(2) + (self.cy - other.cy).powi(2)).sqrt();
        d - self.r - other.r
    }

    /// Pixel-center rasterized area of the disc, clipped to a tile.
    pub fn pixel_area(&self) -> usize {
        let (x0, x1, y0, y1) = self.pixel_bounds();
        (y0..y1)
            .flat_map(|y| (x0..x1).map(move |x| (x, y)))
            .filter(|&(x, y)| self.covers_pixel(x, y))
            .count()
    }

    fn pixel_bounds(&self) -> (usize, usize, usize, usize) {
        let clamp = |v: f64| v.max(0.0).min(TILE_PX as f64) as usize;
        (
            clamp((self.cx - self.r - 1.0).floor()),
            clamp((self.cx + self.r + 1.0).ceil()),
            clamp((self.cy - self.r - 1.0).floor()),
            clamp((self.cy + self.r + 1.0).ceil()),
        )
    }
}

/// Parameters of one synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub ger_count: usize,
    pub ger_radius_px: f64,
    /// Uniform jitter applied to each ger radius, in pixels.
    #[serde(default)]
    pub radius_jitter_px: f64,
    pub confuser_count: usize,
    /// 0 = clean, 1 = heavy sensor noise.
    pub noise_level: f64,
    pub rng_seed: u64,
    /// Number of additional ger pairs drawn deliberately overlapping so they
    /// merge into one blob (each pair adds two gers to the truth).
    #[serde(default)]
    pub merged_pairs: usize,
    /// Place gers without any separation constraint.
    #[serde(default)]
    pub overlap_allowed: bool,
    /// Allow discs to be cut by the tile edge.
    #[serde(default)]
    pub allow_edge_clipping: bool,
    pub tile: TileCoord,
    pub period: Period,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            ger_count: 10,
            ger_radius_px: CANONICAL_GER_RADIUS_PX,
            radius_jitter_px: 0.0,
            confuser_count: 1,
            noise_level: 0.3,
            rng_seed: 0,
            merged_pairs: 0,
            overlap_allowed: false,
            allow_edge_clipping: false,
            tile: TileCoord {
                z: 18,
                x: 208_926,
                y: 91_214,
            },
            period: Period::from("synthetic"),
        }
    }
}

impl SyntheticSceneSpec {
    fn validate(&self) -> Result<()> {
        if !(self.ger_radius_px > 0.0) {
            return Err(Error::invalid("ger_radius_px", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid("noise_level", "must lie in [0, 1]"));
        }
        if self.radius_jitter_px < 0.0 || self.radius_jitter_px >= self.ger_radius_px {
            return Err(Error::invalid("radius_jitter_px", "must lie in [0, radius)"));
        }
        Ok(())
    }
}

/// Ground truth of a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub gers: Vec<Disc>,
    pub confusers: Vec<Disc>,
}

impl SceneTruth {
    pub fn ger_count(&self) -> usize {
        self.gers.len()
    }
}

struct Placer<'a> {
    rng: &'a mut ChaCha8Rng,
    placed: Vec<Disc>,
    keep_apart: bool,
    clip: bool,
}

impl Placer<'_> {
    fn random_center(&mut self, r: f64) -> (f64, f64) {
        let size = TILE_PX as f64;
        if self.clip {
            (self.rng.random_range(0.0..size), self.rng.random_range(0.0..size))
        } else {
            let lo = r + 1.0;
            let hi = size - r - 1.0;
            (self.rng.random_range(lo..hi), self.rng.random_range(lo..hi))
        }
    }

    fn fits(&self, d: &Disc) -> bool {
        !self.keep_apart || self.placed.iter().all(|p| d.gap_to(p) >= MIN_GAP_PX)
    }

    fn place(&mut self, r: f64, what: &'static str) -> Result<Disc> {
        if !self.clip && 2.0 * (r + 1.0) >= TILE_PX as f64 {
            return Err(Error::Placement {
                what,
                attempts: 0,
            });
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (cx, cy) = self.random_center(r);
            let d = Disc { cx, cy, r };
            if self.fits(&d) {
                self.placed.push(d);
                return Ok(d);
            }
        }
        Err(Error::Placement {
            what,
            attempts: PLACEMENT_ATTEMPTS,
        })
    }

    /// Two overlapping discs; the pair is kept apart from everything else.
    fn place_pair(&mut self, r1: f64, r2: f64) -> Result<(Disc, Disc)> {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let reach = r1 + 2.0 * r2;
            let (cx, cy) = self.random_center(reach);
            let angle = self.rng.random_range(0.0..std::f64::consts::TAU);
            // centers 1.5 radii apart: clearly two gers, one connected blob
            let sep = 0.75 * (r1 + r2);
            let a = Disc { cx, cy, r: r1 };
            let b = Disc {
                cx: cx + sep * angle.cos(),
                cy: cy + sep * angle.sin(),
                r: r2,
            };
            let inside = self.clip
                || [a, b].iter().all(|d| {
                    d.cx - d.r > 1.0
                        && d.cy - d.r > 1.0
                        && d.cx + d.r < TILE_PX as f64 - 1.0
                        && d.cy + d.r < TILE_PX as f64 - 1.0
                });
            if inside && self.fits(&a) && self.fits(&b) {
                self.placed.push(a);
                self.placed.push(b);
                return Ok((a, b));
            }
        }
        Err(Error::Placement {
            what: "merged ger pair",
            attempts: PLACEMENT_ATTEMPTS,
        })
    }
}

/// Renders a synthetic scene; output is a pure function of `spec`.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<(LabeledTile, SceneTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut image = RgbImage::new(TILE_PX as u32, TILE_PX as u32);
    paint_background(&mut image, &mut rng, spec.noise_level);

    let mut placer = Placer {
        rng: &mut rng,
        placed: Vec::new(),
        keep_apart: !spec.overlap_allowed,
        clip: spec.allow_edge_clipping,
    };
    let jitter = spec.radius_jitter_px;
    let radius = |rng: &mut ChaCha8Rng| {
        if jitter > 0.0 {
            spec.ger_radius_px + rng.random_range(-jitter..=jitter)
        } else {
            spec.ger_radius_px
        }
    };

    let mut gers = Vec::with_capacity(spec.ger_count + 2 * spec.merged_pairs);
    let mut confusers = Vec::with_capacity(spec.confuser_count);
    for _ in 0..spec.confuser_count {
        let r = spec.ger_radius_px * CONFUSER_RADIUS_SCALE;
        confusers.push(placer.place(r, "confuser")?);
    }
    for _ in 0..spec.merged_pairs {
        let r1 = radius(placer.rng);
        let r2 = radius(placer.rng);
        let (a, b) = placer.place_pair(r1, r2)?;
        gers.push(a);
        gers.push(b);
    }
    for _ in 0..spec.ger_count {
        let r = radius(placer.rng);
        gers.push(placer.place(r, "ger")?);
    }

    let roof_noise = Normal::new(0.0, 4.0 + 14.0 * spec.noise_level).expect("finite sigma");
    let dome_noise = Normal::new(0.0, 1.5 + 3.0 * spec.noise_level).expect("finite sigma");
    for c in &confusers {
        paint_confuser(&mut image, c, &mut rng, &dome_noise);
    }
    let mut mask = Mask::tile();
    for g in &gers {
        let spokes = rng.random_range(10..16);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let tint = rng.random_range(-8.0..8.0);
        let (x0, x1, y0, y1) = g.pixel_bounds();
        for y in y0..y1 {
            for x in x0..x1 {
                if !g.covers_pixel(x, y) {
                    continue;
                }
                let dx = x as f64 + 0.5 - g.cx;
                let dy = y as f64 + 0.5 - g.cy;
                let rel = (dx * dx + dy * dy).sqrt() / g.r;
                let theta = dy.atan2(dx);
                let mut v = 236.0 + tint;
                if rel < 0.22 {
                    v -= 45.0; // roof crown
                } else if (spokes as f64 * theta + phase).cos() > 0.8 {
                    v -= 32.0;
                }
                if rel > 0.86 {
                    v -= 14.0;
                }
                v += roof_noise.sample(&mut rng);
                image.put_pixel(x as u32, y as u32, gray_rgb(v, -2.0, 4.0));
                mask.set(x, y, true);
            }
        }
    }

    let tile = LabeledTile {
        coord: spec.tile,
        image,
        mask,
        period: spec.period.clone(),
    };
    Ok((tile, SceneTruth { gers, confusers }))
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn gray_rgb(v: f64, dg: f64, db: f64) -> Rgb<u8> {
    Rgb([clamp_u8(v), clamp_u8(v + dg), clamp_u8(v + db)])
}

fn paint_background(image: &mut RgbImage, rng: &mut ChaCha8Rng, noise_level: f64) {
    let base = [
        rng.random_range(95.0..130.0),
        rng.random_range(85.0..115.0),
        rng.random_range(65.0..95.0),
    ];
    let noise = Normal::new(0.0, 6.0 + 30.0 * noise_level).expect("finite sigma");
    // low-frequency ground shading
    let (fx, fy, amp) = (
        rng.random_range(0.01..0.05),
        rng.random_range(0.01..0.05),
        rng.random_range(5.0..15.0),
    );
    for (x, y, px) in image.enumerate_pixels_mut() {
        let shade = amp * ((x as f64 * fx).sin() + (y as f64 * fy).cos());
        let n = noise.sample(rng);
        *px = Rgb([
            clamp_u8(base[0] + shade + n),
            clamp_u8(base[1] + shade + n * 0.9),
            clamp_u8(base[2] + shade + n * 0.8),
        ]);
    }

    // khashaa fences: thin dark rectangles
    for _ in 0..rng.random_range(2..6) {
        let x0 = rng.random_range(0..TILE_PX - 40);
        let y0 = rng.random_range(0..TILE_PX - 40);
        let w = rng.random_range(30..90).min(TILE_PX - 1 - x0);
        let h = rng.random_range(30..90).min(TILE_PX - 1 - y0);
        let c = Rgb([
            clamp_u8(base[0] - 45.0),
            clamp_u8(base[1] - 45.0),
            clamp_u8(base[2] - 40.0),
        ]);
        for x in x0..=x0 + w {
            image.put_pixel(x as u32, y0 as u32, c);
            image.put_pixel(x as u32, (y0 + h) as u32, c);
        }
        for y in y0..=y0 + h {
            image.put_pixel(x0 as u32, y as u32, c);
            image.put_pixel((x0 + w) as u32, y as u32, c);
        }
    }

    // small houses with colored roofs
    const ROOFS: [[f64; 3]; 4] = [
        [150.0, 60.0, 50.0],
        [60.0, 110.0, 150.0],
        [80.0, 130.0, 80.0],
        [170.0, 160.0, 140.0],
    ];
    for _ in 0..rng.random_range(0..4) {
        let roof = ROOFS[rng.random_range(0..ROOFS.len())];
        let w = rng.random_range(8..20);
        let h = rng.random_range(8..20);
        let x0 = rng.random_range(0..TILE_PX - w);
        let y0 = rng.random_range(0..TILE_PX - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let n = noise.sample(rng) * 0.3;
                image.put_pixel(
                    x as u32,
                    y as u32,
                    Rgb([clamp_u8(roof[0] + n), clamp_u8(roof[1] + n), clamp_u8(roof[2] + n)]),
                );
            }
        }
    }
}

fn paint_confuser(image: &mut RgbImage, d: &Disc, rng: &mut ChaCha8Rng, noise: &Normal<f64>) {
    let (x0, x1, y0, y1) = d.pixel_bounds();
    let light = rng.random_range(0.0..std::f64::consts::TAU);
    for y in y0..y1 {
        for x in x0..x1 {
            if !d.covers_pixel(x, y) {
                continue;
            }
            let dx = (x as f64 + 0.5 - d.cx) / d.r;
            let dy = (y as f64 + 0.5 - d.cy) / d.r;
            // smooth dome shading toward a light direction
            let v = 232.0 + 14.0 * (dx * light.cos() + dy * light.sin()) + noise.sample(rng);
            image.put_pixel(x as u32, y as u32, gray_rgb(v, 1.0, 2.0));
        }
    }
}

/// Settings for a batch of synthetic tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub tiles: usize,
    pub seed: u64,
    pub min_gers: usize,
    pub max_gers: usize,
    pub max_confusers: usize,
    pub base: SyntheticSceneSpec,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            tiles: 50,
            seed: 7,
            min_gers: 4,
            max_gers: 16,
            max_confusers: 2,
            base: SyntheticSceneSpec::default(),
        }
    }
}

/// Seed of the `index`-th tile's private RNG stream.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `spec.tiles` scenes on a row-major block of neighbouring tiles.
pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<Vec<(LabeledTile, SceneTruth)>> {
    if spec.min_gers > spec.max_gers {
        return Err(Error::invalid("min_gers", "must not exceed max_gers"));
    }
    (0..spec.tiles)
        .map(|i| {
            let seed = scene_seed(spec.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut scene = spec.base.clone();
            scene.ger_count = rng.random_range(spec.min_gers..=spec.max_gers);
            scene.confuser_count = rng.random_range(0..=spec.max_confusers);
            scene.rng_seed = rng.random();
            let n = 1u32 << scene.tile.z;
            scene.tile = TileCoord {
                z: scene.tile.z,
                x: (spec.base.tile.x + (i % 64) as u32) % n,
                y: (spec.base.tile.y + (i / 64) as u32) % n,
            };
            generate_scene(&scene)
        })
        .collect()
}

/// Deterministic shuffled split; the train side gets `floor(n * fraction)`
/// items, bounded so both sides are non-empty.
pub fn split_dataset<T>(items: Vec<T>, train_fraction: f64, rng_seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction", "must lie strictly between 0 and 1"));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::invalid("tiles", format!("need at least 2 tiles, got {n}")));
    }
    let n_train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> {
        idx.iter()
            .map(|&i| slots[i].take().expect("indices are a permutation"))
            .collect()
    };
    let train = take(&order[..n_train]);
    let eval = take(&order[n_train..]);
    Ok((train, eval))
}

/// On-disk locations of a tile image and its label.
pub fn tile_path(root: &Path, period: &Period, t: TileCoord) -> PathBuf {
    root.join(period.as_str())
        .join(t.z.to_string())
        .join(t.x.to_string())
        .join(format!("{}.png", t.y))
}

pub fn label_path(root: &Path, period: &Period, t: TileCoord) -> PathBuf {
    tile_path(&root.join("labels"), period, t)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub period: Period,
    pub z: u8,
    pub x: u32,
    pub y: u32,
    pub positive_pixels: usize,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes images, masks and `manifest.csv` under `root`.
pub fn write_labeled_tiles(root: &Path, tiles: &[LabeledTile]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut rows = Vec::with_capacity(tiles.len());
    for t in tiles {
        let img_path = tile_path(root, &t.period, t.coord);
        ensure_parent(&img_path)?;
        t.image.save(&img_path)?;
        t.mask.save_png(&label_path(root, &t.period, t.coord))?;
        rows.push(ManifestRow {
            period: t.period.clone(),
            z: t.coord.z,
            x: t.coord.x,
            y: t.coord.y,
            positive_pixels: t.positive_pixels(),
        });
    }
    let path = root.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads every tile listed in `root/manifest.csv`.
pub fn read_labeled_tiles(root: &Path) -> Result<Vec<LabeledTile>> {
    let mut rdr = csv::Reader::from_path(root.join(MANIFEST_FILE))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let coord = TileCoord::new(row.z, row.x, row.y)?;
        let image = load_tile_image(&tile_path(root, &row.period, coord))?;
        let mask = Mask::load_png(&label_path(root, &row.period, coord))?;
        out.push(LabeledTile {
            coord,
            image,
            mask,
            period: row.period,
        });
    }
    Ok(out)
}
