//! Spherical web-mercator tile math (XYZ convention, y grows southward).
//!
//! Zoom level `z` splits the world into `2^z × 2^z` tiles of 256 × 256 pixels.
//! Change maps group zoom-18 tiles into their zoom-15 ancestors; each such
//! grid cell holds an 8 × 8 block of 64 tiles.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equatorial radius used by the spherical web-mercator projection, in meters.
pub const MERCATOR_RADIUS_M: f64 = 6_378_137.0;

/// Latitude limit of the square web-mercator world.
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;

pub const TILE_SIZE: u32 = 256;
pub const MAX_ZOOM: u8 = 22;

/// Zoom level of imagery tiles.
pub const DETECTION_ZOOM: u8 = 18;
/// Zoom level of change-analysis grid cells.
pub const GRID_ZOOM: u8 = 15;
pub const GRID_CHILDREN_PER_SIDE: u32 = 1 << (DETECTION_ZOOM - GRID_ZOOM);

/// A WGS84 coordinate inside the web-mercator latitude range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validates the latitude and normalizes longitude into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Domain(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if lat.abs() > MAX_LATITUDE {
            return Err(Error::Domain(format!(
                "latitude {lat} outside web-mercator range ±{MAX_LATITUDE}"
            )));
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }
}

fn normalize_lon(lon: f64) -> f64 {
    let l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if l >= 180.0 {
        l - 360.0
    } else {
        l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub z: u8,
    pub x: u32,
    pub y: u32,
}

impl TileCoord {
    pub fn new(z: u8, x: u32, y: u32) -> Result<Self> {
        if z > MAX_ZOOM {
            return Err(Error::Domain(format!("zoom {z} exceeds {MAX_ZOOM}")));
        }
        let n = 1u32 << z;
        if x >= n || y >= n {
            return Err(Error::Domain(format!(
                "tile index ({x}, {y}) outside [0, {n}) at zoom {z}"
            )));
        }
        Ok(TileCoord { z, x, y })
    }

    /// Ancestor of this tile at a lower zoom.
    pub fn parent_at(&self, z: u8) -> Result<TileCoord> {
        if z > self.z {
            return Err(Error::Domain(format!(
                "zoom {z} is deeper than tile zoom {}",
                self.z
            )));
        }
        let shift = self.z - z;
        Ok(TileCoord {
            z,
            x: self.x >> shift,
            y: self.y >> shift,
        })
    }

    /// Converts a pixel position inside the tile (0..256, fractional allowed)
    /// to a geographic point via linear interpolation in mercator space.
    pub fn pixel_to_geo(&self, px: f64, py: f64) -> GeoPoint {
        let n = f64::from(1u32 << self.z);
        let u = (f64::from(self.x) + px / f64::from(TILE_SIZE)) / n;
        let v = (f64::from(self.y) + py / f64::from(TILE_SIZE)) / n;
        let (lat, lon) = world_to_latlon(u, v);
        GeoPoint {
            lat,
            lon: normalize_lon(lon),
        }
    }

    /// Inverse of [`TileCoord::pixel_to_geo`]; the result may fall outside
    /// `0..256` when the point lies outside this tile.
    pub fn geo_to_pixel(&self, lat: f64, lon: f64) -> (f64, f64) {
        let n = f64::from(1u32 << self.z);
        let (u, v) = latlon_to_world(lat, lon);
        let size = f64::from(TILE_SIZE);
        (
            (u * n - f64::from(self.x)) * size,
            (v * n - f64::from(self.y)) * size,
        )
    }
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.z, self.x, self.y)
    }
}

/// Geographic bounds of a tile in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileBBox {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
}

impl TileBBox {
    pub fn center(&self) -> GeoPoint {
        // Mercator-space center keeps the round trip through latlon_to_tile exact.
        let (u0, v0) = latlon_to_world(self.north, self.west);
        let (u1, v1) = latlon_to_world(self.south, self.east);
        let (lat, lon) = world_to_latlon((u0 + u1) / 2.0, (v0 + v1) / 2.0);
        GeoPoint { lat, lon }
    }

    /// Area on the sphere of radius [`MERCATOR_RADIUS_M`], in km².
    pub fn area_km2(&self) -> f64 {
        let r = MERCATOR_RADIUS_M;
        let dlon = (self.east - self.west).to_radians();
        let dsin = self.north.to_radians().sin() - self.south.to_radians().sin();
        r * r * dlon * dsin / 1.0e6
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.west && p.lon < self.east && p.lat > self.south && p.lat <= self.north
    }
}

/// A zoom-15 cell and its 64 zoom-18 children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub coord: TileCoord,
    pub children: Vec<TileCoord>,
}

impl GridCell {
    pub fn from_parent(coord: TileCoord) -> Result<Self> {
        if coord.z != GRID_ZOOM {
            return Err(Error::Domain(format!(
                "grid cells live at zoom {GRID_ZOOM}, got {}",
                coord.z
            )));
        }
        let k = GRID_CHILDREN_PER_SIDE;
        let children = (0..k)
            .flat_map(|dy| {
                (0..k).map(move |dx| TileCoord {
                    z: DETECTION_ZOOM,
                    x: coord.x * k + dx,
                    y: coord.y * k + dy,
                })
            })
            .collect();
        Ok(GridCell { coord, children })
    }

    pub fn bbox(&self) -> TileBBox {
        tile_to_bbox(self.coord)
    }
}

/// Number of tiles at zoom `z`: `4^z`.
pub fn tile_count(z: u8) -> u128 {
    1u128 << (2 * u32::from(z))
}

/// Mercator world coordinates in `[0, 1]²`, origin at the north-west corner.
fn latlon_to_world(lat: f64, lon: f64) -> (f64, f64) {
    let u = (lon + 180.0) / 360.0;
    let v = (1.0 - lat.to_radians().tan().asinh() / PI) / 2.0;
    (u, v)
}

fn world_to_latlon(u: f64, v: f64) -> (f64, f64) {
    let lon = u * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * v)).sinh().atan().to_degrees();
    (lat, lon)
}

pub fn latlon_to_tile(p: GeoPoint, z: u8) -> Result<TileCoord> {
    if z > MAX_ZOOM {
        return Err(Error::Domain(format!("zoom {z} exceeds {MAX_ZOOM}")));
    }
    if !p.lat.is_finite() || p.lat.abs() > MAX_LATITUDE {
        return Err(Error::Domain(format!(
            "latitude {} outside web-mercator range",
            p.lat
        )));
    }
    let (u, v) = latlon_to_world(p.lat, normalize_lon(p.lon));
    let n = 1u32 << z;
    let nf = f64::from(n);
    let clamp = |t: f64| -> u32 {
        let i = (t * nf).floor();
        if i < 0.0 {
            0
        } else if i >= nf {
            n - 1
        } else {
            i as u32
        }
    };
    Ok(TileCoord {
        z,
        x: clamp(u),
        y: clamp(v),
    })
}

pub fn tile_to_bbox(t: TileCoord) -> TileBBox {
    let n = f64::from(1u32 << t.z);
    let (north, west) = world_to_latlon(f64::from(t.x) / n, f64::from(t.y) / n);
    let (south, east) = world_to_latlon(f64::from(t.x + 1) / n, f64::from(t.y + 1) / n);
    TileBBox {
        west,
        south,
        east,
        north,
    }
}

/// Ground meters per pixel at latitude `lat` for zoom `z`.
pub fn ground_resolution(lat: f64, z: u8) -> f64 {
    let equator = 2.0 * PI * MERCATOR_RADIUS_M / f64::from(TILE_SIZE);
    equator * lat.to_radians().cos() / f64::from(1u32 << z)
}

/// Ground resolution at the center of a tile.
pub fn tile_resolution(t: TileCoord) -> f64 {
    ground_resolution(tile_to_bbox(t).center().lat, t.z)
}

pub fn grid_cell_of(t: TileCoord) -> Result<GridCell> {
    if t.z != DETECTION_ZOOM {
        return Err(Error::Domain(format!(
            "grid lookup expects zoom {DETECTION_ZOOM} tiles, got zoom {}",
            t.z
        )));
    }
    GridCell::from_parent(t.parent_at(GRID_ZOOM)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Standard slippy-map formula written out independently of the module's
    /// world-coordinate helpers.
    fn oracle_tile(lat: f64, lon: f64, z: u8) -> (f64, f64) {
        let n = 2f64.powi(i32::from(z));
        let lat_r = lat * PI / 180.0;
        let x = (lon + 180.0) / 360.0 * n;
        let y = (1.0 - (lat_r.tan() + 1.0 / lat_r.cos()).ln() / PI) / 2.0 * n;
        (x, y)
    }

    #[test]
    fn tile_counts() {
        assert_eq!(tile_count(0), 1);
        assert_eq!(tile_count(1), 4);
        assert_eq!(tile_count(18), 68_719_476_736);
    }

    #[test]
    fn equator_quadrant() {
        let t = latlon_to_tile(GeoPoint::new(0.0, 0.0).unwrap(), 1).unwrap();
        assert_eq!(t, TileCoord { z: 1, x: 1, y: 1 });
    }

    #[test]
    fn ulaanbaatar_tile_matches_oracle() {
        let (lat, lon) = (47.918, 106.917);
        let t = latlon_to_tile(GeoPoint::new(lat, lon).unwrap(), 18).unwrap();
        let (ox, oy) = oracle_tile(lat, lon, 18);
        assert_eq!(t.x, ox.floor() as u32);
        assert_eq!(t.y, oy.floor() as u32);
    }

    #[test]
    fn rejects_polar_latitude() {
        let p = GeoPoint { lat: 86.0, lon: 0.0 };
        assert!(latlon_to_tile(p, 3).is_err());
        assert!(GeoPoint::new(-89.0, 0.0).is_err());
    }

    #[test]
    fn longitude_normalized() {
        let p = GeoPoint::new(10.0, 180.0).unwrap();
        assert_eq!(p.lon, -180.0);
        let p = GeoPoint::new(10.0, -540.5).unwrap();
        assert!((p.lon - 179.5).abs() < 1e-12);
    }

    #[test]
    fn whole_world_tile() {
        let b = tile_to_bbox(TileCoord { z: 0, x: 0, y: 0 });
        assert_eq!(b.west, -180.0);
        assert_eq!(b.east, 180.0);
        assert!((b.north - 85.0511).abs() < 1e-4);
        assert!((b.south + 85.0511).abs() < 1e-4);
    }

    #[test]
    fn adjacent_tiles_share_edges() {
        let a = tile_to_bbox(TileCoord { z: 18, x: 208926, y: 91214 });
        let east = tile_to_bbox(TileCoord { z: 18, x: 208927, y: 91214 });
        let south = tile_to_bbox(TileCoord { z: 18, x: 208926, y: 91215 });
        assert_eq!(a.east, east.west);
        assert_eq!(a.south, south.north);
        assert_eq!(a.north, east.north);
    }

    #[test]
    fn ulaanbaatar_tile_area() {
        let t = TileCoord { z: 18, x: 208926, y: 91214 };
        let area = tile_to_bbox(t).area_km2();
        // spherical area via the zonal formula, evaluated with a separate path
        let b = tile_to_bbox(t);
        let r = MERCATOR_RADIUS_M;
        let oracle = 2.0 * PI * r * r * (b.north.to_radians().sin() - b.south.to_radians().sin())
            * ((b.east - b.west) / 360.0)
            / 1e6;
        assert!((area - oracle).abs() < 1e-12);
        assert!((0.0100..=0.0110).contains(&area), "{area}");
    }

    #[test]
    fn resolution_values() {
        assert!((ground_resolution(0.0, 0) - 156_543.033_928).abs() < 1e-3);
        let r = ground_resolution(47.92, 18);
        assert!((r - 0.400).abs() <= 0.005, "{r}");
    }

    #[test]
    fn grid_parent_and_children() {
        let t = TileCoord { z: 18, x: 208926, y: 91189 };
        let cell = grid_cell_of(t).unwrap();
        assert_eq!(cell.coord, TileCoord { z: 15, x: 26115, y: 11398 });
        assert_eq!(cell.children.len(), 64);
        assert!(cell.children.contains(&t));
        for c in &cell.children {
            assert_eq!(grid_cell_of(*c).unwrap().coord, cell.coord);
        }
        let area = cell.bbox().area_km2();
        assert!((area - 0.67).abs() < 0.01, "{area}");
        assert!(grid_cell_of(TileCoord { z: 17, x: 1, y: 1 }).is_err());
    }

    #[test]
    fn grid_children_partition_parent_bbox() {
        let cell = GridCell::from_parent(TileCoord { z: 15, x: 26115, y: 11402 }).unwrap();
        let parent = cell.bbox();
        let total: f64 = cell.children.iter().map(|c| tile_to_bbox(*c).area_km2()).sum();
        assert!((total - parent.area_km2()).abs() < 1e-12);
        let min_west = cell.children.iter().map(|c| tile_to_bbox(*c).west).fold(f64::MAX, f64::min);
        let max_north = cell.children.iter().map(|c| tile_to_bbox(*c).north).fold(f64::MIN, f64::max);
        assert_eq!(min_west, parent.west);
        assert_eq!(max_north, parent.north);
    }

    #[test]
    fn pixel_geo_round_trip() {
        let t = TileCoord { z: 18, x: 208926, y: 91214 };
        let g = t.pixel_to_geo(37.25, 200.5);
        let (px, py) = t.geo_to_pixel(g.lat, g.lon);
        assert!((px - 37.25).abs() < 1e-6 && (py - 200.5).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bbox_center_round_trip(lat in -85.0f64..85.0, lon in -180.0f64..180.0, z in 0u8..=22) {
            let t = latlon_to_tile(GeoPoint::new(lat, lon).unwrap(), z).unwrap();
            let back = latlon_to_tile(tile_to_bbox(t).center(), z).unwrap();
            prop_assert_eq!(t, back);
        }

        #[test]
        fn monotone_in_lon_and_lat(lat in -80.0f64..80.0, lon in -179.0f64..179.0, d in 0.0f64..1.0, z in 0u8..=20) {
            let a = latlon_to_tile(GeoPoint::new(lat, lon).unwrap(), z).unwrap();
            let east = latlon_to_tile(GeoPoint::new(lat, lon + d).unwrap(), z).unwrap();
            let north = latlon_to_tile(GeoPoint::new(lat + d, lon).unwrap(), z).unwrap();
            prop_assert!(east.x >= a.x);
            prop_assert!(north.y <= a.y);
        }

        #[test]
        fn resolution_halves_exactly(lat in -85.0f64..85.0, z in 0u8..22) {
            prop_assert_eq!(ground_resolution(lat, z + 1), ground_resolution(lat, z) / 2.0);
        }
    }
}
