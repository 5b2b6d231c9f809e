use std::path::{Path, PathBuf};

use germap_core::analysis::deprivation_share;
use germap_core::geo_access::{CategoryTable, FacilityCategory};
use germap_core::Period;
use germap_ingest::{
    read_deprivation_csv, read_district_csv, read_facilities, read_footprints, read_household_csv, IngestError,
};

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn polygon(id: &str, ring: &str) -> String {
    format!(r#"{{"type":"Feature","id":"{id}","properties":{{}},"geometry":{{"type":"Polygon","coordinates":[{ring}]}}}}"#)
}

fn collection(features: &[String]) -> String {
    format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))
}

const SQUARE: &str = "[[106.9,47.9],[106.9001,47.9],[106.9001,47.9001],[106.9,47.9001],[106.9,47.9]]";
const BOWTIE: &str = "[[106.9,47.9],[106.9002,47.9002],[106.9002,47.9],[106.9,47.9001],[106.9,47.9]]";

#[test]
fn empty_collection_reads_as_empty() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "e.geojson", &collection(&[]));
    let l = read_footprints(&p, &Period::new("2022")).unwrap();
    assert!(l.items.is_empty() && l.errors.is_empty());
}

#[test]
fn square_polygon_becomes_one_footprint() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "one.geojson", &collection(&[polygon("g1", SQUARE)]));
    let l = read_footprints(&p, &Period::new("2022")).unwrap();
    assert_eq!(l.items.len(), 1);
    let fp = &l.items[0];
    assert_eq!(fp.id, "g1");
    assert_eq!(fp.period, Period::new("2022"));
    assert_eq!(fp.ring.len(), 5);
    assert!((fp.ring[1].lon - 106.9001).abs() < 1e-12 && (fp.ring[1].lat - 47.9).abs() < 1e-12);
}

#[test]
fn self_intersection_reports_feature_index_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let body = collection(&[polygon("ok", SQUARE), polygon("bad", BOWTIE), polygon("ok2", SQUARE)]);
    let p = write(dir.path(), "mixed.geojson", &body);
    let l = read_footprints(&p, &Period::new("2016")).unwrap();
    assert_eq!(l.items.len(), 2);
    assert_eq!(l.errors.len(), 1);
    assert_eq!(l.errors[0].index, 1);
    assert!(l.errors[0].reason.contains("intersect"), "{}", l.errors[0].reason);
}

#[test]
fn wrong_geometry_and_bad_coordinates_are_per_feature_errors() {
    let dir = tempfile::tempdir().unwrap();
    let point = r#"{"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[106.9,47.9]}}"#;
    let out_of_range = polygon("far", "[[106.9,95],[107,95],[107,96],[106.9,95]]");
    let no_geom = r#"{"type":"Feature","properties":{},"geometry":null}"#;
    let body = collection(&[point.into(), out_of_range, no_geom.into()]);
    let p = write(dir.path(), "bad.geojson", &body);
    let l = read_footprints(&p, &Period::new("2016")).unwrap();
    assert!(l.items.is_empty());
    let idx: Vec<usize> = l.errors.iter().map(|e| e.index).collect();
    assert_eq!(idx, vec![0, 1, 2]);
}

#[test]
fn period_property_overrides_default_and_multipolygons_split() {
    let dir = tempfile::tempdir().unwrap();
    let mp = format!(
        r#"{{"type":"Feature","id":7,"properties":{{"period":"2016"}},"geometry":{{"type":"MultiPolygon","coordinates":[[{SQUARE}],[{SQUARE}]]}}}}"#
    );
    let p = write(dir.path(), "mp.geojson", &collection(&[mp]));
    let l = read_footprints(&p, &Period::new("2022")).unwrap();
    let ids: Vec<&str> = l.items.iter().map(|f| f.id.as_str()).collect();
    assert_eq!(ids, ["7#0", "7#1"]);
    assert!(l.items.iter().all(|f| f.period == Period::new("2016")));
}

#[test]
fn malformed_json_is_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "junk.geojson", "{\"type\": \"FeatureCollection\", \"features\": [");
    match read_footprints(&p, &Period::new("2022")) {
        Err(IngestError::GeoJson { path, .. }) => assert_eq!(path, p),
        other => panic!("expected GeoJson error, got {other:?}"),
    }
    assert!(matches!(
        read_footprints(&dir.path().join("missing.geojson"), &Period::new("2022")),
        Err(IngestError::Io { .. })
    ));
}

#[test]
fn facilities_from_points_polygons_and_tags() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"type":"FeatureCollection","features":[
      {"type":"Feature","properties":{"fclass":"school"},"geometry":{"type":"Point","coordinates":[106.91,47.92]}},
      {"type":"Feature","properties":{"source_class":"Bus_Stop"},"geometry":{"type":"Point","coordinates":[106.92,47.93]}},
      {"type":"Feature","properties":{"amenity":"hospital"},"geometry":{"type":"Polygon","coordinates":[[[106.0,47.0],[106.2,47.0],[106.2,47.2],[106.0,47.2],[106.0,47.0]]]}},
      {"type":"Feature","properties":{"category":"industrial","source_class":"works"},"geometry":{"type":"Point","coordinates":[106.8,47.8]}},
      {"type":"Feature","properties":{"fclass":"bench"},"geometry":{"type":"Point","coordinates":[106.8,47.8]}},
      {"type":"Feature","properties":{"category":"spaceport"},"geometry":{"type":"Point","coordinates":[106.8,47.8]}}
    ]}"#;
    let p = write(dir.path(), "fac.geojson", body);
    let l = read_facilities(&p, &CategoryTable::default()).unwrap();
    let cats: Vec<FacilityCategory> = l.items.iter().map(|f| f.category).collect();
    assert_eq!(
        cats,
        [
            FacilityCategory::Education,
            FacilityCategory::BusStation,
            FacilityCategory::Medical,
            FacilityCategory::Industrial
        ]
    );
    // polygon reduced to the mean of its four corners
    let h = l.items[2].location;
    assert!((h.lat - 47.1).abs() < 1e-12 && (h.lon - 106.1).abs() < 1e-12);
    assert_eq!(l.items[3].source_class, "works");
    let idx: Vec<usize> = l.errors.iter().map(|e| e.index).collect();
    assert_eq!(idx, vec![4, 5]);
}

#[test]
fn table_one_fixture_parses_to_stated_shares() {
    let t = read_deprivation_csv(&fixture("deprivation.csv")).unwrap();
    assert_eq!(t.rows().len(), 13);
    assert_eq!(t.indicators().len(), 3);
    assert!((deprivation_share(&t, "toilet").unwrap() - 0.976).abs() < 1e-9);
    assert!((deprivation_share(&t, "water").unwrap() - 0.010).abs() < 1e-9);
    assert_eq!(deprivation_share(&t, "household_size").unwrap(), 0.0);
    let wells = t.rows().iter().find(|r| r.category == "Protected wells and springs").unwrap();
    assert!((wells.share - 0.836).abs() < 1e-12 && !wells.slum);
}

#[test]
fn header_only_files_give_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let h = write(dir.path(), "h.csv", "year,sub_district,households_total,households_in_gers\n");
    assert!(read_household_csv(&h).unwrap().is_empty());
    let d = write(dir.path(), "d.csv", "district,ger_ratio,poverty_headcount\n");
    assert!(read_district_csv(&d).unwrap().is_empty());
    let t = write(dir.path(), "t.csv", "indicator,category,share,slum_condition\n");
    assert!(read_deprivation_csv(&t).unwrap().rows().is_empty());
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "district,ger_share,poverty_headcount\nA,0.1,0.2\n");
    match read_district_csv(&p) {
        Err(IngestError::Schema { column, .. }) => assert_eq!(column, "ger_ratio"),
        other => panic!("expected schema error, got {other:?}"),
    }
    let p = write(dir.path(), "h.csv", "year,households_total\n2020,5\n");
    match read_household_csv(&p) {
        Err(IngestError::Schema { column, .. }) => assert_eq!(column, "sub_district"),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn out_of_range_ratio_is_rejected_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "district,ger_ratio,poverty_headcount\nA,0.1,0.2\nB,1.4,0.2\n");
    match read_district_csv(&p) {
        Err(IngestError::Row { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected row error, got {other:?}"),
    }
    let bad_num = write(dir.path(), "h.csv", "year,sub_district,households_total\n2020,a,many\n");
    assert!(matches!(read_household_csv(&bad_num), Err(IngestError::Row { row: 2, .. })));
}

#[test]
fn shipped_fixtures_load() {
    let h = read_household_csv(&fixture("households.csv")).unwrap();
    assert_eq!(h.len(), 7);
    assert_eq!(h.iter().find(|r| r.year == 2020).unwrap().households_in_gers, Some(91_249));
    assert_eq!(read_district_csv(&fixture("districts.csv")).unwrap().len(), 5);
}
