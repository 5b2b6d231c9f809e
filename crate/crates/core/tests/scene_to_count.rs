//! Ground-truth masks from the scene generator, pushed through detection,
//! the file formats and counting.

use germap_core::counting::{
    apply_verdicts, detect, load_detections, read_counts_csv, save_detections, write_counts_csv, Action, CountConfig,
    VerdictRecord,
};
use germap_core::metrics::{evaluate, Aggregation};
use germap_core::scene_labels::{
    generate_dataset, read_labeled_tiles, write_labeled_tiles, SyntheticDatasetSpec, SyntheticSceneSpec,
};
use germap_core::tile_pyramid::tile_resolution;

fn spec(tiles: usize) -> SyntheticDatasetSpec {
    SyntheticDatasetSpec {
        tiles,
        seed: 3,
        min_gers: 3,
        max_gers: 9,
        max_confusers: 2,
        base: SyntheticSceneSpec::default(),
    }
}

#[test]
fn every_separated_ger_is_its_own_blob() {
    for (tile, truth) in generate_dataset(&spec(12)).unwrap() {
        let dets = detect(&tile.mask, tile.coord, &tile.period, 1);
        assert_eq!(dets.len(), truth.ger_count(), "tile {}", tile.coord);
        let res = tile_resolution(tile.coord);
        let area: f64 = dets.iter().map(|d| d.area_m2).sum();
        assert!((area - tile.mask.count_ones() as f64 * res * res).abs() < 1e-6);
    }
}

#[test]
fn truth_masks_score_perfectly_against_themselves() {
    let data = generate_dataset(&spec(5)).unwrap();
    let report = evaluate(data.iter().map(|(t, _)| (&t.mask, &t.mask)), Aggregation::Pooled).unwrap();
    assert_eq!(report.ger().f1, 1.0);
    assert_eq!(report.classes[0].f1, 1.0);
    assert_eq!(report.pixel_accuracy, 1.0);
}

#[test]
fn dataset_and_detections_survive_the_disk() {
    let dir = tempfile::tempdir().unwrap();
    let tiles: Vec<_> = generate_dataset(&spec(4)).unwrap().into_iter().map(|(t, _)| t).collect();
    write_labeled_tiles(dir.path(), &tiles).unwrap();
    let back = read_labeled_tiles(dir.path()).unwrap();
    assert_eq!(back.len(), tiles.len());
    for t in &tiles {
        let b = back.iter().find(|b| b.coord == t.coord).unwrap();
        assert_eq!(b.mask, t.mask);
        assert_eq!(b.image, t.image);
    }

    let dets: Vec<_> = tiles.iter().flat_map(|t| detect(&t.mask, t.coord, &t.period, 20)).collect();
    let path = dir.path().join("detections.geojson");
    save_detections(&dets, &path).unwrap();
    assert_eq!(load_detections(&path).unwrap(), dets);
}

#[test]
fn verdicts_on_generated_blobs_give_exact_counts() {
    let (tile, truth) = generate_dataset(&spec(1)).unwrap().remove(0);
    let dets = detect(&tile.mask, tile.coord, &tile.period, 20);
    let n = truth.ger_count();
    assert!(n >= 3);
    // Reject the first blob, say the second holds three gers, accept the rest.
    let log: Vec<VerdictRecord> = dets
        .iter()
        .enumerate()
        .map(|(i, d)| VerdictRecord {
            ts: i as u64,
            detection_id: d.id.clone(),
            action: match i {
                0 => Action::Reject,
                1 => Action::SetCount,
                _ => Action::Accept,
            },
            count: (i == 1).then_some(3),
        })
        .collect();
    let cfg = CountConfig {
        mode: germap_core::counting::CountMode::PerBlob,
        ..CountConfig::default()
    };
    let r = apply_verdicts(&tile.period, &dets, &log, &cfg).unwrap();
    assert_eq!(r.verified_count, (n as u64 - 2) + 3);

    let mut csv = Vec::new();
    write_counts_csv(std::slice::from_ref(&r), &mut csv).unwrap();
    assert_eq!(read_counts_csv(csv.as_slice()).unwrap(), vec![r]);
}
