mod common;

use std::path::Path;

use planestitch::format::{
    load_pair, parse_json, to_json, write_json, BinFile, BinsRef, CameraFile, DetectionDto, DetectionsFile,
    IntrinsicsDto, KeypointFile, KeypointPairDto, MaskDto, ViewDto,
};
use planestitch::FormatError;
use planestitch_core::binning::NUM_BINS;
use planestitch_core::MaskRle;
use proptest::prelude::*;

fn origin() -> &'static Path {
    Path::new("test.json")
}

fn intrinsics(width: u32, height: u32) -> IntrinsicsDto {
    IntrinsicsDto { fx: 100.0, fy: 100.0, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height }
}

fn detection(id: &str, embedding: Vec<f64>) -> DetectionDto {
    DetectionDto { id: id.into(), normal: [0.0, 0.0, 1.0], offset: 2.0, embedding, score: 0.9, mask: None }
}

fn views(first: Vec<DetectionDto>, second: Vec<DetectionDto>) -> DetectionsFile {
    DetectionsFile {
        views: [
            ViewDto { image_id: "a".into(), intrinsics: intrinsics(8, 6), planes: first },
            ViewDto { image_id: "b".into(), intrinsics: intrinsics(8, 6), planes: second },
        ],
    }
}

fn camera_file(p_trans: Vec<f64>, p_rot: Vec<f64>) -> CameraFile {
    let bins = common::bins();
    CameraFile { bins: BinsRef::Inline(bins.into()), p_trans, p_rot }
}

#[test]
fn synthetic_pairs_load_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let pair = common::clean_pair(3);
    let path = common::write(dir.path(), "pair", &pair);
    let data = load_pair(&path).unwrap();
    assert_eq!(data.views[0].detections, pair.dets1);
    assert_eq!(data.views[1].detections, pair.dets2);
    assert_eq!(data.distribution, pair.distribution);
    assert_eq!(data.keypoints, pair.keypoints);
}

#[test]
fn keypoints_are_optional() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write(dir.path(), "pair", &common::clean_pair(4));
    std::fs::remove_file(path.join("keypoints.json")).unwrap();
    assert!(load_pair(&path).unwrap().keypoints.pairs.is_empty());
}

#[test]
fn short_embedding_is_rejected_with_its_detection_id() {
    let file = views(vec![detection("wall", vec![0.5, 0.0])], vec![]);
    match file.validate() {
        Err(FormatError::Normalization { field, .. }) => assert!(field.contains("wall"), "{field}"),
        other => panic!("expected a normalization error, got {other:?}"),
    }
}

#[test]
fn nearly_unit_embedding_is_renormalised() {
    let file = views(vec![detection("wall", vec![0.9995, 0.0])], vec![]);
    let v = file.validate().unwrap();
    assert_eq!(v[0].detections[0].embedding, vec![1.0, 0.0]);
}

#[test]
fn nearly_normalised_probabilities_are_rescaled() {
    let mut p = vec![1.0 / NUM_BINS as f64; NUM_BINS];
    p[0] -= 0.0009;
    let dist = camera_file(p.clone(), vec![1.0 / NUM_BINS as f64; NUM_BINS]).to_distribution(Path::new(".")).unwrap();
    let total: f64 = dist.p_trans().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!((dist.p_trans()[1] / dist.p_trans()[0] - p[1] / p[0]).abs() < 1e-12);
}

#[test]
fn far_from_normalised_probabilities_are_rejected() {
    let mut p = vec![1.0 / NUM_BINS as f64; NUM_BINS];
    p[0] -= 0.01;
    match camera_file(p, vec![1.0 / NUM_BINS as f64; NUM_BINS]).to_distribution(Path::new(".")) {
        Err(FormatError::Normalization { field, .. }) => assert_eq!(field, "p_trans"),
        other => panic!("expected a normalization error, got {other:?}"),
    }
}

#[test]
fn wrong_probability_count_is_rejected() {
    let p = vec![1.0 / 31.0; 31];
    assert!(matches!(
        camera_file(p, vec![1.0 / NUM_BINS as f64; NUM_BINS]).to_distribution(Path::new(".")),
        Err(FormatError::Invalid { .. })
    ));
}

#[test]
fn schema_errors_name_the_field_path() {
    let good = to_json(&views(vec![detection("wall", vec![1.0, 0.0])], vec![]));
    let bad = good.replacen("\"offset\": 2.0", "\"offset\": \"far\"", 1);
    match parse_json::<DetectionsFile>(&bad, origin()) {
        Err(FormatError::Schema { field, .. }) => assert_eq!(field, "views[0].planes[0].offset"),
        other => panic!("expected a schema error, got {other:?}"),
    }
    let extra = good.replacen("\"score\": 0.9", "\"score\": 0.9, \"colour\": 1", 1);
    assert!(matches!(parse_json::<DetectionsFile>(&extra, origin()), Err(FormatError::Schema { .. })));
}

#[test]
fn mask_must_match_the_image() {
    let mut d = detection("wall", vec![1.0, 0.0]);
    d.mask = Some(MaskDto { height: 6, width: 7, counts: vec![42] });
    match views(vec![d], vec![]).validate() {
        Err(FormatError::Invalid { field, .. }) => assert!(field.ends_with(".mask"), "{field}"),
        other => panic!("expected an invalid-value error, got {other:?}"),
    }
}

#[test]
fn malformed_detections_are_rejected() {
    let dup = views(vec![detection("a", vec![1.0, 0.0]), detection("a", vec![0.0, 1.0])], vec![]);
    assert!(matches!(dup.validate(), Err(FormatError::Invalid { .. })));

    let mixed = views(vec![detection("a", vec![1.0, 0.0])], vec![detection("b", vec![1.0, 0.0, 0.0])]);
    assert!(matches!(mixed.validate(), Err(FormatError::Invalid { .. })));

    let mut below = detection("a", vec![1.0, 0.0]);
    below.offset = -1.0;
    assert!(matches!(views(vec![below], vec![]).validate(), Err(FormatError::Invalid { .. })));

    let mut tilted = detection("a", vec![1.0, 0.0]);
    tilted.normal = [0.0, 0.0, 2.0];
    assert!(matches!(views(vec![tilted], vec![]).validate(), Err(FormatError::Normalization { .. })));
}

#[test]
fn keypoints_are_checked_against_the_views() {
    let v = views(vec![detection("a", vec![1.0, 0.0])], vec![detection("b", vec![1.0, 0.0])]).validate().unwrap();
    let file = |i, pt| KeypointFile { pairs: vec![KeypointPairDto { i, j: 0, points: vec![pt] }] };
    assert!(file(0, [1.0, 1.0, 2.0, 2.0]).validate(&v).is_ok());
    assert!(file(1, [1.0, 1.0, 2.0, 2.0]).validate(&v).is_err());
    assert!(file(0, [1.0, 1.0, 9.0, 2.0]).validate(&v).is_err());
}

#[test]
fn referenced_bins_resolve_next_to_the_camera_file() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("bins.json"), &BinFile::from(common::bins())).unwrap();
    let p = vec![1.0 / NUM_BINS as f64; NUM_BINS];
    let by_ref = CameraFile { bins: BinsRef::Path("bins.json".into()), p_trans: p.clone(), p_rot: p.clone() };
    let text = to_json(&by_ref);
    let parsed: CameraFile = parse_json(&text, origin()).unwrap();
    assert_eq!(parsed, by_ref);
    assert_eq!(
        parsed.to_distribution(dir.path()).unwrap(),
        camera_file(p.clone(), p).to_distribution(dir.path()).unwrap()
    );
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 0.01)
        .prop_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
}

fn mask(width: u32, height: u32) -> impl Strategy<Value = Option<MaskDto>> {
    prop::option::of(prop::collection::vec(any::<bool>(), (width * height) as usize))
        .prop_map(move |bits| bits.map(|b| MaskDto::from(&MaskRle::from_bitmap(height, width, &b).unwrap())))
}

fn detections(count: usize) -> impl Strategy<Value = Vec<DetectionDto>> {
    prop::collection::vec((unit_vec(3), 0.01..10.0f64, unit_vec(16), prop::num::f64::NORMAL, mask(8, 6)), count)
        .prop_map(|items| {
            items
                .into_iter()
                .enumerate()
                .map(|(k, (n, offset, embedding, score, mask))| DetectionDto {
                    id: format!("plane-{k}"),
                    normal: [n[0], n[1], n[2]],
                    offset,
                    embedding,
                    score,
                    mask,
                })
                .collect()
        })
}

fn probabilities() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, NUM_BINS).prop_filter("positive mass", |p| p.iter().sum::<f64>() > 0.1).prop_map(
        |p| {
            let total: f64 = p.iter().sum();
            p.into_iter().map(|x| x / total).collect()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detections_round_trip_exactly(a in detections(4), b in detections(3)) {
        let file = views(a, b);
        let parsed: DetectionsFile = parse_json(&to_json(&file), origin()).unwrap();
        prop_assert_eq!(&parsed, &file);

        let loaded = file.validate().unwrap();
        let rewritten = DetectionsFile::from_views([
            (loaded[0].image_id.as_str(), &loaded[0].intrinsics, loaded[0].detections.as_slice()),
            (loaded[1].image_id.as_str(), &loaded[1].intrinsics, loaded[1].detections.as_slice()),
        ]);
        let reloaded = parse_json::<DetectionsFile>(&to_json(&rewritten), origin()).unwrap().validate().unwrap();
        prop_assert_eq!(reloaded, loaded);
    }

    #[test]
    fn camera_distributions_round_trip_exactly(p_trans in probabilities(), p_rot in probabilities()) {
        let dist = camera_file(p_trans, p_rot).to_distribution(Path::new(".")).unwrap();
        let text = to_json(&CameraFile::inline(&dist));
        let back = parse_json::<CameraFile>(&text, origin()).unwrap().to_distribution(Path::new(".")).unwrap();
        prop_assert_eq!(back, dist);
    }
}
