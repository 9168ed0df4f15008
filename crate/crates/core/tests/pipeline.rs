use std::path::PathBuf;

use robusft::bench::{
    generate_frame, generate_sequence, shape_error, ErrorSites, ScenarioConfig, ScenarioName,
    SyntheticFrame,
};
use robusft::error::{IoError, PipelineError};
use robusft::mesh::io::write_mesh2d;
use robusft::mesh::{grid_topology, Mesh2D};
use robusft::mismatch::matches_to_csv;
use robusft::pipeline::*;
use robusft::sft::CameraIntrinsics;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap()
}

fn a4() -> Template {
    build_template(0.297, 0.210, 6, 10, [1188, 840], intrinsics()).unwrap()
}

fn scenario() -> ScenarioConfig {
    ScenarioConfig::preset(ScenarioName::Dense).with_seed(11)
}

fn synthetic_template(cfg: &ScenarioConfig) -> Template {
    Template::from_rest_grid(&cfg.rest_grid().unwrap(), cfg.intrinsics, cfg.depth).unwrap()
}

fn write_frames(dir: &std::path::Path, frames: &[SyntheticFrame]) -> Vec<PathBuf> {
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let p = dir.join(format!("frame{k:03}.csv"));
            std::fs::write(&p, matches_to_csv(&f.matches, Some(&f.labels))).unwrap();
            p
        })
        .collect()
}

#[test]
fn template_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let t = a4();
    let path = dir.path().join("template.json");
    t.save(&path).unwrap();
    let back = Template::load(&path).unwrap();
    assert_eq!(back, t);
    for (a, b) in back
        .rest_mesh()
        .vertices()
        .iter()
        .zip(t.rest_mesh().vertices())
    {
        assert_eq!(a.coords.map(f64::to_bits), b.coords.map(f64::to_bits));
    }
}

#[test]
fn exported_template_reimports_equal() {
    for obj in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        let t = a4();
        let [m3, m2, k] = t.export(dir.path(), obj).unwrap();
        let back = import_template(&m3, &m2, &k, None).unwrap();
        assert_eq!(back, t, "obj = {obj}");
    }
}

#[test]
fn import_rejects_mismatched_topology() {
    let dir = tempfile::tempdir().unwrap();
    let t = a4();
    let [m3, _, k] = t.export(dir.path(), true).unwrap();
    let small = Mesh2D::new(t.mesh2d().vertices()[..20].to_vec(), grid_topology(2, 10)).unwrap();
    let m2 = dir.path().join("small.json");
    write_mesh2d(&m2, &small).unwrap();
    assert!(matches!(
        import_template(&m3, &m2, &k, None),
        Err(PipelineError::TopologyMismatch(_))
    ));
}

#[test]
fn import_reports_parse_location() {
    let dir = tempfile::tempdir().unwrap();
    let t = a4();
    let [_, m2, k] = t.export(dir.path(), false).unwrap();
    let m3 = dir.path().join("broken.obj");
    std::fs::write(&m3, "v 0 0 0\nv 1 0 0\nv 0 one 0\nf 1 2 3\n").unwrap();
    match import_template(&m3, &m2, &k, None) {
        Err(PipelineError::Io(IoError::Parse { location, .. })) => {
            assert!(location.ends_with("broken.obj:3"), "{location}")
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn sequence_survives_unreadable_frames_and_logs_each() {
    let cfg = scenario();
    let t = synthetic_template(&cfg);
    let frames = generate_sequence(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut paths = write_frames(dir.path(), &frames);
    std::fs::write(&paths[1], "xp,yp,xq,yq\n1,2,3\n").unwrap();
    paths.push(dir.path().join("missing.csv"));
    let mut log = Vec::new();
    let results = run_sequence(&t, &paths, &PipelineConfig::default(), Some(&mut log)).unwrap();
    assert_eq!(results.len(), 5);
    assert!(results[1].skipped && results[4].skipped);
    assert!(results[1]
        .reason
        .as_deref()
        .unwrap()
        .contains("frame001.csv:2"));
    assert_eq!(results[1].shape, results[0].shape);
    assert!(!results[2].skipped);
    let lines: Vec<FrameRecord> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    for (r, l) in results.iter().zip(&lines) {
        assert_eq!(&r.record(), l);
    }
    let summary = SequenceSummary::new(&results);
    assert_eq!((summary.frames, summary.skipped), (5, 2));
}

#[test]
fn identical_frames_settle() {
    let cfg = scenario();
    let t = synthetic_template(&cfg);
    let frame = generate_frame(&cfg, 0).unwrap();
    let mut source = SyntheticSource::new(&vec![frame.clone(); 5]);
    let results = run_frames(&t, &mut source, &PipelineConfig::default(), None).unwrap();
    for r in &results[1..] {
        assert_eq!(r.inlier_indices, results[0].inlier_indices);
    }
    for pair in results[2..].windows(2) {
        for (a, b) in pair[0]
            .shape
            .vertices()
            .iter()
            .zip(pair[1].shape.vertices())
        {
            assert!((a - b).norm() < 1e-3, "{}", (a - b).norm());
        }
    }
    assert!(results[4].outer_iterations <= results[1].outer_iterations);
}

#[test]
fn reversed_sequence_keeps_inlier_sets() {
    let cfg = scenario();
    let t = synthetic_template(&cfg);
    let frames = generate_sequence(&cfg, 5).unwrap();
    let pipeline = PipelineConfig::default();
    let forward = run_frames(&t, &mut SyntheticSource::new(&frames), &pipeline, None).unwrap();
    let reversed: Vec<_> = frames.iter().rev().cloned().collect();
    let backward = run_frames(&t, &mut SyntheticSource::new(&reversed), &pipeline, None).unwrap();
    for (f, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(f.inlier_indices, b.inlier_indices);
    }
}

#[test]
fn tracking_recovers_after_a_gap() {
    let cfg = scenario();
    let t = synthetic_template(&cfg);
    let frames = generate_sequence(&cfg, 60).unwrap();
    let mut source = SyntheticSource::new(&frames).with_gap(20..26);
    let results = run_frames(&t, &mut source, &PipelineConfig::default(), None).unwrap();
    assert!(results[20..26].iter().all(|r| r.skipped));
    let median = |k: usize| {
        shape_error(&results[k].shape, &frames[k], ErrorSites::Vertices)
            .unwrap()
            .1
    };
    let before = (14..20).map(median).sum::<f64>() / 6.0;
    let after = (26..29).map(median).fold(f64::INFINITY, f64::min);
    assert!(after <= 1.25 * before, "before {before}, after {after}");
}

#[test]
fn live_run_orders_results_and_accounts_for_every_frame() {
    let cfg = scenario();
    let t = synthetic_template(&cfg);
    let frames = generate_sequence(&cfg, 12).unwrap();
    let mut seen = Vec::new();
    let run = run_live(
        &t,
        SyntheticSource::new(&frames),
        &PipelineConfig::default(),
        |r| {
            seen.push(r.frame_id);
            Ok(())
        },
    )
    .unwrap();
    let ids: Vec<usize> = run.results.iter().map(|r| r.frame_id).collect();
    assert_eq!(ids, seen);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    let mut all: Vec<usize> = ids.iter().chain(&run.dropped).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..12).collect::<Vec<_>>());
    assert_eq!(*ids.last().unwrap(), 11);
}

#[test]
fn corrupt_match_sets_never_abort() {
    let cfg = scenario();
    let t = synthetic_template(&cfg);
    let frame = generate_frame(&cfg, 0).unwrap();
    let pipeline = PipelineConfig::default();
    let p = frame.matches.template_points();
    let q = frame.matches.image_points();
    let cases = [
        robusft::mismatch::MatchSet::new(p[..3].to_vec(), q[..3].to_vec()).unwrap(),
        robusft::mismatch::MatchSet::new(vec![p[0]; 50], vec![q[0]; 50]).unwrap(),
        robusft::mismatch::MatchSet::new(p[..50].to_vec(), vec![q[0]; 50]).unwrap(),
        robusft::mismatch::MatchSet::new(
            p[..50]
                .iter()
                .map(|x| x + nalgebra::Vector2::new(1e6, 0.0))
                .collect(),
            q[..50].to_vec(),
        )
        .unwrap(),
    ];
    for m in &cases {
        let r = process_frame(&t, 0, m, &pipeline, Some(&frame.deformed)).unwrap();
        assert_eq!(r.shape.vertex_count(), 60);
        if r.skipped {
            assert_eq!(r.shape, frame.deformed);
        }
    }
}

#[test]
fn single_frame_reconstruction_is_accurate_at_inliers() {
    let cfg = scenario().with_rate(0.7);
    let t = synthetic_template(&cfg);
    let frame = generate_frame(&cfg, 0).unwrap();
    let r = process_frame(&t, 0, &frame.matches, &PipelineConfig::default(), None).unwrap();
    assert!(!r.skipped);
    let (_, median) =
        shape_error(&r.shape, &frame, ErrorSites::Matches(&r.inlier_indices)).unwrap();
    let diagonal = frame.deformed.diagonal();
    assert!(median <= 0.02 * diagonal, "{median} vs {diagonal}");
}
