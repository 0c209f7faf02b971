use std::f64::consts::PI;

use super::*;
use crate::geom::{dist2, rotation_angle, UvPoint, UvSampleSet};
use crate::losses::metric_consistency;
use crate::model::SurfaceMap;

fn tiny_seq() -> Sequence {
    Sequence::new(
        "tiny",
        vec![
            PointCloud::from_points([[0.0, 0.0, 0.0], [2.0, 1.0, 0.5], [1.0, 2.0, 2.0]]),
            PointCloud::from_points([[3.0, 0.0, 0.0], [2.0, -1.0, 0.5], [1.0, 0.0, 4.0]]),
        ],
        true,
    )
    .unwrap()
}

#[test]
fn natural_sort_orders_numbers_by_value() {
    let mut names: Vec<String> = (1..=10).rev().map(|i| format!("f_{i}")).collect();
    names.sort_by(|a, b| natural_cmp(a, b));
    let expected: Vec<String> = (1..=10).map(|i| format!("f_{i}")).collect();
    assert_eq!(names, expected);
    assert_eq!(natural_cmp("a2b", "a10a"), Ordering::Less);
    assert_eq!(natural_cmp("x", "x1"), Ordering::Less);
}

#[test]
fn load_orders_frames_naturally() {
    let dir = tempfile::tempdir().unwrap();
    for i in 1..=10 {
        let p = dir.path().join(format!("f_{i}.ply"));
        ply::write_ply(&p, &[[i as f64, 0.0, 0.0]], &[], &Default::default(), ply::PlyFormat::Ascii).unwrap();
    }
    let seq = load_sequence(dir.path()).unwrap();
    let xs: Vec<f64> = seq.frames.iter().map(|f| f.point(0)[0]).collect();
    assert_eq!(xs, (1..=10).map(f64::from).collect::<Vec<_>>());
}

#[test]
fn ascii_and_binary_ply_give_same_sequence() {
    let seq = tiny_seq();
    let mut loaded = Vec::new();
    for format in [ply::PlyFormat::Ascii, ply::PlyFormat::BinaryLittleEndian] {
        let dir = tempfile::tempdir().unwrap();
        for (k, f) in seq.frames.iter().enumerate() {
            ply::write_ply(&dir.path().join(format!("{k}.ply")), &f.to_vec(), &[], &Default::default(), format).unwrap();
        }
        loaded.push(load_sequence(dir.path()).unwrap());
    }
    assert_eq!(loaded[0].frames, loaded[1].frames);
    assert_eq!(loaded[0].frames, seq.frames);
}

#[test]
fn mesh_ply_formats_agree() {
    let verts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.1, 0.2, 0.3]];
    let tris = [[0, 1, 2], [0, 1, 3]];
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ply"), dir.path().join("b.ply"));
    ply::write_ply(&a, &verts, &tris, &Default::default(), ply::PlyFormat::Ascii).unwrap();
    ply::write_ply(&b, &verts, &tris, &Default::default(), ply::PlyFormat::BinaryLittleEndian).unwrap();
    let (ma, mb) = (load_mesh(&a).unwrap(), load_mesh(&b).unwrap());
    assert_eq!(ma, mb);
    assert_eq!(ma.vertices, verts.to_vec());
    assert_eq!(ma.triangles, tris.to_vec());
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let mut seq = synth_sequence(&SynthParams::new(SynthKind::RotatingSheet, 6, 50, 3)).unwrap();
    seq.normalization = Normalization { scale: 0.3, translation: [0.1, -0.2, 1.0 / 3.0] };
    let dir = tempfile::tempdir().unwrap();
    save_sequence(dir.path(), &seq).unwrap();
    let back = load_sequence(dir.path()).unwrap();
    assert_eq!(back, seq);
}

#[test]
fn labeled_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut seq = tiny_seq();
    seq.labeled = false;
    seq.frames[1] = PointCloud::from_points([[0.0; 3]]);
    save_sequence(dir.path(), &seq).unwrap();
    let meta = dir.path().join("meta.json");
    let text = std::fs::read_to_string(&meta).unwrap().replace("\"labeled\": false", "\"labeled\": true");
    std::fs::write(&meta, text).unwrap();
    assert!(matches!(
        load_sequence(dir.path()),
        Err(Error::LabelMismatch { expected: 3, found: 1, frame: 1 })
    ));
}

#[test]
fn mesh_frames_are_surface_sampled() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    std::fs::write(frames.join("0.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    std::fs::write(frames.join("1.obj"), "v 0 0 1\nv 1 0 1\nv 0 1 1\nf 1 2 3\n").unwrap();
    let seq = load_sequence(dir.path()).unwrap();
    assert_eq!(seq.len(), 2);
    assert_eq!(seq.frames[0].len(), DEFAULT_SURFACE_SAMPLES);
    assert!(seq.frames[1].iter().all(|p| (p[2] - 1.0).abs() < 1e-15));
}

#[test]
fn normalization_examples() {
    let unit = Sequence::new("u", vec![PointCloud::from_points([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 0.2, 0.9]])], false).unwrap();
    let (n, t) = normalize_unit_cube(&unit).unwrap();
    assert_eq!(t.scale, 1.0);
    assert!(t.translation.iter().all(|&v| v == 0.0));
    assert_eq!(n.frames, unit.frames);

    let big = Sequence::new(
        "b",
        vec![
            PointCloud::from_points([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]),
            PointCloud::from_points([[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]]),
        ],
        false,
    )
    .unwrap();
    let (n, t) = normalize_unit_cube(&big).unwrap();
    assert_eq!(t.scale, 0.5);
    // only the first frame is fitted
    assert_eq!(n.frames[1].point(1), [2.0, 0.0, 0.0]);
}

#[test]
fn normalize_then_denormalize_is_identity() {
    let seq = tiny_seq();
    let (n, t) = normalize_unit_cube(&seq).unwrap();
    let (lo, hi) = n.frames[0].bounds().unwrap();
    assert!(lo.iter().all(|v| v.abs() < 1e-15));
    assert!((hi.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
    let back = denormalize(&n, &t);
    for (a, b) in back.frames.iter().zip(&seq.frames) {
        for (p, q) in a.iter().zip(b.iter()) {
            assert!(dist2(p, q).sqrt() < 1e-12);
        }
    }
    assert_eq!(n.normalization, t);
}

#[test]
fn zero_noise_is_identity_and_std_matches() {
    let seq = tiny_seq();
    assert_eq!(add_noise(&seq, 0.0, &mut stream_rng(1, 0)).unwrap(), seq);
    let n = 100_000;
    let flat = Sequence::new("z", vec![PointCloud::from_points(vec![[0.0; 3]; n])], true).unwrap();
    let noisy = add_noise(&flat, DEFAULT_NOISE_SIGMA, &mut stream_rng(2, 0)).unwrap();
    for k in 0..3 {
        let xs: Vec<f64> = noisy.frames[0].iter().map(|p| p[k]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - DEFAULT_NOISE_SIGMA).abs() < 0.02 * DEFAULT_NOISE_SIGMA, "axis {k}: {}", var.sqrt());
    }
    assert!(add_noise(&seq, -1.0, &mut stream_rng(0, 0)).is_err());
}

#[test]
fn progressive_rotation_examples() {
    let seq = synth_bending_sheet(7, 40, 2.0, &mut stream_rng(4, 0)).unwrap();
    let rot = apply_progressive_rotation(&seq, PI, VERTICAL_AXIS);
    assert_eq!(rot.frames[0], seq.frames[0]);
    let c = seq.frames[0].centroid();
    let last = seq.len() - 1;
    // 180° about a vertical axis through c: (x, y, z) -> (2cx - x, y, 2cz - z)
    for (p, q) in seq.frames[last].iter().zip(rot.frames[last].iter()) {
        let expect = [2.0 * c[0] - p[0], p[1], 2.0 * c[2] - p[2]];
        assert!(dist2(expect, q).sqrt() < 1e-12);
    }
    for (a, b) in seq.frames.iter().zip(&rot.frames) {
        for i in 0..a.len() {
            for j in 0..a.len() {
                let d0 = dist2(a.point(i), a.point(j)).sqrt();
                let d1 = dist2(b.point(i), b.point(j)).sqrt();
                assert!((d0 - d1).abs() < 1e-12);
            }
        }
    }
    let t = RigidTransform::about_center(VERTICAL_AXIS, PI, c);
    assert!((rotation_angle(&t.rotation) - PI).abs() < 1e-12);
}

#[test]
fn flat_frame_matches_planar_parameterization() {
    let uv = sample_uv_uniform_points(30, 1);
    let seq = bending_sheet_from_uv(5, &uv, PI).unwrap();
    for (p, m) in seq.frames[0].iter().zip(&uv) {
        assert_eq!(p, [m.u, m.v, 0.0]);
    }
    assert!(bending_sheet_from_uv(4, &uv, PI).is_err());
}

fn sample_uv_uniform_points(n: usize, seed: u64) -> Vec<UvPoint> {
    crate::sampling::sample_uv_uniform(n, &mut stream_rng(seed, 0)).unwrap().points
}

/// Length of the image of the straight material segment `a → b`, as a fine
/// polyline.
fn image_arc_length(a: UvPoint, b: UvPoint, kappa: f64) -> f64 {
    let steps = 100_000;
    let at = |t: f64| sheet_point(a.u + t * (b.u - a.u), a.v + t * (b.v - a.v), kappa);
    let mut len = 0.0;
    let mut prev = at(0.0);
    for s in 1..=steps {
        let cur = at(s as f64 / steps as f64);
        len += dist2(prev, cur).sqrt();
        prev = cur;
    }
    len
}

#[test]
fn bending_preserves_material_distances() {
    let uv = sample_uv_uniform_points(8, 5);
    for kappa in [0.0, 1.0, PI, CYLINDER_CURVATURE] {
        for w in uv.windows(2) {
            let planar = w[0].dist2(&w[1]).sqrt();
            assert!((image_arc_length(w[0], w[1], kappa) - planar).abs() < 1e-9, "kappa {kappa}");
        }
    }
}

#[test]
fn ground_truth_maps_are_isometric() {
    let params = SynthParams::new(SynthKind::RotatingSheet, 10, 100, 0);
    let seq = synth_sequence(&params).unwrap();
    let center = seq.frames[0].centroid();
    let uv = UvSampleSet::new(sample_uv_uniform_points(200, 9));
    let jac: Vec<_> = (0..10).map(|k| params.frame_map(k, center).jacobians(0, &uv).unwrap()).collect();
    for i in 0..10 {
        for j in 0..10 {
            assert!(metric_consistency(&jac[i], &jac[j]).unwrap() < 1e-12);
        }
    }
    // maps reproduce the stored points
    let material = UvSampleSet::new(sample_uv_uniform_points(100, 0));
    for k in [0, 4, 9] {
        let pts = params.frame_map(k, center).points(0, &material).unwrap();
        for (p, q) in pts.iter().zip(seq.frames[k].iter()) {
            assert!(dist2(*p, q).sqrt() < 1e-12);
        }
    }
}

#[test]
fn synth_is_deterministic_and_labeled() {
    for kind in [SynthKind::Sheet, SynthKind::Cylinder, SynthKind::RotatingSheet] {
        let p = SynthParams::new(kind, 5, 20, 11);
        let a = synth_sequence(&p).unwrap();
        assert_eq!(a, synth_sequence(&p).unwrap());
        assert!(a.labeled);
        assert_eq!(a.source["frames"], 5);
    }
    let cyl = synth_sequence(&SynthParams::new(SynthKind::Cylinder, 5, 200, 1)).unwrap();
    // the last frame closes into a cylinder of radius 1/2π about (0.5, ·, 1/2π)
    let r = 1.0 / CYLINDER_CURVATURE;
    for p in cyl.frames[4].iter() {
        let d = ((p[0] - 0.5).powi(2) + (p[2] - r).powi(2)).sqrt();
        assert!((d - r).abs() < 1e-12);
    }
}
