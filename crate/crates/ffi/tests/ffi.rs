use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mcatlas::data::{normalize_unit_cube, save_sequence, synth_sequence, SynthKind, SynthParams};
use mcatlas::eval::{evaluate, EvalConfig};
use mcatlas::geom::{UvPoint, UvSampleSet};
use mcatlas::model::{AtlasModel, FrameAtlas, ModelConfig, SurfaceMap};
use mcatlas::sampling::{regular_uv_points, stream_rng};
use mcatlas_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = mca_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    model: AtlasModel,
    model_path: CString,
    seq_path: CString,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let model = AtlasModel::new(ModelConfig::desk(), 7).unwrap();
    let ck = dir.path().join("model.bin");
    model.save(&ck).unwrap();
    let seq = synth_sequence(&SynthParams::new(SynthKind::Sheet, 5, 120, 1)).unwrap();
    let seq_dir = dir.path().join("seq");
    save_sequence(&seq_dir, &seq).unwrap();
    Fixture { model_path: cpath(&ck), seq_path: cpath(&seq_dir), model, _dir: dir }
}

struct Handles {
    model: *mut McaModel,
    seq: *mut McaSequence,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            mca_model_free(self.model);
            mca_sequence_free(self.seq);
        }
    }
}

fn open(f: &Fixture) -> Handles {
    let mut h = Handles { model: ptr::null_mut(), seq: ptr::null_mut() };
    unsafe {
        assert_eq!(mca_model_load(f.model_path.as_ptr(), &mut h.model), McaStatus::Ok);
        assert_eq!(mca_sequence_load(f.seq_path.as_ptr(), true, &mut h.seq), McaStatus::Ok);
    }
    h
}

#[test]
fn handles_report_sizes() {
    let f = fixture();
    let h = open(&f);
    unsafe {
        assert_eq!(mca_model_patch_count(h.model), 10);
        assert_eq!(mca_sequence_frame_count(h.seq), 5);
        let mut n = 0usize;
        assert_eq!(mca_sequence_point_count(h.seq, 2, &mut n), McaStatus::Ok);
        assert_eq!(n, 120);
        assert_eq!(mca_model_patch_count(ptr::null()), 0);
        assert_eq!(mca_sequence_frame_count(ptr::null()), 0);
    }
}

#[test]
fn mapping_and_jacobians_match_the_library() {
    let f = fixture();
    let h = open(&f);
    let mut xyz = vec![0.0; 3 * 120];
    unsafe {
        assert_eq!(mca_sequence_frame_points(h.seq, 1, xyz.as_mut_ptr(), 120), McaStatus::Ok);
    }
    let mut latent = ptr::null_mut();
    unsafe {
        assert_eq!(mca_model_encode(h.model, xyz.as_ptr(), 120, &mut latent), McaStatus::Ok);
    }
    let uv = [0.1, 0.2, 0.5, 0.5, 1.0, 0.0];
    let mut pts = [0.0; 9];
    let mut jac = [0.0; 18];
    unsafe {
        assert_eq!(mca_map_uv(h.model, latent, 3, uv.as_ptr(), 3, pts.as_mut_ptr()), McaStatus::Ok);
        assert_eq!(mca_jacobians(h.model, latent, 3, uv.as_ptr(), 3, jac.as_mut_ptr()), McaStatus::Ok);
        mca_latent_free(latent);
    }

    let seq = mcatlas::data::load_sequence(Path::new(f.seq_path.to_str().unwrap())).unwrap();
    let seq = normalize_unit_cube(&seq).unwrap().0;
    let atlas = FrameAtlas::new(&f.model, f.model.encode(&seq.frames[1]).unwrap());
    let set = UvSampleSet::new(uv.chunks(2).map(|c| UvPoint::new(c[0], c[1])).collect());
    let want: Vec<f64> = atlas.points(3, &set).unwrap().into_iter().flatten().collect();
    assert_eq!(pts.to_vec(), want);
    let want: Vec<f64> = atlas.jacobians(3, &set).unwrap().iter().flat_map(|j| j.0.into_iter().flatten()).collect();
    assert_eq!(jac.to_vec(), want);
}

#[test]
fn regular_points_match_the_library() {
    let mut out = vec![0.0; 2 * 50];
    unsafe {
        assert_eq!(mca_regular_uv_points(50, 9, out.as_mut_ptr()), McaStatus::Ok);
    }
    let want: Vec<f64> = regular_uv_points(50, &mut stream_rng(9, 0)).points.iter().flat_map(|p| [p.u, p.v]).collect();
    assert_eq!(out, want);
}

#[test]
fn correspondence_metric_examples() {
    let mut m = McaPairMetrics::default();
    let pred = [0.6, 0.0, 0.0, 0.0, 0.0, 0.0];
    let truth = [0.0; 6];
    unsafe {
        assert_eq!(mca_correspondence_metrics(pred.as_ptr(), truth.as_ptr(), 2, 0.02, 100, &mut m), McaStatus::Ok);
    }
    assert!((m.sl2 - 0.18).abs() <= 1e-12);

    let pred = [0.6, 0.0, 0.0, 1.0, 0.0, 0.0];
    let truth = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    unsafe {
        assert_eq!(mca_correspondence_metrics(pred.as_ptr(), truth.as_ptr(), 2, 0.02, 100, &mut m), McaStatus::Ok);
    }
    assert!((m.rank - 25.0).abs() <= 1e-12);

    let pred = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    unsafe {
        assert_eq!(mca_correspondence_metrics(pred.as_ptr(), [0.0; 6].as_ptr(), 2, 0.02, 100, &mut m), McaStatus::Ok);
    }
    assert!((m.auc - 50.0).abs() <= 1e-12);
}

#[test]
fn evaluation_matches_the_library() {
    let f = fixture();
    let h = open(&f);
    let mut m = McaMetrics::default();
    unsafe {
        assert_eq!(mca_evaluate(h.model, h.seq, 6, &mut m), McaStatus::Ok);
    }
    let seq = mcatlas::data::load_sequence(Path::new(f.seq_path.to_str().unwrap())).unwrap();
    let seq = normalize_unit_cube(&seq).unwrap().0;
    let r = evaluate(&f.model, &seq, &EvalConfig { pairs: 6, ..EvalConfig::desk() }).unwrap();
    assert_eq!((m.sl2.mean, m.sl2.std), (r.m_sl2().mean, r.m_sl2().std));
    assert_eq!((m.auc.mean, m.rank.mean, m.chamfer.mean), (r.m_auc().mean, r.m_rank().mean, r.cd().mean));
}

#[test]
fn errors_set_status_and_message() {
    let f = fixture();
    let h = open(&f);
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.bin").unwrap();
        assert_eq!(mca_model_load(missing.as_ptr(), &mut model), McaStatus::Io);
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(mca_model_load(f.seq_path.as_ptr(), &mut model), McaStatus::Io);
        let junk = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(junk.path(), b"not a checkpoint").unwrap();
        let junk_path = cpath(junk.path());
        assert_eq!(mca_model_load(junk_path.as_ptr(), &mut model), McaStatus::Checkpoint);

        assert_eq!(mca_model_load(ptr::null(), &mut model), McaStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut n = 0usize;
        assert_eq!(mca_sequence_point_count(h.seq, 99, &mut n), McaStatus::InvalidArgument);
        let mut small = [0.0; 3];
        assert_eq!(mca_sequence_frame_points(h.seq, 0, small.as_mut_ptr(), 1), McaStatus::InvalidArgument);

        let mut latent = ptr::null_mut();
        let cloud = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(mca_model_encode(h.model, cloud.as_ptr(), 2, &mut latent), McaStatus::Ok);
        let uv = [0.5, 0.5];
        let mut out = [0.0; 3];
        assert_eq!(mca_map_uv(h.model, latent, 10, uv.as_ptr(), 1, out.as_mut_ptr()), McaStatus::InvalidArgument);
        assert!(last_error().contains("patch 10"));
        let outside = [1.5, 0.5];
        assert_eq!(mca_map_uv(h.model, latent, 0, outside.as_ptr(), 1, out.as_mut_ptr()), McaStatus::InvalidArgument);
        assert_eq!(mca_map_uv(h.model, latent, 0, uv.as_ptr(), 1, out.as_mut_ptr()), McaStatus::Ok);
        assert!(mca_last_error_message().is_null());
        mca_latent_free(latent);

        assert_eq!(mca_regular_uv_points(0, 0, small.as_mut_ptr()), McaStatus::InvalidArgument);
        assert_eq!(mca_evaluate(h.model, h.seq, 0, ptr::null_mut()), McaStatus::NullPointer);
    }
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mcatlas.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mca_model_load", "mca_map_uv", "mca_jacobians", "mca_evaluate", "mca_last_error_message", "MCA_STATUS_OK"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"mcatlas.h\"\nint main(void) { McaModel *m = 0; return mca_model_load(\"x\", &m) == MCA_STATUS_OK; }\n").unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .expect("C compiler available");
    assert!(status.success());
}
