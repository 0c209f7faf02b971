use ndarray::Array2;

use super::*;
use crate::autodiff::DualBatch;
use crate::data::obj::read_obj;
use crate::data::ply::read_ply;
use crate::model::{AtlasModel, FrameAtlas, LatentCode, ModelConfig};

struct Affine(Vec<[Vec3; 3]>);

impl SurfaceMap for Affine {
    fn patch_count(&self) -> usize {
        self.0.len()
    }

    fn eval_patch(&self, patch: usize, uv: &UvSampleSet) -> Result<DualBatch> {
        let [o, du, dv] = self.0[patch];
        let m = uv.len();
        Ok(DualBatch {
            value: Array2::from_shape_fn((m, 3), |(i, k)| o[k] + uv.points[i].u * du[k] + uv.points[i].v * dv[k]),
            du: Array2::from_shape_fn((m, 3), |(_, k)| du[k]),
            dv: Array2::from_shape_fn((m, 3), |(_, k)| dv[k]),
        })
    }
}

const IDENTITY_PATCH: [Vec3; 3] = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
const CONSTANT_PATCH: [Vec3; 3] = [[0.2, 0.3, 0.4], [0.0; 3], [0.0; 3]];

fn small_model() -> AtlasModel {
    AtlasModel::new(ModelConfig { patches: 3, latent_dim: 4, encoder_widths: vec![8], decoder_widths: vec![16] }, 11).unwrap()
}

fn section<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    text.lines().filter(|l| l.starts_with(tag)).collect()
}

#[test]
fn identity_patch_with_two_by_two_grid() {
    let mesh = patch_grid_mesh(&Affine(vec![IDENTITY_PATCH]), 2, &[0]).unwrap();
    let p = &mesh.patches[0];
    assert_eq!(p.vertices, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
    assert_eq!(p.triangles.len(), 2);
    assert_eq!(p.uvs, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
}

#[test]
fn grid_triangulation_is_manifold() {
    use std::collections::HashMap;
    for g in [2, 3, 7] {
        let tris = grid_triangles(g).unwrap();
        assert_eq!(tris.len(), 2 * (g - 1) * (g - 1));
        let mut directed = HashMap::new();
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &tris {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *directed.entry((a, b)).or_insert(0) += 1;
                *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(directed.values().all(|&c| c == 1), "inconsistent orientation at g={g}");
        let boundary = undirected.values().filter(|&&c| c == 1).count();
        assert!(undirected.values().all(|&c| c <= 2));
        assert_eq!(boundary, 4 * (g - 1));
    }
    assert!(grid_triangles(1).is_err());
    assert!(grid_uv(0).is_err());
}

#[test]
fn exported_vertices_match_forward_pass() {
    let model = small_model();
    let z = LatentCode::new(vec![0.3, -0.2, 0.5, 0.1]);
    let map = FrameAtlas::new(&model, z.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frame.obj");
    let g = 5;
    let mesh = export_frame(&map, g, 64, &path).unwrap();
    let back = read_obj(&path).unwrap();
    let mut idx = 0;
    for p in &mesh.patches {
        for i in 0..g {
            for j in 0..g {
                let uv = UvPoint::new(j as f64 / (g - 1) as f64, i as f64 / (g - 1) as f64);
                let want = model.forward(p.patch, uv, &z).unwrap();
                assert_eq!(back.vertices[idx], want, "patch {} vertex ({i},{j})", p.patch);
                idx += 1;
            }
        }
    }
    assert_eq!(back.vertices.len(), idx);
    assert_eq!(back.triangles.len(), mesh.patches.len() * 2 * (g - 1) * (g - 1));
    assert!(dir.path().join(MATERIAL_LIB).exists());
    let tex = image::open(dir.path().join(TEXTURE_FILE)).unwrap();
    assert_eq!((tex.width(), tex.height()), (TEXTURE_SIZE, TEXTURE_SIZE));
}

#[test]
fn frames_share_texture_coordinates() {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for (k, z) in [vec![0.3, -0.2, 0.5, 0.1], vec![-1.0, 0.4, 0.0, 0.9]].into_iter().enumerate() {
        let path = dir.path().join(format!("{k:03}.obj"));
        export_frame(&FrameAtlas::new(&model, LatentCode::new(z)), 4, 64, &path).unwrap();
        texts.push(std::fs::read_to_string(path).unwrap());
    }
    assert_eq!(section(&texts[0], "vt "), section(&texts[1], "vt "));
    assert_ne!(section(&texts[0], "v "), section(&texts[1], "v "));
    assert_eq!(section(&texts[0], "vt ").len(), 3 * 16);
    assert_eq!(section(&texts[0], "mtllib "), vec!["mtllib atlas.mtl"]);
}

#[test]
fn collapsed_patches_are_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.obj");
    let mesh = export_frame(&Affine(vec![CONSTANT_PATCH, IDENTITY_PATCH]), 3, 64, &path).unwrap();
    assert_eq!(mesh.patches.len(), 1);
    assert_eq!(mesh.patches[0].patch, 1);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(section(&text, "o "), vec!["o patch_1"]);
}

#[test]
fn source_color_examples() {
    // h=0, s=0.35, v=0.5: chroma 0.175, offset 0.325
    assert_eq!(source_color([0.0, 0.0, 0.0]), [128, 83, 83]);
    // h=0 (360 wraps), s=1, v=1
    assert_eq!(source_color([1.0, 1.0, 1.0]), [255, 0, 0]);
    // h=120, s=1, v=1
    assert_eq!(source_color([1.0 / 3.0, 1.0, 1.0]), [0, 255, 0]);
    // clamped outside the cube
    assert_eq!(source_color([-2.0, -1.0, -5.0]), source_color([0.0, 0.0, 0.0]));
    assert_eq!(source_color([0.3, 0.6, 0.2]), source_color([0.3, 0.6, 0.2]));
}

fn read_colors(path: &Path) -> (Vec<[u8; 3]>, Vec<f64>, Vec<Vec3>) {
    let ply = read_ply(path).unwrap();
    let ch = |name: &str| ply.vertex_scalars[name].clone();
    let (r, g, b) = (ch("red"), ch("green"), ch("blue"));
    let colors = (0..r.len()).map(|i| [r[i] as u8, g[i] as u8, b[i] as u8]).collect();
    (colors, ch("error"), ply.vertices)
}

#[test]
fn zero_error_correspondences_share_colors() {
    let pts = vec![[0.1, 0.2, 0.3], [0.9, 0.5, 0.1], [0.4, 0.4, 0.8]];
    let corr = CorrespondenceSet { sources: pts.clone(), predicted: pts.clone(), truth: pts.clone() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ply");
    export_correspondence_colors(&corr, &path).unwrap();
    let (colors, err, verts) = read_colors(&path);
    assert_eq!(verts.len(), 6);
    for i in 0..3 {
        assert_eq!(colors[i], colors[i + 3]);
        assert_eq!(colors[i], source_color(pts[i]));
    }
    assert!(err.iter().all(|&e| e == 0.0));
}

#[test]
fn error_channel_matches_recomputed_distances() {
    let sources = vec![[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
    let truth = vec![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
    let predicted = vec![[1.0, 3.0, 4.0], [0.0, 2.0, 0.5]];
    let corr = CorrespondenceSet { sources, predicted: predicted.clone(), truth: truth.clone() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ply");
    export_correspondence_colors(&corr, &path).unwrap();
    let (_, err, verts) = read_colors(&path);
    for i in 0..2 {
        let d = ((0..3).map(|k| (predicted[i][k] - truth[i][k]).powi(2)).sum::<f64>()).sqrt();
        assert_eq!(err[i], d);
        assert_eq!(err[i + 2], d);
        assert_eq!(verts[i + 2], predicted[i]);
    }
    assert_eq!(err[0], 5.0);
    let bad = CorrespondenceSet { predicted: vec![], ..corr };
    assert!(export_correspondence_colors(&bad, &path).is_err());
}
