//! Dataset directory contract: what an exporter must produce and what the
//! reader rejects.

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use trimodal::data::{
    gen_synthetic, read_dataset, write_dataset, CaptionRecord, CaptionType, Dataset, DatasetDims, EmbeddingRecord,
    Modality, SynthConfig,
};
use trimodal::{Error, Matrix};

const SMALL: DatasetDims = DatasetDims {
    audio_dim: 6,
    visual_dim: 5,
    text_dim: 4,
};

fn small(seed: u64) -> Dataset {
    gen_synthetic(&SynthConfig {
        n_clips: 5,
        rows_per_clip: 3,
        captions_per_type: 2,
        seed,
        dims: SMALL,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn written(ds: &Dataset) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(ds, dir.path()).unwrap();
    dir
}

fn rewrite_manifest(dir: &Path, f: impl Fn(&str) -> String) {
    let path = dir.join("manifest.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, f(&text)).unwrap();
}

fn err_text(dir: &Path) -> String {
    read_dataset(dir).unwrap_err().to_string()
}

#[test]
fn round_trip_is_exact_for_f32_data() {
    // synthetic values are already f32-rounded, so nothing may change
    let ds = small(1);
    let dir = written(&ds);
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn rewriting_a_read_dataset_is_byte_identical() {
    let ds = small(2);
    let a = written(&ds);
    let b = written(&read_dataset(a.path()).unwrap());
    for name in ["meta.json", "manifest.jsonl", "audio.f32", "visual.f32", "text.f32"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn meta_and_manifest_layout() {
    let dir = written(&small(0));
    let meta = fs::read_to_string(dir.path().join("meta.json")).unwrap();
    assert_eq!(meta, "{\"format_version\":1,\"audio_dim\":6,\"visual_dim\":5,\"text_dim\":4}\n");
    let manifest = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let first = manifest.lines().next().unwrap();
    assert_eq!(
        first,
        "{\"clip_id\":\"clip000000\",\"kind\":\"audio\",\"rows\":3,\"cols\":6,\"blob\":\"audio.f32\",\"offset\":0,\"byte_len\":72}"
    );
    let caption = manifest.lines().find(|l| l.contains("audio_visual")).unwrap();
    assert!(caption.contains("\"kind\":\"caption\",\"caption_type\":\"audio_visual\",\"caption_index\":0"));
    // 5 clips × (audio + visual + 3 types × 2 captions)
    assert_eq!(manifest.lines().count(), 5 * 8);
}

#[test]
fn blobs_are_little_endian_f32() {
    let ds = small(3);
    let dir = written(&ds);
    let bytes = fs::read(dir.path().join("visual.f32")).unwrap();
    let first = f32::from_le_bytes(bytes[..4].try_into().unwrap());
    assert_eq!(first as f64, ds.clips()[0].visual.get(0, 0));
    assert_eq!(bytes.len(), 5 * 3 * 5 * 4);
}

#[test]
fn truncated_blob_names_needed_and_actual_lengths() {
    let dir = written(&small(0));
    let path = dir.path().join("text.f32");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let msg = err_text(dir.path());
    assert!(msg.contains("text.f32"), "{msg}");
    assert!(msg.contains(&format!("..{}", bytes.len())), "{msg}");
    assert!(msg.contains(&format!("holds {} bytes", bytes.len() - 3)), "{msg}");
}

#[test]
fn declared_width_must_match_meta() {
    let dir = written(&small(0));
    fs::write(
        dir.path().join("meta.json"),
        "{\"format_version\":1,\"audio_dim\":6,\"visual_dim\":5,\"text_dim\":8}\n",
    )
    .unwrap();
    let msg = err_text(dir.path());
    assert!(msg.contains("manifest.jsonl") && msg.contains("line 3"), "{msg}");
    assert!(msg.contains("declares 8"), "{msg}");
}

#[test]
fn byte_len_must_equal_rows_cols_4() {
    let dir = written(&small(0));
    rewrite_manifest(dir.path(), |t| t.replacen("\"byte_len\":72", "\"byte_len\":68", 1));
    let msg = err_text(dir.path());
    assert!(msg.contains("line 1") && msg.contains("rows × cols × 4 = 72"), "{msg}");
}

#[test]
fn version_mismatch_is_reported() {
    let dir = written(&small(0));
    fs::write(
        dir.path().join("meta.json"),
        "{\"format_version\":2,\"audio_dim\":6,\"visual_dim\":5,\"text_dim\":4}\n",
    )
    .unwrap();
    assert!(matches!(
        read_dataset(dir.path()),
        Err(Error::Version { found: 2, expected: 1 })
    ));
}

#[test]
fn dangling_caption_reports_its_line() {
    let dir = written(&small(0));
    rewrite_manifest(dir.path(), |t| {
        let mut lines: Vec<String> = t.lines().map(String::from).collect();
        let n = lines.len();
        lines[n - 1] = lines[n - 1].replace("clip000004", "clip999999");
        lines.join("\n") + "\n"
    });
    let msg = err_text(dir.path());
    assert!(msg.contains("line 40") && msg.contains("clip999999"), "{msg}");
}

#[test]
fn non_finite_values_are_located() {
    let dir = written(&small(0));
    let path = dir.path().join("audio.f32");
    let mut bytes = fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let msg = err_text(dir.path());
    assert!(msg.contains("audio.f32") && msg.contains("byte offset 8"), "{msg}");
}

#[test]
fn blob_paths_cannot_escape() {
    let dir = written(&small(0));
    rewrite_manifest(dir.path(), |t| t.replacen("\"blob\":\"audio.f32\"", "\"blob\":\"../audio.f32\"", 1));
    assert!(err_text(dir.path()).contains("stay inside"));
}

#[test]
fn unknown_manifest_fields_are_rejected() {
    let dir = written(&small(0));
    rewrite_manifest(dir.path(), |t| t.replacen("\"rows\":3", "\"frames\":1,\"rows\":3", 1));
    assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn reading_does_not_touch_the_directory() {
    let dir = written(&small(4));
    let snapshot = |p: &Path| {
        let mut v: Vec<_> = fs::read_dir(p)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let before = snapshot(dir.path());
    read_dataset(dir.path()).unwrap();
    assert_eq!(snapshot(dir.path()), before);
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..5, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n, a, v, t)| {
        let dims = DatasetDims {
            audio_dim: a,
            visual_dim: v,
            text_dim: t,
        };
        let clip = (1usize..4, 1usize..4, 0usize..3).prop_flat_map(move |(ra, rv, nc)| {
            (
                proptest::collection::vec(-1e6f64..1e6, ra * a),
                proptest::collection::vec(-1e6f64..1e6, rv * v),
                proptest::collection::vec((0usize..3, proptest::collection::vec(-1e3f64..1e3, t)), nc),
            )
                .prop_map(move |(aud, vis, caps)| (ra, aud, rv, vis, caps))
        });
        proptest::collection::vec(clip, n).prop_map(move |clips| {
            let mut records = Vec::new();
            let mut captions = Vec::new();
            for (i, (ra, aud, rv, vis, caps)) in clips.into_iter().enumerate() {
                let id = format!("c{i}");
                records.push(EmbeddingRecord {
                    clip_id: id.clone(),
                    modality: Modality::Audio,
                    features: Matrix::from_vec(ra, dims.audio_dim, aud).unwrap(),
                });
                records.push(EmbeddingRecord {
                    clip_id: id.clone(),
                    modality: Modality::Visual,
                    features: Matrix::from_vec(rv, dims.visual_dim, vis).unwrap(),
                });
                for (k, (t, emb)) in caps.into_iter().enumerate() {
                    captions.push(CaptionRecord {
                        clip_id: id.clone(),
                        caption_type: CaptionType::ALL[t],
                        caption_index: k,
                        text_embedding: emb,
                    });
                }
            }
            Dataset::new(dims, records, captions).unwrap()
        })
    })
}

fn rounded(ds: &Dataset) -> Dataset {
    let round = |v: &[f64]| v.iter().map(|x| *x as f32 as f64).collect::<Vec<_>>();
    let mut records = Vec::new();
    let mut captions = Vec::new();
    for c in ds.clips() {
        for (modality, m) in [(Modality::Audio, &c.audio), (Modality::Visual, &c.visual)] {
            records.push(EmbeddingRecord {
                clip_id: c.id.clone(),
                modality,
                features: Matrix::from_vec(m.rows(), m.cols(), round(m.as_slice())).unwrap(),
            });
        }
        for cap in &c.captions {
            captions.push(CaptionRecord {
                text_embedding: round(&cap.text_embedding),
                ..cap.clone()
            });
        }
    }
    Dataset::new(ds.dims(), records, captions).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_equals_f32_rounding(ds in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(read_dataset(dir.path()).unwrap(), rounded(&ds));
    }
}
