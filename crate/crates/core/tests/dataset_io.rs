use std::fs;
use std::path::Path;

use forgerykit::codec::{self, ImageTensor, PreprocessConfig};
use forgerykit::dataset::{
    generate_synthetic_dataset, scan_dataset, stratified_split, DatasetError, Label, Layout, Manifest, Split,
    SplitPlan, SynthConfig, TamperRegion, TAMPER_REGIONS_FILE,
};

fn write_png(path: &Path, shade: u8) {
    fs::write(path, ImageTensor::filled(4, 4, [shade; 3]).to_png().unwrap()).unwrap();
}

fn casia_tree(root: &Path) {
    fs::create_dir_all(root.join("Au")).unwrap();
    fs::create_dir_all(root.join("Tp/nested")).unwrap();
    for name in ["a.png", "b.PNG", "c.png"] {
        write_png(&root.join("Au").join(name), 10);
    }
    let jpeg = codec::encode_jpeg(
        &ImageTensor::filled(8, 8, [90; 3]),
        90,
        codec::ChromaSubsampling::Yuv420,
    )
    .unwrap();
    fs::write(root.join("Tp/x.jpg"), &jpeg).unwrap();
    fs::write(root.join("Tp/y.JPEG"), &jpeg).unwrap();
    fs::write(root.join("Tp/notes.txt"), "ignored").unwrap();
    fs::write(root.join("Tp/broken.png"), b"\x89PNG\r\n\x1a\n").unwrap();
    write_png(&root.join("Tp/nested/deep.png"), 3);
}

#[test]
fn scan_labels_by_directory() {
    let dir = tempfile::tempdir().unwrap();
    casia_tree(dir.path());
    let m = scan_dataset(dir.path(), &Layout::default()).unwrap();
    let ids: Vec<&str> = m.records().iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["Au/a.png", "Au/b.PNG", "Au/c.png", "Tp/x.jpg", "Tp/y.JPEG"]);
    assert_eq!(m.count_label(Label::Authentic), 3);
    assert_eq!(m.count_label(Label::Tampered), 2);
    assert!(m.records().iter().all(|r| r.split == Split::Unassigned));
    assert_eq!(scan_dataset(dir.path(), &Layout::default()).unwrap(), m);
}

#[test]
fn empty_or_missing_class_directories() {
    let dir = tempfile::tempdir().unwrap();
    casia_tree(dir.path());
    for f in fs::read_dir(dir.path().join("Tp")).unwrap() {
        let p = f.unwrap().path();
        if p.is_file() {
            fs::remove_file(p).unwrap();
        }
    }
    assert!(matches!(
        scan_dataset(dir.path(), &Layout::default()),
        Err(DatasetError::EmptyClass(Label::Tampered))
    ));
    let custom = Layout {
        authentic_dir: "Au".into(),
        tampered_dir: "Forged".into(),
    };
    assert!(matches!(
        scan_dataset(dir.path(), &custom),
        Err(DatasetError::MissingDirectory(_))
    ));
}

#[test]
fn manifest_file_roundtrip_after_split() {
    let dir = tempfile::tempdir().unwrap();
    casia_tree(dir.path());
    let scanned = scan_dataset(dir.path(), &Layout::default()).unwrap();
    let split = stratified_split(&scanned, SplitPlan::two_way(0.5), 3).unwrap();
    let path = dir.path().join("manifest.jsonl");
    split.save(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.ends_with('\n') && !text.contains('\r'));
    assert_eq!(Manifest::load(&path).unwrap().records(), split.records());
}

#[test]
fn synthetic_counts_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic_dataset(&SynthConfig::new(10, 10, 64, 1), dir.path()).unwrap();
    assert_eq!(ds.manifest.len(), 20);
    assert_eq!(ds.manifest.count_label(Label::Authentic), 10);
    assert_eq!(ds.manifest.count_label(Label::Tampered), 10);
    assert_eq!(fs::read_dir(dir.path().join("Au")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(dir.path().join("Tp")).unwrap().count(), 10);
    assert_eq!(scan_dataset(dir.path(), &Layout::default()).unwrap(), ds.manifest);
    let regions: Vec<TamperRegion> = fs::read_to_string(dir.path().join(TAMPER_REGIONS_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(regions, ds.regions);
    for r in &regions {
        assert!(r.region.x + r.region.width <= 64 && r.region.y + r.region.height <= 64);
    }
}

#[test]
fn synthetic_generation_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig::new(4, 4, 32, 9);
    let ma = generate_synthetic_dataset(&cfg, a.path()).unwrap().manifest;
    generate_synthetic_dataset(&cfg, b.path()).unwrap();
    for rec in ma.records() {
        assert_eq!(
            fs::read(a.path().join(&rec.id)).unwrap(),
            fs::read(b.path().join(&rec.id)).unwrap(),
            "{}",
            rec.id
        );
    }
    let other = tempfile::tempdir().unwrap();
    generate_synthetic_dataset(&SynthConfig::new(4, 4, 32, 10), other.path()).unwrap();
    assert_ne!(
        fs::read(a.path().join("Au/Au_00000.png")).unwrap(),
        fs::read(other.path().join("Au/Au_00000.png")).unwrap()
    );
}

#[test]
fn splice_leaves_a_stronger_recompression_footprint_inside_the_patch() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic_dataset(&SynthConfig::new(1, 30, 64, 4), dir.path()).unwrap();
    let cfg = PreprocessConfig::square(64);
    let (mut inside, mut outside) = (0.0, 0.0);
    for t in &ds.regions {
        let img = codec::decode_image(&fs::read(dir.path().join(&t.id)).unwrap()).unwrap();
        let d = codec::prepare(&img, &cfg).unwrap().fdiff;
        let r = t.region;
        let patch_sum = d.mean_abs_in(r.x, r.y, r.x + r.width, r.y + r.height) * (r.width * r.height) as f64;
        let total_sum = d.mean_abs() * 64.0 * 64.0;
        inside += patch_sum / (r.width * r.height) as f64;
        outside += (total_sum - patch_sum) / (64 * 64 - r.width * r.height) as f64;
    }
    assert!(inside > outside, "inside {inside} vs outside {outside}");
}

#[test]
fn synthetic_requests_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        generate_synthetic_dataset(&SynthConfig::new(0, 3, 32, 1), dir.path()),
        Err(DatasetError::InvalidRequest(_))
    ));
    assert!(matches!(
        generate_synthetic_dataset(&SynthConfig::new(3, 3, 15, 1), dir.path()),
        Err(DatasetError::InvalidRequest(_))
    ));
}
