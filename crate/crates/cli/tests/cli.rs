use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use facealign::dataset::read_dataset;
use facealign::evaluation::Predictor;
use facealign::morphable_model::{load_basis, project, synthesize_shape, write_obj};
use facealign::regressor::Checkpoint;
use facealign::ParamVector;

const TINY: &str = "\
# smoke-test configuration
basis.seed=3
basis.vertices=200
sampler.count=200
sampler.size=32
sampler.scale_min=0.24
sampler.scale_max=0.3
backbone.input_size=32
backbone.stem_channels=4
backbone.layers=4:1:1,8:2:1
backbone.sge_groups=2
backbone.ca_reduction=4
backbone.ca_min_mid=2
train.epochs=3
train.batch_size=8
";

fn facealign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facealign"))
        .args(args)
        .output()
        .expect("spawn facealign")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = facealign(args);
    assert!(
        out.status.success(),
        "facealign {args:?} failed ({:?}): {}",
        out.status.code(),
        stderr(&out)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Pipeline {
    dir: PathBuf,
}

impl Pipeline {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// gen-basis → gen-data → train → eval → fit inside `dir`.
fn run_pipeline(dir: &Path) -> Pipeline {
    let p = Pipeline { dir: dir.to_path_buf() };
    let cfg = p.path("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let c = s(&cfg);
    ok(&["gen-basis", "--config", c, "--out", s(&p.path("basis.m3dm"))]);
    ok(&["gen-data", "--config", c, "--basis", s(&p.path("basis.m3dm")), "--out", s(&p.path("data.fpds"))]);
    ok(&[
        "train",
        "--config",
        c,
        "--basis",
        s(&p.path("basis.m3dm")),
        "--data",
        s(&p.path("data.fpds")),
        "--out",
        s(&p.path("model.fpkt")),
        "--metrics",
        s(&p.path("metrics.csv")),
        "--lr0",
        "0.02",
        "--decay",
        "0.6",
        "--patience",
        "4",
    ]);
    ok(&[
        "eval",
        "--config",
        c,
        "--basis",
        s(&p.path("basis.m3dm")),
        "--data",
        s(&p.path("data.fpds")),
        "--checkpoint",
        s(&p.path("model.fpkt")),
        "--perfect",
        "--report",
        s(&p.path("report.txt")),
        "--csv",
        s(&p.path("report.csv")),
        "--overlays",
        s(&p.path("overlays")),
    ]);
    p
}

#[test]
fn smoke_pipeline_is_complete_deterministic_and_fast() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let pa = run_pipeline(a.path());
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(300), "smoke pipeline took {elapsed:?}");
    let pb = run_pipeline(b.path());

    for name in ["basis.m3dm", "data.fpds", "model.fpkt", "metrics.csv", "report.txt", "report.csv"] {
        assert_eq!(
            fs::read(pa.path(name)).unwrap(),
            fs::read(pb.path(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }

    let metrics = fs::read_to_string(pa.path("metrics.csv")).unwrap();
    assert!(
        metrics.contains("lr0=0.02 decay=0.6 patience=4"),
        "schedule not echoed:\n{metrics}"
    );
    assert_eq!(metrics.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let report = fs::read_to_string(pa.path("report.txt")).unwrap();
    let perfect = report.lines().find(|l| l.starts_with("perfect")).expect("perfect row");
    let values: Vec<&str> = perfect.split_whitespace().skip(1).collect();
    assert_eq!(values, ["0.000"; 5], "perfect row: {perfect}");
    assert!(report.lines().any(|l| l.starts_with("model")));
    assert!(pa.path("overlays/overlay_0000.ppm").exists());
}

#[test]
fn fit_outputs_match_library_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = run_pipeline(dir.path());
    let out_dir = p.path("fit");
    let out = ok(&[
        "fit",
        "--checkpoint",
        s(&p.path("model.fpkt")),
        "--basis",
        s(&p.path("basis.m3dm")),
        "--data",
        s(&p.path("data.fpds")),
        "--index",
        "5",
        "--out-dir",
        s(&out_dir),
    ]);
    let text = stdout(&out);
    assert!(text.contains("clean NME") && text.contains("occluded NME"), "{text}");

    let basis = load_basis(&p.path("basis.m3dm")).unwrap();
    let ds = read_dataset(&p.path("data.fpds")).unwrap();
    let ck = Checkpoint::load(&p.path("model.fpkt")).unwrap();
    let expected = ck.predict(&ds.records[5]).unwrap();

    let values: Vec<f64> = fs::read_to_string(out_dir.join("params.txt"))
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    let params = ParamVector::from_slice(&values).unwrap();
    assert_eq!(params, expected);

    let landmarks: Vec<[f64; 2]> = fs::read_to_string(out_dir.join("landmarks.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            [x.parse().unwrap(), y.parse().unwrap()]
        })
        .collect();
    assert_eq!(landmarks, project(&basis, &expected).unwrap().points());

    let shape = synthesize_shape(&basis, expected.alpha_id(), expected.alpha_exp()).unwrap();
    let mesh = fs::read_to_string(out_dir.join("mesh.obj")).unwrap();
    assert_eq!(mesh, write_obj(&shape, basis.triangles()));
    for name in ["overlay.ppm", "overlay_clean.ppm", "overlay_occluded.ppm"] {
        assert!(fs::read(out_dir.join(name)).unwrap().starts_with(b"P6\n32 32\n255\n"));
    }

    // export-mesh from the emitted parameters reproduces the mesh.
    let exported = p.path("exported.obj");
    ok(&[
        "export-mesh",
        "--basis",
        s(&p.path("basis.m3dm")),
        "--params",
        s(&out_dir.join("params.txt")),
        "--out",
        s(&exported),
    ]);
    assert_eq!(fs::read_to_string(exported).unwrap(), mesh);

    // The same crop as a PPM file gives the same fit.
    let record = &ds.records[5];
    let mut ppm = b"P6\n32 32\n255\n".to_vec();
    for i in 0..32 * 32 {
        for c in 0..3 {
            ppm.push((record.image[c * 1024 + i] * 255.0).round() as u8);
        }
    }
    let image = p.path("crop.ppm");
    fs::write(&image, ppm).unwrap();
    let image_dir = p.path("fit_image");
    ok(&[
        "fit",
        "--checkpoint",
        s(&p.path("model.fpkt")),
        "--basis",
        s(&p.path("basis.m3dm")),
        "--image",
        s(&image),
        "--out-dir",
        s(&image_dir),
    ]);
    assert_eq!(
        fs::read(image_dir.join("params.txt")).unwrap(),
        fs::read(out_dir.join("params.txt")).unwrap()
    );

    // Wrong crop size names the expected size.
    let small = p.path("small.ppm");
    let mut bytes = b"P6\n16 16\n255\n".to_vec();
    bytes.resize(bytes.len() + 3 * 256, 128);
    fs::write(&small, bytes).unwrap();
    let out = facealign(&[
        "fit",
        "--checkpoint",
        s(&p.path("model.fpkt")),
        "--basis",
        s(&p.path("basis.m3dm")),
        "--image",
        s(&small),
        "--out-dir",
        s(&p.path("fit_small")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("32×32"), "{}", stderr(&out));
}

#[test]
fn gen_basis_checksum_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = ok(&["gen-basis", "--seed", "42", "--vertices", "500", "--out", s(&path)]);
        let text = stdout(&out);
        (text.split_whitespace().next().unwrap().to_string(), path)
    };
    let (a, pa) = run("a.m3dm");
    let (b, _) = run("b.m3dm");
    assert_eq!(a, b);
    assert_eq!(a.len(), 64);
    let basis = load_basis(&pa).unwrap();
    assert_eq!(basis.num_vertices(), 500);
    assert_eq!(basis.landmark_indices().len(), 68);
}

#[test]
fn too_few_vertices_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = facealign(&["gen-basis", "--vertices", "10", "--out", s(&dir.path().join("b.m3dm"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("68"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "sampler.colour=blue\n").unwrap();
    let out = facealign(&["gen-basis", "--config", s(&cfg), "--out", s(&dir.path().join("b.m3dm"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sampler.colour"), "{}", stderr(&out));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.m3dm");
    let out = facealign(&["gen-data", "--basis", s(&missing), "--out", s(&dir.path().join("d.fpds"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere.m3dm"), "{}", stderr(&out));
}

#[test]
fn corrupt_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let basis = dir.path().join("b.m3dm");
    ok(&["gen-basis", "--vertices", "100", "--out", s(&basis)]);
    let data = dir.path().join("junk.fpds");
    fs::write(&data, b"not a dataset").unwrap();
    let out = facealign(&["eval", "--basis", s(&basis), "--data", s(&data), "--perfect"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("junk.fpds"), "{}", stderr(&out));
}

#[test]
fn cross_stage_basis_mismatch_names_both_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.m3dm"), dir.path().join("b.m3dm"));
    ok(&["gen-basis", "--seed", "1", "--vertices", "100", "--out", s(&a)]);
    ok(&["gen-basis", "--seed", "2", "--vertices", "100", "--out", s(&b)]);
    let data = dir.path().join("d.fpds");
    ok(&["gen-data", "--basis", s(&a), "--count", "5", "--size", "32", "--out", s(&data)]);
    let out = facealign(&["eval", "--basis", s(&b), "--data", s(&data), "--perfect"]);
    assert_eq!(out.status.code(), Some(1));
    let fa = load_basis(&a).unwrap().fingerprint().to_string();
    let fb = load_basis(&b).unwrap().fingerprint().to_string();
    let err = stderr(&out);
    assert!(err.contains(&fa) && err.contains(&fb), "{err}");
}

#[test]
fn worker_count_does_not_change_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let basis = dir.path().join("b.m3dm");
    ok(&["gen-basis", "--vertices", "100", "--out", s(&basis)]);
    let one = dir.path().join("one.fpds");
    let four = dir.path().join("four.fpds");
    ok(&["gen-data", "--basis", s(&basis), "--count", "24", "--size", "32", "--out", s(&one)]);
    ok(&["gen-data", "--basis", s(&basis), "--count", "24", "--size", "32", "--workers", "4", "--out", s(&four)]);
    assert_eq!(fs::read(one).unwrap(), fs::read(four).unwrap());
}

#[test]
fn eval_without_predictor_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let basis = dir.path().join("b.m3dm");
    ok(&["gen-basis", "--vertices", "100", "--out", s(&basis)]);
    let data = dir.path().join("d.fpds");
    ok(&["gen-data", "--basis", s(&basis), "--count", "3", "--size", "32", "--out", s(&data)]);
    let out = facealign(&["eval", "--basis", s(&basis), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_reports_every_component() {
    let out = ok(&["gradcheck", "--seeds", "2"]);
    let text = stdout(&out);
    for name in ["pdc", "vdc", "wpdc", "wing", "merged", "sge", "ca", "network"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing:\n{text}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn gradcheck_detects_flipped_wing_gradient() {
    let out = facealign(&["gradcheck", "--seeds", "2", "--inject-fault", "wing"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("wing"), "{}", stderr(&out));
}

#[test]
fn gradcheck_verdict_is_stable_across_seeds() {
    for seed in 0..20 {
        let out = facealign(&["gradcheck", "--seed", &seed.to_string(), "--seeds", "1"]);
        assert_eq!(out.status.code(), Some(0), "seed {seed}: {}", stdout(&out));
    }
}
