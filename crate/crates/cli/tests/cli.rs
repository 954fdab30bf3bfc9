use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TOY: &str = include_str!("../../../configs/toy.toml");

fn cvfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvfnet"))
        .args(args)
        .output()
        .expect("spawn cvfnet")
}

fn ok(args: &[&str]) -> String {
    let out = cvfnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    cvfnet(args).status.code().expect("exit code")
}

fn config(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = TOY.to_string();
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_small(dir: &Path, cfg: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["train", "--config", s(cfg), "--out", s(&out), "--scenes", "2", "--epochs", "1", "--seed", "3"]);
    out
}

#[test]
fn train_smoke_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "toy.toml", &[]);
    let a = train_small(tmp.path(), &cfg, "a");
    let b = train_small(tmp.path(), &cfg, "b");

    let log = fs::read_to_string(a.join("losses.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch\ttotal\tcls\treg\tdir\tlr");
    assert_eq!(lines.len(), 2);
    let fields: Vec<f64> = lines[1].split('\t').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields.len(), 6);
    assert!(fields[1..5].iter().all(|x| x.is_finite() && *x > 0.0));

    assert_eq!(log, fs::read_to_string(b.join("losses.tsv")).unwrap());
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn infer_writes_one_file_per_scene_and_overlays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "toy.toml", &[]);
    let run = train_small(tmp.path(), &cfg, "run");
    let ckpt = run.join("model.ckpt");

    let data = tmp.path().join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data), "--scenes", "2"]);
    // A scene without any returns, and no manifest so ids come from the bins.
    fs::write(data.join("velodyne").join("zz_empty.bin"), b"").unwrap();
    fs::remove_file(data.join("manifest.txt")).unwrap();

    let infer = |out: &Path| {
        ok(&[
            "infer", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(out), "--overlay",
        ])
    };
    let (o1, o2) = (tmp.path().join("i1"), tmp.path().join("i2"));
    infer(&o1);
    infer(&o2);
    for id in ["000000", "000001", "zz_empty"] {
        let f = |o: &Path| fs::read(o.join("label").join(format!("{id}.txt"))).unwrap();
        assert_eq!(f(&o1), f(&o2), "{id}");
        let img = image::open(o1.join("overlay").join(format!("{id}.png"))).unwrap();
        // Toy grid is 128 x 128 pillars; overlays are half resolution.
        assert_eq!((img.width(), img.height()), (64, 64));
    }
    assert!(fs::read(o1.join("label").join("zz_empty.txt")).unwrap().is_empty());
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "toy.toml", &[]);
    let data = tmp.path().join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data), "--scenes", "4"]);
    let out = tmp.path().join("eval");
    let text = ok(&["eval", "--config", s(&cfg), "--pred", s(&data), "--gt", s(&data), "--out", s(&out)]);
    assert!(text.contains("Car AP_bev@R40: 1.000000"), "{text}");
    let kv = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(kv.lines().any(|l| l == "ap_bev_r40.Car=1"), "{kv}");

    // Predicting nothing scores zero.
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let text = ok(&["eval", "--config", s(&cfg), "--pred", s(&empty), "--gt", s(&data), "--out", s(&out)]);
    assert!(text.contains("Car AP_bev@R40: 0.000000"), "{text}");
}

#[test]
fn bench_reports_every_stage_on_empty_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        "bench.toml",
        &[("points = 120000", "points = 3000"), ("\nobjects = 5\n", "\nobjects = 0\n")],
    );
    let shapes = |text: &str| text.lines().take(2).map(str::to_owned).collect::<Vec<_>>();
    let a = ok(&["bench", "--config", s(&cfg), "--seed", "1"]);
    let b = ok(&["bench", "--config", s(&cfg), "--seed", "1"]);
    assert_eq!(shapes(&a), shapes(&b));
    assert!(a.contains("objects 0"), "{a}");
    assert!(a.contains("warm-up 3, timed iterations 20"), "{a}");
    for stage in ["projection", "fusion", "scatter", "backbone", "head", "nms", "total"] {
        let line = a.lines().find(|l| l.starts_with(stage)).unwrap_or_else(|| panic!("{stage}: {a}"));
        let nums: Vec<f64> = line.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect();
        assert_eq!(nums.len(), 2);
        assert!(nums[0] >= 0.0 && nums[1] >= 0.0);
    }
}

#[test]
fn synth_is_seeded_and_empty_corpus_is_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "toy.toml", &[]);
    let none = tmp.path().join("none");
    ok(&["synth", "--config", s(&cfg), "--out", s(&none), "--scenes", "0"]);
    let entries: Vec<_> = fs::read_dir(&none).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec!["manifest.txt"]);
    assert_eq!(fs::read_to_string(none.join("manifest.txt")).unwrap(), "");

    let gen = |name: &str| {
        let dir = tmp.path().join(name);
        ok(&["synth", "--config", s(&cfg), "--out", s(&dir), "--scenes", "3", "--seed", "11"]);
        dir
    };
    let (a, b) = (gen("a"), gen("b"));
    for rel in ["manifest.txt", "velodyne/000002.bin", "label/000001.txt"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "toy.toml", &[]);

    let broken = tmp.path().join("broken.toml");
    fs::write(&broken, "[model\n").unwrap();
    assert_eq!(code(&["synth", "--config", s(&broken), "--out", s(&tmp.path().join("x"))]), 2);
    assert_eq!(code(&["synth", "--config", s(&tmp.path().join("missing.toml"))]), 2);
    let invalid = config(tmp.path(), "invalid.toml", &[("recall_positions = 40", "recall_positions = 0")]);
    assert_eq!(code(&["synth", "--config", s(&invalid), "--out", s(&tmp.path().join("x"))]), 2);

    let run = train_small(tmp.path(), &cfg, "run");
    let data = tmp.path().join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data), "--scenes", "1"]);
    let wider = config(tmp.path(), "wider.toml", &[("head_channels = 32", "head_channels = 24")]);
    let infer = |cfg: &Path, ckpt: &Path, data: &Path| {
        code(&[
            "infer", "--config", s(cfg), "--checkpoint", s(ckpt), "--data", s(data), "--out", s(&tmp.path().join("o")),
        ])
    };
    let ckpt = run.join("model.ckpt");
    assert_eq!(infer(&cfg, &ckpt, &data), 0);
    assert_eq!(infer(&wider, &ckpt, &data), 3);

    let bad = tmp.path().join("bad");
    fs::create_dir_all(bad.join("velodyne")).unwrap();
    fs::write(bad.join("velodyne").join("000000.bin"), [0u8; 17]).unwrap();
    assert_eq!(infer(&cfg, &ckpt, &bad), 4);
    assert_eq!(infer(&cfg, &ckpt, &tmp.path().join("nowhere")), 4);
    assert_eq!(infer(&cfg, &tmp.path().join("none.ckpt"), &data), 4);
}

#[test]
fn shipped_configs_load() {
    use cvf_core::config::ExperimentConfig;
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let kitti = ExperimentConfig::load(&root.join("kitti.toml")).unwrap();
    assert_eq!(kitti, ExperimentConfig::default());
    let toy = ExperimentConfig::load(&root.join("toy.toml")).unwrap();
    assert_eq!(toy.model.class_names(), vec!["Car"]);
}
