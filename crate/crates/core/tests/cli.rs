use std::path::Path;
use std::process::{Command, Output};

fn vbmkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbmkit")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantom(kind: &str, dims: &str, seed: &str, out: &Path) {
    let o = vbmkit(&["phantom", "--kind", kind, "--dims", dims, "--spacing", "2", "--seed", seed, "--out", s(out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&vbmkit(&["--help"])), 0);
    assert_eq!(code(&vbmkit(&["--version"])), 0);
    assert_eq!(code(&vbmkit(&[])), 1);
    assert_eq!(code(&vbmkit(&["frobnicate"])), 1);
    let o = vbmkit(&["phantom", "--kind", "sphere", "--out", "/tmp/x"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sphere"));
    let dir = tempfile::tempdir().unwrap();
    let o = vbmkit(&["run", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn phantom_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    phantom("tissue-shells", "16", "4", &a);
    phantom("tissue_shells", "16", "4", &b);
    for name in ["p0.nii", "t1.nii", "mask.nii", "gm_mask.nii"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    let o = vbmkit(&["phantom", "--kind", "checkerboard", "--dims", "16", "17", "18", "--period", "2", "--out", s(&c)]);
    assert_eq!(code(&o), 0);
    assert!(c.join("checkerboard.nii").is_file());
    assert_eq!(code(&vbmkit(&["phantom", "--kind", "blob_pair", "--dims", "8", "--out", s(&c)])), 1);
}

#[test]
fn evaluate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    phantom("tissue_shells", "16", "1", &a);
    phantom("tissue_shells", "16", "2", &b);
    let (pa, pb) = (a.join("p0.nii"), b.join("p0.nii"));
    let o = vbmkit(&["evaluate", "--pred", s(&pa), s(&pb), "--truth", s(&pa), s(&pa)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "case,dice_csf,dice_gm,dice_wm,dice_foreground,dice_gwm_mean,mse,le");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("p0.nii,1,1,1,1,1,0,"));
    assert!(lines[3].starts_with("median,") && lines[4].starts_with("std,"));

    let out = dir.path().join("m.csv");
    let o = vbmkit(&["evaluate", "--pred", s(&pa), "--truth", s(&pb), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
    let o = vbmkit(&["evaluate", "--pred", s(&pa), s(&pb), "--truth", s(&pa)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn register_and_internal_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("blobs");
    phantom("blob-pair", "16", "0", &p);
    let out = dir.path().join("reg");
    let o = vbmkit(&[
        "register", "--moving", s(&p.join("moving.nii")), "--fixed", s(&p.join("fixed.nii")), "--iterations", "15",
        "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["warped.nii", "y_forward.nii", "y_backward.nii", "jacobian.nii", "trace.csv", "register.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("min jacobian"));

    // a float64 image whose squared intensities overflow makes the loss non-finite
    let fixed = std::fs::read(p.join("fixed.nii")).unwrap();
    assert_eq!(i32::from_le_bytes(fixed[0..4].try_into().unwrap()), 348);
    let mut huge = fixed[..352].to_vec();
    huge[70..72].copy_from_slice(&64i16.to_le_bytes());
    huge[72..74].copy_from_slice(&64i16.to_le_bytes());
    for _ in 0..16 * 16 * 16 {
        huge.extend_from_slice(&1e200f64.to_le_bytes());
    }
    let hp = dir.path().join("huge.nii");
    std::fs::write(&hp, huge).unwrap();
    let o = vbmkit(&["register", "--moving", s(&hp), "--fixed", s(&p.join("fixed.nii")), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let o = vbmkit(&["register", "--moving", s(&hp), "--fixed", s(&p.join("fixed.nii")), "--moving-mask", s(&hp), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn vbm_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let mut maps = Vec::new();
    let mut csv = String::from("id,age\n");
    for (i, age) in [25, 38, 47, 59, 71].iter().enumerate() {
        let d = dir.path().join(format!("s{i}"));
        phantom("tissue_shells", "16", &i.to_string(), &d);
        maps.push(d.join("p0.nii"));
        csv += &format!("s{i},{age}\n");
    }
    let design = dir.path().join("design.csv");
    std::fs::write(&design, csv).unwrap();
    let out = dir.path().join("vbm");
    let mut args = vec!["vbm", "--maps"];
    args.extend(maps.iter().map(|p| s(p)));
    args.extend(["--design", s(&design), "--target", "age", "--repeats", "3", "--seed", "5", "--out", s(&out)]);
    let o = vbmkit(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("vbm.json")).unwrap()).unwrap();
    assert_eq!(report["dof"], 3);
    assert!(report["max_abs_t"].as_f64().unwrap() > 0.0);

    let bad: Vec<&str> = args.iter().map(|a| if *a == "age" { "height" } else { a }).collect();
    assert_eq!(code(&vbmkit(&bad)), 1);
}

#[test]
fn run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    phantom("tissue_shells", "16", "3", &dir.path().join("tpl"));
    phantom("tissue_shells", "16", "8", &dir.path().join("s1"));
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[steps]\naffine = false\ngm_masking = false\n\n[template]\ntissue = \"tpl/p0.nii\"\n\n\
         [[subjects]]\nid = \"s1\"\ntissue = \"s1/p0.nii\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = vbmkit(&[
        "run", "--config", s(&cfg), "--set", "nonlinear.iterations=5", "--set", "smoothing.fwhm_mm=4", "--output",
        s(&out), "--jobs", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let steps: Vec<&str> = manifest["steps"].as_array().unwrap().iter().map(|s| s["step"].as_str().unwrap()).collect();
    assert_eq!(steps, ["tissue", "nonlinear", "smoothing"]);
    assert_eq!(manifest["steps"][1]["params"]["iterations"], 5);
    assert_eq!(manifest["steps"][2]["params"]["fwhm_mm"], 4.0);
    assert!(out.join("s1").join("swp1.nii").is_file());

    assert_eq!(code(&vbmkit(&["run", "--config", s(&cfg), "--set", "vbm.fraction=2"])), 1);
    assert_eq!(code(&vbmkit(&["run", "--config", s(&cfg), "--jobs", "0"])), 1);
}
