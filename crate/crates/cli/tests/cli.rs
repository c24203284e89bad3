use std::path::Path;
use std::process::{Command, Output};

fn vmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmr")).args(args).env_remove("VMR_THREADS").output().expect("spawn vmr")
}

fn ok(args: &[&str]) -> String {
    let out = vmr(args);
    assert!(out.status.success(), "vmr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of(args: &[&str]) -> String {
    let out = vmr(args);
    assert!(!out.status.success(), "vmr {args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn mean_line(report: &str) -> Vec<String> {
    report
        .lines()
        .find(|l| l.starts_with("mean "))
        .expect("mean line")
        .split_whitespace()
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn help_lists_every_flag() {
    let help = ok(&["--help"]);
    for flag in [
        "--seed",
        "--frames",
        "--res",
        "--out",
        "--k",
        "--mode",
        "--window",
        "--stride",
        "--iters",
        "--weights",
        "--ablate-invariance",
        "--loss",
        "--threads",
        "VMR_THREADS",
    ] {
        assert!(help.contains(flag), "{flag} missing from --help");
    }
    let sub = ok(&["reconstruct", "--help"]);
    assert!(sub.contains("--ablate-invariance") && sub.contains("--iters"));
}

#[test]
fn synth_writes_a_deterministic_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--seed", "7", "--frames", "60", "--res", "64", "--out", p(&a)]);
    ok(&["synth", "--seed", "7", "--frames", "60", "--res", "64", "--out", p(&b)]);
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("frame ")).count(), 60);
    for sub in ["frames", "masks", "parts", "gt"] {
        assert!(a.join(sub).is_dir(), "{sub}/ missing");
    }
    assert!(a.join("keypoints.txt").is_file());
    assert_eq!(snapshot(&a), snapshot(&b));

    let c = tmp.path().join("c");
    ok(&["synth", "--seed", "8", "--frames", "3", "--res", "16", "--out", p(&c)]);
    assert_ne!(std::fs::read(a.join("frames/0000.ppm")).unwrap(), std::fs::read(c.join("frames/0000.ppm")).unwrap());
}

#[test]
fn synth_rejects_zero_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let err = stderr_of(&["synth", "--frames", "0", "--out", p(tmp.path())]);
    assert!(err.contains("--frames"), "{err}");
}

#[test]
fn bases_clusters_identical_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("meshes");
    std::fs::create_dir(&input).unwrap();
    let tri = "f 1 2 3\nf 1 3 4\nf 1 4 2\nf 2 4 3\n";
    let a = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n";
    let b = "v 0 0 0\nv 2 0 0\nv 0 2 0\nv 0 0 2\n";
    for (name, v) in [("m0.obj", a), ("m1.obj", b), ("m2.obj", a), ("m3.obj", b)] {
        std::fs::write(input.join(name), format!("{v}{tri}")).unwrap();
    }
    let out = tmp.path().join("bases");
    ok(&["bases", "--input", p(&input), "--k", "2", "--out", p(&out)]);
    let manifest = std::fs::read_to_string(out.join("bases.txt")).unwrap();
    assert!(manifest.starts_with("num_bases 2\ntopology_hash "));
    let mut centres: Vec<String> = (0..2)
        .map(|k| {
            let obj = std::fs::read_to_string(out.join(format!("basis_{k:03}.obj"))).unwrap();
            obj.lines().filter(|l| l.starts_with("v ")).collect::<Vec<_>>().join("\n")
        })
        .collect();
    centres.sort();
    assert_eq!(centres, vec![a.trim_end().to_string(), b.trim_end().to_string()]);

    stderr_of(&["bases", "--input", p(&input), "--k", "5", "--out", p(&out)]);
    std::fs::write(input.join("m4.obj"), format!("{a}f 1 2 3\n")).unwrap();
    let err = stderr_of(&["bases", "--input", p(&input), "--k", "2", "--out", p(&out)]);
    assert!(err.contains("m4.obj"), "{err}");
}

#[test]
fn reconstruct_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--seed", "1", "--frames", "1", "--res", "24", "--out", p(&data)]);
    let manifest = data.join("manifest.txt");
    let out = tmp.path().join("out");
    let printed = ok(&["--threads", "1", "reconstruct", "--problem", p(&manifest), "--out", p(&out), "--iters", "6"]);
    let objs = std::fs::read_dir(out.join("meshes")).unwrap().count();
    assert_eq!(objs, 1);
    assert!(out.join("textures/0000.ppm").is_file());
    let cams = std::fs::read_to_string(out.join("cameras.txt")).unwrap();
    assert_eq!(cams.lines().count(), 1);
    assert_eq!(cams.split_whitespace().count(), 7);

    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(printed, report);
    let evaluated = ok(&["eval", "--pred", p(&out), "--gt", p(&data.join("gt"))]);
    assert_eq!(evaluated, report);

    let ablated = tmp.path().join("ablated");
    ok(&[
        "reconstruct",
        "--problem",
        p(&manifest),
        "--out",
        p(&ablated),
        "--iters",
        "2",
        "--ablate-invariance",
        "--mode",
        "selfsup",
    ]);
    assert!(ablated.join("report.txt").is_file());
}

#[test]
fn reconstruct_reports_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--frames", "2", "--res", "16", "--out", p(&data)]);
    std::fs::remove_file(data.join("parts/0001.pgm")).unwrap();
    let err = stderr_of(&["reconstruct", "--problem", p(&data.join("manifest.txt")), "--out", p(tmp.path())]);
    assert!(err.contains("0001.pgm"), "{err}");
    let err = stderr_of(&["reconstruct", "--problem", p(&tmp.path().join("nope.txt")), "--out", p(tmp.path())]);
    assert!(err.contains("nope.txt"), "{err}");
}

#[test]
fn eval_of_truth_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--seed", "3", "--frames", "4", "--res", "32", "--out", p(&data)]);
    let gt = data.join("gt");
    let report = ok(&["eval", "--pred", p(&gt), "--gt", p(&gt)]);
    assert_eq!(mean_line(&report), ["1.000000", "1.000000", "1.000000", "0.000000"]);

    let broken = tmp.path().join("broken");
    std::fs::create_dir_all(broken.join("meshes")).unwrap();
    std::fs::copy(gt.join("cameras.txt"), broken.join("cameras.txt")).unwrap();
    let err = stderr_of(&["eval", "--pred", p(&broken), "--gt", p(&gt)]);
    assert!(err.contains("0000.obj"), "{err}");
}

#[test]
fn eval_means_are_arithmetic_means() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--seed", "4", "--frames", "3", "--res", "24", "--out", p(&data)]);
    let out = tmp.path().join("out");
    ok(&["reconstruct", "--problem", p(&data.join("manifest.txt")), "--out", p(&out), "--iters", "3"]);
    let report = ok(&["eval", "--pred", p(&out), "--gt", p(&data.join("gt"))]);
    let rows: Vec<Vec<f64>> = report
        .lines()
        .filter(|l| l.starts_with("frame "))
        .map(|l| l.split_whitespace().skip(2).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (col, mean) in mean_line(&report).iter().enumerate() {
        let expect = rows.iter().map(|r| r[col]).sum::<f64>() / 3.0;
        assert!((mean.parse::<f64>().unwrap() - expect).abs() <= 2e-6, "column {col}");
    }

    let fewer = tmp.path().join("fewer");
    ok(&["synth", "--seed", "4", "--frames", "2", "--res", "24", "--out", p(&fewer)]);
    stderr_of(&["eval", "--pred", p(&out), "--gt", p(&fewer.join("gt"))]);
}

#[test]
fn gradcheck_table() {
    let single = ok(&["gradcheck", "--loss", "arap"]);
    let rows: Vec<&str> = single.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("arap") && rows[0].ends_with("pass"), "{single}");

    let all = ok(&["gradcheck"]);
    assert_eq!(all.lines().count(), 10);
    assert!(all.lines().skip(1).all(|l| l.ends_with("pass")), "{all}");

    let err = stderr_of(&["gradcheck", "--loss", "lpips"]);
    assert!(err.contains("lpips"), "{err}");
}

#[test]
fn thread_variable_overrides_the_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_vmr"))
        .args(["--threads", "1", "gradcheck", "--loss", "keypoint", "--seeds", "1"])
        .env("VMR_THREADS", "many")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("VMR_THREADS"));
}
