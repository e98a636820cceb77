use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn bcam(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcam"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn bcam")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_data(dir: &Path, seed: &str) -> Output {
    bcam(
        &[
            "gen-data",
            "--out",
            "d",
            "--num-classes",
            "3",
            "--train-samples",
            "9",
            "--val-samples",
            "3",
            "--test-samples",
            "4",
            "--seed",
            seed,
        ],
        dir,
    )
}

const TINY_TRAIN: &[&str] = &[
    "--epochs",
    "1",
    "--batch-size",
    "3",
    "--heads",
    "2",
    "--backbone-channels",
    "2,4,4",
    "--threshold-points",
    "11",
];

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gradcheck_passes_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcam(&["gradcheck", "--seed", "0"], dir.path());
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max relative error "))
        .expect("error line")
        .parse()
        .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn gen_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&tiny_data(a.path(), "7")), 0);
    assert_eq!(code(&tiny_data(b.path(), "7")), 0);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.contains_key("d/manifest.jsonl"));
    assert!(sa.keys().any(|k| k.ends_with(".ppm")));
    assert_eq!(sa, sb);

    let c = tempfile::tempdir().unwrap();
    tiny_data(c.path(), "8");
    assert_ne!(snapshot(c.path()), sa);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bcam(&["train", "--bogus"], dir.path())), 1);
    assert_eq!(code(&bcam(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&bcam(&[], dir.path())), 1);
    let bad = bcam(&["gen-data", "--out", "d", "--p-confound", "2"], dir.path());
    assert_eq!(code(&bad), 1);
    assert!(!dir.path().join("d").exists());
    let bad_variant = bcam(
        &["train", "--data", "d", "--out", "t", "--variant", "nope"],
        dir.path(),
    );
    assert_eq!(code(&bad_variant), 1);
    assert_eq!(code(&bcam(&["--help"], dir.path())), 0);
    assert_eq!(code(&bcam(&["--version"], dir.path())), 0);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcam(
        &[
            "eval",
            "--data",
            "missing",
            "--checkpoint",
            "x.bin",
            "--out",
            "e",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path(), "1");
    std::fs::write(
        dir.path().join("run.cfg"),
        "# overrides\nepochs = 3\nlambda2 = 0.5\nvariant = ours2\n",
    )
    .unwrap();
    let mut args = vec![
        "train", "--data", "d", "--out", "t", "--config", "run.cfg", "--epochs", "1",
    ];
    args.extend(&TINY_TRAIN[2..]);
    let o = bcam(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("# train\n"), "{text}");
    assert!(text.contains("epochs = 1\n"));
    assert!(text.contains("lambda2 = 0.5\n"));
    assert!(text.contains("variant = ours2\n"));
    let saved = std::fs::read_to_string(dir.path().join("t/train.cfg")).unwrap();
    assert!(text.contains(&saved));
}

#[test]
fn train_eval_sweep_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiny_data(p, "3");
    let mut args = vec!["train", "--data", "d", "--out", "t"];
    args.extend(TINY_TRAIN);
    assert_eq!(code(&bcam(&args, p)), 0);
    let log = std::fs::read_to_string(p.join("t/train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,step,loss,l1,l2,l3,l4,val_piou\n"));
    assert!(p.join("t/best.bin").exists());

    let o = bcam(
        &[
            "eval",
            "--data",
            "d",
            "--checkpoint",
            "t/best.bin",
            "--out",
            "e",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    let classes = std::fs::read_to_string(p.join("e/classes.csv")).unwrap();
    assert!(classes.starts_with("class,piou,pxap,mba30,mba50,mba70,top1_mean\n"));
    let curve = std::fs::read_to_string(p.join("e/iou_curve.csv")).unwrap();
    assert!(curve.starts_with("tau,iou\n"));
    assert_eq!(curve.lines().count(), 202);
    let summary = std::fs::read_to_string(p.join("e/summary.csv")).unwrap();
    assert!(summary.contains("\nmask_miou,"));

    let o = bcam(
        &[
            "sweep",
            "--data",
            "d",
            "--checkpoint",
            "t/best.bin",
            "--out",
            "s",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    let pr = std::fs::read_to_string(p.join("s/pr_curve.csv")).unwrap();
    assert!(pr.starts_with("tau,precision,recall\n"));
    assert!(!p.join("s/summary.csv").exists());

    let o = bcam(
        &[
            "export-maps",
            "--data",
            "d",
            "--checkpoint",
            "t/best.bin",
            "--out",
            "m",
            "--limit",
            "2",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    for suffix in [
        "image.ppm",
        "gt.pgm",
        "so.pgm",
        "sb.pgm",
        "mask.pgm",
        "ao.pgm",
        "ab.pgm",
    ] {
        assert!(p.join(format!("m/00001_{suffix}")).exists(), "{suffix}");
    }
    assert!(!p.join("m/00002_so.pgm").exists());
}

#[test]
fn compare_has_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiny_data(p, "5");
    let mut args = vec!["compare", "--data", "d", "--out", "c", "--jobs", "1"];
    args.extend(TINY_TRAIN);
    let o = bcam(&args, p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(p.join("c/compare.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(
        rows[0],
        "variant,piou,pxap,mba30,mba50,mba70,top1_mean,mask_miou,background_piou,accuracy"
    );
    let names: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(names, ["cam", "ours1", "ours2", "ours3"]);
    assert!(rows[1].contains(",,"), "cam has no mask route: {}", rows[1]);
    assert!(!rows[4].contains(",,"));
}
