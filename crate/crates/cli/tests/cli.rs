use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
image_size = 16
n_blocks = 2
base_channels = 2
embedding_dim = 16
subjects_per_domain = 5
per_class = 2
max_epochs = 1
seeds = 0,1
";

fn glance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glance")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(glance(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(glance(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(glance(&["--help"]).status.code(), Some(0));
    assert_eq!(glance(&["--version"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "bogus_key = 3\n").unwrap();
    let o = glance(&["--config", s(&bad), "gen-data", "--out", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
    let missing = glance(&["eval", "--checkpoint", s(&dir.path().join("nope.glhg"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn gen_train_eval_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let data = dir.path().join("data");
    let o = glance(&["--config", s(&cfg), "gen-data", "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("config.cfg").is_file());

    let run = dir.path().join("run");
    let o = glance(&["--config", s(&cfg), "train", "--data", s(&data), "--out", s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in 0..2 {
        assert!(run.join(format!("seed{seed}/model.glhg")).is_file());
        let history = std::fs::read_to_string(run.join(format!("seed{seed}/history.tsv"))).unwrap();
        assert!(history.starts_with("phase\tepoch\ttrain_loss\tval_loss\tbest"));
    }
    let report = std::fs::read_to_string(run.join("report.tsv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("# regime = standard")));
    assert!(report.lines().any(|l| l.starts_with("experiment\tregime")));
    let macros = report.lines().filter(|l| l.contains("\tmacro\t")).count();
    assert_eq!(macros, 4, "two seeds plus mean and sd");

    let ck = run.join("seed0/model.glhg");
    let o = glance(&["--config", s(&cfg), "eval", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&dir.path().join("eval.tsv"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("macro AUC"));

    let other = dir.path().join("other.cfg");
    std::fs::write(&other, format!("{TINY}lr = 0.01\n")).unwrap();
    let o = glance(&["--config", s(&other), "eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
    let o = glance(&["--config", s(&other), "eval", "--checkpoint", s(&ck), "--data", s(&data), "--force"]);
    assert!(o.status.success());

    let o = glance(&["compare", s(&run), s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("p = 0.500000"));
}

#[test]
fn sweep_writes_one_row_set_per_fraction_and_regime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("sweep");
    let o = glance(&["--config", s(&cfg), "--seed", "0", "sweep", "--fractions", "0.5,0.25", "--regimes", "mixed,multidomain", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.tsv")).unwrap();
    for regime in ["mixed", "multidomain"] {
        for fraction in ["0.5", "0.25"] {
            let rows = report
                .lines()
                .filter(|l| {
                    let c: Vec<&str> = l.split('\t').collect();
                    c.len() > 5 && c[1] == regime && c[2] == fraction && c[3] == "0" && c[5] == "macro"
                })
                .count();
            assert_eq!(rows, 2, "{regime} at {fraction}: d1 and d2 test rows");
        }
    }
}

#[test]
fn ablate_runs_each_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("ablate");
    let o = glance(&["--config", s(&cfg), "--seed", "0", "ablate", "--variants", "full,no_rec,mse_rec", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.tsv")).unwrap();
    for label in ["standard", "standard/no_rec", "standard/mse_rec"] {
        assert!(report.lines().any(|l| l.split('\t').nth(1) == Some(label)), "{label}");
    }
    let o = glance(&["--config", s(&cfg), "ablate", "--variants", "full,sideways", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}
