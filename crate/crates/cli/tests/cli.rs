use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use diffmvr_core::dataio::image::read_png;

const TINY: &str = "clips = 10\np = 16\nframes = 5\nvae_steps = 10\nsteps = 10\nt_max = 6\n";

fn diffmvr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffmvr")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&diffmvr(d, &["gen", "--set", "bogus=1"])), 2);
    assert_eq!(code(&diffmvr(d, &["train", "--guidance", "future"])), 2);
    // No checkpoint configured, or pointing nowhere.
    assert_eq!(code(&diffmvr(d, &["inpaint"])), 2);
    assert_eq!(code(&diffmvr(d, &["inpaint", "--checkpoint", "missing.ckpt"])), 2);
    // A file that is not a checkpoint is a format error.
    fs::write(d.join("junk.ckpt"), b"not a checkpoint at all").unwrap();
    assert_eq!(code(&diffmvr(d, &["inpaint", "--checkpoint", "junk.ckpt"])), 4);
}

#[test]
fn gen_splits_and_refuses_to_clobber() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.cfg"), TINY).unwrap();
    let o = diffmvr(d, &["gen", "--config", "tiny.cfg", "--out", "data"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = |s: &str| fs::read_to_string(d.join("data").join(format!("{s}.tsv"))).unwrap().lines().count();
    assert_eq!((lines("train"), lines("val"), lines("test"), lines("all")), (7, 1, 2, 10));

    let again = diffmvr(d, &["gen", "--config", "tiny.cfg", "--out", "data"]);
    assert_eq!(code(&again), 2);
    let forced = diffmvr(d, &["gen", "--config", "tiny.cfg", "--out", "data", "--force"]);
    assert!(forced.status.success());
}

#[test]
fn pipeline_writes_grids_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.cfg"), TINY).unwrap();
    for args in [
        &["gen", "--out", "data"][..],
        &["pretrain-vae", "--data", "data", "--out", "vae"],
        &["train", "--data", "data", "--vae", "vae/vae.ckpt", "--out", "run"],
        &["inpaint", "--data", "data", "--checkpoint", "run/model.ckpt", "--out", "inp"],
        &["eval", "--checkpoint", "run/model.ckpt", "--inpainted", "inp/inpainted", "--out", "eval"],
    ] {
        let o = Command::new(env!("CARGO_BIN_EXE_diffmvr")).args(args).args(["--config", "tiny.cfg"]).current_dir(d).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read_to_string(d.join("run/loss.csv")).unwrap().lines().count(), 11);

    let grids: Vec<_> = fs::read_dir(d.join("inp/grids")).unwrap().map(|e| e.unwrap().path()).collect();
    assert!(!grids.is_empty());
    for g in grids {
        let img = read_png(&g).unwrap();
        // input, masked, two guides, output, truth; 1-pixel gutters
        assert_eq!(img.shape()[2], 6 * 16 + 5);
        assert_eq!((img.shape()[1] + 1) % 17, 0);
    }

    let csv = fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 2, "{csv}");
    assert!(fs::read_to_string(d.join("eval/metrics.txt")).unwrap().contains("fingerprint"));
}
