use std::path::Path;
use std::process::{Command, Output};

use groundflow::eval::MotReport;

fn groundflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundflow"))
        .args(args)
        .env("GROUNDFLOW_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("input.txt");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CLEAN_ONE_AGENT: &str = "\
scene.width = 24
scene.height = 24
scene.num_agents = 1
scene.num_frames = 6
scene.speed_min = 1.0
scene.speed_max = 1.5
scene.miss_rate = 0.0
scene.fp_rate_per_frame = 0.0
scene.jitter_sigma_cells = 0.0
fit.epochs = 100
fit.steps_per_epoch = 2
";

#[test]
fn simulate_fit_track_on_a_clean_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CLEAN_ONE_AGENT);
    let scene = tmp.path().join("scene");
    let o = groundflow(&["simulate", "--config", &cfg, "--out", path(&scene)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.txt",
        "gt_tracks.csv",
        "gt_heatmaps.gfh",
        "gt_offsets.gfh",
        "detections.csv",
    ] {
        assert!(scene.join(f).exists(), "{f}");
    }

    let o = groundflow(&["fit", "--out", path(&scene)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scene.join("offset_report.json")).unwrap())
            .unwrap();
    let l1 = report["l1"].as_f64().unwrap();
    assert!(l1 < 0.5, "l1 {l1}");

    let o = groundflow(&["track", "--out", path(&scene), "--mode", "mussp"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: MotReport =
        serde_json::from_str(&std::fs::read_to_string(scene.join("report_mussp.json")).unwrap())
            .unwrap();
    assert!(r.mota > 0.99, "{r:?}");
    assert!(scene.join("tracks_mussp.csv").exists());
}

#[test]
fn single_frame_scene_has_no_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "scene.num_agents = 3\nscene.num_frames = 1\nscene.width = 16\nscene.height = 16\n",
    );
    let scene = tmp.path().join("scene");
    assert_eq!(
        code(&groundflow(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            path(&scene)
        ])),
        0
    );
    let o = groundflow(&["fit", "--out", path(&scene)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fitted 0 pairs"));
}

#[test]
fn config_and_usage_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "scene.num_agents = 0\n");
    let o = groundflow(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        path(&tmp.path().join("s")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("num_agents"));

    let cfg = write_config(tmp.path(), "scene.num_agents = 2\nscene.num_frames = 3\n");
    let scene = tmp.path().join("scene");
    assert_eq!(
        code(&groundflow(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            path(&scene)
        ])),
        0
    );
    assert_eq!(
        code(&groundflow(&[
            "track",
            "--out",
            path(&scene),
            "--mode",
            "teleport"
        ])),
        2
    );
    assert_eq!(code(&groundflow(&["frobnicate"])), 2);
}

#[test]
fn corrupted_detections_are_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "scene.num_agents = 2\nscene.num_frames = 3\n");
    let scene = tmp.path().join("scene");
    assert_eq!(
        code(&groundflow(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            path(&scene)
        ])),
        0
    );
    std::fs::write(
        scene.join("detections.csv"),
        "time,id,x,y,confidence\n0,-1,abc,1,0.5\n",
    )
    .unwrap();
    let o = groundflow(&["fit", "--out", path(&scene)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("detections.csv"));

    std::fs::write(
        scene.join("detections.csv"),
        "time,id,x,y,confidence\n7,-1,1,1,0.5\n",
    )
    .unwrap();
    assert_eq!(
        code(&groundflow(&[
            "track",
            "--out",
            path(&scene),
            "--mode",
            "nearest"
        ])),
        1
    );
}

#[test]
fn sweep_with_one_stride_has_one_row_per_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "scene.num_agents = 3\nscene.num_frames = 6\nscene.width = 20\nscene.height = 20\nfit.epochs = 5\nfps_strides = 1\n",
    );
    let out = tmp.path().join("sweep");
    let o = groundflow(&["sweep-fps", "--config", &cfg, "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.starts_with("1,")));
    assert!(std::fs::read_to_string(out.join("sweep.svg"))
        .unwrap()
        .starts_with("<svg"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(
        tmp.path(),
        "scene.num_agents = 2\nscene.num_frames = 3\nfps_strides = 1\n",
    );
    let o = groundflow(&[
        "sweep-fps",
        "--config",
        &cfg,
        "--out",
        path(&blocker.join("sub")),
    ]);
    assert_eq!(code(&o), 1);
    let o = groundflow(&["simulate", "--config", &cfg, "--out", path(&blocker)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = groundflow(&[
        "gradcheck",
        "--count",
        "3",
        "--seed",
        "4",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "scene.num_agents = 5\nscene.num_frames = 8\nscene.seed = 42\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        code(&groundflow(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            path(&a)
        ])),
        0
    );
    assert_eq!(
        code(&groundflow(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            path(&b)
        ])),
        0
    );
    for f in [
        "config.txt",
        "gt_tracks.csv",
        "gt_heatmaps.gfh",
        "gt_offsets.gfh",
        "detections.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let seeded = tmp.path().join("c");
    assert_eq!(
        code(&groundflow(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            path(&seeded),
            "--seed",
            "43"
        ])),
        0
    );
    assert_ne!(
        std::fs::read(a.join("detections.csv")).unwrap(),
        std::fs::read(seeded.join("detections.csv")).unwrap()
    );
}
