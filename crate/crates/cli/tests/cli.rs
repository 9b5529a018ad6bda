use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crowdcount::annotations::{save_annotations, synth_lattice};
use crowdcount::cdm::{read_raster, write_raster};
use crowdcount::{DensityGrid, FrameAnnotation, GridSpec, Point};

const SUBCOMMANDS: [&str; 6] = ["gen-density", "loss", "fit", "count-detections", "render", "report"];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdcount"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for sub in SUBCOMMANDS {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let path = golden.join(format!("{sub}.txt"));
        if update {
            std::fs::write(&path, &text).unwrap();
        }
        let expected = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, expected, "help for {sub} drifted; rerun with UPDATE_GOLDEN=1");
    }
}

#[test]
fn gen_density_conserves_mass() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.json");
    let frame = synth_lattice(2, 3, 48.0, 40.0).unwrap();
    save_annotations(&ann, &[frame.clone()]).unwrap();
    let out = dir.path().join("f.cdm");
    let o = run(&["gen-density", "--annotations", s(&ann), "--sigma", "8", "--stride", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = read_raster(&out).unwrap();
    assert_eq!(grid.spec(), &GridSpec::for_frame(&frame, 1.0).unwrap());
    // f32 storage: relative error ~1e-7 per cell
    assert!((grid.total_count() - 6.0).abs() < 6e-2 + 1e-3);
}

#[test]
fn loss_on_empty_frame_with_zero_estimate_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("empty.json");
    let frame = FrameAnnotation::new("empty", 20, 10, vec![]).unwrap();
    save_annotations(&ann, &[frame.clone()]).unwrap();
    let est = dir.path().join("zeros.cdm");
    write_raster(&est, &DensityGrid::zeros(GridSpec::for_frame(&frame, 1.0).unwrap())).unwrap();
    let o = run(&["loss", "--annotations", s(&ann), "--est", s(&est)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["loss"], 0.0);
    assert_eq!(v["expected_counts"].as_array().unwrap().len(), 0);
}

#[test]
fn loss_of_zero_estimate_is_head_count() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.json");
    let frame = synth_lattice(2, 2, 30.0, 20.0).unwrap();
    save_annotations(&ann, &[frame.clone()]).unwrap();
    let est = dir.path().join("z.cdm");
    write_raster(&est, &DensityGrid::zeros(GridSpec::for_frame(&frame, 2.0).unwrap())).unwrap();
    let o = run(&["loss", "--annotations", s(&ann), "--est", s(&est), "--no-background"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["loss"], 4.0);
}

#[test]
fn fit_writes_trace_and_raster() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.json");
    let frame = FrameAnnotation::new("one", 32, 32, vec![Point::new(16.0, 16.0)]).unwrap();
    save_annotations(&ann, &[frame]).unwrap();
    let trace = dir.path().join("t.csv");
    let out = dir.path().join("f.cdm");
    let o = run(&[
        "fit", "--annotations", s(&ann), "--no-background", "--steps", "100", "--trace-every", "50",
        "--trace-out", s(&trace), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,loss,total_count");
    assert_eq!(lines.len(), 4);
    assert!((read_raster(&out).unwrap().total_count() - 1.0).abs() < 1e-3);
}

#[test]
fn fit_rejects_bad_init() {
    let o = run(&["fit", "--annotations", "x.json", "--init", "ones", "--trace-out", "t", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn count_detections_prints_csv() {
    let o = run(&["count-detections", "--detections", s(&fixture("garden_detections.json"))]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "frame_id,count\ngarden_f120,14\n");
    let strict = run(&["count-detections", "--detections", s(&fixture("garden_detections.json")), "--threshold", "0.9"]);
    let text = String::from_utf8(strict.stdout).unwrap();
    let n: usize = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(n < 14);
}

#[test]
fn render_writes_png_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("in.png");
    let img = image::RgbImage::from_pixel(16, 8, image::Rgb([10, 20, 30]));
    img.save(&img_path).unwrap();
    let spec = GridSpec::for_image(16, 8, 4.0).unwrap();
    let mut values = vec![0.0; spec.len()];
    values[0] = 1.0;
    let grid_path = dir.path().join("g.cdm");
    write_raster(&grid_path, &DensityGrid::new(spec, values).unwrap()).unwrap();
    let out = dir.path().join("out.png");
    let o = run(&["render", "--image", s(&img_path), "--density", s(&grid_path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rendered = image::open(&out).unwrap().to_rgb8();
    assert_eq!(rendered.get_pixel(0, 0).0, [255, 20, 30]);
    assert_eq!(rendered.get_pixel(15, 7).0, [0, 20, 30]);

    let small = dir.path().join("small.png");
    image::RgbImage::new(4, 4).save(&small).unwrap();
    let bad = run(&["render", "--image", s(&small), "--density", s(&grid_path), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn report_writes_markdown_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let md = dir.path().join("r.md");
    let json = dir.path().join("r.json");
    let o = run(&["report", "--counts", s(&fixture("table2.csv")), "--out-md", s(&md), "--out-json", s(&json)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&md).unwrap().contains("| Garden | 27 | 14 | 25 | 2 | 11 |"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn exit_codes_distinguish_validation_from_runtime() {
    // unknown flag
    assert_eq!(run(&["report", "--bogus"]).status.code(), Some(2));
    // unknown subcommand
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    // missing file is a run-time failure
    let missing = run(&["report", "--counts", "/nonexistent/counts.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8(missing.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");

    let dir = tempfile::tempdir().unwrap();
    // invariant violation in input data
    let ann = dir.path().join("bad.json");
    std::fs::write(&ann, r#"{"frames":[{"id":"f","width":856,"height":480,"points":[[900,10]]}]}"#).unwrap();
    let o = run(&["gen-density", "--annotations", s(&ann), "--out", s(&dir.path().join("x.cdm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("point 0"));

    // invalid numeric flag
    let good = dir.path().join("good.json");
    save_annotations(&good, &[synth_lattice(1, 1, 10.0, 5.0).unwrap()]).unwrap();
    let o = run(&["gen-density", "--annotations", s(&good), "--sigma", "-1", "--out", s(&dir.path().join("x.cdm"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["count-detections", "--detections", s(&fixture("garden_detections.json")), "--threshold", "1.5"]);
    assert_eq!(o.status.code(), Some(2));

    // multi-frame file without --frame
    let multi = dir.path().join("multi.json");
    save_annotations(&multi, &[synth_lattice(1, 1, 10.0, 5.0).unwrap(), synth_lattice(1, 2, 10.0, 5.0).unwrap()]).unwrap();
    let o = run(&["gen-density", "--annotations", s(&multi), "--out", s(&dir.path().join("x.cdm"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["gen-density", "--annotations", s(&multi), "--frame", "lattice_1x2", "--out", s(&dir.path().join("x.cdm"))]);
    assert!(o.status.success());
}

#[test]
fn subcommands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.json");
    save_annotations(&ann, &[synth_lattice(2, 2, 24.0, 16.0).unwrap()]).unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let raster = dir.path().join(format!("f{i}.cdm"));
        let trace = dir.path().join(format!("t{i}.csv"));
        let o = run(&[
            "fit", "--annotations", s(&ann), "--stride", "2", "--steps", "50",
            "--trace-out", s(&trace), "--out", s(&raster),
        ]);
        assert!(o.status.success());
        outputs.push((std::fs::read(&raster).unwrap(), std::fs::read(&trace).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}
