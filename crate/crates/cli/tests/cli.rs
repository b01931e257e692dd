use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture() -> PathBuf {
    repo().join("fixtures/synthetic")
}

fn scs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scs"))
        .args(args)
        .output()
        .expect("run scs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn score_matches_fixture_and_is_job_independent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture().join("manifest.json");
    for model in ["model-a", "model-b"] {
        let mut outputs = Vec::new();
        for jobs in ["1", "8"] {
            let out = dir.path().join(format!("{model}-{jobs}.csv"));
            let o = scs(&["score", "--manifest", s(&manifest), "--model", model, "--jobs", jobs, "--out", s(&out)]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            outputs.push(std::fs::read(&out).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
        let expected = std::fs::read(fixture().join(format!("expected/{model}.csv"))).unwrap();
        assert_eq!(outputs[0], expected);
    }
}

#[test]
fn score_to_stdout() {
    let manifest = fixture().join("manifest.json");
    let o = scs(&["score", "--manifest", s(&manifest), "--model", "model-a", "--out", "-"]);
    assert!(o.status.success());
    let expected = std::fs::read(fixture().join("expected/model-a.csv")).unwrap();
    assert_eq!(o.stdout, expected);
}

#[test]
fn compare_reports_json_and_text() {
    let a = fixture().join("expected/model-a.csv");
    let b = fixture().join("expected/model-b.csv");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.json");
    let o = scs(&["compare", "--a", s(&a), "--b", s(&b), "--json", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v, serde_json::from_slice::<Value>(&std::fs::read(&out).unwrap()).unwrap());
    assert_eq!(v["model_a"], "model-a");
    assert_eq!(v["per_prompt"].as_array().unwrap().len(), 5);
    assert_eq!(v["wilcoxon"]["status"], "computed");
    assert!(v["clamp_activation_count"].is_null());

    let o = scs(&["compare", "--a", s(&a), "--b", s(&b)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Wilcoxon signed-rank"), "{text}");

    let o = scs(&["compare", "--a", s(&a), "--b", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    let o = scs(&["compare", "--a", s(&a), "--b", s(&a), "--b-model", "copy", "--json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["wilcoxon"]["status"], "not_applicable");
}

#[test]
fn sensitivity_on_fixture() {
    let manifest = fixture().join("manifest.json");
    let o = scs(&[
        "sensitivity", "--manifest", s(&manifest), "--model", "model-b",
        "--grid", "5..20:5", "--prompts", "3", "--json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["prompt_ids"], serde_json::json!(["p1", "p2", "p3"]));
    assert_eq!(v["repetition_grid"], serde_json::json!([5, 10, 15, 20]));
    let expected = std::fs::read_to_string(fixture().join("expected/model-b.csv")).unwrap();
    let p1: f64 = expected.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(v["scores"][0][3].as_f64().unwrap(), p1);

    let o = scs(&["sensitivity", "--manifest", s(&manifest), "--model", "model-b", "--grid", "10..40:10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient images"));
}

#[test]
fn agreement_from_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("a.jsonl");
    // model-a outscores model-b on every fixture prompt
    let mut lines = String::new();
    for (ann, picks) in [("x", "aaaab"), ("y", "aabbb"), ("z", "aaaaa")] {
        for (i, c) in picks.chars().enumerate() {
            let model = if c == 'a' { "model-a" } else { "model-b" };
            lines.push_str(&format!(
                "{{\"annotator_id\":\"{ann}\",\"prompt_id\":\"p{}\",\"chosen_model_id\":\"{model}\",\"timestamp\":\"2024-01-01T00:00:00Z\"}}\n",
                i + 1
            ));
        }
    }
    std::fs::write(&store, lines).unwrap();
    let o = scs(&[
        "agreement", "--manifest", s(&fixture().join("manifest.json")),
        "--annotations", s(&store),
        "--a", s(&fixture().join("expected/model-a.csv")),
        "--b", s(&fixture().join("expected/model-b.csv")),
        "--json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["per_annotator"]["x"], 0.8);
    assert_eq!(v["per_annotator"]["y"], 0.4);
    assert_eq!(v["aggregate_rate"], 0.8);
}

fn write_png(path: &Path, rgb: [u8; 3]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut img = Vec::new();
    for y in 0..64u32 {
        for x in 0..64u32 {
            img.extend_from_slice(&[rgb[0] ^ (x as u8), rgb[1] ^ (y as u8), rgb[2]]);
        }
    }
    let f = std::fs::File::create(path).unwrap();
    let mut enc = png_encoder(f);
    enc.write_all(&img).unwrap();
}

// minimal uncompressed PNG writer so the test needs no image dependency
struct PngWriter {
    file: std::fs::File,
}

fn png_encoder(file: std::fs::File) -> PngWriter {
    PngWriter { file }
}

impl PngWriter {
    fn write_all(&mut self, rgb: &[u8]) -> std::io::Result<()> {
        use std::io::Write;
        let (w, h) = (64u32, 64u32);
        let crc = |data: &[u8]| {
            let mut c = 0xffff_ffffu32;
            for &b in data {
                c ^= b as u32;
                for _ in 0..8 {
                    c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
                }
            }
            !c
        };
        let chunk = |kind: &[u8], data: &[u8]| {
            let mut out = (data.len() as u32).to_be_bytes().to_vec();
            let mut body = kind.to_vec();
            body.extend_from_slice(data);
            out.extend_from_slice(&body);
            out.extend_from_slice(&crc(&body).to_be_bytes());
            out
        };
        let mut raw = Vec::new();
        for row in rgb.chunks(w as usize * 3) {
            raw.push(0);
            raw.extend_from_slice(row);
        }
        // zlib stream of stored blocks
        let mut z = vec![0x78, 0x01];
        let blocks: Vec<&[u8]> = raw.chunks(65535).collect();
        for (i, b) in blocks.iter().enumerate() {
            z.push(u8::from(i + 1 == blocks.len()));
            z.extend_from_slice(&(b.len() as u16).to_le_bytes());
            z.extend_from_slice(&(!(b.len() as u16)).to_le_bytes());
            z.extend_from_slice(b);
        }
        let (mut a, mut bsum) = (1u32, 0u32);
        for &x in &raw {
            a = (a + x as u32) % 65521;
            bsum = (bsum + a) % 65521;
        }
        z.extend_from_slice(&((bsum << 16) | a).to_be_bytes());
        let mut ihdr = w.to_be_bytes().to_vec();
        ihdr.extend_from_slice(&h.to_be_bytes());
        ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);
        self.file.write_all(b"\x89PNG\r\n\x1a\n")?;
        self.file.write_all(&chunk(b"IHDR", &ihdr))?;
        self.file.write_all(&chunk(b"IDAT", &z))?;
        self.file.write_all(&chunk(b"IEND", &[]))
    }
}

fn image_manifest(root: &Path) -> PathBuf {
    let m = serde_json::json!({
        "experiment_id": "imgs",
        "layout_root": "data",
        "seeds": [1, 2, 3],
        "models": [{"model_id": "m", "generation": {"width": 64, "height": 64,
            "scheduler": "K_EULER", "guidance_scale": 7.5, "num_inference_steps": 20}}],
        "prompts": [{"prompt_id": "same", "text": "t"}, {"prompt_id": "mixed", "text": "t"}]
    });
    let path = root.join("manifest.json");
    std::fs::write(&path, m.to_string()).unwrap();
    path
}

fn tiny_model() -> PathBuf {
    repo().join("crates/onnx/tests/fixtures/tiny_vision_512.onnx")
}

#[test]
fn encode_then_score_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = image_manifest(dir.path());
    let layout = dir.path().join("data/imgs/m");
    for seed in 1..=3u8 {
        write_png(&layout.join(format!("same/{seed}.png")), [10, 20, 30]);
        write_png(&layout.join(format!("mixed/{seed}.png")), [seed * 80, 255 - seed * 60, seed]);
    }
    let o = scs(&["encode", "--manifest", s(&manifest), "--model-file", s(&tiny_model())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let progress = String::from_utf8_lossy(&o.stderr);
    assert!(progress.contains("[2/2] m/mixed: 3 vectors"), "{progress}");
    assert!(layout.join("same.scse").is_file());

    let out = dir.path().join("scores.csv");
    let o = scs(&["score", "--manifest", s(&manifest), "--model", "m", "--cache-only", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let same: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((same - 100.0).abs() < 1e-4, "{csv}");
}

#[test]
fn missing_image_fails_with_gap_list() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = image_manifest(dir.path());
    let layout = dir.path().join("data/imgs/m");
    write_png(&layout.join("same/1.png"), [1, 2, 3]);
    let out = dir.path().join("scores.csv");
    let o = scs(&[
        "score", "--manifest", s(&manifest), "--model", "m",
        "--model-file", s(&tiny_model()), "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for gap in ["same/2.png", "same/3.png", "mixed/1.png"] {
        assert!(err.contains(gap), "{err}");
    }
    assert!(!out.exists());

    let o = scs(&["score", "--manifest", s(&manifest), "--model", "m", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no embedding cache"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(scs(&["score", "--model", "m"]).status.code(), Some(2));
    assert_eq!(scs(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(scs(&["sensitivity", "--model", "m", "--grid", "1..5:1"]).status.code(), Some(2));
    assert_eq!(
        scs(&["score", "--model", "m", "--model-file", "x", "--cache-only"]).status.code(),
        Some(2)
    );
    let help = scs(&["score", "--help"]);
    assert!(help.status.success());
    let text = String::from_utf8(help.stdout).unwrap();
    for flag in ["--manifest", "--model-file", "--cache-only", "--jobs", "--out", "--embedding-dim"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn config_file_supplies_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scs.toml");
    std::fs::write(
        &cfg,
        format!("manifest = {:?}\njobs = 2\n", s(&fixture().join("manifest.json"))),
    )
    .unwrap();
    let o = scs(&["--config", s(&cfg), "score", "--model", "model-a", "--out", "-"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(o.stdout, std::fs::read(fixture().join("expected/model-a.csv")).unwrap());
}
