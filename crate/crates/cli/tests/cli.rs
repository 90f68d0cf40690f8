use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn vacode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vacode"))
        .args(args)
        .env_remove("VACODE_BACKEND_URL")
        .output()
        .expect("spawn vacode")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_toy(dir: &Path, n: &str) -> String {
    let out = dir.to_string_lossy().into_owned();
    let o = vacode(&["gen-toy", "--out", &out, "--n", n, "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve_toy(hard: bool) -> (Server, String) {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vacode"));
    cmd.args(["serve-toy", "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    if hard {
        cmd.arg("--hard");
    }
    let server = Server(cmd.spawn().unwrap());
    let url = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(10);
    while std::net::TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "serve-toy did not start");
        std::thread::sleep(Duration::from_millis(25));
    }
    (server, url)
}

#[test]
fn unknown_augmentation_kind_is_a_usage_error() {
    let o = vacode(&[
        "augment", "--image", "x.png", "--kind", "blur", "--out", "y.png",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_of_range_top_p_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "1");
    let o = vacode(&[
        "decode",
        "--image",
        &format!("{data}/images/position_0000.png"),
        "--question",
        "Is the square on the left?",
        "--top-p",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("top_p"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = vacode(&[
        "eval",
        "--dataset",
        "/nonexistent/dataset.jsonl",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn augment_writes_a_png_of_the_same_size() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "1");
    let out = dir.path().join("flipped.png");
    let o = vacode(&[
        "augment",
        "--image",
        &format!("{data}/images/color_0000.png"),
        "--kind",
        "flip",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = vacode::ImageBuffer::read_png(&out).unwrap();
    assert_eq!((img.width(), img.height()), (96, 96));
}

#[test]
fn decode_picks_flip_for_a_position_question() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "1");
    let out = dir.path().join("run");
    let o = vacode(&[
        "decode",
        "--backend",
        "in-process:toy-hard",
        "--image",
        &format!("{data}/images/position_0000.png"),
        "--question",
        "Is the square on the left?",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("chosen: flip"), "{text}");
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "decode");
    assert_eq!(run["backend"]["name"], "toy-hard");
    assert_eq!(run["config"]["metric"], "l2");
}

#[test]
fn decode_over_http_matches_in_process() {
    let (_server, url) = serve_toy(true);
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "2");
    let image = format!("{data}/images/position_0001.png");
    let run = |backend: &str| {
        let o = vacode(&[
            "decode",
            "--backend",
            backend,
            "--image",
            &image,
            "--question",
            "Is the square at the top?",
            "--out",
            &dir.path().join("o").to_string_lossy(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_eq!(run(&url), run("in-process:toy-hard"));
}

#[test]
fn unreachable_backend_is_a_runtime_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "1");
    let o = vacode(&[
        "decode",
        "--backend",
        &format!("http://127.0.0.1:{port}"),
        "--image",
        &format!("{data}/images/color_0000.png"),
        "--question",
        "Is the square red?",
        "--out",
        &dir.path().join("o").to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("backend-unavailable"), "{}", stderr(&o));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "1");
    let cfg = dir.path().join("vacode.toml");
    std::fs::write(&cfg, "alpha = 0.5\nmetric = \"emd\"\nmax_len = 4\n").unwrap();
    let out = dir.path().join("o");
    let o = vacode(&[
        "--config",
        &cfg.to_string_lossy(),
        "decode",
        "--image",
        &format!("{data}/images/color_0000.png"),
        "--question",
        "Is the square red?",
        "--alpha",
        "2",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["cd"]["alpha"], 2.0);
    assert_eq!(run["config"]["metric"], "emd");
    assert_eq!(run["config"]["max_len"], 4);
}

#[test]
fn eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "3");
    let out = dir.path().join("o");
    let o = vacode(&[
        "eval",
        "--dataset",
        &format!("{data}/dataset.jsonl"),
        "--method",
        "regular",
        "--backend",
        "in-process:toy",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,seed,category,n,accuracy,accuracy_plus,mme_score\n"));
    assert!(csv.contains("regular,0,color,6,"), "{csv}");
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("| mean (1 seeds) |"), "{md}");
}

#[test]
fn augment_accepts_in_alias_and_kind_params() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_toy(dir.path(), "1");
    let src = format!("{data}/images/color_0000.png");
    let out = dir.path().join("s.png").to_string_lossy().into_owned();
    let ok = vacode(&[
        "augment",
        "--in",
        &src,
        "--kind",
        "sharp",
        "--sharp-strength",
        "1",
        "--out",
        &out,
    ]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let wrong = vacode(&[
        "augment",
        "--in",
        &src,
        "--kind",
        "flip",
        "--crop-min",
        "0.5",
        "--out",
        &out,
    ]);
    assert_eq!(wrong.status.code(), Some(2));
    let invalid = vacode(&[
        "augment",
        "--in",
        &src,
        "--kind",
        "crop",
        "--crop-min",
        "0",
        "--out",
        &out,
    ]);
    assert_eq!(invalid.status.code(), Some(2));
    assert!(
        stderr(&invalid).contains("min_frac"),
        "{}",
        stderr(&invalid)
    );
}
