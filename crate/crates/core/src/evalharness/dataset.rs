use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::backend::Question;
use crate::imgaug::ImageBuffer;
use crate::rng::SeededRng;
use crate::toyvlm::{render, Cell, SceneSpec, Side, ToyColor};

/// One line of a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    image: String,
    question: String,
    label: String,
    category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub image_path: PathBuf,
    pub question: String,
    pub label: String,
    pub category: String,
    pub options: Vec<(String, String)>,
    pub pair_id: Option<String>,
}

impl EvalSample {
    pub fn to_question(&self) -> Question {
        Question::with_options(self.question.clone(), self.options.clone())
    }

    pub fn is_mcq(&self) -> bool {
        !self.options.is_empty()
    }

    fn check(&self) -> Result<(), String> {
        if self.options.is_empty() {
            if !["yes", "no"].contains(&self.label.to_ascii_lowercase().as_str()) {
                return Err(format!("label must be Yes or No, got {:?}", self.label));
            }
        } else if !self
            .options
            .iter()
            .any(|(letter, _)| letter.eq_ignore_ascii_case(&self.label))
        {
            return Err(format!(
                "label {:?} is not one of the option letters",
                self.label
            ));
        }
        Ok(())
    }
}

/// Read a JSONL dataset. Image paths are resolved relative to the file.
pub fn load_dataset(path: &Path) -> Result<Vec<EvalSample>, EvalError> {
    let text =
        fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    let mut line_of_id: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| EvalError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let image_path = base.join(&line.image);
        if !image_path.is_file() {
            return Err(EvalError::MissingImage(image_path));
        }
        let sample = EvalSample {
            id: line.id,
            image_path,
            question: line.question,
            label: line.label,
            category: line.category,
            options: line.options.unwrap_or_default(),
            pair_id: line.pair_id,
        };
        sample.check().map_err(|message| EvalError::Parse {
            line: lineno,
            message,
        })?;
        if let Some(prev) = line_of_id.insert(sample.id.clone(), lineno) {
            return Err(EvalError::Parse {
                line: lineno,
                message: format!("duplicate id {:?} (first on line {prev})", sample.id),
            });
        }
        samples.push(sample);
    }
    let mut pairs: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &samples {
        if let Some(p) = &s.pair_id {
            *pairs.entry(p).or_default() += 1;
        }
    }
    if let Some((p, n)) = pairs.into_iter().find(|(_, n)| *n != 2) {
        return Err(EvalError::Invalid(format!(
            "pair_id {p:?} is shared by {n} samples, expected 2"
        )));
    }
    Ok(samples)
}

/// Decode every sample's image, reading each distinct file once.
pub fn load_images(samples: &[EvalSample]) -> Result<Vec<ImageBuffer>, EvalError> {
    let mut cache: HashMap<&Path, ImageBuffer> = HashMap::new();
    samples
        .iter()
        .map(|s| {
            if let Some(img) = cache.get(s.image_path.as_path()) {
                return Ok(img.clone());
            }
            let img = ImageBuffer::read_png(&s.image_path)
                .map_err(|e| EvalError::Io(format!("{}: {e}", s.image_path.display())))?;
            cache.insert(&s.image_path, img.clone());
            Ok(img)
        })
        .collect()
}

fn write_jsonl(path: &Path, samples: &[EvalSample], base: &Path) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", path.display()));
    let mut out = Vec::new();
    for s in samples {
        let rel = s.image_path.strip_prefix(base).unwrap_or(&s.image_path);
        let line = Line {
            id: s.id.clone(),
            image: rel.to_string_lossy().replace('\\', "/"),
            question: s.question.clone(),
            label: s.label.clone(),
            category: s.category.clone(),
            options: (!s.options.is_empty()).then(|| s.options.clone()),
            pair_id: s.pair_id.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| EvalError::Io(e.to_string()))?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(io)
}

fn save_image(dir: &Path, name: &str, spec: &SceneSpec) -> Result<PathBuf, EvalError> {
    let path = dir.join("images").join(name);
    render(spec)
        .write_png(&path)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

const CORNERS: [Cell; 4] = [
    Cell { row: 0, col: 0 },
    Cell { row: 0, col: 2 },
    Cell { row: 2, col: 0 },
    Cell { row: 2, col: 2 },
];

pub const TOY_CATEGORIES: [&str; 3] = ["color", "existence", "position"];

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_string()
}

/// Scene and question pair for one toy image.
fn toy_item(category: &str, rng: &mut SeededRng) -> (SceneSpec, [(String, bool); 2]) {
    match category {
        "color" => {
            let color = ToyColor::ALL[rng.int_inclusive(0, 3)];
            let cell = Cell::new(rng.int_inclusive(0, 2), rng.int_inclusive(0, 2));
            let spec = SceneSpec::new(color, cell, rng.int_inclusive(22, 26));
            let ask = |c: ToyColor| format!("Is the square {c}?");
            (spec, [(ask(color), true), (ask(color.inverted()), false)])
        }
        "existence" => {
            let cell = CORNERS[rng.int_inclusive(0, 3)];
            let color = ToyColor::ALL[rng.int_inclusive(0, 3)];
            let spec = SceneSpec::new(color, cell, 8).outer();
            (
                spec,
                [
                    ("Is there a square in the image?".into(), true),
                    ("Is the image empty?".into(), false),
                ],
            )
        }
        _ => {
            let cell = CORNERS[rng.int_inclusive(0, 3)];
            let color = ToyColor::ALL[rng.int_inclusive(0, 3)];
            let spec = SceneSpec::new(color, cell, rng.int_inclusive(18, 22));
            let side = if rng.uniform() < 0.5 {
                if cell.col == 0 {
                    Side::Left
                } else {
                    Side::Right
                }
            } else if cell.row == 0 {
                Side::Top
            } else {
                Side::Bottom
            };
            (
                spec,
                [(side.question(), true), (side.opposite().question(), false)],
            )
        }
    }
}

/// Write `n_per_category` paired yes/no images for each toy category under
/// `dir` (`dataset.jsonl` plus `images/`). Each image gets one question whose
/// answer is Yes and one whose answer is No.
pub fn generate_toy_dataset(
    dir: &Path,
    n_per_category: usize,
    seed: u64,
) -> Result<Vec<EvalSample>, EvalError> {
    if n_per_category == 0 {
        return Err(EvalError::Invalid("n_per_category must be >= 1".into()));
    }
    fs::create_dir_all(dir.join("images"))
        .map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut rng = SeededRng::new(seed);
    let mut samples = Vec::new();
    for category in TOY_CATEGORIES {
        for k in 0..n_per_category {
            let (spec, questions) = toy_item(category, &mut rng);
            let stem = format!("{category}_{k:04}");
            let image_path = save_image(dir, &format!("{stem}.png"), &spec)?;
            for (j, (question, truth)) in questions.into_iter().enumerate() {
                samples.push(EvalSample {
                    id: format!("{stem}_q{j}"),
                    image_path: image_path.clone(),
                    question,
                    label: yes_no(truth),
                    category: category.to_string(),
                    options: Vec::new(),
                    pair_id: Some(stem.clone()),
                });
            }
        }
    }
    write_jsonl(&dir.join("dataset.jsonl"), &samples, dir)?;
    Ok(samples)
}

/// Two-option "Where is the square?" questions (`mcq.jsonl`) for CircularEval.
pub fn generate_toy_mcq(dir: &Path, n: usize, seed: u64) -> Result<Vec<EvalSample>, EvalError> {
    if n == 0 {
        return Err(EvalError::Invalid("n must be >= 1".into()));
    }
    fs::create_dir_all(dir.join("images"))
        .map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut rng = SeededRng::new(seed);
    let mut samples = Vec::new();
    for k in 0..n {
        let cell = CORNERS[rng.int_inclusive(0, 3)];
        let color = ToyColor::ALL[rng.int_inclusive(0, 3)];
        let spec = SceneSpec::new(color, cell, rng.int_inclusive(18, 22));
        let stem = format!("mcq_{k:04}");
        let image_path = save_image(dir, &format!("{stem}.png"), &spec)?;
        let mut texts = ["left", "right"];
        if rng.uniform() < 0.5 {
            texts.swap(0, 1);
        }
        let truth = if cell.col == 0 { "left" } else { "right" };
        let options: Vec<(String, String)> = ["A", "B"]
            .iter()
            .zip(texts)
            .map(|(l, t)| (l.to_string(), t.to_string()))
            .collect();
        let label = options
            .iter()
            .find(|(_, t)| t == truth)
            .map(|(l, _)| l.clone())
            .expect("truth is an option");
        samples.push(EvalSample {
            id: stem,
            image_path,
            question: "Where is the square?".into(),
            label,
            category: "position".into(),
            options,
            pair_id: None,
        });
    }
    write_jsonl(&dir.join("mcq.jsonl"), &samples, dir)?;
    Ok(samples)
}
