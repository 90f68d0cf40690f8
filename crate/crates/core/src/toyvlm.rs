//! A deterministic synthetic vision-language model.
//!
//! Scenes are 96x96 white canvases with at most one solid square on a 3x3
//! grid. The model reads the square's color, cell and presence back from the
//! pixels it is given and scores a fixed 32-word vocabulary:
//!
//! * every token starts at [`BASE_LOGIT`];
//! * the token answering the question from the pixels gets [`ANSWER_BONUS`];
//! * a per-template "prior" token gets [`PRIOR_BONUS`] ([`HARD_PRIOR_BONUS`]
//!   in hard mode) no matter what the image shows;
//! * once the prefix is non-empty the answer has been given and only
//!   `<eos>` is boosted (by [`ANSWER_BONUS`]).
//!
//! Because the answer term is pixel-faithful, an augmentation that destroys
//! the attribute a question depends on moves the answer, and one that keeps
//! it leaves the logits bit-identical.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendDescriptor, BackendError, LogitVector, TokenSequence};
use crate::imgaug::ImageBuffer;

pub const CANVAS: usize = 96;
pub const GRID: usize = 3;
pub const CELL: usize = CANVAS / GRID;
pub const VOCAB_SIZE: usize = 32;

pub const BASE_LOGIT: f64 = -4.0;
pub const ANSWER_BONUS: f64 = 8.0;
pub const PRIOR_BONUS: f64 = 5.0;
pub const HARD_PRIOR_BONUS: f64 = 9.0;

/// Max per-channel deviation from the background that marks an object pixel.
pub const OBJECT_THRESHOLD: u8 = 40;

pub const BACKGROUND: [u8; 3] = [255, 255, 255];

/// Word-level vocabulary. Index 0 is `<eos>`; 17..32 are padding.
pub const VOCAB: [&str; VOCAB_SIZE] = [
    "<eos>", "Yes", "No", "red", "green", "blue", "yellow", "left", "right", "top", "bottom",
    "center", "A", "B", "C", "D", "<pad16>", "<pad17>", "<pad18>", "<pad19>", "<pad20>", "<pad21>",
    "<pad22>", "<pad23>", "<pad24>", "<pad25>", "<pad26>", "<pad27>", "<pad28>", "<pad29>",
    "<pad30>", "<pad31>",
];

pub const EOS: u32 = 0;

pub fn token_id(word: &str) -> Option<u32> {
    VOCAB
        .iter()
        .position(|w| *w == word)
        .or_else(|| VOCAB.iter().position(|w| w.eq_ignore_ascii_case(word)))
        .map(|i| i as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyColor {
    Red,
    Green,
    Blue,
    Yellow,
}

impl ToyColor {
    pub const ALL: [ToyColor; 4] = [
        ToyColor::Red,
        ToyColor::Green,
        ToyColor::Blue,
        ToyColor::Yellow,
    ];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            ToyColor::Red => [220, 30, 30],
            ToyColor::Green => [30, 180, 30],
            ToyColor::Blue => [40, 60, 220],
            ToyColor::Yellow => [230, 210, 30],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ToyColor::Red => "red",
            ToyColor::Green => "green",
            ToyColor::Blue => "blue",
            ToyColor::Yellow => "yellow",
        }
    }

    /// Palette color nearest to `rgb` (squared RGB distance, first wins ties).
    pub fn nearest(rgb: [f64; 3]) -> ToyColor {
        let dist = |c: ToyColor| {
            c.rgb()
                .iter()
                .zip(rgb)
                .map(|(a, b)| (f64::from(*a) - b).powi(2))
                .sum::<f64>()
        };
        let mut best = ToyColor::ALL[0];
        for c in ToyColor::ALL.into_iter().skip(1) {
            if dist(c) < dist(best) {
                best = c;
            }
        }
        best
    }

    /// The palette color an inverted square of this color reads as.
    pub fn inverted(self) -> ToyColor {
        let inv = self.rgb().map(|v| f64::from(255 - v));
        ToyColor::nearest(inv)
    }
}

impl fmt::Display for ToyColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyColor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToyColor::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown color {s:?}"))
    }
}

/// Grid cell `(row, col)`, each in `0..3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const CENTER: Cell = Cell { row: 1, col: 1 };

    pub fn new(row: usize, col: usize) -> Self {
        assert!(row < GRID && col < GRID, "cell out of range");
        Self { row, col }
    }

    pub fn is_corner(self) -> bool {
        self.row != 1 && self.col != 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Square centered in its cell.
    Centered,
    /// Square pushed 1px from the canvas border along every axis where the
    /// cell touches it (centered along the others).
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub object_color: ToyColor,
    pub object_cell: Cell,
    pub object_present: bool,
    pub square_size: usize,
    pub placement: Placement,
}

impl SceneSpec {
    pub fn new(color: ToyColor, cell: Cell, square_size: usize) -> Self {
        Self {
            object_color: color,
            object_cell: cell,
            object_present: true,
            square_size,
            placement: Placement::Centered,
        }
    }

    pub fn empty() -> Self {
        Self {
            object_color: ToyColor::Red,
            object_cell: Cell::CENTER,
            object_present: false,
            square_size: 0,
            placement: Placement::Centered,
        }
    }

    pub fn outer(mut self) -> Self {
        self.placement = Placement::Outer;
        self
    }

    /// Top-left corner of the square along one axis.
    fn origin(&self, index: usize) -> usize {
        let s = self.square_size;
        let cell_start = index * CELL;
        let centered = cell_start + (CELL - s) / 2;
        match (self.placement, index) {
            (Placement::Outer, 0) => 1.min(CELL - s),
            (Placement::Outer, i) if i == GRID - 1 => CANVAS - s - 1.min(CELL - s),
            _ => centered,
        }
    }
}

/// Render a scene: white canvas, one solid square when present.
pub fn render(spec: &SceneSpec) -> ImageBuffer {
    let mut img = ImageBuffer::filled(CANVAS, CANVAS, BACKGROUND);
    if !spec.object_present || spec.square_size == 0 {
        return img;
    }
    let s = spec.square_size.min(CELL);
    let spec = SceneSpec {
        square_size: s,
        ..*spec
    };
    let x0 = spec.origin(spec.object_cell.col);
    let y0 = spec.origin(spec.object_cell.row);
    let rgb = spec.object_color.rgb();
    for y in y0..y0 + s {
        for x in x0..x0 + s {
            img.set_pixel(x, y, rgb);
        }
    }
    img
}

/// What the model "sees" in an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub color: ToyColor,
    pub cell: Cell,
    pub pixels: usize,
}

fn median(mut v: Vec<u8>) -> u8 {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Find the object: pixels deviating from the border-median background by
/// more than [`OBJECT_THRESHOLD`] in some channel. The cell is taken from the
/// centroid and the color from the mean object RGB.
pub fn detect(img: &ImageBuffer) -> Option<Detection> {
    let (w, h) = (img.width(), img.height());
    let mut border: [Vec<u8>; 3] = Default::default();
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                for (c, v) in img.pixel(x, y).into_iter().enumerate() {
                    border[c].push(v);
                }
            }
        }
    }
    let bg = border.map(median);

    let (mut n, mut sx, mut sy) = (0usize, 0.0f64, 0.0f64);
    let mut sum = [0.0f64; 3];
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            let dev = p
                .iter()
                .zip(bg)
                .map(|(a, b)| a.abs_diff(b))
                .max()
                .unwrap_or(0);
            if dev > OBJECT_THRESHOLD {
                n += 1;
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                for c in 0..3 {
                    sum[c] += f64::from(p[c]);
                }
            }
        }
    }
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let cell_of = |centroid: f64, extent: usize| {
        ((centroid * GRID as f64 / extent as f64) as usize).min(GRID - 1)
    };
    Some(Detection {
        color: ToyColor::nearest(sum.map(|s| s / nf)),
        cell: Cell {
            row: cell_of(sy / nf, h),
            col: cell_of(sx / nf, w),
        },
        pixels: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyMode {
    Normal,
    Hard,
}

/// Side referenced by a yes/no position question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Top => "top",
            Side::Bottom => "bottom",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            Side::Top => Side::Bottom,
            Side::Bottom => Side::Top,
        }
    }

    pub fn contains(self, cell: Cell) -> bool {
        match self {
            Side::Left => cell.col == 0,
            Side::Right => cell.col == GRID - 1,
            Side::Top => cell.row == 0,
            Side::Bottom => cell.row == GRID - 1,
        }
    }

    /// Question text for this side.
    pub fn question(self) -> String {
        match self {
            Side::Left | Side::Right => format!("Is the square on the {}?", self.name()),
            Side::Top | Side::Bottom => format!("Is the square at the {}?", self.name()),
        }
    }
}

/// A parsed toy prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    IsColor(ToyColor),
    Exists,
    IsEmpty,
    IsAt(Side),
    WhatColor,
    Where,
    Choice {
        stem: Box<Template>,
        options: Vec<(String, String)>,
    },
}

type Pattern = (Regex, fn(&regex::Captures) -> Template);

fn patterns() -> &'static [Pattern] {
    static PATTERNS: OnceLock<Vec<Pattern>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("static regex");
        vec![
            (re(r"^Is the square (red|green|blue|yellow)\?$"), |c| {
                Template::IsColor(c[1].parse().expect("matched color"))
            }),
            (re(r"^Is there a square in the image\?$"), |_| {
                Template::Exists
            }),
            (re(r"^Is the image empty\?$"), |_| Template::IsEmpty),
            (
                re(r"^Is the square (?:on|at) the (left|right|top|bottom)\?$"),
                |c| {
                    Template::IsAt(match &c[1] {
                        "left" => Side::Left,
                        "right" => Side::Right,
                        "top" => Side::Top,
                        _ => Side::Bottom,
                    })
                },
            ),
            (re(r"^What color is the square\?$"), |_| Template::WhatColor),
            (re(r"^Where is the square\?$"), |_| Template::Where),
        ]
    })
}

fn option_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([A-D])\. (.+)$").expect("static regex"))
}

impl Template {
    /// Parse the first line as the question and `X. text` lines as options.
    /// Any other trailing lines (instructions) are ignored.
    pub fn parse(prompt: &str) -> Result<Template, BackendError> {
        let mut lines = prompt.lines();
        let stem_text = lines.next().unwrap_or("").trim();
        let stem = patterns()
            .iter()
            .find_map(|(re, build)| re.captures(stem_text).map(|c| build(&c)))
            .ok_or_else(|| BackendError::UnsupportedPrompt(stem_text.to_string()))?;
        let options: Vec<(String, String)> = lines
            .filter_map(|l| option_line().captures(l.trim()))
            .map(|c| (c[1].to_string(), c[2].trim().to_string()))
            .collect();
        if options.is_empty() {
            return Ok(stem);
        }
        match stem {
            Template::WhatColor | Template::Where => Ok(Template::Choice {
                stem: Box::new(stem),
                options,
            }),
            _ => Err(BackendError::UnsupportedPrompt(format!(
                "options given for yes/no question: {stem_text}"
            ))),
        }
    }

    fn prior_word(&self) -> &'static str {
        match self {
            Template::IsColor(_) | Template::Exists | Template::IsEmpty | Template::IsAt(_) => {
                "Yes"
            }
            Template::WhatColor => "yellow",
            Template::Where => "left",
            Template::Choice { .. } => "A",
        }
    }

    /// The answer word implied by `seen`, if any.
    pub fn answer(&self, seen: Option<&Detection>) -> Option<String> {
        let yes_no = |b: bool| Some(if b { "Yes" } else { "No" }.to_string());
        match self {
            Template::IsColor(c) => yes_no(seen.is_some_and(|d| d.color == *c)),
            Template::Exists => yes_no(seen.is_some()),
            Template::IsEmpty => yes_no(seen.is_none()),
            Template::IsAt(side) => yes_no(seen.is_some_and(|d| side.contains(d.cell))),
            Template::WhatColor => seen.map(|d| d.color.name().to_string()),
            Template::Where => seen.map(|d| where_word(d.cell).to_string()),
            Template::Choice { stem, options } => {
                let word = stem.answer(seen)?;
                options
                    .iter()
                    .find(|(_, text)| text.eq_ignore_ascii_case(&word))
                    .map(|(l, _)| l.clone())
            }
        }
    }
}

fn where_word(cell: Cell) -> &'static str {
    match (cell.row, cell.col) {
        (_, 0) => "left",
        (_, 2) => "right",
        (0, _) => "top",
        (2, _) => "bottom",
        _ => "center",
    }
}

#[derive(Debug, Clone)]
pub struct ToyVlm {
    mode: ToyMode,
}

impl ToyVlm {
    pub fn new(mode: ToyMode) -> Self {
        Self { mode }
    }

    pub fn mode(&self) -> ToyMode {
        self.mode
    }

    pub fn prior_bonus(&self) -> f64 {
        match self.mode {
            ToyMode::Normal => PRIOR_BONUS,
            ToyMode::Hard => HARD_PRIOR_BONUS,
        }
    }

    pub fn toy_next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &TokenSequence,
    ) -> Result<LogitVector, BackendError> {
        prefix.validate(VOCAB_SIZE)?;
        let template = Template::parse(prompt)?;
        let mut logits = vec![BASE_LOGIT; VOCAB_SIZE];
        if !prefix.is_empty() {
            logits[EOS as usize] += ANSWER_BONUS;
            return LogitVector::new(logits);
        }
        let seen = detect(image);
        if let Some(word) = template.answer(seen.as_ref()) {
            let id = token_id(&word).expect("answers are vocabulary words");
            logits[id as usize] += ANSWER_BONUS;
        }
        let prior = token_id(template.prior_word()).expect("prior is a vocabulary word");
        logits[prior as usize] += self.prior_bonus();
        LogitVector::new(logits)
    }
}

impl Backend for ToyVlm {
    fn info(&self) -> Result<BackendDescriptor, BackendError> {
        let (name, endpoint) = match self.mode {
            ToyMode::Normal => ("toy", "in-process:toy"),
            ToyMode::Hard => ("toy-hard", "in-process:toy-hard"),
        };
        Ok(BackendDescriptor {
            name: name.into(),
            vocab_size: VOCAB_SIZE,
            eos_id: Some(EOS),
            endpoint: endpoint.into(),
        })
    }

    fn next_logits(
        &self,
        image: &ImageBuffer,
        prompt: &str,
        prefix: &TokenSequence,
    ) -> Result<LogitVector, BackendError> {
        self.toy_next_logits(image, prompt, prefix)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        text.split_whitespace()
            .map(|w| {
                token_id(w)
                    .ok_or_else(|| BackendError::Other(format!("word {w:?} not in toy vocabulary")))
            })
            .collect::<Result<Vec<u32>, _>>()
            .map(TokenSequence)
    }

    fn detokenize(&self, ids: &TokenSequence) -> Result<String, BackendError> {
        ids.validate(VOCAB_SIZE)?;
        Ok(ids
            .ids()
            .iter()
            .map(|&i| VOCAB[i as usize])
            .collect::<Vec<_>>()
            .join(" "))
    }
}
