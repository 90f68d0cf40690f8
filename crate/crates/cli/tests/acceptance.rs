//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.
//!
//! Lines are written straight to stdout so they show up without
//! `--nocapture`.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use vacode::backend::{BackendDescriptor, LogitVector};
use vacode::cdcore::{
    cd_combine, cd_logits, distance, plausibility_mask, softmax, ScoreKind, ScoreVector,
    KL_SMOOTHING,
};
use vacode::evalharness::{
    analyze_gain, calibrate_samples, evaluate, generate_toy_dataset, load_images, EvalReport,
    Method, TOY_CATEGORIES,
};
use vacode::imgaug::MIN_REGION_SIDE;
use vacode::rng::SeededRng;
use vacode::{
    apply, augmentation_set, decode, AugKind, AugmentationOp, Backend, BackendError,
    CalibrationReport, CdConfig, CountingBackend, DecodingConfig, DistanceMetric, ImageBuffer,
    ProbVector, Question, TokenSequence, ToyMode, ToyVlm,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

// ---------------------------------------------------------------------------
// Independent oracles.

/// `e^x` by its power series; only used on small |x|.
fn exp_series(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 / exp_series(-x);
    }
    let (mut term, mut sum) = (1.0f64, 1.0f64);
    for n in 1..200 {
        term *= x / n as f64;
        sum += term;
        if term < 1e-30 * sum {
            break;
        }
    }
    sum
}

fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn oracle_distance(p: &[f64], q: &[f64], metric: DistanceMetric) -> f64 {
    let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
    match metric {
        DistanceMetric::L1 => d.iter().sum(),
        DistanceMetric::L2 => d.iter().map(|x| x * x).sum::<f64>().sqrt(),
        DistanceMetric::L3 => d.iter().map(|x| x.powi(3)).sum::<f64>().cbrt(),
        DistanceMetric::Linf => d.iter().cloned().fold(0.0, f64::max),
        DistanceMetric::Cosine => {
            let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (1.0 - dot / (n(p) * n(q))).max(0.0)
        }
        DistanceMetric::KL => {
            let u = 1.0 / q.len() as f64;
            let mut s = 0.0;
            for (a, b) in p.iter().zip(q) {
                if *a > 0.0 {
                    s += a * (a / ((1.0 - KL_SMOOTHING) * b + KL_SMOOTHING * u)).ln();
                }
            }
            s.max(0.0)
        }
        DistanceMetric::Emd => {
            let mut total = 0.0;
            for k in 0..p.len() {
                let cp: f64 = p[..=k].iter().sum();
                let cq: f64 = q[..=k].iter().sum();
                total += (cp - cq).abs();
            }
            total
        }
    }
}

/// First index of the maximum.
fn oracle_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn random_logits(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-scale, scale)).collect()
}

fn random_image(rng: &mut SeededRng, w: usize, h: usize) -> ImageBuffer {
    let data = (0..w * h * 3)
        .map(|_| (rng.next_u64() % 256) as u8)
        .collect();
    ImageBuffer::new(w, h, data).unwrap()
}

fn lv(v: Vec<f64>) -> LogitVector {
    LogitVector::new(v).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Test backends.

/// Logits looked up by the exact bytes of the scored image.
struct Keyed {
    table: HashMap<Vec<u8>, LogitVector>,
    vocab: usize,
}

impl Backend for Keyed {
    fn info(&self) -> Result<BackendDescriptor, BackendError> {
        Ok(BackendDescriptor {
            name: "keyed".into(),
            vocab_size: self.vocab,
            eos_id: None,
            endpoint: String::new(),
        })
    }

    fn next_logits(
        &self,
        img: &ImageBuffer,
        _: &str,
        _: &TokenSequence,
    ) -> Result<LogitVector, BackendError> {
        self.table
            .get(img.data())
            .cloned()
            .ok_or_else(|| BackendError::Other("image not in table".into()))
    }

    fn tokenize(&self, _: &str) -> Result<TokenSequence, BackendError> {
        Ok(TokenSequence::new())
    }

    fn detokenize(&self, ids: &TokenSequence) -> Result<String, BackendError> {
        Ok(format!("{:?}", ids.ids()))
    }
}

/// Emits `content` copies of token 1, then eos (token 3) when `eos` is set.
struct Scripted {
    content: usize,
    eos: bool,
}

impl Backend for Scripted {
    fn info(&self) -> Result<BackendDescriptor, BackendError> {
        Ok(BackendDescriptor {
            name: "scripted".into(),
            vocab_size: 4,
            eos_id: self.eos.then_some(3),
            endpoint: String::new(),
        })
    }

    fn next_logits(
        &self,
        img: &ImageBuffer,
        _: &str,
        prefix: &TokenSequence,
    ) -> Result<LogitVector, BackendError> {
        let tilt = f64::from(img.data()[0]) / 255.0;
        let mut v = vec![0.0, tilt, -tilt, 0.0];
        let next = if prefix.len() < self.content { 1 } else { 3 };
        v[next] += 12.0;
        LogitVector::new(v)
    }

    fn tokenize(&self, _: &str) -> Result<TokenSequence, BackendError> {
        Ok(TokenSequence::new())
    }

    fn detokenize(&self, ids: &TokenSequence) -> Result<String, BackendError> {
        Ok(format!("{:?}", ids.ids()))
    }
}

// ---------------------------------------------------------------------------
// Criteria.

fn cd_math() -> Outcome {
    let start = Instant::now();
    let p = softmax(&lv(vec![4.0, -2.0]));
    let e = exp_series(-6.0);
    let oracle = [1.0 / (1.0 + e), e / (1.0 + e)];
    ensure(
        (oracle[0] - 0.99753).abs() < 1e-5 && (oracle[1] - 0.00247).abs() < 1e-5,
        || format!("oracle gives {oracle:?}"),
    )?;
    let err = max_abs_diff(p.as_slice(), &oracle);
    ensure(err < 1e-5, || format!("softmax([4,-2]) = {p:?}"))?;

    let mut rng = SeededRng::new(0xC0DE);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = 2 + (rng.next_u64() % 62) as usize;
        let f = random_logits(&mut rng, n, 8.0);
        let g = random_logits(&mut rng, n, 8.0);
        let alpha = rng.uniform_range(0.0, 3.0);
        let cfg = CdConfig {
            alpha,
            ..CdConfig::default()
        };
        let reg = oracle_softmax(&f);

        let zero = CdConfig { alpha: 0.0, ..cfg };
        worst = worst.max(max_abs_diff(
            &cd_combine(&lv(f.clone()), &lv(g.clone()), &zero)
                .unwrap()
                .values,
            &reg,
        ));
        worst = worst.max(max_abs_diff(
            &cd_combine(&lv(f.clone()), &lv(f.clone()), &cfg)
                .unwrap()
                .values,
            &reg,
        ));

        let (c, c2) = (
            rng.uniform_range(-50.0, 50.0),
            rng.uniform_range(-50.0, 50.0),
        );
        let fs: Vec<f64> = f.iter().map(|x| x + c).collect();
        let gs: Vec<f64> = g.iter().map(|x| x + c2).collect();
        let base = cd_combine(&lv(f.clone()), &lv(g.clone()), &cfg)
            .unwrap()
            .values;
        worst = worst.max(max_abs_diff(
            &cd_combine(&lv(fs), &lv(gs), &cfg).unwrap().values,
            &base,
        ));

        let t = rng.uniform_range(0.1, 4.0);
        let ft: Vec<f64> = f.iter().map(|x| x / t).collect();
        let gt: Vec<f64> = g.iter().map(|x| x / t).collect();
        let raw = cd_logits(&lv(f.clone()), &lv(g.clone()), alpha).unwrap();
        let expect = oracle_softmax(&raw.iter().map(|z| z / t).collect::<Vec<_>>());
        worst = worst.max(max_abs_diff(
            &cd_combine(&lv(ft), &lv(gt), &cfg).unwrap().values,
            &expect,
        ));
    }
    ensure(worst <= 1e-12, || format!("identity error {worst:e}"))?;
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!(
        "softmax err {err:.1e}, identities max err {worst:.1e} over 500 cases, {took:?}"
    ))
}

fn distance_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(0xD157);
    for _ in 0..200 {
        let n = 2 + (rng.next_u64() % 40) as usize;
        let p = ProbVector::new(oracle_softmax(&random_logits(&mut rng, n, 5.0))).unwrap();
        let q = ProbVector::new(oracle_softmax(&random_logits(&mut rng, n, 5.0))).unwrap();
        for m in DistanceMetric::ALL {
            let self_d = distance(&p, &p, m).unwrap();
            ensure(self_d.abs() <= 1e-9, || format!("{m}: D(p,p) = {self_d:e}"))?;
            let pq = distance(&p, &q, m).unwrap();
            let qp = distance(&q, &p, m).unwrap();
            ensure(pq >= 0.0, || format!("{m}: negative distance {pq}"))?;
            let oracle = oracle_distance(p.as_slice(), q.as_slice(), m);
            ensure((pq - oracle).abs() <= 1e-12 * oracle.max(1.0), || {
                format!("{m}: {pq} vs oracle {oracle}")
            })?;
            if m != DistanceMetric::KL {
                ensure((pq - qp).abs() <= 1e-12 * pq.max(1.0), || {
                    format!("{m}: asymmetric {pq} vs {qp}")
                })?;
            }
        }
    }
    let p = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
    let q = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
    let (kpq, kqp) = (
        distance(&p, &q, DistanceMetric::KL).unwrap(),
        distance(&q, &p, DistanceMetric::KL).unwrap(),
    );
    ensure((kpq - kqp).abs() > 1e-3, || {
        format!("KL unexpectedly symmetric: {kpq} vs {kqp}")
    })?;
    let a = ProbVector::new(vec![1.0, 0.0]).unwrap();
    let b = ProbVector::new(vec![0.0, 1.0]).unwrap();
    let l2 = distance(&a, &b, DistanceMetric::L2).unwrap();
    ensure((l2 - 2f64.sqrt()).abs() <= 1e-12, || format!("L2 = {l2}"))?;
    let emd = distance(
        &ProbVector::new(vec![1.0, 0.0, 0.0]).unwrap(),
        &ProbVector::new(vec![0.0, 0.0, 1.0]).unwrap(),
        DistanceMetric::Emd,
    )
    .unwrap();
    ensure(emd == 2.0, || format!("EMD = {emd}"))?;
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!(
        "7 metrics x 200 pairs, KL {kpq:.4} vs {kqp:.4}, L2 {l2:.12}, EMD {emd}, {took:?}"
    ))
}

fn plausibility_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(0x9A55);
    for case in 0..1000 {
        let n = 1 + (rng.next_u64() % 64) as usize;
        let p = oracle_softmax(&random_logits(&mut rng, n, 6.0));
        let beta = match case % 10 {
            0 => 1.0,
            1 => 1e-9,
            _ => rng.uniform_range(0.0, 1.0).max(1e-12),
        };
        let scores = ScoreVector {
            values: p.clone(),
            kind: ScoreKind::Probability,
        };
        let masked = plausibility_mask(&ProbVector::new(p.clone()).unwrap(), &scores, beta)
            .map_err(|e| format!("case {case}: {e}"))?;
        let top = p.iter().cloned().fold(0.0, f64::max);
        let brute: Vec<usize> = (0..n).filter(|&i| p[i] >= beta * top).collect();
        ensure(masked.candidates == brute, || {
            format!("case {case}: {:?} vs {brute:?}", masked.candidates)
        })?;
        ensure(brute.contains(&oracle_argmax(&p)), || {
            format!("case {case}: argmax dropped")
        })?;
        for (i, (&score, &pi)) in masked.scores.values.iter().zip(&p).enumerate() {
            let kept = brute.contains(&i);
            ensure(kept == (score == pi) || pi == 0.0, || {
                format!("case {case}: token {i} score not masked correctly")
            })?;
        }
    }
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("1000 instances match brute force, {took:?}"))
}

fn augmentation_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(0xA116);
    let kinds = AugKind::CANONICAL;
    for k in 0..20 {
        let w = MIN_REGION_SIDE + (rng.next_u64() % 60) as usize;
        let h = MIN_REGION_SIDE + (rng.next_u64() % 60) as usize;
        let img = random_image(&mut rng, w, h);
        for kind in kinds {
            let op = AugmentationOp::of_kind(kind).with_seed(rng.next_u64());
            let a = apply(&op, &img).map_err(|e| format!("{kind} on {w}x{h}: {e}"))?;
            let b = apply(&op, &img).unwrap();
            ensure(a == b, || format!("{kind}: not deterministic on image {k}"))?;
            ensure(
                a.width() == w && a.height() == h && a.data().len() == w * h * 3,
                || format!("{kind}: {w}x{h} became {}x{}", a.width(), a.height()),
            )?;
            if matches!(kind, AugKind::Color | AugKind::Flip) {
                ensure(apply(&op, &a).unwrap() == img, || {
                    format!("{kind}: not an involution on image {k}")
                })?;
            }
        }
    }
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!(
        "7 kinds x 20 images: dimensions, determinism, Color/Flip involution, {took:?}"
    ))
}

fn accounting() -> Outcome {
    let img = ImageBuffer::filled(32, 32, [120, 40, 200]);
    let q: Question = "q".into();
    let m = augmentation_set().len();
    let mut seen = Vec::new();
    for len in [1usize, 3, 8] {
        let expect: Vec<usize> = (0..len).map(|t| if t == 0 { m + 1 } else { 2 }).collect();
        // Length reached by the cap, and by an eos on the last step.
        let variants = [
            (
                Scripted {
                    content: len,
                    eos: false,
                },
                len,
            ),
            (
                Scripted {
                    content: len - 1,
                    eos: true,
                },
                64,
            ),
        ];
        for (script, max_len) in variants {
            let counting = CountingBackend::new(script);
            let cfg = DecodingConfig {
                max_len,
                ..DecodingConfig::default()
            };
            let out = decode(&img, &q, &cfg, &counting).map_err(|e| e.to_string())?;
            let calls: Vec<usize> = out.trace.per_step.iter().map(|s| s.backend_calls).collect();
            ensure(calls == expect, || {
                format!("length {len}: calls {calls:?}, expected {expect:?}")
            })?;
            ensure(counting.calls() == expect.iter().sum::<usize>(), || {
                format!("length {len}: wrapper saw {} calls", counting.calls())
            })?;
        }
        seen.push(format!("{len}:{expect:?}"));
    }
    Ok(seen.join(" "))
}

fn selection_oracle() -> Outcome {
    let mut rng = SeededRng::new(0x5E1E);
    let vocab = 32;
    let aug_set = augmentation_set();
    let mut ties = 0;
    for case in 0..500 {
        let metric = DistanceMetric::ALL[case % DistanceMetric::ALL.len()];
        let cfg = DecodingConfig {
            max_len: 1,
            metric,
            seed: rng.next_u64(),
            aug_set: aug_set.clone(),
            ..DecodingConfig::default()
        };
        let image = random_image(&mut rng, 16, 16);
        let aug_images: Vec<Vec<u8>> = aug_set
            .iter()
            .map(|op| apply(&cfg.sequence_op(op), &image).unwrap().into_data())
            .collect();

        let orig = random_logits(&mut rng, vocab, 6.0);
        let mut augs: Vec<Vec<f64>> = (0..aug_set.len())
            .map(|_| random_logits(&mut rng, vocab, 6.0))
            .collect();
        match case % 5 {
            // Two augmentations share the farthest distribution.
            0 => {
                let a = (rng.next_u64() % 6) as usize;
                let b = a + 1 + (rng.next_u64() % (6 - a as u64)) as usize;
                let far: Vec<f64> = orig.iter().map(|x| -3.0 * x).collect();
                augs[a] = far.clone();
                augs[b] = far;
            }
            // Every augmentation leaves the distribution unchanged.
            1 if case % 25 == 1 => augs.iter_mut().for_each(|v| *v = orig.clone()),
            _ => {}
        }

        let mut table = HashMap::new();
        table.insert(image.data().to_vec(), lv(orig.clone()));
        for (bytes, v) in aug_images.iter().zip(&augs) {
            table.insert(bytes.clone(), lv(v.clone()));
        }
        ensure(table.len() == aug_set.len() + 1, || {
            format!("case {case}: augmented images collide")
        })?;

        let p = oracle_softmax(&orig);
        let d: Vec<f64> = augs
            .iter()
            .map(|v| oracle_distance(&p, &oracle_softmax(v), metric))
            .collect();
        let expect = oracle_argmax(&d);
        if d.iter().filter(|x| **x == d[expect]).count() > 1 {
            ties += 1;
        }
        let backend = Keyed { table, vocab };
        let out = decode(&image, &"q".into(), &cfg, &backend).map_err(|e| e.to_string())?;
        ensure(out.trace.chosen_index == Some(expect), || {
            format!(
                "case {case} ({metric}): chose {:?}, oracle {expect}, distances {d:?}",
                out.trace.chosen_index
            )
        })?;
        ensure(
            out.trace.chosen_aug.as_ref() == Some(&aug_set[expect]),
            || format!("case {case}: chosen op mismatch"),
        )?;
    }
    ensure(ties >= 100, || format!("only {ties} tie cases generated"))?;
    Ok(format!("500/500 match, {ties} with tied maxima"))
}

struct ToyRun {
    lines: Vec<String>,
}

fn total(r: &EvalReport) -> f64 {
    r.mean_total
}

fn toy_end_to_end(run: &mut ToyRun) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let eval_dir = dir.path().join("eval");
    let calib_dir = dir.path().join("calib");
    let samples = generate_toy_dataset(&eval_dir, 50, 7).map_err(|e| e.to_string())?;
    let held_out = generate_toy_dataset(&calib_dir, 30, 1007).map_err(|e| e.to_string())?;
    let images = load_images(&samples).map_err(|e| e.to_string())?;
    let held_images = load_images(&held_out).map_err(|e| e.to_string())?;
    let vlm = ToyVlm::new(ToyMode::Hard);
    let cfg = DecodingConfig::default();
    let seeds = [0, 1, 2, 3, 4];
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let err = |e: vacode::evalharness::EvalError| e.to_string();

    let analysis = analyze_gain(&samples, &images, &cfg, &vlm, &seeds, workers).map_err(err)?;
    let paired = [
        ("color", AugKind::Color),
        ("existence", AugKind::Crop),
        ("position", AugKind::Flip),
    ];
    let mut fails = Vec::new();

    let mut a = Vec::new();
    let mut b = Vec::new();
    for (cat, kind) in paired {
        let cell = analysis
            .cell(cat, kind.name())
            .ok_or_else(|| format!("no gain cell for {cat}/{kind}"))?;
        a.push(format!("{cat}/{kind} {:.1}", cell.score_drop));
        if cell.score_drop < 20.0 {
            fails.push(format!("(a) {cat}/{kind} drop {:.1} < 20", cell.score_drop));
        }
        let best = analysis
            .cells
            .iter()
            .filter(|c| c.category == cat)
            .map(|c| c.mean_gain)
            .fold(f64::NEG_INFINITY, f64::max);
        b.push(format!("{cat}/{kind} {:.3}", cell.mean_gain));
        if cell.mean_gain < best {
            fails.push(format!(
                "(b) {cat}/{kind} gain {:.3} < max {best:.3}",
                cell.mean_gain
            ));
        }
        let count = |aug: &str| {
            analysis
                .selection
                .iter()
                .find(|s| s.category == cat && s.aug == aug)
                .map_or(0, |s| s.count)
        };
        let modal = analysis
            .augs
            .iter()
            .all(|aug| count(kind.name()) >= count(aug));
        if !modal {
            fails.push(format!("{cat}/{kind} is not the modal selection"));
        }
    }
    let m = analysis.augs.len();
    let (first, last) = (
        analysis.rank("all", 1).unwrap_or(f64::NAN),
        analysis.rank("all", m).unwrap_or(f64::NAN),
    );
    if first.is_nan() || last.is_nan() || first < last {
        fails.push(format!("(c) rank-1 gain {first:.4} < rank-{m} {last:.4}"));
    }

    let eval = |method: &Method| evaluate(&samples, &images, method, &cfg, &vlm, &seeds, workers);
    let regular = eval(&Method::Regular).map_err(err)?;
    let all = eval(&Method::VacodeAll).map_err(err)?;
    let mut singles = Vec::new();
    for op in augmentation_set() {
        let r = eval(&Method::Single(op.clone())).map_err(err)?;
        singles.push((op.to_string(), total(&r)));
    }
    let (best_name, best_single) =
        singles
            .iter()
            .cloned()
            .fold((String::new(), f64::NEG_INFINITY), |acc, s| {
                if s.1 > acc.1 {
                    s
                } else {
                    acc
                }
            });
    let calibration = calibrate_samples(&held_out, &held_images, &cfg, &vlm, 0.5).map_err(err)?;
    let selection = eval(&Method::VacodeSelection(calibration.clone())).map_err(err)?;
    let (reg, vall, vsel) = (total(&regular), total(&all), total(&selection));
    if vall <= reg {
        fails.push(format!("(d) vacode_all {vall:.1} <= regular {reg:.1}"));
    }
    if vall < best_single - 2.0 {
        fails.push(format!(
            "(d) vacode_all {vall:.1} < best single {best_single:.1} - 2"
        ));
    }
    if vsel < vall - 2.0 {
        fails.push(format!(
            "(d) vacode_selection {vsel:.1} < vacode_all {vall:.1} - 2"
        ));
    }
    let took = start.elapsed();
    if took >= Duration::from_secs(120) {
        fails.push(format!("runtime {took:?} >= 2 min"));
    }

    let kept: Vec<String> = calibration.kept.iter().map(|o| o.to_string()).collect();
    run.lines = vec![
        format!("(a) score drop under paired aug: {}", a.join(", ")),
        format!("(b) paired mean gain: {}", b.join(", ")),
        format!("(c) mean gain rank 1 {first:.4}, rank {m} {last:.4}"),
        format!(
            "(d) totals: regular {reg:.1}, vacode_all {vall:.1}, best single {best_name} {best_single:.1}, vacode_selection {vsel:.1} (kept {})",
            kept.join(",")
        ),
    ];
    ensure(fails.is_empty(), || fails.join("; "))?;
    Ok(format!(
        "{} categories x 50 pairs, hard mode, {} seeds, {took:?}",
        TOY_CATEGORIES.len(),
        seeds.len()
    ))
}

fn calibration_arithmetic() -> Outcome {
    let augs = augmentation_set();
    let names =
        |r: &CalibrationReport| -> Vec<String> { r.kept.iter().map(|o| o.to_string()).collect() };
    let all: Vec<String> = augs.iter().map(|o| o.to_string()).collect();
    let case = |counts: [usize; 7], tau: f64| {
        CalibrationReport::from_counts(augs.clone(), counts.to_vec(), tau)
            .map_err(|e| e.to_string())
    };

    let r = case([10; 7], 0.5)?;
    ensure(r.n == 70 && r.m == 7 && r.threshold == 5.0, || {
        format!("N={} M={} threshold={}", r.n, r.m, r.threshold)
    })?;
    ensure(names(&r) == all && !r.fallback, || {
        format!("uniform counts kept {:?}", names(&r))
    })?;

    let r = case([30, 20, 10, 4, 3, 2, 1], 0.5)?;
    ensure(r.threshold == 5.0 && names(&r) == all[..3], || {
        format!("skewed counts kept {:?}", names(&r))
    })?;

    let counts = [0, 5, 0, 60, 3, 0, 2];
    let r = case(counts, 1e-12)?;
    let expect: Vec<String> = (0..7)
        .filter(|&i| counts[i] >= 1)
        .map(|i| all[i].clone())
        .collect();
    ensure(names(&r) == expect, || {
        format!("tau near 0 kept {:?}, expected {expect:?}", names(&r))
    })?;

    // tau <= 1 can never empty the set (the largest count is >= N/M), so the
    // fallback is reached with a larger tau through the arithmetic entry point.
    let r = case([0, 25, 25, 20, 0, 0, 0], 3.0)?;
    ensure(r.fallback && names(&r) == [all[1].clone()], || {
        format!(
            "empty set fallback kept {:?} (fallback {})",
            names(&r),
            r.fallback
        )
    })?;
    let r = case([10; 7], 0.5)?;
    ensure(!r.fallback, || "fallback on a full set".into())?;
    Ok("uniform keeps 7, skewed keeps 3, tau->0 drops zero counts, fallback keeps argmax".into())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vacode"))
        .args(args)
        .env_remove("VACODE_BACKEND_URL")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "vacode {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn dir_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        files.push((
            name,
            std::fs::read(entry.path()).map_err(|e| e.to_string())?,
        ));
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    run_cli(&["gen-toy", "--out", &p("data"), "--n", "6", "--seed", "3"])?;
    run_cli(&["gen-toy", "--out", &p("calib"), "--n", "4", "--seed", "4"])?;
    let dataset = p("data/dataset.jsonl");
    let calib = p("calib/dataset.jsonl");
    for (out, workers) in [("run1", "1"), ("run2", "2")] {
        run_cli(&[
            "eval",
            "--dataset",
            &dataset,
            "--method",
            "vacode_selection",
            "--calib-dataset",
            &calib,
            "--seeds",
            "2",
            "--mode",
            "sample",
            "--workers",
            workers,
            "--out",
            &p(out),
        ])?;
    }
    let a = dir_files(&dir.path().join("run1"))?;
    let b = dir_files(&dir.path().join("run2"))?;
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    ensure(
        names == b.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        || "runs wrote different file sets".into(),
    )?;
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    ensure(
        names.contains(&"report.csv") && names.contains(&"run.json"),
        || format!("missing report files: {names:?}"),
    )?;
    Ok(format!(
        "{} files byte-identical: {}",
        names.len(),
        names.join(", ")
    ))
}

#[test]
fn acceptance() {
    let mut toy = ToyRun { lines: Vec::new() };
    let results: Vec<(&str, Outcome, Vec<String>)> = vec![
        ("cd math", cd_math(), vec![]),
        ("distances", distance_suite(), vec![]),
        ("plausibility", plausibility_suite(), vec![]),
        ("augmentations", augmentation_suite(), vec![]),
        ("backend-call accounting", accounting(), vec![]),
        ("selection oracle", selection_oracle(), vec![]),
        (
            "toy end-to-end",
            toy_end_to_end(&mut toy),
            toy.lines.clone(),
        ),
        ("calibration arithmetic", calibration_arithmetic(), vec![]),
        ("determinism", determinism(), vec![]),
    ];
    let mut stdout = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (name, outcome, details) in &results {
        let (tag, msg) = match outcome {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed.push(*name);
                ("FAIL", m)
            }
        };
        writeln!(stdout, "{tag} {name}: {msg}").unwrap();
        for d in details {
            writeln!(stdout, "       {d}").unwrap();
        }
    }
    stdout.flush().unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
