//! Benchmark fixtures.

use vacode::backend::LogitVector;
use vacode::rng::SeededRng;
use vacode::toyvlm::{render, Cell, SceneSpec, ToyColor};
use vacode::ImageBuffer;

/// A hard-mode position scene with its question.
pub fn position_scene() -> (ImageBuffer, &'static str) {
    (
        render(&SceneSpec::new(ToyColor::Red, Cell::new(1, 2), 20)),
        "Is the square on the left?",
    )
}

/// Two random logit vectors of length `n`.
pub fn logit_pair(n: usize, seed: u64) -> (LogitVector, LogitVector) {
    let mut rng = SeededRng::new(seed);
    let mut draw = || {
        LogitVector::new((0..n).map(|_| rng.uniform_range(-8.0, 8.0)).collect())
            .expect("finite logits")
    };
    (draw(), draw())
}

/// A random RGB image.
pub fn noise_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let mut rng = SeededRng::new(seed);
    let data = (0..width * height * 3)
        .map(|_| (rng.next_u64() & 0xff) as u8)
        .collect();
    ImageBuffer::new(width, height, data).expect("sized buffer")
}
