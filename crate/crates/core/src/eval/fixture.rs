//! Synthetic adversarial benchmark: each item is a clean image, optionally
//! degraded by a perturbation that one augmentation undoes. The fixture
//! records which call restores the intended view and the digest of the
//! image that call produces.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{BenchmarkItem, Split};
use super::EvalError;
use crate::augment::{
    apply_op, AugmentationOp, Channels, DenoiseMethod, ExecLimits, FlipAxis, ImageBuffer, Rotation,
};
use crate::jsonl::write_jsonl;

/// Answers assigned to items in rotation.
pub const FIXTURE_ANSWERS: [&str; 10] = [
    "red", "green", "blue", "seven", "circle", "north", "42", "stop", "cat", "left",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Clean,
    /// Rotated a quarter turn; undone by rotating back.
    Rotated,
    /// Mirrored left-right; undone by flipping again.
    Mirrored,
    /// Isolated salt-and-pepper pixels; removed by a 3x3 median.
    SaltPepper,
}

impl Perturbation {
    pub const CYCLE: [Perturbation; 4] = [
        Perturbation::Clean,
        Perturbation::Rotated,
        Perturbation::Mirrored,
        Perturbation::SaltPepper,
    ];

    /// The call that undoes this perturbation.
    pub fn required_op(self) -> Option<AugmentationOp> {
        match self {
            Perturbation::Clean => None,
            Perturbation::Rotated => Some(AugmentationOp::Rotate {
                degrees: Rotation::Deg90.inverse(),
            }),
            Perturbation::Mirrored => Some(AugmentationOp::Flip {
                axis: FlipAxis::Horizontal,
            }),
            Perturbation::SaltPepper => Some(AugmentationOp::Denoise {
                method: DenoiseMethod::Median,
                kernel_size: 3,
            }),
        }
    }
}

/// Serialized as the answer key; the image itself is written separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureItem {
    pub item: BenchmarkItem,
    pub perturbation: Perturbation,
    pub required_op: Option<AugmentationOp>,
    /// Digest of the image the model is shown.
    pub query_digest: String,
    /// Digest of the view that reveals the answer.
    pub target_digest: String,
    #[serde(skip)]
    pub image: ImageBuffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub seed: u64,
    pub items: Vec<FixtureItem>,
}

const WIDTH: u32 = 64;
const HEIGHT: u32 = 48;

fn clean_image(rng: &mut ChaCha8Rng) -> ImageBuffer {
    let (a, b, c): (u32, u32, u32) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(0..256));
    ImageBuffer::from_fn(WIDTH, HEIGHT, Channels::Rgb, |x, y, ch| {
        // smooth and asymmetric, so every perturbation changes the pixels
        let v = match ch {
            0 => x * a + y,
            1 => y * b + c,
            _ => (x + 2 * y) / 2 + c / 2,
        };
        (v % 200 + 20) as u8
    })
}

/// Sets pixels on a sparse lattice to 0 or 255 so no two outliers touch.
fn salt_pepper(image: &ImageBuffer, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let mut out = image.clone();
    for y in (2..image.height() - 2).step_by(4) {
        for x in (2..image.width() - 2).step_by(4) {
            if rng.random_bool(0.5) {
                let v = if rng.random_bool(0.5) { 255 } else { 0 };
                for ch in 0..image.channels().count() {
                    out.set(x, y, ch, v);
                }
            }
        }
    }
    out
}

fn must(outcome: crate::augment::ExecOutcome) -> ImageBuffer {
    outcome.image().cloned().expect("fixture ops are within limits")
}

/// Builds `n` items cycling through [`Perturbation::CYCLE`].
pub fn synthesize_fixture(n: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limits = ExecLimits::default();
    let items = (0..n)
        .map(|i| {
            let perturbation = Perturbation::CYCLE[i % Perturbation::CYCLE.len()];
            let clean = clean_image(&mut rng);
            let image = match perturbation {
                Perturbation::Clean => clean,
                Perturbation::Rotated => must(apply_op(
                    &clean,
                    &AugmentationOp::Rotate { degrees: Rotation::Deg90 },
                    &clean,
                    &limits,
                )),
                Perturbation::Mirrored => must(apply_op(
                    &clean,
                    &AugmentationOp::Flip { axis: FlipAxis::Horizontal },
                    &clean,
                    &limits,
                )),
                Perturbation::SaltPepper => salt_pepper(&clean, &mut rng),
            };
            let required_op = perturbation.required_op();
            let target = match &required_op {
                Some(op) => must(apply_op(&image, op, &image, &limits)),
                None => image.clone(),
            };
            let id = format!("adv{i:03}");
            let answer = FIXTURE_ANSWERS[i % FIXTURE_ANSWERS.len()];
            FixtureItem {
                item: BenchmarkItem {
                    image: PathBuf::from(format!("{id}.png")),
                    id,
                    question: "What is the hidden label in this image?".into(),
                    ground_truth: answer.into(),
                    split: Split::Synthetic,
                    kind: Some(format!("{perturbation:?}").to_lowercase()),
                },
                perturbation,
                required_op,
                query_digest: image.digest(),
                target_digest: target.digest(),
                image,
            }
        })
        .collect();
    Fixture { seed, items }
}

impl Fixture {
    pub fn benchmark_items(&self) -> Vec<BenchmarkItem> {
        self.items.iter().map(|f| f.item.clone()).collect()
    }

    pub fn image_for(&self, id: &str) -> Option<ImageBuffer> {
        self.items.iter().find(|f| f.item.id == id).map(|f| f.image.clone())
    }

    /// Share of items answerable without any call.
    pub fn unaided_rate(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let clean = self.items.iter().filter(|f| f.required_op.is_none()).count();
        clean as f64 / self.items.len() as f64
    }

    /// Writes the images, `manifest.jsonl` and `fixture.jsonl` (the answer
    /// key) into `dir`. Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, EvalError> {
        std::fs::create_dir_all(dir)?;
        for f in &self.items {
            f.image.save_png(dir.join(&f.item.image))?;
        }
        let manifest = dir.join("manifest.jsonl");
        write_jsonl(&manifest, &self.benchmark_items())?;
        write_jsonl(dir.join("fixture.jsonl"), &self.items)?;
        Ok(manifest)
    }
}
