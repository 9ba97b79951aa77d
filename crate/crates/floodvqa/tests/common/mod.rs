//! Synthetic FloodNet-format fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub root: PathBuf,
    pub annotations: PathBuf,
    pub images: PathBuf,
    pub questions: usize,
}

/// Writes `n_images` small PNGs and four questions per image covering all
/// five question types.
pub fn synthetic_dataset(root: &Path, n_images: usize, seed: u64) -> Fixture {
    let images = root.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = serde_json::Map::new();
    let mut q = 0;
    for i in 0..n_images {
        let id = format!("{}", 6000 + i);
        let flooded = rng.gen_bool(0.5);
        let base = if flooded { [40u8, 70, 160] } else { [70u8, 150, 60] };
        let img = RgbImage::from_fn(48, 36, |x, y| {
            let jitter = ((x * 7 + y * 13 + i as u32) % 32) as u8;
            Rgb([base[0] + jitter, base[1] + jitter, base[2].saturating_sub(jitter)])
        });
        img.save(images.join(format!("{id}.png"))).unwrap();

        let count: u32 = rng.gen_range(0..=12);
        let mut add = |question: &str, answer: serde_json::Value, kind: &str| {
            records.insert(
                format!("q{q:05}"),
                serde_json::json!({
                    "Image_ID": format!("{id}.png"),
                    "Question": question,
                    "Ground_Truth": answer,
                    "Question_Type": kind,
                }),
            );
            q += 1;
        };
        add("How many buildings are in the image?", count.into(), "Simple_Counting");
        add(
            "How many non flooded buildings are in the image?",
            (count / 2).into(),
            "Complex_Counting",
        );
        if i % 2 == 0 {
            add(
                "Is the entire road flooded?",
                if flooded { "Yes" } else { "No" }.into(),
                "Yes_No",
            );
            add(
                "What is the overall condition of the given image?",
                if flooded { "flooded" } else { "non-flooded" }.into(),
                "Condition_Recognition",
            );
        } else {
            add(
                "What is the condition of the road in this image?",
                if flooded { "flooded" } else { "non-flooded" }.into(),
                "Condition_Recognition",
            );
            add("Is the entire road non flooded?", if flooded { "No" } else { "Yes" }.into(), "Yes_No");
        }
    }
    let annotations = root.join("questions.json");
    std::fs::write(&annotations, serde_json::to_string_pretty(&records).unwrap()).unwrap();
    Fixture {
        root: root.to_path_buf(),
        annotations,
        images,
        questions: q,
    }
}

/// A config for offline runs: seeded test-scale encoders and a short schedule.
pub fn smoke_config(fixture: &Fixture, out_dir: &Path, epochs: usize) -> PathBuf {
    let path = fixture.root.join("experiment.toml");
    let text = format!(
        r#"seed = 5
out_dir = "{out}"

[data]
annotations = "{ann}"
images = "{img}"

[split]
test_image_fraction = 0.25

[encoders]
image = "convnext-atto"
text = "roberta-tiny"
seeded_weights = true
batch_size = 4

[fusion]
method = "mul"
common_dim = 32
hidden_dims = [32, 16]

[training]
epochs = {epochs}
batch_size = 16
"#,
        out = out_dir.display(),
        ann = fixture.annotations.display(),
        img = fixture.images.display(),
    );
    std::fs::write(&path, text).unwrap();
    path
}
