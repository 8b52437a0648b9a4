//! Seeded fixtures shared by the benchmarks.

use kmat_core::datagen::SplitSizes;
use kmat_core::prompt_space::{encode_prompts, init_prompt_bank};
use kmat_core::trainer::{encoder_for, sample_few_shot};
use kmat_core::{
    generate, AnchorPrototypes, ClassEmbeddings, FrozenEncoder, LabeledEmbeddingSet, PromptBank,
    SyntheticSpec, TrainConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[0, 1)` cost matrix.
pub fn random_cost(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, n), || rng.random::<f64>())
}

/// Rows drawn from a standard normal and normalized.
pub fn random_unit_rows(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::from_shape_simple_fn((n, dim), || rng.random::<f64>() - 0.5);
    for mut row in a.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    a
}

pub struct TrainingFixture {
    pub config: TrainConfig,
    pub train: LabeledEmbeddingSet,
    pub anchors: AnchorPrototypes,
    pub bank: PromptBank,
    pub encoder: FrozenEncoder,
    pub embeddings: ClassEmbeddings,
}

/// A 16-shot high-end training set on `n_classes` synthetic classes.
pub fn training_fixture(n_classes: usize, embed_dim: usize) -> TrainingFixture {
    let spec = SyntheticSpec {
        n_classes,
        embed_dim,
        samples: SplitSizes {
            train: 16,
            val: 1,
            test: 1,
        },
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).expect("valid spec");
    let anchors =
        AnchorPrototypes::from_descriptions(&data.descriptions).expect("valid descriptions");
    let config = TrainConfig::default();
    let train = sample_few_shot(&data.embeddings, config.shots_per_class, 1)
        .expect("enough samples")
        .set;
    let bank =
        init_prompt_bank(&config.prompt.prompt_config(n_classes), 1).expect("valid prompt config");
    let encoder = encoder_for(&config, n_classes, embed_dim).expect("valid encoder");
    let embeddings = encode_prompts(&bank, &encoder).expect("encodable");
    TrainingFixture {
        config,
        train,
        anchors,
        bank,
        encoder,
        embeddings,
    }
}
