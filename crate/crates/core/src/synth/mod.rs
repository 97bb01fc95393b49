//! Seeded generators for the synthetic distributions used by the metric
//! oracles and the training experiments.

mod generators;
mod rng;
mod shapes;

pub(crate) use generators::pica_batch;
pub use generators::{
    gen_pairwise_not_mutual, gen_pica_observations, gen_quadratic_pair, gen_uniform,
    CorrelatedGaussian,
};
pub use rng::{streams, Rng};
pub use shapes::{
    all_combos, gen_shapes_dataset, LabeledDataset, Sample, ShapesConfig, ShapesEmbedding, Split,
    COLOR_NAMES, HELDOUT_COMBO, LATENT_DIM, SHAPE_NAMES, TRAIN_COMBOS,
};
