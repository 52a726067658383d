//! Wild Relation Network: panel embedding, position tagging, pairwise
//! relation sums and per-choice scoring.

mod embed;
mod model;
mod train;

pub use embed::{problem_batch, PanelEmbedder, Variant, CNN_EMBED_DIM};
pub use model::{pair_layout, WrenConfig, WrenModel, CONTEXT_PAIRS, CROSS_PAIRS, SLOTS};
pub use train::{
    accuracy, load_wren, predict, predict_batch, predict_dataset, save_wren, train_wren, wren_step, EpochLog, Phase,
    Prediction, WrenMeta, WrenRun, WrenTrainConfig, EVAL_CHUNK,
};
