//! Contrastive alignment of audio, visual and text embeddings in a shared
//! space, with the training regimes, retrieval evaluation and file formats
//! around it.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod regime;
mod rng;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use data::{gen_synthetic, read_dataset, write_dataset, CaptionType, Dataset, DatasetDims, Modality, SynthConfig};
pub use error::{Error, Result};
pub use eval::{compare, recall_at_k, run_task_suite, EvalOptions, RetrievalReport};
pub use linalg::Matrix;
pub use loss::{info_nce, info_nce_grad, similarity_logits};
pub use model::{init_aligner, AlignerConfig, ProjectionHead, TrimodalAligner};
pub use regime::{Pair, Regime, Stage};
pub use train::{train, train_single_stage, train_two_stage, TrainConfig, TrainOutcome};
