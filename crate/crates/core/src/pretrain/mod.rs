//! Backbone pretraining: contrastive (momentum queue) and supervised
//! objectives, augmentation policies, image corpora, and compression-block
//! fine-tuning.

pub mod augment;
pub mod contrastive;
pub mod corpus;
pub mod finetune;
pub mod moco;
pub mod supervised;

pub use augment::{augment_one, augment_pair, AugmentationPolicy};
pub use contrastive::{contrastive_loss, EmbeddingQueue};
pub use corpus::{collect_env_frames, generate_synthetic_corpus, CorpusSource, ImageCorpus};
pub use finetune::{finetune_compression, FinetuneConfig, FinetuneReport};
pub use moco::{train_moco, ContrastiveConfig, MocoReport};
pub use supervised::{train_supervised, SupervisedConfig, SupervisedReport};
