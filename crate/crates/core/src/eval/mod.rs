//! Representation quality: pooling, linear probes, fine-tuning, metrics,
//! embeddings and ablation sweeps.

mod classifier;
mod embed;
mod experiment;
mod metrics;
mod sweep;

pub use classifier::{
    argmax, few_shot_subset, fine_tune, pool_representation, pool_tape, pooled_features, predict, probe_on_features,
    train_head, train_linear_probe, ClassifierConfig, ClassifierHead,
};
pub use embed::{pca_embed, to_f64, tsne_embed, Pca, Tsne, TsneConfig};
pub use experiment::{
    all_features, finetune_eval, init_model, init_model_on, majority_error_rate, median, model_config, model_config_on, prepare, prepare_samples, prepare_spectra, pretrain_encoder,
    probe_eval, run_experiment, stage1_pretrain, CellResult, ExperimentConfig, Prepared, ProbeOutcome, Stage1Config,
};
pub use metrics::{
    confusion_error_rate, confusion_matrix, coordinates_csv, error_rate, relative_improvement, EvalReport,
};
pub use sweep::{ablation_sweep, AblationAxis, SweepMedian, SweepRow, SweepTable};
