//! Feature matrices and their preprocessing, the graph and CSV file
//! formats, character tokenization and synthetic data generators.

mod features;
mod graphs;
mod synth;
mod text;

pub use features::{preprocess, read_feature_csv, write_feature_csv, FeatureMatrix, PreprocessStats, STD_FLOOR};
pub use graphs::{load_graph_dataset, parse_graph_dataset, save_graph_dataset, write_graph_dataset, GraphDataset};
pub use synth::{graph_statistic, regression_target, synth_graphs, synth_regression, synth_text, NON_FINITE_FRACTION, SYNTH_NODE_WIDTH};
pub use text::{tokenize_chars, TextCorpus};
