//! End-to-end plumbing: datasets, certification campaigns, training, metrics,
//! reports and the command-line front end.

pub mod campaign;
pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod report;
pub mod synthetic;
pub mod train;

pub use campaign::{default_radii, run_campaign, CampaignConfig, CampaignMode, CampaignOutput, InputResult};
pub use cli::cli_main;
pub use dataset::LabeledDataset;
pub use metrics::{average_certified_radius, certified_accuracy_curve, MetricsSummary, Scored};
pub use train::{run_train_demo, train_batch, DemoConfig, DemoReport, GaussianAugmentation, TrainFunction};
