//! Synthetic genomic mutation profiles from a small causal language model,
//! optional differentially private training, and membership-inference audits
//! of the trained model.

pub mod attack;
pub mod dp;
pub mod features;
pub mod pipeline;
pub mod synthesis;
pub mod tokenizer;
pub mod transformer;
pub mod utility;
pub mod vcf;
