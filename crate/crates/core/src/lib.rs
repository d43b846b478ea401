//! Training and evaluation toolkit for line-based OCR recognizers with
//! transfer learning through output-layer codec surgery.
//!
//! A bidirectional LSTM trained with CTC recognizes one text line at a time.
//! A pretrained model's character set can be extended and reduced before
//! fine-tuning on new ground truth, with a whitelist of characters that are
//! never removed.

pub mod cli;
pub mod codec;
pub mod ctc;
pub mod dataset;
pub mod evalkit;
pub mod linenet;
pub mod modelstore;
pub mod synthgen;
pub mod trainer;
