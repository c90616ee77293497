//! Corpus-to-embedding toolkit for imageboard text.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`ingest`] parses archive dumps (FoolFuuka JSON, 4plebs CSV, JSON Lines)
//!   and pages through FoolFuuka-compatible archive APIs.
//! * [`normalize`] strips markup, URLs and imageboard metadata and tokenizes.
//! * [`vocab`] builds the vocabulary and the negative-sampling table.
//! * [`trainer`] trains CBOW embeddings with negative sampling.
//! * [`model_io`] reads and writes word2vec text and binary models.
//! * [`query`] answers exact cosine nearest-neighbour queries.
//! * [`lexicon`] grows a term lexicon from model neighbours and external text.

pub mod corpus;
pub mod ingest;
pub mod lexicon;
pub mod manifest;
pub mod model_io;
pub mod normalize;
pub mod query;
pub mod stats;
pub mod trainer;
pub mod vocab;

pub mod cli;
