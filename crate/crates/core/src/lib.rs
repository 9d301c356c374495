//! Engine for turning watch-history exports into an explorable 2D map.
//!
//! Stages run in order: [`ingestion`] → [`enrichment`] → [`harmonize`] →
//! [`embed`] → [`layout`] → [`topics`] → [`temporal`], with [`store`]
//! persisting each stage and [`pipeline`] driving them.

pub mod config;
pub mod embed;
pub mod enrichment;
pub mod harmonize;
pub mod http;
pub mod ingestion;
pub mod layout;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod store;
pub mod temporal;
pub mod topics;
