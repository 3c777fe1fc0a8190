//! Call detail record analytics.
//!
//! The pipeline normalizes wide-format CDR exports, resolves device models
//! and prices from TACs, selects subscriber populations, measures mobility,
//! aggregates activity over base-station coverage areas, detects unusual
//! activity against reference days and relates mobility to phone price
//! through a weighted PCA. [`synthgen`] produces synthetic cities with
//! planted ground truth for every stage.

pub mod calendar;
pub mod cohorts;
pub mod device_catalog;
pub mod error;
pub mod event_detection;
pub mod ingest;
pub mod mobility;
pub mod ses_pca;
pub mod spatial;
pub mod synthgen;
pub mod types;

pub use calendar::{Calendar, DayType};
pub use error::{Error, Result};
pub use types::{CellId, CustomerType, PaymentType, Sex, SimId, SiteId, Tac};
