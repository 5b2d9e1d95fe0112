//! Annotation service for the blinded human evaluation.
//!
//! Two annotators label a calibration subset independently, resolve their
//! disagreements together, then the first labels the rest alone while the
//! second reviews. Every change is an event in an append-only log and the
//! state is a fold over it.

pub mod agreement;
pub mod events;
pub mod http;
pub mod service;
pub mod state;

pub use http::{router, serve, Shared};
pub use service::{FrameStore, Service, ServiceError};
pub use state::{Phase, State};
