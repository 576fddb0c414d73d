//! Annotation service: review queues, human label fixes, proxy retraining
//! and exports over HTTP, persisted as an append-only event log.

pub mod api;
pub mod error;
pub mod events;
pub mod state;

pub use api::{router, serve, ApiOptions};
pub use error::{ServiceError, ServiceResult};
pub use events::{Action, AnnotationEvent, EventLog};
pub use state::{ExportVariant, QueueStrategy, Service, ServiceConfig, TaskHandle};
