//! Local editing service: sessions move through segmentation and
//! inpainting jobs, then accept live transforms whose composites are
//! streamed as frames.

pub mod adapters;
pub mod api;
pub mod error;
pub mod frames;
pub mod persist;
pub mod phase;
pub mod pipeline;
pub mod server;
pub mod session;
pub mod testing;

pub use error::{ServiceError, ServiceResult};
pub use phase::Phase;
pub use pipeline::{CorePipeline, InpainterSource, OracleSource, Pipeline};
pub use session::{Session, SessionManager};
