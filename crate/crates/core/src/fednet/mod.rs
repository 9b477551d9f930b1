//! Coordinator/site protocol for running the federated estimator without
//! moving source-site rows. Sites receive the target outcome model and a
//! covariate summary, and return only covariate summaries and moments of
//! their augmentation terms.

pub mod coordinator;
pub mod messages;
pub mod site;
pub mod transcript;
pub mod transport;

pub use coordinator::{accept_sites, coordinator_run, target_cells, CoordinatorConfig, CoordinatorOutput, SiteEndpoint, SiteReply};
pub use messages::{AugmentationMoments, CellMoments, Envelope, Message, ModelBroadcast, PROTOCOL_VERSION};
pub use site::{site_augmentation, site_compute, site_run};
pub use transcript::{audit_transcript, source_payload_fields, Direction, Transcript, TranscriptEntry, ALLOWED_SOURCE_FIELDS};
pub use transport::{loopback_pair, Loopback, Tcp, Transport};
