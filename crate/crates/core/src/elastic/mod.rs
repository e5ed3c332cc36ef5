//! Multi-branch elastic network with swappable compression operators.

mod arch;
mod diversity;
mod network;
mod operators;
mod variant;

pub use arch::{ArchSpec, LayerToken, SegmentSpec, MAX_EXIT_HIDDEN};
pub use diversity::{branch_diversity_report, DiversityReport};
pub use network::{ElasticNetwork, ExitBranch, Segment, Slot};
pub use operators::{default_rank, CompressionOperator, OperatorKind, SlotShape};
pub use variant::{enumerate, enumeration_size, variant_id, write_variant_csv, VariantConfig};

