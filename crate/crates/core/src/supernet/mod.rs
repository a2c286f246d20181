//! The super-network search: every pipeline step mixes all candidate
//! modules with softmax architecture weights, which are optimised with a
//! one-step meta update while module parameters follow the training loss.
//! Weak candidates are pruned online and proxies are periodically refit on
//! intermediate data kept in a bounded FIFO memory.

mod checkpoint;
mod config;
mod memory;
mod net;
mod search;

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
pub use config::{default_plan, preset_beta, validate_plan, SearchConfig, StepPlan};
pub use memory::{DataMemory, MemoryEntry};
pub use net::{
    candidates, learned_kind, ForwardPass, PassGrad, SearchModules, Slot, SlotCache, Step, SuperNet,
    SuperNetOp, OFF_LOGIT,
};
pub use search::{
    batch_gradient, efficiency_loss, search, BatchGrad, HistoryRecord, LossFn, Sample, Search,
    StepOutcome, L2,
};
