//! Decision-graph diagnostics engine: document model, context semantics,
//! query evaluation, graph execution, actions, scheduling and ranking.

pub mod actions;
pub mod clock;
pub mod context;
pub mod diagnostics;
pub mod executor;
pub mod jsonl;
pub mod model;
pub mod predicate;
pub mod prioritizer;
pub mod query;
pub mod scheduler;
pub mod template;
pub mod value;

pub use actions::{ActionRuntime, RuntimeConfig};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use context::{ExecutionContext, StepId};
pub use executor::{run_all, run_tsg, ActionRequest, ExecOptions, Finding, StepOutcome, StepStatus};
pub use model::{Audience, AutoTsgDoc};
pub use value::{Timespan, Value, ValueType};
