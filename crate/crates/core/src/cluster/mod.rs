//! Condor-style job submission on an embedded cluster simulator.
//!
//! Node-targeting policies are evaluated once, when a job is submitted, and
//! frozen into the job's requirements expression. The scheduler then only
//! ever evaluates that expression against live nodes.

pub mod events;
pub mod job;
pub mod node;
pub mod policy;
pub mod requirements;
pub mod scheduler;
pub mod submit_file;

pub use events::{EventBus, EventFilter, MonitorEvent, Subscription};
pub use job::{Job, JobFilter, JobKind, JobState};
pub use node::{parse_inventory, NodeSpec};
pub use policy::{evaluate_policy, Criterion, MatchOp, NewPolicy, Policy, PolicyBody};
pub use requirements::{render_requirements, Requirements};
pub use scheduler::{Cluster, JobSpec, Transition};
pub use submit_file::{generate_submission_file, parse_submission_file, SubmissionFile, SubmissionInputs};
