//! Runtime level-of-detail control: jam detection, recovery detection and
//! planning of splits, merges and representation switches.

mod controller;
mod policy;

pub use controller::{cluster_ratios, observe, plan, Action, PlannedAction, Trigger};
pub use policy::{LodPolicy, POLICY_KEYS};
