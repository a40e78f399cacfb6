//! Simulation of linearised power flow on radial distribution feeders and
//! recovery of the operating topology from voltage-magnitude statistics.
//!
//! The learners use `φ_ab = Var(ε_a − ε_b)` as edge weights. With every
//! node measured, the operating tree is the minimum-φ spanning tree whose
//! substation has a single line ([`learn::learn_topology`]). With some nodes
//! unmeasured, [`hidden::learn_with_missing`] places them by matching φ
//! against closed-form predictions from impedances and injection
//! covariances.

pub mod error;
pub mod grid;
pub mod harness;
pub mod hidden;
pub mod injection;
pub mod io;
pub mod lcpf;
pub mod learn;
pub mod random;
pub mod samples;

pub use error::{Error, Result};
pub use grid::{GridGraph, HInverse, Impedance, Line, NodeId, RadialTree, WeightKind};
pub use hidden::{
    learn_with_missing, learn_with_missing_weights, HiddenNodeSet, MissingDataOutcome,
};
pub use injection::{estimate_injection_stats, invert_lcpf, InjectionEstimate, InjectionInverter};
pub use lcpf::{InjectionSample, InjectionStats, LcpfModel, NodeInjection, VoltageMoments};
pub use learn::{
    constrained_mst, empirical_phi, learn_topology, topology_error, CandidateMode, LearnedTopology,
    PhiWeights,
};
pub use samples::{SampleSet, VoltageSample};
