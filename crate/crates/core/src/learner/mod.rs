//! Local training: a small tanh MLP, synthetic data and its partitions, and
//! the attacks a malicious trainer can mount.

pub mod attack;
pub mod data;
pub mod model;

pub use attack::{flip_label, AttackKind, AttackSpec};
pub use data::{
    dirichlet_proportions, generate_synthetic, make_partitions, split, Dataset, Partition,
    SyntheticSpec,
};
pub use model::{evaluate, gradient_check, local_train, Model, TrainParams};
