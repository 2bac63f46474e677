pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;
