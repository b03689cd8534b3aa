pub mod autodiff;
pub mod network;
pub mod pathmetrics;
pub mod reparam;
pub mod harness;
pub mod linearize;
