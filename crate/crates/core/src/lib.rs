pub mod assembly;
pub mod conformal;
pub mod dataset;
pub mod formats;
pub mod network;
pub mod predictor;
pub mod robust;
pub mod solver;
pub mod synth;
pub mod training;
