pub mod eval;
pub mod gridsearch;
pub mod overlay;
pub mod pose;
pub mod synth;
pub mod track;
