pub mod wat;
pub mod dag;
pub mod region;
pub mod equivalence;
pub mod synth;
pub mod variantgen;
pub mod interp;
pub mod metrics;
pub mod pipeline;
