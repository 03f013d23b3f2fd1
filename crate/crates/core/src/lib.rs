pub mod algebra;
pub mod ensemble;
pub mod entanglement;
pub mod error;
pub mod integrator;
pub mod noise;
pub mod ooperator;
pub mod oracles;
pub mod presets;
