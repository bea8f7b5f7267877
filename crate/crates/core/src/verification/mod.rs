//! Numerical checks of the stability and convergence properties: Lyapunov
//! matrices, domain-of-operation constants, rate fits, `epsilon` sweeps and
//! peaking probes.

pub mod fit;
pub mod lyapunov;
pub mod peaking;
pub mod rates;
pub mod region;
pub mod sweep;
pub mod suite;
