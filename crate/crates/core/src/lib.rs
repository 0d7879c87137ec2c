pub mod cli;
pub mod delay_lyapunov;
pub mod dense;
pub mod error;
pub mod functional;
pub mod monodromy;
pub mod ode_lyapunov;
pub mod propagation;
pub mod quadrature;
pub mod system;

pub use error::{Error, Result};
