//! Weighted-grid discretization of large-population games with linear best
//! responses.
//!
//! Agents live on a finite measure space ([`grid::MeasureGrid`]). Payoff
//! structures and covariances are [`kernel::Kernel`]s whose spectral theory
//! decides uniqueness of equilibria. [`game`] solves linear equilibria under
//! Gaussian information, [`moments`] checks which second moments an
//! equilibrium can induce, [`design`] computes optimal information
//! disclosure, and [`montecarlo`] verifies the aggregation calculus by
//! simulation.

pub mod design;
pub mod error;
pub mod game;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod moments;
pub mod montecarlo;
pub mod verification;

pub use error::{Error, Result};
pub use grid::{GridFunction, MeasureGrid};
pub use kernel::{Kernel, SpectralReport};

/// Runs `f` inside a rayon pool whose size is capped by `KG_THREADS`.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var("KG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(k) if k > 0 => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}
