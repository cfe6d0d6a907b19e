//! Concrete objectives.

pub mod gaussian_system;
pub mod muller_brown;
pub mod piecewise;
pub mod quadratic;
pub mod welsch;

pub use gaussian_system::{GaussianSystem, GaussianSystemParams};
pub use muller_brown::{MullerBrown, MullerBrownParams};
pub use piecewise::{PiecewiseExample, PiecewiseParams};
pub use quadratic::{LinearLeastSquares, QuadraticTerms};
pub use welsch::{WelschDataset, WelschObjective};
