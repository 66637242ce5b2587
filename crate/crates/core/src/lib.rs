//! Frontier structural functions and mean deviations estimated from panel
//! data by method of moments.
//!
//! The model is `y_it = g(x_it) − u_i + v_it` with a nonnegative deviation `u`
//! and a mean-zero error `v`. The pipeline removes the conditional mean,
//! splits residuals into within and between parts, recovers central moments
//! of `u` and `v`, bounds or fits the deviation distribution, and assembles
//! the frontier `ĝ = Ê[y|x] + Ê[u|x]`.

pub mod bounds;
pub mod dist;
pub mod error;
pub mod fit;
pub mod moments;
pub mod optim;
pub mod panel;
pub mod pipeline;
pub mod residualize;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
