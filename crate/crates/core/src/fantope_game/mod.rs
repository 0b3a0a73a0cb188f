//! The relaxed concept-erasure game in approximate feature space.
//!
//! A predictor `theta` minimizes, and an eraser `B` in the Fantope
//! `F_k = { B symmetric : 0 <= B <= I, tr B = k }` maximizes, the logistic
//! loss of the scores `theta^T (I - B) phi(x)`. `B` stands for the erased
//! subspace; once the game is solved it is rounded to an orthogonal
//! projection `P = I - W^T W` with `W` the top-`k` eigenvectors of `B`.

mod probe;
mod projection;
mod solver;

pub use probe::{linear_probe, linear_probe_with, LinearProbe, ProbeConfig};
pub use projection::{fantope_project, round_projection, FantopeIterate, Rounding};
pub use solver::{solve, EvalRecord, GameSolution, GameState, SolverConfig};
