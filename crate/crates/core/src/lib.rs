//! Output-error parameter estimation for continuous-time ODE models.
//!
//! The estimation problem (maximize the measurement log-likelihood subject to
//! the model dynamics) is transcribed into a finite-dimensional nonlinear
//! program in one of three ways:
//!
//! - **single shooting**: the states are obtained by integrating the model
//!   with a fixed-step method, only the parameters (and free initial states)
//!   are decision variables;
//! - **multiple shooting**: the experiment is split into segments whose
//!   initial states become decision variables, tied together by continuity
//!   constraints;
//! - **collocation**: the states at every node of a Legendre–Gauss–Lobatto
//!   mesh are decision variables and the integration rule becomes a set of
//!   defect constraints.
//!
//! The resulting sparse equality-constrained programs are solved by the
//! in-crate SQP solver in [`nlp`].
//!
//! ```no_run
//! use std::sync::Arc;
//! use oemcoll::mesh::{build_mesh, SegmentGrid};
//! use oemcoll::model::{ExperimentData, Metric};
//! use oemcoll::models::ShortPeriod;
//! use oemcoll::nlp::{solve, SolverOptions};
//! use oemcoll::transcription::{initial_guess, CollocationOptions, CollocationProblem};
//!
//! # fn run(data: ExperimentData) -> oemcoll::Result<()> {
//! let model = Arc::new(ShortPeriod::new(44.57)?);
//! let grid = SegmentGrid::from_times(&data.times)?;
//! let mesh = build_mesh(&grid, 3, &data)?;
//! let metric = Metric::gaussian_diag_estimated(3);
//! let problem = CollocationProblem::new(model, &data, mesh, metric, CollocationOptions::default())?;
//! let theta0 = vec![0.0; 9];
//! let xi0 = initial_guess(problem.layout(), &data, &theta0, &[Some(0), Some(1)]);
//! let result = solve(&problem, &xi0, &SolverOptions::default());
//! println!("{:?}", result.status);
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod config;
pub mod csvio;
pub mod derivatives;
pub mod error;
pub mod estimate;
pub mod integrate;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod models;
pub mod nlp;
pub mod signal;
pub mod transcription;

pub use error::{Error, Result};
