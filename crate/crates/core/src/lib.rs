//! Graph-based seismic first-break picking.
//!
//! Each trace of a survey becomes a graph node, linked to the traces whose
//! source-receiver midpoints lie nearest. A prediction looks at one star
//! subgraph at a time: a center trace and its `K` neighbors. A stacked
//! SAGEConv encoder with an LSTM aggregator turns the star into a global
//! feature for the center, and a 1D residual U-Net segments the trace into
//! "before" and "after" the first break.
//!
//! ```
//! use graphpick::survey::{generate_synthetic_survey, preprocess, LmoParams, SynthSpec};
//! use graphpick::graph::{sample_star_subgraph, SurveyGraph};
//!
//! let raw = generate_synthetic_survey(&SynthSpec::with_traces(32), 7).unwrap();
//! let pre = preprocess(&raw, &LmoParams::new(2500.0, -0.04, 128).unwrap()).unwrap();
//! let graph = SurveyGraph::build(&pre.survey, 4).unwrap();
//! let star = sample_star_subgraph(&graph, &pre.survey, 0).unwrap();
//! assert_eq!((star.n_nodes(), star.n_edges()), (5, 4));
//! ```

pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod graph;
pub mod head;
pub mod model;
pub mod survey;
pub mod train;

pub use error::{Error, Result};
