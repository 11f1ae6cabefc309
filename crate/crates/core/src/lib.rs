//! Engine for natural-language-driven chart editing with synthesized,
//! persistent widgets.

pub mod analysis;
pub mod chart;
pub mod codeblock;
pub mod data;
pub mod gateway;
pub mod pointer;
pub mod summary;
pub mod widget;
pub mod sandbox;
pub mod synthesis;
