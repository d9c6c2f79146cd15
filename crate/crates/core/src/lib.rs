//! Feedback synthesis for linear plants whose control gains vanish on
//! intervals, driven by persistence filters.

// `!(x > 0.0)` guards also reject NaN; index loops mirror the recurrences.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod augmentation;
pub mod closed_loop;
pub mod controller;
pub mod error;
pub mod gainpoly;
pub mod gains;
pub mod lti;
pub mod observer;
pub mod pfilter;
pub mod sim;
pub mod spacecraft;

pub use error::{Error, Result};
