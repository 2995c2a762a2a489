// negated comparisons are how parameter checks reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod spatial;
pub mod lipm;
pub mod qp;
pub mod wrenchdist;
pub mod dcm;
pub mod admittance;
pub mod pattern;
pub mod plant;
pub mod estimator;
pub mod scenario;
pub mod controller;
pub mod harness;
