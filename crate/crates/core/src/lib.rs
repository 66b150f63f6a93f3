pub mod corpus;
pub mod decoding;
pub mod eval;
pub mod model;
pub mod parallel;
pub mod specificity;
pub mod tensor;
pub mod training;
