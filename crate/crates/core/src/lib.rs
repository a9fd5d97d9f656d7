pub mod geometry;
pub mod tensor;
pub mod tokenizer;
pub mod model;
pub mod datasets;
pub mod pipeline;
