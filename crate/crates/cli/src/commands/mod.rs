pub mod eval;
pub mod generate;
pub mod inspect;
pub mod synthetic;
pub mod train;
