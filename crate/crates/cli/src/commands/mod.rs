pub mod gen;
pub mod preset;
pub mod run;
pub mod verify;
